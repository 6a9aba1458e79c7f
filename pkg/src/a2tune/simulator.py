"""Cell-level statistical simulator: A2 config -> coverage -> load shift -> throughput.

The pipeline per hour is coverage -> redistribute -> load_to_throughput ->
adjustment. Input states are the loads observed under the default A2, so
the default configuration is a fixed point of the load redistribution.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .network import (
    BANDWIDTH, CQI, PRB, TRAFFIC, TX_POWER, USERS, NetworkData, NetworkGraph, cell_capacity,
)


@dataclass(frozen=True)
class SimulatorConfig:
    path_loss_exponent: float = 3.5
    ref_loss_db: float = 30.0
    ref_distance_m: float = 1.0
    hysteresis_db: float = 0.0
    kappa_measurement: float = 0.3
    kappa_connection: float = 0.3
    congestion_exponent: float = 2.0
    sat_seconds: float = 1800.0
    a2_lo: float = -105.0
    a2_hi: float = -95.0
    default_a2: float = -100.0

    def __post_init__(self):
        if self.path_loss_exponent <= 1:
            raise ValueError("path_loss_exponent must be > 1")
        for k in ("kappa_measurement", "kappa_connection"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} must be in [0, 1]")
        if not self.a2_lo < self.a2_hi:
            raise ValueError("a2_lo must be below a2_hi")
        if not self.a2_lo <= self.default_a2 <= self.a2_hi:
            raise ValueError("default_a2 outside the A2 bounds")
        if self.sat_seconds <= 0:
            raise ValueError("sat_seconds must be positive")


def coverage(tx_power_dbm, a2_dbm, cfg: SimulatorConfig):
    """Radius (m) where received power drops to the A2 trigger level."""
    exponent = (np.asarray(tx_power_dbm) - cfg.ref_loss_db - (np.asarray(a2_dbm) - cfg.hysteresis_db))
    return cfg.ref_distance_m * 10.0 ** (exponent / (10.0 * cfg.path_loss_exponent))


def transfer_matrix(cov_before, cov_after, adjacency) -> np.ndarray:
    """Column-stochastic T with new_loads = T @ loads.

    A shrinking cell releases 1 - (C_after/C_before)^2 of its load to its
    neighbours in proportion to their C_after^2. A cell i that grew more than
    its neighbour j, in area ratio terms, pulls (1 - area_j/area_i) / deg(j)
    of j's retained load; equal growth on both sides moves nothing.
    """
    cb = np.asarray(cov_before, dtype=float)
    ca = np.asarray(cov_after, dtype=float)
    adj = np.asarray(adjacency, dtype=bool)
    n = cb.size
    deg = adj.sum(axis=1)
    has_nb = deg > 0
    area = (ca / cb) ** 2
    release = np.where(has_nb & (area < 1.0), 1.0 - area, 0.0)
    # growth[i, j] > 0 only for a growing cell i that outgrew neighbour j
    growth = np.where(adj & (area[:, None] > 1.0), 1.0 - area[None, :] / area[:, None], 0.0)
    growth = np.clip(growth, 0.0, None)

    adj_f = adj.astype(float)
    # w[j, i]: share of i's released load that goes to j
    w = adj_f * (ca**2)[:, None]
    col = w.sum(axis=0)
    w = np.divide(w, col, out=np.zeros_like(w), where=col > 0)
    t = w * release[None, :]

    retained = 1.0 - release
    # pull[i, j]: fraction of j's original load moved to a growing neighbour i
    pull = growth / np.where(deg > 0, deg, 1)[None, :] * retained[None, :]
    t = t + pull
    stay = 1.0 - release - pull.sum(axis=0)
    t[np.arange(n), np.arange(n)] += stay
    return t


def redistribute(loads, cov_before, cov_after, adjacency) -> np.ndarray:
    """Shift load between neighbours after a coverage change; total is conserved.

    ``loads`` may be (cells,) or (..., cells).
    """
    loads = np.asarray(loads, dtype=float)
    if np.any(loads < 0):
        raise ValueError("loads must be non-negative")
    t = transfer_matrix(cov_before, cov_after, adjacency)
    return loads @ t.T


def load_to_throughput(load, cap, l_sat, p: float = 2.0):
    """Saturating throughput with a congestion penalty past the saturation load."""
    x = np.asarray(load, dtype=float) / l_sat
    return cap * (1.0 - np.exp(-x)) / (1.0 + np.maximum(0.0, x - 1.0) ** p)


def adjustment(a2, cfg: SimulatorConfig):
    """Throughput multiplier for measurement overhead (high A2) and connection loss (low A2)."""
    u = (np.asarray(a2, dtype=float) - cfg.a2_lo) / (cfg.a2_hi - cfg.a2_lo)
    return (1.0 - cfg.kappa_measurement * u) * (1.0 - cfg.kappa_connection * (1.0 - u))


@dataclass(frozen=True)
class CellModel:
    """Per-cell load-throughput parameters derived once from a dataset."""

    cap: np.ndarray
    l_sat: np.ndarray

    @classmethod
    def from_data(cls, data: NetworkData, cfg: SimulatorConfig) -> "CellModel":
        first = data.features[0]
        cqi = np.median(data.features[..., CQI].reshape(-1, data.n), axis=0)
        cap = cell_capacity(first[0, :, BANDWIDTH], cqi)
        return cls(cap, cap * cfg.sat_seconds)


@dataclass(frozen=True)
class Simulator:
    graph: NetworkGraph
    cells: CellModel
    cfg: SimulatorConfig = SimulatorConfig()

    def step(self, states: np.ndarray, a2) -> tuple[np.ndarray, np.ndarray]:
        """Apply an A2 configuration to default-config states.

        states: (..., cells, 6) features; a2: (cells,). Returns the observed
        features and per-cell throughput (..., cells) in Mbps.
        """
        a2 = np.asarray(a2, dtype=float)
        states = np.asarray(states, dtype=float)
        if a2.shape != (self.graph.n,):
            raise ValueError(f"A2 config has shape {a2.shape}, expected ({self.graph.n},)")
        power = states[..., TX_POWER].reshape(-1, self.graph.n)[0]
        c0 = coverage(power, np.full_like(a2, self.cfg.default_a2), self.cfg)
        c1 = coverage(power, a2, self.cfg)
        t = transfer_matrix(c0, c1, self.graph.adjacency)
        out = states.copy()
        out[..., TRAFFIC] = states[..., TRAFFIC] @ t.T
        out[..., USERS] = states[..., USERS] @ t.T
        out[..., PRB] = np.minimum(1.0, out[..., TRAFFIC] / self.cells.l_sat)
        thr = load_to_throughput(out[..., TRAFFIC], self.cells.cap, self.cells.l_sat, self.cfg.congestion_exponent)
        thr = thr * adjustment(a2, self.cfg)
        return out, thr

    def network_throughput(self, states, a2) -> float:
        """Sum over cells of the day-mean throughput."""
        _, thr = self.step(states, a2)
        return float(thr.reshape(-1, self.graph.n).mean(axis=0).sum())

    def brute_force_optimal(self, states, grid, sweeps: int = 10, start=None,
                            joint_limit: int = 1331) -> np.ndarray:
        """Best grid config for total network throughput.

        Small networks (``len(grid) ** n <= joint_limit``) are enumerated
        jointly; the objective is not separable, so a per-cell sweep can stall
        at a local optimum even on two cells. Larger networks use coordinate
        ascent: cells in id order each take the argmax over the grid with the
        others held fixed, for at most ``sweeps`` passes or until a pass
        changes nothing. Ties go to the value closest to the default, then to
        the lower dBm (per cell, in id order, for the joint search).
        """
        grid = np.asarray(sorted(grid), dtype=float)
        n = self.graph.n
        if grid.size ** n <= joint_limit:
            return self._joint_optimal(states, grid)
        a2 = np.full(n, self.cfg.default_a2) if start is None else np.array(start, dtype=float)
        for _ in range(sweeps):
            changed = False
            for i in range(n):
                values = np.empty(grid.size)
                for k, g in enumerate(grid):
                    trial = a2.copy()
                    trial[i] = g
                    values[k] = self.network_throughput(states, trial)
                best = pick_best(grid, values, self.cfg.default_a2)
                if best != a2[i]:
                    a2[i] = best
                    changed = True
            if not changed:
                break
        return a2

    def _joint_optimal(self, states, grid: np.ndarray) -> np.ndarray:
        combos = np.array(list(itertools.product(grid, repeat=self.graph.n)))
        values = np.array([self.network_throughput(states, c) for c in combos])
        top = values.max()
        tied = combos[values >= top - 1e-12 * abs(top)]
        d = self.cfg.default_a2
        return min(tied, key=lambda c: [(abs(g - d), g) for g in c]).copy()


def pick_best(grid, values, default: float, rtol: float = 1e-12) -> float:
    """Argmax with ties to the grid value closest to ``default``, then lower."""
    values = np.asarray(values, dtype=float)
    top = values.max()
    tied = [g for g, v in zip(grid, values) if v >= top - rtol * abs(top)]
    return float(min(tied, key=lambda g: (abs(g - default), g)))


def simulate_day(sim: Simulator, data: NetworkData, day_index: int, a2) -> tuple[np.ndarray, np.ndarray]:
    """Observed hourly features (24, cells, 6) and throughput (24, cells) for one day."""
    return sim.step(data.features[day_index], a2)
