"""Cell records, handover graph, CSV interchange, synthetic networks, daily aggregation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURES = ("users", "traffic_mbit", "prb_ratio", "avg_cqi", "bandwidth_mhz", "tx_power_dbm")
USERS, TRAFFIC, PRB, CQI, BANDWIDTH, TX_POWER = range(len(FEATURES))
N_FEATURES = len(FEATURES)
HOURS = 24

CELL_HEADER = ("cell_id", "day", "hour", *FEATURES, "a2_dbm", "throughput_mbps")
HANDOVER_HEADER = ("src", "dst", "avg_count")

A2_BOUNDS = (-105.0, -95.0)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class CellRecord:
    cell_id: str
    day: int
    hour: int
    users: float
    traffic_mbit: float
    prb_ratio: float
    avg_cqi: float
    bandwidth_mhz: float
    tx_power_dbm: float
    a2_dbm: float
    throughput_mbps: float | None = None

    @property
    def features(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURES])

    def check(self, a2_bounds=A2_BOUNDS) -> None:
        """Raise DataError naming the first violated field."""
        bad = None
        if not 0 <= self.hour < HOURS:
            bad = "hour"
        elif self.users < 0:
            bad = "users"
        elif self.traffic_mbit < 0:
            bad = "traffic_mbit"
        elif not 0.0 <= self.prb_ratio <= 1.0:
            bad = "prb_ratio"
        elif not 1.0 <= self.avg_cqi <= 15.0:
            bad = "avg_cqi"
        elif self.bandwidth_mhz <= 0:
            bad = "bandwidth_mhz"
        elif not a2_bounds[0] <= self.a2_dbm <= a2_bounds[1]:
            bad = "a2_dbm"
        elif self.throughput_mbps is not None and self.throughput_mbps < 0:
            bad = "throughput_mbps"
        if bad is not None:
            raise DataError(f"field {bad}={getattr(self, bad)!r} out of range")


@dataclass(frozen=True)
class HandoverStat:
    src: str
    dst: str
    avg_count: float

    def __post_init__(self):
        if self.src == self.dst:
            raise DataError(f"self-loop handover stat for {self.src}")
        if self.avg_count < 0:
            raise DataError(f"negative avg_count for {self.src}->{self.dst}")


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected handover graph over cells sorted by id."""

    cells: tuple[str, ...]
    adjacency: np.ndarray  # bool, symmetric, zero diagonal
    tau: float

    @property
    def n(self) -> int:
        return len(self.cells)

    def index(self, cell_id: str) -> int:
        return self.cells.index(cell_id)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> set[frozenset[str]]:
        iu, ju = np.nonzero(np.triu(self.adjacency, 1))
        return {frozenset((self.cells[i], self.cells[j])) for i, j in zip(iu, ju)}


def build_graph(stats, cells, tau: float = 10.0) -> NetworkGraph:
    """Edge {u, v} iff max(count(u->v), count(v->u)) > tau."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    cells = tuple(sorted(cells))
    pos = {c: i for i, c in enumerate(cells)}
    counts = np.zeros((len(cells), len(cells)))
    for s in stats:
        if s.src not in pos or s.dst not in pos:
            raise DataError(f"handover stat references unknown cell: {s.src}->{s.dst}")
        i, j = pos[s.src], pos[s.dst]
        counts[i, j] = max(counts[i, j], s.avg_count)
    sym = np.maximum(counts, counts.T)
    adj = sym > tau
    np.fill_diagonal(adj, False)
    adj.setflags(write=False)
    return NetworkGraph(cells, adj, float(tau))


# ---------------------------------------------------------------------------
# Dense per-day arrays


@dataclass
class NetworkData:
    """Hourly data as dense arrays.

    features: (days, 24, cells, 6); a2: (days, cells);
    throughput: (days, 24, cells), NaN where unset. ``first_day`` labels
    index 0 of the day axis.
    """

    cells: tuple[str, ...]
    features: np.ndarray
    a2: np.ndarray
    throughput: np.ndarray
    first_day: int = 1

    @property
    def days(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return len(self.cells)

    def day_labels(self) -> list[int]:
        return list(range(self.first_day, self.first_day + self.days))

    def to_records(self) -> list[CellRecord]:
        out = []
        for t in range(self.days):
            for h in range(HOURS):
                for i, c in enumerate(self.cells):
                    thr = self.throughput[t, h, i]
                    f = self.features[t, h, i]
                    out.append(
                        CellRecord(
                            c, self.first_day + t, h, *map(float, f), float(self.a2[t, i]),
                            None if np.isnan(thr) else float(thr),
                        )
                    )
        return out

    @classmethod
    def from_records(cls, records) -> "NetworkData":
        records = list(records)
        if not records:
            raise DataError("no cell records")
        cells = tuple(sorted({r.cell_id for r in records}))
        days = sorted({r.day for r in records})
        first = days[0]
        if days != list(range(first, first + len(days))):
            raise DataError(f"days are not contiguous: {days}")
        pos = {c: i for i, c in enumerate(cells)}
        feats = np.full((len(days), HOURS, len(cells), N_FEATURES), np.nan)
        thr = np.full((len(days), HOURS, len(cells)), np.nan)
        a2 = np.full((len(days), len(cells)), np.nan)
        for r in records:
            t, i = r.day - first, pos[r.cell_id]
            feats[t, r.hour, i] = r.features
            if r.throughput_mbps is not None:
                thr[t, r.hour, i] = r.throughput_mbps
            a2[t, i] = r.a2_dbm
        missing = np.argwhere(np.isnan(feats[..., 0]))
        if missing.size:
            t, h, i = missing[0]
            raise DataError(f"missing record for cell {cells[i]} day {first + t} hour {h}")
        return cls(cells, feats, a2, thr, first)


# ---------------------------------------------------------------------------
# CSV interchange


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_cells_csv(path, records) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELL_HEADER)
        for r in records:
            w.writerow([r.cell_id, r.day, r.hour, *(_fmt(getattr(r, f)) for f in FEATURES),
                        _fmt(r.a2_dbm), _fmt(r.throughput_mbps)])


def write_handover_csv(path, stats) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HANDOVER_HEADER)
        for s in stats:
            w.writerow([s.src, s.dst, _fmt(s.avg_count)])


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in header if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        # data rows start at line 2
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _num(path, lineno, row, key, cast=float):
    raw = row[key]
    try:
        val = cast(raw)
    except (TypeError, ValueError):
        raise DataError(f"{path}: row {lineno}: malformed number in {key}: {raw!r}") from None
    if isinstance(val, float) and not math.isfinite(val):
        raise DataError(f"{path}: row {lineno}: non-finite value in {key}")
    return val


def read_cells_csv(path, a2_bounds=A2_BOUNDS) -> list[CellRecord]:
    out = []
    for lineno, row in _read_rows(path, CELL_HEADER):
        vals = [_num(path, lineno, row, f) for f in FEATURES]
        thr_raw = row["throughput_mbps"]
        thr = None if thr_raw == "" else _num(path, lineno, row, "throughput_mbps")
        rec = CellRecord(
            row["cell_id"], _num(path, lineno, row, "day", int), _num(path, lineno, row, "hour", int),
            *vals, _num(path, lineno, row, "a2_dbm"), thr,
        )
        try:
            rec.check(a2_bounds)
        except DataError as e:
            raise DataError(f"{path}: row {lineno}: {e}") from None
        out.append(rec)
    return out


def read_handover_csv(path, cells=None) -> list[HandoverStat]:
    known = None if cells is None else set(cells)
    out = []
    for lineno, row in _read_rows(path, HANDOVER_HEADER):
        try:
            stat = HandoverStat(row["src"], row["dst"], _num(path, lineno, row, "avg_count"))
        except DataError as e:
            raise DataError(f"{path}: row {lineno}: {e}") from None
        if known is not None and (stat.src not in known or stat.dst not in known):
            raise DataError(f"{path}: row {lineno}: unknown cell in {stat.src}->{stat.dst}")
        out.append(stat)
    return out


def load_dataset(path, a2_bounds=A2_BOUNDS) -> tuple[list[CellRecord], list[HandoverStat]]:
    """Read ``cells.csv`` and ``handover.csv`` from directory ``path``."""
    path = Path(path)
    records = read_cells_csv(path / "cells.csv", a2_bounds)
    stats = read_handover_csv(path / "handover.csv", {r.cell_id for r in records})
    return records, stats


def save_dataset(path, records, stats) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_cells_csv(path / "cells.csv", records)
    write_handover_csv(path / "handover.csv", stats)


# ---------------------------------------------------------------------------
# Synthetic networks


def spectral_efficiency(cqi):
    """bit/s/Hz as a linear map of CQI (roughly 0.15 per CQI step)."""
    return 0.15 * np.asarray(cqi, dtype=float)


def cell_capacity(bandwidth_mhz, cqi):
    """Peak cell throughput in Mbps."""
    return np.asarray(bandwidth_mhz, dtype=float) * spectral_efficiency(cqi)


@dataclass(frozen=True)
class SyntheticNetworkConfig:
    cell_count: int = 30
    # None derives the side from a fixed density of `density_per_km2`
    area_km: float | None = None
    density_per_km2: float = 25.0
    days: int = 10
    bandwidths_mhz: tuple[float, ...] = (10.0, 15.0, 20.0)
    tx_powers_dbm: tuple[float, ...] = (40.0, 43.0, 46.0)
    cqi_range: tuple[float, float] = (6.0, 12.0)
    # mean hourly load at the peak hour, as a fraction of the saturation load
    peak_util_median: float = 0.75
    peak_util_sigma: float = 0.5
    peak_hour_mean: float = 15.0
    peak_hour_sd: float = 3.0
    amplitude_range: tuple[float, float] = (0.3, 0.9)
    # load level: hourly AR(1) running across days, partly shared with nearby cells
    level_noise: float = 0.25
    hour_corr: float = 0.95
    spatial_share: float = 0.5
    spatial_km: float = 0.3
    # day-to-day drifts of the profile shape are AR(1) with this lag-1 correlation
    day_corr: float = 0.7
    amplitude_noise: float = 0.2
    peak_hour_noise: float = 2.0
    hour_noise: float = 0.05
    mbit_per_user: float = 40.0
    sat_seconds: float = 1800.0
    handover_scale: float = 50.0
    handover_rho_km: float = 0.14
    handover_noise: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.cell_count < 2:
            raise ValueError("cell_count must be >= 2")
        for name in ("density_per_km2", "mbit_per_user", "sat_seconds", "handover_scale", "handover_rho_km"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.area_km is not None and self.area_km <= 0:
            raise ValueError("area_km must be positive")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if not (0.0 <= self.hour_corr < 1.0 and 0.0 <= self.day_corr < 1.0):
            raise ValueError("correlations must lie in [0, 1)")
        if not 0.0 <= self.spatial_share <= 1.0:
            raise ValueError("spatial_share must lie in [0, 1]")

    @property
    def side_km(self) -> float:
        if self.area_km is not None:
            return float(self.area_km)
        return math.sqrt(self.cell_count / self.density_per_km2)


@dataclass
class SyntheticNetwork:
    data: NetworkData
    stats: list[HandoverStat]
    positions: np.ndarray  # (cells, 2) in km
    config: SyntheticNetworkConfig = field(repr=False, default=None)

    @property
    def records(self) -> list[CellRecord]:
        return self.data.to_records()


def handover_kernel(dist_km, scale: float, rho_km: float):
    return scale * np.exp(-np.asarray(dist_km) / rho_km)


def generate_synthetic(config: SyntheticNetworkConfig) -> SyntheticNetwork:
    """Random cells in a square with a diurnal load profile per cell.

    All hourly rows carry the default A2 (-100 dBm) and no throughput.
    """
    rng = np.random.default_rng(config.seed)
    n = config.cell_count
    cells = tuple(f"C{i:03d}" for i in range(n))
    pos = rng.uniform(0.0, config.side_km, size=(n, 2))

    dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    counts = handover_kernel(dist, config.handover_scale, config.handover_rho_km)
    counts = counts + config.handover_noise * rng.standard_normal((n, n))
    counts = np.clip(counts, 0.0, None)
    stats = [
        HandoverStat(cells[i], cells[j], float(counts[i, j]))
        for i in range(n) for j in range(n) if i != j and counts[i, j] > 0.0
    ]

    bw = rng.choice(np.asarray(config.bandwidths_mhz), size=n)
    power = rng.choice(np.asarray(config.tx_powers_dbm), size=n)
    cqi_base = rng.uniform(*config.cqi_range, size=n)
    cap = cell_capacity(bw, cqi_base)
    l_sat = cap * config.sat_seconds
    util = config.peak_util_median * np.exp(config.peak_util_sigma * rng.standard_normal(n))
    peak_hour = rng.normal(config.peak_hour_mean, config.peak_hour_sd, size=n)
    amp = rng.uniform(*config.amplitude_range, size=n)

    days = config.days
    drift = _ar1(rng, days, n, config.day_corr)  # (days, 2, n), unit variance
    amp_t = np.clip(amp + config.amplitude_noise * drift[:, 0], 0.0, 1.0)
    peak_t = peak_hour + config.peak_hour_noise * drift[:, 1]
    level = np.exp(config.level_noise * _hourly_level(rng, dist, days, config))

    hours = np.arange(HOURS)[None, :, None]
    # (days, 24, n) profile scaled so the peak hour equals 1
    profile = (1.0 + amp_t[:, None] * np.cos(2 * np.pi * (hours - peak_t[:, None]) / HOURS)) / (1.0 + amp_t[:, None])
    hour_factor = np.exp(config.hour_noise * rng.standard_normal((days, HOURS, n)))
    load = l_sat * util * profile * level * hour_factor

    feats = np.zeros((days, HOURS, n, N_FEATURES))
    feats[..., USERS] = load / config.mbit_per_user
    feats[..., TRAFFIC] = load
    feats[..., PRB] = np.minimum(1.0, load / l_sat)
    feats[..., CQI] = np.clip(cqi_base + 0.1 * rng.standard_normal((days, HOURS, n)), 1.0, 15.0)
    feats[..., BANDWIDTH] = bw
    feats[..., TX_POWER] = power
    a2 = np.full((days, n), -100.0)
    thr = np.full((days, HOURS, n), np.nan)
    data = NetworkData(cells, feats, a2, thr, first_day=1)
    return SyntheticNetwork(data, stats, pos, config)


def _ar1(rng, days: int, n: int, corr: float) -> np.ndarray:
    """Stationary unit-variance AR(1) series for two per-cell drifts."""
    x = np.empty((days, 2, n))
    x[0] = rng.standard_normal((2, n))
    scale = math.sqrt(1.0 - corr * corr)
    for t in range(1, days):
        x[t] = corr * x[t - 1] + scale * rng.standard_normal((2, n))
    return x


def _hourly_level(rng, dist, days: int, config: SyntheticNetworkConfig) -> np.ndarray:
    """(days, 24, n) unit-variance AR(1) at hourly steps.

    Innovations mix independent noise with a spatially smoothed part, so
    nearby cells drift together.
    """
    n = dist.shape[0]
    kern = np.exp(-0.5 * (dist / config.spatial_km) ** 2)
    # rows of `mix` have unit norm, so the smoothed noise keeps unit variance
    mix = kern / np.linalg.norm(kern, axis=1, keepdims=True)
    w_sp = math.sqrt(config.spatial_share)
    w_ind = math.sqrt(1.0 - config.spatial_share)
    rho = config.hour_corr
    scale = math.sqrt(1.0 - rho * rho)
    steps = days * HOURS
    eps = rng.standard_normal((steps, n))
    eps = w_ind * eps + w_sp * rng.standard_normal((steps, n)) @ mix.T
    x = np.empty((steps, n))
    x[0] = eps[0]
    for h in range(1, steps):
        x[h] = rho * x[h - 1] + scale * eps[h]
    return x.reshape(days, HOURS, n)


# ---------------------------------------------------------------------------
# Daily aggregation


def block_bounds(k: int, hours: int = HOURS) -> list[tuple[int, int]]:
    """Contiguous [start, stop) blocks; the last block absorbs the remainder."""
    if not 1 <= k <= hours:
        raise ValueError(f"K must be in [1, {hours}]")
    size = hours // k
    bounds = [(i * size, (i + 1) * size) for i in range(k)]
    bounds[-1] = (bounds[-1][0], hours)
    return bounds


def temporal_blocks(hourly: np.ndarray, k: int) -> np.ndarray:
    """(24, ..., d) -> (..., K, d) block means in temporal order."""
    blocks = [hourly[a:b].mean(axis=0) for a, b in block_bounds(k, hourly.shape[0])]
    return np.stack(blocks, axis=-2)


@dataclass(frozen=True)
class DailySample:
    cell_id: str
    day: int
    mean_features: np.ndarray
    temporal_sequence: np.ndarray
    throughput: float | None
    a2: float
    throughput_ratio: float | None = None
    delta_action: float | None = None


def daily_aggregate(records, k: int = 4) -> DailySample:
    """Aggregate the 24 hourly records of one cell-day."""
    records = list(records)
    if not records:
        raise DataError("no records to aggregate")
    ids = {(r.cell_id, r.day) for r in records}
    if len(ids) != 1:
        raise DataError(f"records span several cell-days: {sorted(ids)}")
    by_hour = {r.hour: r for r in records}
    missing = [h for h in range(HOURS) if h not in by_hour]
    if missing:
        raise DataError(f"missing hours: {missing}")
    hourly = np.stack([by_hour[h].features for h in range(HOURS)])
    thr = [by_hour[h].throughput_mbps for h in range(HOURS)]
    alpha = None if any(t is None for t in thr) else float(np.mean(thr))
    cell_id, day = ids.pop()
    return DailySample(
        cell_id, day, hourly.mean(axis=0), temporal_blocks(hourly, k), alpha, by_hour[0].a2_dbm,
    )


def throughput_ratio(alpha: float, neighbor_throughputs) -> float:
    """Centre throughput over neighbour mean; 1.0 for an isolated cell."""
    nb = np.asarray(list(neighbor_throughputs), dtype=float)
    if nb.size == 0:
        return 1.0
    mean = nb.mean()
    if mean == 0:
        raise ZeroDivisionError("neighbour mean throughput is zero")
    return float(alpha / mean)


def throughput_ratios(alpha: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """Vectorised throughput_ratio over all cells (last axis indexes cells)."""
    deg = adjacency.sum(axis=1)
    nb_sum = alpha @ adjacency.T.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        nb_mean = nb_sum / np.where(deg > 0, deg, 1)
        beta = alpha / nb_mean
    if np.any((deg > 0) & (nb_mean == 0)):
        raise ZeroDivisionError("neighbour mean throughput is zero")
    return np.where(deg > 0, beta, 1.0)
