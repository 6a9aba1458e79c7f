"""Action policies: two-stage model recommendation and the rule-based baselines."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MODES = ("multi", "ratio-only", "throughput-only")


@dataclass(frozen=True)
class ActionGrid:
    lo: int = -105
    hi: int = -95
    max_delta: int = 5
    default: int = -100

    def __post_init__(self):
        if not self.lo <= self.default <= self.hi:
            raise ValueError("default A2 must lie on the grid")
        if self.max_delta < 0:
            raise ValueError("max_delta must be >= 0")

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def deltas(self) -> np.ndarray:
        return np.arange(-self.max_delta, self.max_delta + 1)

    def feasible(self, a2) -> np.ndarray:
        """(n, len(deltas)) mask of deltas keeping each cell on the grid."""
        a2 = np.asarray(a2, dtype=float)[:, None]
        nxt = a2 + self.deltas[None, :]
        return (nxt >= self.lo) & (nxt <= self.hi)

    def clamp(self, a2, delta) -> np.ndarray:
        """Integer deltas clipped to +-max_delta and to the grid bounds."""
        a2 = np.asarray(a2, dtype=float)
        d = np.clip(np.asarray(delta, dtype=float), -self.max_delta, self.max_delta)
        return np.clip(a2 + d, self.lo, self.hi) - a2


@dataclass(frozen=True)
class ActionPlan:
    cells: tuple[str, ...]
    day: int
    delta: np.ndarray
    a2: np.ndarray

    @classmethod
    def from_delta(cls, cells, day: int, a2_prev, delta) -> "ActionPlan":
        delta = np.asarray(delta, dtype=float)
        return cls(tuple(cells), day, delta, np.asarray(a2_prev, dtype=float) + delta)

    def check(self, grid: ActionGrid) -> None:
        if np.any(self.a2 < grid.lo) or np.any(self.a2 > grid.hi):
            raise ValueError("plan leaves the A2 grid")
        if np.any(np.abs(self.delta) > grid.max_delta):
            raise ValueError("plan exceeds the per-day delta cap")


def write_plans_csv(path, plans) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "day", "delta", "a2_dbm"])
        for plan in plans:
            for c, d, a in zip(plan.cells, plan.delta, plan.a2):
                w.writerow([c, plan.day, int(d), int(a)])


def read_plans_csv(path) -> list[ActionPlan]:
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["day"]), []).append(r)
    out = []
    for day in sorted(rows):
        rs = rows[day]
        out.append(ActionPlan(tuple(r["cell_id"] for r in rs), day,
                              np.array([float(r["delta"]) for r in rs]),
                              np.array([float(r["a2_dbm"]) for r in rs])))
    return out


def ratio_score(beta_hat):
    return -np.sqrt(np.abs(1.0 - np.asarray(beta_hat, dtype=float)))


def select_action(deltas, beta_hat, alpha_hat, nu: int, mode: str = "multi") -> float:
    """Two-stage choice for one cell over its feasible ``deltas``.

    Stage 1 keeps the ``nu`` deltas with the best ratio score (ties: smaller
    |a|, then lower a); stage 2 takes the throughput argmax among them.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if nu < 1:
        raise ValueError("nu must be >= 1")
    deltas = np.asarray(deltas, dtype=float)
    score = ratio_score(beta_hat)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    calm = np.lexsort((deltas, np.abs(deltas)))  # preference order for ties
    if mode == "throughput-only":
        cand = np.arange(deltas.size)
    else:
        # stable sort on -score keeps the tie preference inside equal scores
        order = calm[np.argsort(-score[calm], kind="stable")]
        cand = order[: 1 if mode == "ratio-only" else min(nu, deltas.size)]
    cand = cand[np.lexsort((deltas[cand], np.abs(deltas[cand])))]
    best = cand[np.argmax(alpha_hat[cand])]
    return float(deltas[best])


def recommend(models, obs, graph, grid: ActionGrid, nu: int = 3, mode: str = "multi",
              cells=None) -> ActionPlan:
    """Per-cell two-stage recommendation for the day after ``obs``."""
    if nu < 1:
        raise ValueError("nu must be >= 1")
    nu = min(nu, grid.deltas.size)
    beta_hat, alpha_hat = models.predict_grid(obs, graph, grid.deltas)
    mask = grid.feasible(obs.a2)
    delta = np.empty(graph.n)
    for v in range(graph.n):
        m = mask[v]
        delta[v] = select_action(grid.deltas[m], beta_hat[v, m], alpha_hat[v, m], nu, mode)
    return ActionPlan.from_delta(cells or graph.cells, obs.day + 1, obs.a2, delta)


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def expert_rule(beta, a2, grid: ActionGrid, r1: float = -2.0, r2: float = -2.0) -> np.ndarray:
    """Load-balancing rule: delta = r1 (beta - 1) when beta >= 1, else r2 (beta - 1)."""
    if r1 >= 0 or r2 >= 0:
        raise ValueError("expert weights must be negative")
    beta = np.asarray(beta, dtype=float)
    raw = np.where(beta >= 1.0, r1 * (beta - 1.0), r2 * (beta - 1.0))
    return grid.clamp(a2, round_half_away(raw)) + 0.0


def negative_slope_init(beta, a2, grid: ActionGrid, phi: float = 5.0) -> np.ndarray:
    """Linear map from the lowest ratio (+phi) to the highest (-phi), rounded."""
    beta = np.asarray(beta, dtype=float)
    lo, hi = beta.min(), beta.max()
    if hi == lo:
        return np.zeros_like(beta)
    raw = 2.0 * (beta - lo) * phi / (lo - hi) + phi
    return grid.clamp(a2, round_half_away(raw)) + 0.0


def random_init(n: int, grid: ActionGrid, seed) -> np.ndarray:
    """Uniform absolute A2 values on the grid, one per cell."""
    rng = np.random.default_rng(seed)
    return rng.choice(grid.values, size=n).astype(float)
