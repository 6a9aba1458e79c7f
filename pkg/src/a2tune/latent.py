"""Latent projection, neighbourhood augmentation and quadrant auto-grouping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_GROUPS = 4


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class LatentMapper:
    mean: np.ndarray  # (d,)
    std: np.ndarray  # (d,)
    components: np.ndarray  # (2, d), orthonormal rows

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return ((x - self.mean) / self.std) @ self.components.T


def fit_latent_mapper(features) -> LatentMapper:
    """Standardise, then project onto the top-2 principal axes.

    Each axis is sign-fixed so its largest-magnitude entry is positive.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need a (rows >= 3, d) feature matrix")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    z = (x - mean) / std
    cov = z.T @ z / z.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:2]
    tol = 1e-10 * max(evals.max(), 1.0)
    if evals[order[-1]] <= tol:
        raise RankError("feature covariance has rank < 2")
    comps = evecs[:, order].T
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return LatentMapper(mean, std, comps)


@dataclass(frozen=True)
class AugmentedNeighborhood:
    graph: tuple[int, ...]
    latent: tuple[int, ...]

    @property
    def union(self) -> tuple[int, ...]:
        return tuple(sorted(self.graph + self.latent))


def augment(adjacency, coords, v: int, n_cap: int | None = None) -> AugmentedNeighborhood:
    """Add the n nearest latent-space cells, n = graph degree of ``v``.

    Candidates exclude ``v`` and its graph neighbours; distance ties go to
    the lower cell index.
    """
    adj = np.asarray(adjacency, dtype=bool)
    coords = np.asarray(coords, dtype=float)
    nbrs = np.flatnonzero(adj[v])
    n = nbrs.size if n_cap is None else min(nbrs.size, n_cap)
    mask = ~adj[v].copy()
    mask[v] = False
    cand = np.flatnonzero(mask)
    if n == 0 or cand.size == 0:
        return AugmentedNeighborhood(tuple(int(i) for i in nbrs), ())
    d = np.linalg.norm(coords[cand] - coords[v], axis=1)
    order = np.lexsort((cand, d))[:n]
    return AugmentedNeighborhood(tuple(int(i) for i in nbrs), tuple(int(i) for i in cand[order]))


def augment_all(adjacency, coords, n_cap: int | None = None) -> list[AugmentedNeighborhood]:
    return [augment(adjacency, coords, v, n_cap) for v in range(len(coords))]


def assign_group(y_v, y_u) -> int:
    """Quadrant of ``y_u`` relative to ``y_v``: groups 1-4."""
    right = y_v[0] <= y_u[0]
    up = y_v[1] <= y_u[1]
    if up:
        return 1 if right else 2
    return 4 if right else 3


def assign_groups(y_v, y_us) -> np.ndarray:
    """Vectorised assign_group over rows of ``y_us``."""
    y_us = np.asarray(y_us, dtype=float).reshape(-1, 2)
    right = y_v[0] <= y_us[:, 0]
    up = y_v[1] <= y_us[:, 1]
    return np.where(up, np.where(right, 1, 2), np.where(right, 4, 3))


def group_neighbors(coords, v: int, members) -> list[tuple[int, ...]]:
    """Partition ``members`` into the four quadrant groups around ``v``."""
    members = list(members)
    out: list[list[int]] = [[] for _ in range(N_GROUPS)]
    if members:
        labels = assign_groups(coords[v], coords[members])
        for u, g in zip(members, labels):
            out[g - 1].append(u)
    return [tuple(g) for g in out]


def pool_groups(features, groups, fill: str = "average") -> np.ndarray:
    """Mean feature per group -> (4, d).

    Empty groups take the mean of the non-empty groups' pooled vectors
    (``fill="average"``) or zeros (``fill="zeros"``). All empty -> zeros.
    """
    features = np.asarray(features, dtype=float)
    d = features.shape[1]
    pooled = np.zeros((N_GROUPS, d))
    filled = np.zeros(N_GROUPS, dtype=bool)
    for k, members in enumerate(groups):
        if len(members):
            pooled[k] = features[sorted(members)].mean(axis=0)
            filled[k] = True
    if fill == "average" and filled.any() and not filled.all():
        pooled[~filled] = pooled[filled].mean(axis=0)
    elif fill not in ("average", "zeros"):
        raise ValueError(f"unknown fill mode {fill!r}")
    return pooled
