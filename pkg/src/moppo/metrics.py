"""Pareto-front quality measures: dominance filter, hypervolume, EU, sparsity.

All objectives are maximised.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


class DimensionUnsupported(ValueError):
    pass


class EmptyFront(ValueError):
    pass


class FrontTooSmall(ValueError):
    pass


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def non_dominated_mask(points) -> np.ndarray:
    """Boolean mask of points kept by :func:`pareto_filter` (first copy of duplicates)."""
    P = _as_points(points)
    n = len(P)
    if n == 0:
        return np.zeros(0, dtype=bool)
    geq = (P[:, None, :] >= P[None, :, :]).all(axis=2)  # geq[i, j]: i >= j everywhere
    gt = (P[:, None, :] > P[None, :, :]).any(axis=2)
    dominated = (geq & gt).any(axis=0)
    equal = geq & geq.T
    # a duplicate is dropped when an identical point occurs earlier
    earlier_dup = np.triu(equal, k=1).any(axis=0)
    return ~dominated & ~earlier_dup


def pareto_filter(points) -> np.ndarray:
    """Non-dominated subset in input order, exact duplicates collapsed."""
    P = _as_points(points)
    return P[non_dominated_mask(P)]


def _hv2d(P: np.ndarray, ref: np.ndarray) -> float:
    # sweep from largest first objective; each point adds a strip above the
    # running height, dominated points add nothing
    Q = P[np.lexsort((-P[:, 1], -P[:, 0]))]
    height = np.maximum.accumulate(np.concatenate(([ref[1]], Q[:, 1])))
    strips = (Q[:, 0] - ref[0]) * (height[1:] - height[:-1])
    # cumsum adds left to right, matching a plain loop bit for bit
    return float(np.cumsum(strips)[-1])


def _hv3d(P: np.ndarray, ref: np.ndarray) -> float:
    # slice along the third objective: between consecutive z levels the
    # dominated cross-section is the 2-D HV of points at or above that level
    order = np.argsort(-P[:, 2], kind="stable")
    P = P[order]
    zs = np.append(P[:, 2], ref[2])
    hv = 0.0
    for i in range(len(P)):
        dz = zs[i] - zs[i + 1]
        if dz <= 0:
            continue
        hv += _hv2d(P[: i + 1, :2], ref[:2]) * dz
    return float(hv)


def hypervolume(front, ref) -> float:
    """Exact hypervolume of the region dominated by ``front`` above ``ref``.

    Points not strictly better than ``ref`` in every objective contribute
    nothing and are dropped first.  Supports two and three objectives.
    """
    ref = np.asarray(ref, dtype=float)
    P = _as_points(front)
    if P.size == 0:
        return 0.0
    m = P.shape[1]
    if m != len(ref):
        raise ValueError("front and reference point dimensions differ")
    if m not in (2, 3):
        raise DimensionUnsupported(f"exact hypervolume only for m in (2, 3), got {m}")
    P = P[(P > ref).all(axis=1)]
    if len(P) == 0:
        return 0.0
    if m == 2:
        return _hv2d(P, ref)
    return _hv3d(pareto_filter(P), ref)


def expected_utility(front, weight_set) -> float:
    """Mean over weights of the best linear utility reachable on ``front``."""
    P = _as_points(front)
    if len(P) == 0:
        raise EmptyFront("expected utility of an empty front")
    W = np.asarray([getattr(w, "weights", w) for w in weight_set], dtype=float)
    return float((W @ P.T).max(axis=1).mean())


def sparsity(front) -> float:
    """Mean squared gap between neighbours along each objective."""
    P = _as_points(front)
    if len(P) < 2:
        raise FrontTooSmall("sparsity needs at least two points")
    total = 0.0
    for j in range(P.shape[1]):
        s = np.sort(P[:, j])
        total += float((np.diff(s) ** 2).sum())
    return total / (len(P) - 1)


def reference_point(points, margin: float = 0.01) -> np.ndarray:
    """Componentwise minimum of ``points`` pushed down by ``margin`` of the range.

    A degenerate (zero-width) objective range falls back to an absolute
    offset of ``margin``.
    """
    P = _as_points(points)
    lo = P.min(axis=0)
    span = P.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    return lo - margin * span


def default_eu_weights(m: int):
    from .weightspace import generate_simplex_grid

    return generate_simplex_grid(m, 0.01 if m == 2 else 0.05)


def front_summary(points, ref, weight_set=None) -> dict:
    """HV, EU and sparsity of the Pareto subset of ``points``."""
    P = _as_points(points)
    F = pareto_filter(P)
    weights = weight_set if weight_set is not None else default_eu_weights(P.shape[1])
    return {
        "hv": hypervolume(F, ref),
        "eu": expected_utility(F, weights),
        "sparsity": sparsity(F) if len(F) >= 2 else 0.0,
        "n_front": len(F),
    }


def monte_carlo_hypervolume(front, ref, samples: int, rng: np.random.Generator,
                            chunk: int = 200_000) -> float:
    """Box-sampling estimate of the hypervolume; used as an independent check."""
    P = _as_points(front)
    ref = np.asarray(ref, dtype=float)
    upper = P.max(axis=0)
    vol = float(np.prod(upper - ref))
    hits = 0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        X = rng.uniform(ref, upper, size=(n, len(ref)))
        covered = np.zeros(n, dtype=bool)
        for p in P:
            covered |= (X <= p).all(axis=1)
        hits += int(covered.sum())
        done += n
    return vol * hits / samples


__all__: Sequence[str] = [
    "pareto_filter", "non_dominated_mask", "hypervolume", "expected_utility",
    "sparsity", "reference_point", "front_summary", "monte_carlo_hypervolume",
    "default_eu_weights", "DimensionUnsupported", "EmptyFront", "FrontTooSmall",
]
