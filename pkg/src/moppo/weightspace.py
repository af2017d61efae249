"""Two-layer decomposition of the scalarisation simplex.

Layer one places ``K`` pivot vectors on a coarse simplex grid.  Layer two
attaches to every pivot the ``M`` nearest points of a finer grid; a
policy trained for that sub-space conditions on a working pool of at most
``N`` of those candidates at a time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SUM_TOL = 1e-9
_DIST_DECIMALS = 12

PIVOT_MODES = ("include-endpoints", "drop-last", "interior-only")


class NonDivisibleStep(ValueError):
    pass


class PivotCountMismatch(ValueError):
    pass


class InsufficientGrid(ValueError):
    pass


@dataclass(frozen=True)
class ScalarisationVector:
    """A point on the probability simplex; immutable and hashable."""

    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if len(w) < 2:
            raise ValueError("a scalarisation vector needs at least 2 components")
        if any(x < 0 or not math.isfinite(x) for x in w):
            raise ValueError(f"negative or non-finite weight in {w}")
        if abs(math.fsum(w) - 1.0) > SUM_TOL:
            raise ValueError(f"weights {w} do not sum to 1")

    @property
    def m(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.array(self.weights)

    def __iter__(self):
        return iter(self.weights)

    def __len__(self):
        return len(self.weights)

    def __getitem__(self, i):
        return self.weights[i]


def _steps(step: float) -> int:
    if not 0 < step <= 1:
        raise NonDivisibleStep(f"step must lie in (0, 1], got {step}")
    n = round(1.0 / step)
    if abs(n - 1.0 / step) > SUM_TOL * max(1.0, n):
        raise NonDivisibleStep(f"1/step is not an integer for step={step}")
    return n


def _compositions(n: int, m: int) -> Iterable[tuple[int, ...]]:
    # lexicographic over (c_1, ..., c_m) with sum n
    if m == 1:
        yield (n,)
        return
    for c in range(n + 1):
        for rest in _compositions(n - c, m - 1):
            yield (c,) + rest


def _from_counts(counts: Sequence[int]) -> ScalarisationVector:
    n = sum(counts)
    w = [c / n for c in counts]
    s = math.fsum(w)
    return ScalarisationVector(tuple(x / s for x in w))


def generate_simplex_grid(m: int, step: float) -> list[ScalarisationVector]:
    """All simplex vectors whose components are multiples of ``step``.

    Output is in lexicographic order, so for ``m=2`` the first component
    increases along the list.  There are ``C(1/step + m - 1, m - 1)`` points.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    n = _steps(step)
    return [_from_counts(c) for c in _compositions(n, m)]


def generate_pivots(m: int, step1: float, mode: str,
                    K: int | None = None) -> list[ScalarisationVector]:
    """Layer-one pivot vectors.

    ``interior-only`` keeps grid points with every component > 0,
    ``drop-last`` removes the lexicographically last grid point and
    ``include-endpoints`` keeps the full grid.  When ``K`` is given the
    produced count must match it exactly.
    """
    if mode not in PIVOT_MODES:
        raise ValueError(f"unknown pivot mode {mode!r}; expected one of {PIVOT_MODES}")
    n = _steps(step1)
    counts = list(_compositions(n, m))
    if mode == "interior-only":
        counts = [c for c in counts if min(c) > 0]
    elif mode == "drop-last":
        counts = counts[:-1]
    pivots = [_from_counts(c) for c in counts]
    if K is not None and len(pivots) != K:
        raise PivotCountMismatch(
            f"mode {mode!r} with step {step1} gives {len(pivots)} pivots, configured K={K}")
    return pivots


def _sq_dist(grid: np.ndarray, point: np.ndarray) -> np.ndarray:
    return np.round(((grid - point) ** 2).sum(axis=1), _DIST_DECIMALS)


def generate_candidates(pivot: ScalarisationVector, step2: float,
                        M: int) -> list[ScalarisationVector]:
    """The ``M`` fine-grid points closest to ``pivot``, nearest first.

    Equal distances are broken by lexicographic order of the vectors.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    grid = generate_simplex_grid(pivot.m, step2)
    if len(grid) < M:
        raise InsufficientGrid(f"grid at step {step2} has {len(grid)} points < M={M}")
    arr = np.array([g.weights for g in grid])
    d = _sq_dist(arr, pivot.as_array())
    # grid is already lexicographic, so a stable sort on distance is enough
    order = np.argsort(d, kind="stable")[:M]
    return [grid[i] for i in order]


def nearest_pivot(w: ScalarisationVector, pivots: Sequence[ScalarisationVector]) -> int:
    """Index of the pivot whose Voronoi cell holds ``w`` (lowest index on ties)."""
    arr = np.array([p.weights for p in pivots])
    d = _sq_dist(arr, w.as_array())
    return int(np.argmin(d))


@dataclass(frozen=True)
class DecompositionConfig:
    m: int
    step1: float
    step2: float
    K: int
    M: int
    N: int
    pivot_mode: str = "drop-last"

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if not 0 < self.step2 <= self.step1 <= 1:
            raise ValueError("need 0 < step2 <= step1 <= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 1 <= self.N <= self.M:
            raise ValueError("need 1 <= N <= M")
        if self.pivot_mode not in PIVOT_MODES:
            raise ValueError(f"unknown pivot mode {self.pivot_mode!r}")


def default_decomposition(m: int, variant: str = "ucb") -> DecompositionConfig:
    """Default decomposition settings for 2 and 3 objectives."""
    fine = variant in ("ucb", "mean")
    if m == 2:
        return DecompositionConfig(
            m=2, step1=0.1, step2=0.01 if fine else 0.1, K=10,
            M=100 if fine else 10, N=1 if variant == "fixed" else 10,
            pivot_mode="drop-last")
    if m == 3:
        return DecompositionConfig(
            m=3, step1=0.1, step2=0.05 if fine else 0.1, K=36,
            M=117 if fine else 36, N=1 if variant == "fixed" else 10,
            pivot_mode="interior-only")
    raise ValueError(f"no default decomposition for m={m}")


@dataclass
class SubSpace:
    index: int
    pivot: ScalarisationVector
    candidates: list[ScalarisationVector]
    working_pool: list[ScalarisationVector] = field(default_factory=list)

    def set_pool(self, pool: Sequence[ScalarisationVector], N: int) -> None:
        pool = list(pool)
        if len(pool) > N:
            raise ValueError(f"working pool of {len(pool)} exceeds N={N}")
        cands = set(self.candidates)
        if any(w not in cands for w in pool):
            raise ValueError("working pool must be a subset of the candidates")
        self.working_pool = pool


def decompose(config: DecompositionConfig) -> list[SubSpace]:
    """Build the K sub-spaces; each pool starts as the sub-space pivot."""
    pivots = generate_pivots(config.m, config.step1, config.pivot_mode, config.K)
    subspaces = []
    for k, p in enumerate(pivots):
        cands = generate_candidates(p, config.step2, config.M)
        # the pivot itself is the warm-up pool; keep it a member of the candidate list
        if p not in cands:
            cands = [p] + cands[:-1]
        subspaces.append(SubSpace(index=k, pivot=p, candidates=cands, working_pool=[p]))
    return subspaces


def nested_grid(pivot: ScalarisationVector, step: float,
                count: int) -> list[ScalarisationVector]:
    """Spread ordering of the ``count`` grid points nearest to ``pivot``.

    Points are ordered greedily by largest distance to those already
    chosen, starting from the nearest point.  Prefixes of the result are
    therefore nested and spread over the neighbourhood.
    """
    pts = generate_candidates(pivot, step, count)
    arr = np.array([p.weights for p in pts])
    chosen = [0]
    dmin = _sq_dist(arr, arr[0])
    for _ in range(1, len(pts)):
        dmin[chosen] = -1.0
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, _sq_dist(arr, arr[nxt]))
    return [pts[i] for i in chosen]


def write_weights_csv(path, weights: Sequence[ScalarisationVector]) -> None:
    m = weights[0].m if weights else 0
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([f"w{j + 1}" for j in range(m)])
        for w in weights:
            wr.writerow([f"{x:.9f}" for x in w.weights])


def read_weights_csv(path) -> list[ScalarisationVector]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    out = []
    for r in rows:
        vals = [float(x) for x in r]
        s = math.fsum(vals)
        out.append(ScalarisationVector(tuple(v / s for v in vals)))
    return out


def stars_and_bars(n: int, m: int) -> int:
    return math.comb(n + m - 1, m - 1)


__all__ = [
    "ScalarisationVector", "SubSpace", "DecompositionConfig", "NonDivisibleStep",
    "PivotCountMismatch", "InsufficientGrid", "generate_simplex_grid",
    "generate_pivots", "generate_candidates", "nearest_pivot", "decompose",
    "default_decomposition", "nested_grid", "write_weights_csv",
    "read_weights_csv", "stars_and_bars",
]
