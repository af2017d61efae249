"""UCB selection of conditioning vectors by prospective front hypervolume."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import hypervolume, pareto_filter, reference_point
from .surrogate import UnfittedSurrogate

STRATEGIES = ("sequential-greedy", "sort-topN")


class InvalidStage(ValueError):
    pass


class EmptyCandidates(ValueError):
    pass


@dataclass
class CandidateScore:
    w: tuple[float, ...]
    predicted: np.ndarray
    hv_if_added: float
    sigma: np.ndarray | None = None


def beta(t_prime: int) -> float:
    """Exploration weight ``sqrt(ln(2 t') / t')`` for acquisition stage ``t' >= 1``."""
    if t_prime < 1:
        raise InvalidStage(f"stage index must be >= 1, got {t_prime}")
    return math.sqrt(math.log(2.0 * t_prime) / t_prime)


def ucb_vector(ensembles_k, current_values, w, t_prime: int | None = None,
               beta_value: float | None = None) -> np.ndarray:
    """Optimistic objective vector: current value + predicted change + beta * sigma.

    ``ensembles_k`` holds one fitted ensemble per objective.  Pass
    ``beta_value`` to override the schedule (0 gives the mean prediction).
    """
    if ensembles_k is None or any(e is None for e in ensembles_k):
        raise UnfittedSurrogate("no fitted surrogate for this sub-space")
    b = beta(t_prime) if beta_value is None else beta_value
    out = np.array(current_values, dtype=float)
    for j, ens in enumerate(ensembles_k):
        mean, sigma = ens.predict(w)
        out[j] += mean + b * sigma
    return out


def _wkey(w):
    return tuple(float(x) for x in getattr(w, "weights", w))


def select_weights(candidates: Sequence, predicted, base_front, N: int, ref,
                   strategy: str = "sequential-greedy") -> list[CandidateScore]:
    """Pick ``N`` candidates whose predicted vectors add the most hypervolume.

    ``predicted[i]`` is the optimistic vector for ``candidates[i]``.
    ``sequential-greedy`` adds one vector at a time, rescoring the rest
    against the base front plus everything chosen so far.  ``sort-topN``
    scores each candidate once against the base front and keeps the best
    ``N``.  Equal scores go to the lexicographically smaller ``w``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not candidates:
        raise EmptyCandidates("no candidates to select from")
    keys = [_wkey(w) for w in candidates]
    P = np.asarray(predicted, dtype=float)
    if N > len(candidates):
        raise ValueError(f"N={N} exceeds {len(candidates)} candidates")
    base = np.asarray(base_front, dtype=float).reshape(-1, P.shape[1])
    ref = np.asarray(ref, dtype=float)

    def score(front, i):
        return hypervolume(np.vstack([front, P[i:i + 1]]), ref)

    remaining = list(range(len(candidates)))
    chosen: list[CandidateScore] = []
    if strategy == "sort-topN":
        front = pareto_filter(base) if len(base) else base
        scored = sorted(((score(front, i), keys[i], i) for i in remaining),
                        key=lambda t: (-t[0], t[1]))
        for hv, key, i in scored[:N]:
            chosen.append(CandidateScore(key, P[i].copy(), hv))
        return chosen

    front = pareto_filter(base) if len(base) else base
    for _ in range(N):
        best = min(((score(front, i), keys[i], i) for i in remaining),
                   key=lambda t: (-t[0], t[1]))
        hv, key, i = best
        chosen.append(CandidateScore(key, P[i].copy(), hv))
        remaining.remove(i)
        front = pareto_filter(np.vstack([front, P[i:i + 1]]))
    return chosen


def acquire(ensembles_k, current_values, candidates, base_front, N: int, t_prime: int,
            ref=None, strategy: str = "sequential-greedy",
            beta_value: float | None = None) -> list[CandidateScore]:
    """Build optimistic vectors for every candidate and select ``N`` of them.

    ``current_values[i]`` is the latest evaluation of ``candidates[i]``.
    Without an explicit ``ref`` the reference point sits 1% of the range
    below the componentwise minimum of base front and predictions.
    """
    b = beta(t_prime) if beta_value is None else beta_value
    V = np.asarray(current_values, dtype=float)
    W = np.array([_wkey(w) for w in candidates])
    means = np.empty_like(V)
    sigmas = np.empty_like(V)
    for j, ens in enumerate(ensembles_k):
        if ens is None:
            raise UnfittedSurrogate("no fitted surrogate for this sub-space")
        means[:, j], sigmas[:, j] = ens.predict_many(W)
    predicted = V + means + b * sigmas
    if ref is None:
        base = np.asarray(base_front, dtype=float).reshape(-1, V.shape[1])
        ref = reference_point(np.vstack([base, predicted]))
    picks = select_weights(candidates, predicted, base_front, N, ref, strategy)
    index = {k: i for i, k in enumerate(map(tuple, W.tolist()))}
    for c in picks:
        c.sigma = sigmas[index[c.w]].copy()
    return picks


def mean_select_weights(candidates, predicted_means, base_front, N, ref,
                        strategy: str = "sequential-greedy"):
    """Selection on mean predictions only (the ``beta = 0`` ablation)."""
    return select_weights(candidates, predicted_means, base_front, N, ref, strategy)
