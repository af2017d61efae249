"""Bagged elastic-net surrogates for the per-stage change of an objective.

For every (policy, objective) pair a dataset of ``(w, delta)`` rows grows
by one row per evaluated conditioning vector each stage.  An ensemble of
``B`` elastic-net linear models, each fit to a bootstrap resample, gives a
mean prediction of the next change and the spread of its members.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class KeyMismatch(KeyError):
    pass


class DidNotConverge(RuntimeError):
    def __init__(self, msg, model=None):
        super().__init__(msg)
        self.model = model


class UnfittedSurrogate(RuntimeError):
    pass


def _key(w) -> tuple[float, ...]:
    return tuple(float(x) for x in getattr(w, "weights", w))


@dataclass
class SurrogateDataset:
    """Append-only rows of ``(stage, w, delta)``."""

    m: int
    stages: list[int] = field(default_factory=list)
    ws: list[tuple[float, ...]] = field(default_factory=list)
    deltas: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.deltas)

    def X(self) -> np.ndarray:
        return np.array(self.ws, dtype=float).reshape(len(self.ws), self.m)

    def y(self) -> np.ndarray:
        return np.array(self.deltas, dtype=float)

    def add(self, w, delta: float, stage: int = 0) -> None:
        if not np.isfinite(delta):
            raise ValueError("non-finite delta")
        self.ws.append(_key(w))
        self.deltas.append(float(delta))
        self.stages.append(stage)


def append_stage_data(dataset: SurrogateDataset, evals_z: Mapping, evals_next: Mapping,
                      stage: int = 0) -> SurrogateDataset:
    """Append ``later - earlier`` for each conditioning vector.

    Both maps go from ``w`` to the scalar objective value and must share
    the same keys.
    """
    a = {_key(k): v for k, v in evals_z.items()}
    b = {_key(k): v for k, v in evals_next.items()}
    if set(a) != set(b):
        raise KeyMismatch("evaluation maps are keyed by different w sets")
    for k in a:  # insertion order of the earlier map
        dataset.add(k, float(b[k]) - float(a[k]), stage)
    return dataset


@dataclass
class ElasticNetModel:
    coef: np.ndarray
    intercept: float
    lam: float
    rho: float
    n_iter: int = 0
    converged: bool = True

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.coef + self.intercept


def _soft(z: float, t: float) -> float:
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def fit_elastic_net(X, y, lam: float = 1e-3, rho: float = 0.5, max_iter: int = 10_000,
                    tol: float = 1e-7, strict: bool = False) -> ElasticNetModel:
    """Cyclic coordinate descent for the elastic net with a free intercept.

    Minimises ``1/(2n) ||y - b0 - X b||^2 + lam (rho |b|_1 + (1-rho)/2 |b|^2)``.
    Works on centred data through the Gram matrix, so a sweep costs
    ``O(p^2)`` regardless of ``n``.  Stops when no coefficient moves by more
    than ``tol`` in a sweep.  A single row centres to zero and gives the
    intercept-only model.  If ``max_iter`` sweeps pass without that, the
    last iterate is returned with ``converged=False`` (or
    :class:`DidNotConverge` is raised when ``strict``).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 1:
        raise ValueError("elastic net needs at least one row")
    if lam < 0 or not 0 <= rho <= 1:
        raise ValueError("need lam >= 0 and 0 <= rho <= 1")
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    G = (Xc.T @ Xc / n).tolist()
    c = (Xc.T @ yc / n).tolist()
    l1, l2 = lam * rho, lam * (1.0 - rho)
    b = [0.0] * p
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        max_step = 0.0
        for j in range(p):
            denom = G[j][j] + l2
            if denom <= 0.0:
                new = 0.0
            else:
                z = c[j] - sum(G[j][k] * b[k] for k in range(p) if k != j)
                new = _soft(z, l1) / denom
            max_step = max(max_step, abs(new - b[j]))
            b[j] = new
        if max_step < tol:
            converged = True
            break
    coef = np.array(b)
    model = ElasticNetModel(coef, float(ym - xm @ coef), lam, rho, it, converged)
    if not converged:
        msg = f"elastic net did not converge in {max_iter} sweeps"
        if strict:
            raise DidNotConverge(msg, model)
        log.warning(msg)
    return model


@dataclass
class SurrogateEnsemble:
    models: list[ElasticNetModel]

    def member_predictions(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return np.stack([mdl.predict(W) for mdl in self.models])

    def predict(self, w):
        """Mean and population standard deviation of the member predictions."""
        mean, sigma = self.predict_many([_key(w)])
        return float(mean[0]), float(sigma[0])

    def predict_many(self, W):
        preds = self.member_predictions(W)
        # offsets from the first member keep sigma exactly 0 when members agree
        d = preds - preds[0]
        dm = d.mean(axis=0)
        return preds[0] + dm, np.sqrt(((d - dm) ** 2).mean(axis=0))


def fit_ensemble(dataset: SurrogateDataset, B: int = 10, lam: float = 1e-3,
                 rho: float = 0.5, rng: np.random.Generator | None = None,
                 bootstrap: bool = True, max_iter: int = 10_000,
                 tol: float = 1e-7) -> SurrogateEnsemble:
    """Fit ``B`` models, each on an ``n``-row bootstrap resample."""
    if len(dataset) == 0:
        raise ValueError("empty surrogate dataset")
    if B < 1:
        raise ValueError("B must be >= 1")
    X, y = dataset.X(), dataset.y()
    n = len(y)
    rng = np.random.default_rng(0) if rng is None else rng
    models = []
    for _ in range(B):
        idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        models.append(fit_elastic_net(X[idx], y[idx], lam, rho, max_iter, tol))
    return SurrogateEnsemble(models)


def predict(ensemble: SurrogateEnsemble, w):
    return ensemble.predict(w)


def predict_objective(ensemble: SurrogateEnsemble, current_value: float, w) -> float:
    """Predicted objective after one more stage: current value plus mean change."""
    return float(current_value) + ensemble.predict(w)[0]


__all__: Sequence[str] = [
    "SurrogateDataset", "ElasticNetModel", "SurrogateEnsemble", "append_stage_data",
    "fit_elastic_net", "fit_ensemble", "predict", "predict_objective", "KeyMismatch",
    "DidNotConverge", "UnfittedSurrogate",
]
