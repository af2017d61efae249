"""Training loops for the Fixed, Random, Mean and UCB variants.

Every variant follows the same schedule so budgets line up: ``Q`` initial
iterations, an evaluation (stage 0), then ``Z`` stages of ``C`` training
iterations each followed by an evaluation.  The variants differ only in
which conditioning vectors a policy trains and is evaluated on:

* fixed  -- the sub-space pivot, always;
* random -- uniform draws from the sub-space candidates; evaluated on all of them;
* ucb    -- the pivot during warm-up and stage 1, afterwards a working pool of
  ``N`` candidates chosen by optimistic hypervolume gain;
* mean   -- as ucb with the exploration weight fixed at zero.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .acquisition import acquire, beta
from .envs import MOEnv, make_env
from .metrics import front_summary, hypervolume, pareto_filter, reference_point, sparsity
from .neural import AdamState
from .policy import WeightConditionedPolicy
from .ppo import PPOConfig, WeightSampler, train_iteration
from .surrogate import SurrogateDataset, fit_ensemble
from .weightspace import DecompositionConfig, SubSpace, decompose, nested_grid

log = logging.getLogger(__name__)

VARIANTS = ("fixed", "random", "mean", "ucb")


class ConfigError(ValueError):
    pass


@dataclass
class SurrogateConfig:
    penalty: float = 1e-3
    l1_ratio: float = 0.5
    bags: int = 10
    max_iter: int = 10_000
    tol: float = 1e-7


@dataclass
class ExperimentConfig:
    variant: str
    env: str
    decomposition: DecompositionConfig
    ppo: PPOConfig = field(default_factory=PPOConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    warmup: int = 10
    stage_length: int = 5
    stages: int = 10
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    strategy: str = "sequential-greedy"
    eval_episodes: int = 1
    evaluate_all_candidates: bool = False
    reference_point: tuple[float, ...] | None = None
    hidden: tuple[int, ...] = (64, 64)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        try:
            env = make_env(self.env)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        if self.decomposition.m != env.spec.m:
            raise ConfigError(f"decomposition m={self.decomposition.m} but {self.env} has "
                              f"{env.spec.m} objectives")
        if self.warmup < 1 or self.stage_length < 1 or self.stages < 1:
            raise ConfigError("warmup, stage_length and stages must all be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1")
        if self.strategy not in ("sequential-greedy", "sort-topN"):
            raise ConfigError(f"unknown acquisition strategy {self.strategy!r}")
        if self.reference_point is not None and len(self.reference_point) != env.spec.m:
            raise ConfigError("reference_point needs one value per objective")
        try:
            decompose(self.decomposition)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class Trainer:
    seed: int
    k: int
    policy: WeightConditionedPolicy
    adam: AdamState
    rng: np.random.Generator
    weight_rng: np.random.Generator
    iterations: int = 0


@dataclass(frozen=True)
class EvalRecord:
    stage: int
    seed: int
    k: int
    w: tuple[float, ...]
    value: tuple[float, ...]


@dataclass
class ParetoArchive:
    """Evaluation records of the live policies; the policies themselves are overwritten."""

    m: int
    policy_ids: frozenset = frozenset()
    records: list[EvalRecord] = field(default_factory=list)

    def add(self, rec: EvalRecord) -> None:
        if (rec.k, rec.seed) not in self.policy_ids:
            raise KeyError(f"record for unknown policy {(rec.k, rec.seed)}")
        self.records.append(rec)

    @property
    def live_policies(self) -> int:
        return len(self.policy_ids)

    def points(self, seed=None, upto_stage=None, stage=None) -> np.ndarray:
        pts = [r.value for r in self.records
               if (seed is None or r.seed == seed)
               and (upto_stage is None or r.stage <= upto_stage)
               and (stage is None or r.stage == stage)]
        return np.array(pts, dtype=float).reshape(len(pts), self.m)

    def select(self, seed=None, upto_stage=None) -> list[EvalRecord]:
        return [r for r in self.records
                if (seed is None or r.seed == seed)
                and (upto_stage is None or r.stage <= upto_stage)]

    def ccs(self, seed=None, upto_stage=None) -> list[EvalRecord]:
        """Records on the non-dominated front (first copy of duplicates)."""
        recs = self.select(seed, upto_stage)
        if not recs:
            return []
        from .metrics import non_dominated_mask

        mask = non_dominated_mask(np.array([r.value for r in recs]))
        return [r for r, keep in zip(recs, mask) if keep]


@dataclass
class StageReport:
    stage: int
    seed: int
    iteration: int
    hv: float
    eu: float
    sparsity: float
    n_front: int
    live_policies: int
    mean_returns: list[float]


@dataclass
class RunResult:
    config: ExperimentConfig
    archive: ParetoArchive
    reports: list[StageReport]
    reference: np.ndarray
    trainers: list[Trainer]
    subspaces: list[SubSpace]
    training_log: list[dict]
    selection_log: list[dict]
    surrogate_log: list[dict]
    stage_seconds: list[float]
    pools: dict


# ---------------------------------------------------------------------------
# evaluation


def evaluate_many(policy: WeightConditionedPolicy, env: MOEnv, ws) -> np.ndarray:
    """Undiscounted returns of mean-action rollouts, one lane per conditioning vector."""
    W = np.atleast_2d(np.asarray([getattr(w, "weights", w) for w in ws], dtype=float))
    states = np.tile(env.initial_state(), (len(W), 1))
    total = np.zeros((len(W), env.spec.m))
    for _ in range(env.spec.horizon):
        actions = policy.mean_action(states, W)
        states, r = env.dynamics(states, env.clip(actions))
        total += r
    return total


def evaluate_policy(policy: WeightConditionedPolicy, env: MOEnv, w,
                    episodes: int = 1) -> np.ndarray:
    """Mean undiscounted return over ``episodes`` deterministic episodes.

    Start states, dynamics and mean actions are all deterministic, so each
    episode repeats the first one and a single rollout is the exact mean.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    return evaluate_many(policy, env, [w])[0]


# ---------------------------------------------------------------------------
# training


def _make_trainer(cfg: ExperimentConfig, env: MOEnv, seed: int, k: int) -> Trainer:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(k,))
    init_ss, act_ss, w_ss = ss.spawn(3)
    spec = env.spec
    policy = WeightConditionedPolicy.init(spec.state_dim, spec.action_dim, spec.m,
                                          np.random.default_rng(init_ss), cfg.hidden)
    return Trainer(seed, k, policy, AdamState.like(policy.get_params()),
                   np.random.default_rng(act_ss), np.random.default_rng(w_ss))


def _train_task(args):
    trainer, env_name, pool, iterations, ppo_cfg = args
    env = make_env(env_name)
    sampler = WeightSampler(pool)
    rows = []
    for _ in range(iterations):
        stats = train_iteration(trainer.policy, trainer.adam, env, sampler, ppo_cfg,
                                trainer.rng, trainer.weight_rng)
        trainer.iterations += 1
        if stats["nan"]:
            log.warning("NaN in PPO update (seed %d, k %d, iteration %d); update skipped",
                        trainer.seed, trainer.k, trainer.iterations)
        rows.append({"iteration": trainer.iterations, "seed": trainer.seed, "k": trainer.k,
                     "mean_return": stats["mean_return"], "actor_loss": stats["actor_loss"],
                     "critic_loss": stats["critic_loss"],
                     "clip_fraction": stats["clip_fraction"]})
    return trainer, rows


def _train_all(trainers, env_name, pools, iterations, ppo_cfg, workers):
    tasks = [(t, env_name, pools[(t.seed, t.k)], iterations, ppo_cfg) for t in trainers]
    if workers <= 1:
        results = [_train_task(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_train_task, tasks))
    new_trainers = [r[0] for r in results]
    rows = [row for r in results for row in r[1]]
    return new_trainers, rows


def _key(w):
    return tuple(float(x) for x in getattr(w, "weights", w))


def run_experiment(cfg: ExperimentConfig, workers: int = 1, beta_mode: str | None = None,
                   progress=None) -> RunResult:
    """Train and evaluate every (seed, sub-space) policy under ``cfg.variant``.

    ``beta_mode`` overrides the exploration weight of the ucb variant:
    ``"schedule"`` (default for ucb) or ``"zero"`` (the mean variant).
    """
    cfg.validate()
    variant = cfg.variant
    if beta_mode is None:
        beta_mode = "zero" if variant == "mean" else "schedule"
    adaptive = variant in ("ucb", "mean")
    env = make_env(cfg.env)
    m = env.spec.m
    subspaces = decompose(cfg.decomposition)
    K = len(subspaces)
    trainers = [_make_trainer(cfg, env, s, k) for s in cfg.seeds for k in range(K)]
    archive = ParetoArchive(m, frozenset((k, s) for s in cfg.seeds for k in range(K)))
    fixed_ref = None if cfg.reference_point is None else np.asarray(cfg.reference_point, float)

    def train_pool(s, k):
        sub = subspaces[k]
        if variant == "random":
            return list(sub.candidates)
        return [sub.pivot]

    pools = {(s, k): train_pool(s, k) for s in cfg.seeds for k in range(K)}
    known: dict = {}      # (seed, k) -> {w: value} latest evaluation of every evaluated w
    fresh_prev: dict = {}  # (seed, k) -> {w: value} from the previous stage
    datasets = {(s, k, j): SurrogateDataset(m) for s in cfg.seeds for k in range(K)
                for j in range(m)}
    training_log, selection_log, surrogate_log = [], [], []
    stage_seconds = []
    pool_history = {}

    def eval_set(s, k, stage):
        sub = subspaces[k]
        if variant == "fixed":
            return [sub.pivot]
        if variant == "random":
            return list(sub.candidates)
        if cfg.evaluate_all_candidates or stage <= 1:
            # the first two evaluations cover every candidate so the surrogate
            # starts from a full batch of deltas
            return list(sub.candidates)
        return list(pools[(s, k)])

    def evaluate_stage(stage):
        fresh = {}
        for t in trainers:
            ws = eval_set(t.seed, t.k, stage)
            vals = evaluate_many(t.policy, env, ws)
            fresh[(t.seed, t.k)] = {}
            for w, v in zip(ws, vals):
                key = _key(w)
                fresh[(t.seed, t.k)][key] = v
                known.setdefault((t.seed, t.k), {})[key] = v
                archive.add(EvalRecord(stage, t.seed, t.k, key, tuple(float(x) for x in v)))
        return fresh

    t0 = time.perf_counter()
    trainers, rows = _train_all(trainers, cfg.env, pools, cfg.warmup, cfg.ppo, workers)
    training_log += rows
    fresh_prev = evaluate_stage(0)
    stage_seconds.append(time.perf_counter() - t0)
    pool_history[0] = {key: [_key(w) for w in p] for key, p in pools.items()}
    if progress:
        progress(0, cfg.stages)

    for z in range(1, cfg.stages + 1):
        t0 = time.perf_counter()
        pool_history[z] = {key: [_key(w) for w in p] for key, p in pools.items()}
        trainers, rows = _train_all(trainers, cfg.env, pools, cfg.stage_length, cfg.ppo,
                                    workers)
        training_log += rows
        fresh = evaluate_stage(z)

        if adaptive and z < cfg.stages:
            b = 0.0 if beta_mode == "zero" else beta(z)
            for s in cfg.seeds:
                base = np.array([v for k in range(K) for v in fresh[(s, k)].values()])
                for k in range(K):
                    prev, cur = fresh_prev[(s, k)], fresh[(s, k)]
                    shared = [w for w in cur if w in prev]
                    for j in range(m):
                        ds = datasets[(s, k, j)]
                        for w in shared:
                            delta = float(cur[w][j] - prev[w][j])
                            ds.add(w, delta, z)
                            surrogate_log.append({"stage": z, "seed": s, "k": k, "j": j,
                                                  "w": w, "delta": delta})
                    if any(len(datasets[(s, k, j)]) < 2 for j in range(m)):
                        log.info("surrogate for (seed %d, k %d) has too few rows at stage %d;"
                                 " pool unchanged", s, k, z)
                        continue
                    try:
                        ensembles = [
                            fit_ensemble(datasets[(s, k, j)], cfg.surrogate.bags,
                                         cfg.surrogate.penalty, cfg.surrogate.l1_ratio,
                                         np.random.default_rng([s, k, j, z]),
                                         max_iter=cfg.surrogate.max_iter,
                                         tol=cfg.surrogate.tol)
                            for j in range(m)]
                    except (ValueError, FloatingPointError) as exc:
                        log.warning("surrogate fit failed for (seed %d, k %d) at stage %d: %s",
                                    s, k, z, exc)
                        continue
                    sub = subspaces[k]
                    cands = list(sub.candidates)
                    current = np.array([known[(s, k)][_key(w)] for w in cands])
                    picks = acquire(ensembles, current, cands, base, cfg.decomposition.N, z,
                                    ref=fixed_ref, strategy=cfg.strategy, beta_value=b)
                    lookup = {_key(w): w for w in cands}
                    pools[(s, k)] = [lookup[p.w] for p in picks]
                    for rank, p in enumerate(picks):
                        selection_log.append({
                            "stage": z, "seed": s, "k": k, "rank": rank, "w": p.w,
                            "predicted_hv": p.hv_if_added, "beta": b,
                            "sigma": tuple(float(x) for x in p.sigma)})
        fresh_prev = fresh
        stage_seconds.append(time.perf_counter() - t0)
        if progress:
            progress(z, cfg.stages)

    ref = fixed_ref if fixed_ref is not None else reference_point(archive.points())
    reports = stage_reports(archive, cfg, ref, trainers)
    return RunResult(cfg, archive, reports, ref, trainers, subspaces, training_log,
                     selection_log, surrogate_log, stage_seconds, pool_history)


def stage_reports(archive: ParetoArchive, cfg: ExperimentConfig, ref,
                  trainers: Sequence[Trainer]) -> list[StageReport]:
    """Front quality of the cumulative archive after every stage, per seed."""
    from .metrics import default_eu_weights

    eu_w = default_eu_weights(archive.m)
    K = cfg.decomposition.K
    out = []
    for z in range(cfg.stages + 1):
        for s in cfg.seeds:
            pts = archive.points(seed=s, upto_stage=z)
            summ = front_summary(pts, ref, eu_w)
            means = []
            for k in range(K):
                recs = [r for r in archive.records if r.stage == z and r.seed == s and r.k == k]
                means.append(float(np.mean([np.dot(r.w, r.value) for r in recs]))
                             if recs else float("nan"))
            out.append(StageReport(z, s, cfg.warmup + z * cfg.stage_length, summ["hv"],
                                   summ["eu"], summ["sparsity"], summ["n_front"],
                                   archive.live_policies, means))
    return out


def run_fixed(cfg: ExperimentConfig, **kw) -> RunResult:
    return run_experiment(_with_variant(cfg, "fixed"), **kw)


def run_random(cfg: ExperimentConfig, **kw) -> RunResult:
    return run_experiment(_with_variant(cfg, "random"), **kw)


def run_ucb(cfg: ExperimentConfig, beta_mode: str = "schedule", **kw) -> RunResult:
    """UCB variant; ``beta_mode="zero"`` yields the mean-prediction ablation."""
    if beta_mode not in ("schedule", "zero"):
        raise ValueError(f"unknown beta_mode {beta_mode!r}")
    return run_experiment(_with_variant(cfg, "ucb"), beta_mode=beta_mode, **kw)


def run_mean(cfg: ExperimentConfig, **kw) -> RunResult:
    return run_experiment(_with_variant(cfg, "mean"), **kw)


def _with_variant(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    from dataclasses import replace

    return replace(cfg, variant=variant)


# ---------------------------------------------------------------------------
# interpolation


def fine_step_for(m: int, K: int, count: int) -> float:
    """Grid step whose simplex grid holds at least ``count`` points per sub-space."""
    from math import comb

    n = 1
    while comb(n + m - 1, m - 1) < K * count:
        n += 1
    return 1.0 / n


def interpolation_sweep(policies: dict, subspaces: Sequence[SubSpace], env: MOEnv,
                        counts: Sequence[int], ref=None, step: float | None = None) -> list[dict]:
    """HV and sparsity when each policy is evaluated on ``n``-point nested grids.

    ``policies`` maps ``(k, seed)`` to a policy.  Each sub-space gets one
    spread-ordered grid of ``max(counts)`` points around its pivot; the grid
    for ``n`` is its first ``n`` points, so the sets are nested.  Every
    vector is evaluated once and reused across counts.
    """
    counts = list(counts)
    if not counts or any(c < 1 for c in counts) or counts != sorted(set(counts)):
        raise ValueError("counts must be positive and strictly ascending")
    top = counts[-1]
    m = env.spec.m
    step = step or fine_step_for(m, len(subspaces), top)
    grids = {sub.index: nested_grid(sub.pivot, step, top) for sub in subspaces}
    values = {}
    for (k, seed), pol in policies.items():
        values[(k, seed)] = evaluate_many(pol, env, grids[k])
    seeds = sorted({s for _, s in policies})
    if ref is None:
        ref = reference_point(np.vstack(list(values.values())))
    rows = []
    for n in counts:
        hvs, sps = [], []
        for s in seeds:
            pts = np.vstack([v[:n] for (k, seed), v in sorted(values.items()) if seed == s])
            front = pareto_filter(pts)
            hvs.append(hypervolume(front, ref))
            sps.append(sparsity(front) if len(front) >= 2 else 0.0)
        rows.append({"n": n, "hv": float(np.mean(hvs)), "hv_std": float(np.std(hvs)),
                     "sparsity": float(np.mean(sps)), "sparsity_std": float(np.std(sps)),
                     "hv_per_seed": hvs, "sparsity_per_seed": sps})
    return rows
