import math
from dataclasses import replace

import numpy as np
import pytest

from moppo.envs import make_env
from moppo.metrics import hypervolume, pareto_filter
from moppo.orchestrator import (
    ConfigError,
    ExperimentConfig,
    evaluate_policy,
    interpolation_sweep,
    run_experiment,
    run_fixed,
    run_mean,
    run_ucb,
)
from moppo.policy import WeightConditionedPolicy
from moppo.ppo import PPOConfig
from moppo.weightspace import DecompositionConfig, decompose


def bandit_cfg(variant="ucb", **kw):
    base = dict(
        variant=variant, env="concave-bandit",
        decomposition=DecompositionConfig(m=2, step1=1.0, step2=0.1, K=2, M=6, N=2,
                                          pivot_mode="include-endpoints"),
        ppo=PPOConfig(buffer_size=32, num_envs=32, epochs=2, minibatch=16),
        seeds=[0, 1], warmup=1, stage_length=1, stages=4, hidden=(8, 8),
        reference_point=(0.0, 0.0))
    base.update(kw)
    return ExperimentConfig(**base)


def pm_cfg(variant="ucb", **kw):
    base = dict(
        variant=variant, env="pointmass-2",
        decomposition=DecompositionConfig(m=2, step1=0.5, step2=0.1, K=2, M=4, N=2,
                                          pivot_mode="drop-last"),
        ppo=PPOConfig(buffer_size=100, num_envs=2, epochs=1, minibatch=50),
        seeds=[3], warmup=1, stage_length=1, stages=3, hidden=(8, 8))
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def ucb_run():
    return run_ucb(bandit_cfg())


class TestValidation:
    def test_bad_variant(self):
        with pytest.raises(ConfigError):
            bandit_cfg("best").validate()

    def test_bad_env_lists_valid(self):
        with pytest.raises(ConfigError, match="pointmass-2"):
            bandit_cfg(env="mujoco").validate()

    def test_m_mismatch(self):
        with pytest.raises(ConfigError):
            bandit_cfg(env="pointmass-3").validate()

    def test_zero_stages(self):
        with pytest.raises(ConfigError):
            bandit_cfg(stages=0).validate()


class TestSchedule:
    def test_archive_accounting(self, ucb_run):
        assert ucb_run.archive.live_policies == 4
        assert all(r.live_policies == 4 for r in ucb_run.reports)
        assert len(ucb_run.trainers) == 4

    def test_reports_shape(self, ucb_run):
        assert [(r.stage, r.seed) for r in ucb_run.reports] == \
            [(z, s) for z in range(5) for s in (0, 1)]
        assert [r.iteration for r in ucb_run.reports if r.seed == 0] == [1, 2, 3, 4, 5]

    def test_hv_non_decreasing(self, ucb_run):
        for s in (0, 1):
            hv = [r.hv for r in ucb_run.reports if r.seed == s]
            assert all(b >= a for a, b in zip(hv, hv[1:]))

    def test_stage_one_pools_are_pivots(self, ucb_run):
        subs = decompose(bandit_cfg().decomposition)
        for stage in (0, 1):
            for (s, k), pool in ucb_run.pools[stage].items():
                assert pool == [subs[k].pivot.weights]

    def test_pools_after_acquisition(self, ucb_run):
        subs = decompose(bandit_cfg().decomposition)
        for (s, k), pool in ucb_run.pools[3].items():
            assert len(pool) == 2 == len(set(pool))
            assert set(pool) <= {c.weights for c in subs[k].candidates}

    def test_selection_log_beta(self, ucb_run):
        from moppo.acquisition import beta

        for row in ucb_run.selection_log:
            assert row["beta"] == beta(row["stage"])

    def test_warmup_matches_fixed(self, ucb_run):
        fixed = run_fixed(bandit_cfg())
        for t_u, t_f in zip(ucb_run.trainers, fixed.trainers):
            assert (t_u.seed, t_u.k) == (t_f.seed, t_f.k)
        stage0 = lambda res: sorted((r.seed, r.k, r.w, r.value) for r in res.archive.records
                                    if r.stage == 0 and r.w in {(0.0, 1.0), (1.0, 0.0)})
        assert stage0(ucb_run) == stage0(fixed)

    def test_zero_beta_is_mean_variant(self):
        a = run_ucb(bandit_cfg(), beta_mode="zero")
        b = run_mean(bandit_cfg())
        assert [r.__dict__ for r in a.reports] == [r.__dict__ for r in b.reports]
        assert a.selection_log == b.selection_log
        assert a.archive.records == b.archive.records

    def test_deterministic_across_workers(self):
        a = run_experiment(pm_cfg(), workers=1)
        b = run_experiment(pm_cfg(), workers=2)
        assert [r.__dict__ for r in a.reports] == [r.__dict__ for r in b.reports]
        for ta, tb in zip(a.trainers, b.trainers):
            assert ta.policy.get_params().tobytes() == tb.policy.get_params().tobytes()

    @pytest.mark.parametrize("variant", ["fixed", "random", "mean"])
    def test_other_variants_run(self, variant):
        res = run_experiment(pm_cfg(variant))
        assert len(res.reports) == 4
        if variant == "random":
            subs = decompose(pm_cfg().decomposition)
            assert len({r.w for r in res.archive.records if r.k == 0}) == len(subs[0].candidates)

    def test_three_objectives(self):
        cfg = pm_cfg(env="pointmass-3",
                     decomposition=DecompositionConfig(m=3, step1=0.25, step2=0.125, K=3, M=3, N=2,
                                                       pivot_mode="interior-only"),
                     ppo=PPOConfig(buffer_size=50, num_envs=1, epochs=1, minibatch=50))
        res = run_experiment(cfg)
        assert res.archive.m == 3
        assert all(np.isfinite(r.hv) for r in res.reports)


def test_fixed_bandit_reaches_axis_optima():
    cfg = bandit_cfg("fixed", warmup=60, stages=1, hidden=(32, 32),
                     ppo=PPOConfig(buffer_size=128, num_envs=128))
    res = run_fixed(cfg)
    for s in cfg.seeds:
        pts = res.archive.points(seed=s, stage=cfg.stages)
        assert np.min(np.linalg.norm(pts - [1, 0], axis=1)) < 0.05
        assert np.min(np.linalg.norm(pts - [0, 1], axis=1)) < 0.05
        assert hypervolume(pareto_filter(pts), (0, 0)) <= math.pi / 4


def test_evaluate_policy_episode_count_irrelevant():
    env = make_env("pointmass-2")
    p = WeightConditionedPolicy.init(2, 1, 2, np.random.default_rng(0), hidden=(8, 8))
    a = evaluate_policy(p, env, (0.3, 0.7), episodes=1)
    b = evaluate_policy(p, env, (0.3, 0.7), episodes=10)
    assert a.shape == (2,)
    np.testing.assert_array_equal(a, b)


def test_interpolation_monotone(ucb_run):
    env = make_env("concave-bandit")
    pols = {(t.k, t.seed): t.policy for t in ucb_run.trainers}
    rows = interpolation_sweep(pols, ucb_run.subspaces, env, [1, 3, 5, 10], ref=(0, 0))
    hv = [r["hv"] for r in rows]
    assert all(b >= a for a, b in zip(hv, hv[1:]))
    with pytest.raises(ValueError):
        interpolation_sweep(pols, ucb_run.subspaces, env, [5, 3])


def test_interpolation_nested_per_seed(ucb_run):
    env = make_env("concave-bandit")
    pols = {(t.k, t.seed): t.policy for t in ucb_run.trainers}
    rows = interpolation_sweep(pols, ucb_run.subspaces, env, [2, 4, 8], ref=(0, 0))
    per_seed = np.array([r["hv_per_seed"] for r in rows])
    assert np.all(np.diff(per_seed, axis=0) >= 0)


def test_with_variant_keeps_config():
    cfg = bandit_cfg()
    res = run_fixed(cfg, workers=1)
    assert res.config == replace(cfg, variant="fixed")
