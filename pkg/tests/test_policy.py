import math

import numpy as np
import pytest

from moppo.neural import DimensionMismatch
from moppo.policy import (
    LOG_STD_MIN,
    WeightConditionedPolicy,
    gaussian_log_prob,
    scalarise,
)


def make(state_dim=2, action_dim=1, m=2, seed=0, hidden=(8, 8)):
    return WeightConditionedPolicy.init(state_dim, action_dim, m, np.random.default_rng(seed),
                                        hidden=hidden)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


class TestAct:
    def test_degenerate_variance(self):
        p = make()
        p.log_std[:] = -20.0  # clamped to the minimum
        s = p.act(np.zeros(2), (0.5, 0.5), np.random.default_rng(0))
        assert s.std[0] == pytest.approx(math.exp(LOG_STD_MIN))
        assert abs(s.action[0] - s.mean[0]) < 3 * s.std[0]

    def test_peak_density(self):
        p = make(action_dim=2)
        p.log_std[:] = [0.3, -1.0]
        mean = p.mean_action(np.zeros(2), (0.3, 0.7))[0]
        lp = p.log_prob(np.zeros(2), (0.3, 0.7), mean)[0]
        assert lp == pytest.approx(-sum(ls + 0.5 * math.log(2 * math.pi) for ls in [0.3, -1.0]))

    def test_same_seed_same_sample(self):
        p = make()
        a = p.act(np.ones(2), (0.2, 0.8), np.random.default_rng(9))
        b = p.act(np.ones(2), (0.2, 0.8), np.random.default_rng(9))
        np.testing.assert_array_equal(a.action, b.action)
        assert a.log_prob == b.log_prob

    def test_batch_matches_single(self):
        p = make()
        S = np.random.default_rng(1).normal(size=(4, 2))
        W = np.array([[0.1, 0.9], [0.5, 0.5], [1.0, 0.0], [0.3, 0.7]])
        means, vals, _ = p.forward(S, W)
        for i in range(4):
            np.testing.assert_allclose(means[i], p.mean_action(S[i], W[i])[0], atol=1e-14)
            np.testing.assert_allclose(vals[i], p.value(S[i], W[i]), atol=1e-14)


class TestValue:
    def test_zero_critic(self):
        p = make()
        p.critic.params[:] = 0.0
        np.testing.assert_array_equal(p.value(np.ones(2), (0.5, 0.5)), [0.0, 0.0])

    @pytest.mark.parametrize("m", [2, 3])
    def test_shape(self, m):
        p = make(m=m)
        assert p.value(np.zeros(2), np.full(m, 1 / m)).shape == (m,)

    def test_conditioning_changes_output(self):
        p = make()
        d = p.value(np.zeros(2), (0.1, 0.9)) - p.value(np.zeros(2), (0.9, 0.1))
        assert np.linalg.norm(d) > 0

    def test_residual_pathway_probe(self):
        # with the residual rows of both heads zeroed, w still reaches the
        # output through the trunk input
        p = make()
        hdim = p.trunk.widths[-1]
        for head in (p.actor, p.critic):
            W, _ = head.layers()[0]
            W[hdim:] = 0.0
        d = p.value(np.zeros(2), (0.1, 0.9)) - p.value(np.zeros(2), (0.9, 0.1))
        assert np.linalg.norm(d) > 0
        # and with the trunk's w input rows also zeroed the output no longer depends on w
        Wt, _ = p.trunk.layers()[0]
        Wt[2:] = 0.0
        d = p.value(np.zeros(2), (0.1, 0.9)) - p.value(np.zeros(2), (0.9, 0.1))
        assert np.linalg.norm(d) == 0

    def test_wrong_w_dimension(self):
        with pytest.raises(DimensionMismatch):
            make().value(np.zeros(2), (0.2, 0.3, 0.5))


class TestScalarise:
    def test_examples(self):
        assert scalarise((1, 2), (0.5, 0.5)) == 1.5
        assert scalarise((7.5, -3), (1, 0)) == 7.5
        assert scalarise((3, 4, 5), (0.2, 0.3, 0.5)) == pytest.approx(4.3, abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            scalarise((1, 2, 3), (0.5, 0.5))

    def test_linear(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, v = rng.normal(size=3), rng.normal(size=3)
            w = rng.dirichlet(np.ones(3))
            a, b = rng.normal(size=2)
            assert scalarise(a * u + b * v, w) == pytest.approx(
                a * scalarise(u, w) + b * scalarise(v, w), abs=1e-12)


def test_log_prob_mean_gradient():
    rng = np.random.default_rng(0)
    mean, log_std, act = rng.normal(size=3), rng.normal(size=3) * 0.5, rng.normal(size=3)
    analytic = (act - mean) / np.exp(2 * log_std)
    num = np.array([(gaussian_log_prob(act, mean + e, log_std) - gaussian_log_prob(act, mean - e, log_std))
                    / 2e-6 for e in np.eye(3) * 1e-6])
    assert rel_err(analytic, num) < 1e-4


def test_backward_matches_finite_differences():
    p = make(action_dim=2, m=3, seed=4)
    rng = np.random.default_rng(1)
    S, W = rng.normal(size=(5, 2)), rng.dirichlet(np.ones(3), size=5)
    gm, gv, gl = rng.normal(size=(5, 2)), rng.normal(size=(5, 3)), rng.normal(size=2)

    def loss(flat):
        q = p.copy()
        q.set_params(flat)
        mean, val, _ = q.forward(S, W)
        return float((gm * mean).sum() + (gv * val).sum() + gl @ q.log_std)

    _, _, cache = p.forward(S, W)
    g = p.backward(cache, gm, gv, gl)
    base = p.get_params()
    num = np.array([(loss(base + e) - loss(base - e)) / 2e-6 for e in np.eye(base.size) * 1e-6])
    big = np.abs(num) > 1e-6
    assert rel_err(g[big], num[big]) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    p = make(action_dim=2, m=3)
    ck = p.to_checkpoint(seed=1, k=2)
    ck.save(tmp_path / "c.txt")
    from moppo.neural import Checkpoint
    q = WeightConditionedPolicy.from_checkpoint(Checkpoint.load(tmp_path / "c.txt"))
    assert q.get_params().tobytes() == p.get_params().tobytes()
    np.testing.assert_array_equal(q.value(np.ones(2), (0.2, 0.3, 0.5)),
                                  p.value(np.ones(2), (0.2, 0.3, 0.5)))
