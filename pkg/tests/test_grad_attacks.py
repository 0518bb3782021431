import numpy as np
import pytest
import torch

from advbiom.grad_attacks import FgsmAttack, FgsmConfig, PgdAttack, PgdConfig, fgsm_attack, pgd_attack
from advbiom.matcher import EmbedderNet, Matcher


@pytest.fixture(scope="module")
def matcher():
    torch.manual_seed(11)
    net = EmbedderNet(in_channels=3, embedding_dim=16, base_channels=8)
    return Matcher(net, image_shape=(16, 16, 3), name="rnd")


@pytest.fixture()
def probe(rng):
    return rng.uniform(-0.8, 0.8, size=(16, 16, 3)).astype(np.float32)


class TestConfigs:
    def test_fgsm_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            FgsmConfig(epsilon=0.0)

    def test_pgd_rejects_bad_step(self):
        with pytest.raises(ValueError):
            PgdConfig(epsilon=0.05, step_size=0.1)
        with pytest.raises(ValueError):
            PgdConfig(epsilon=0.05, step_size=0.01, max_iters=0)


class TestFgsm:
    def test_exact_epsilon_at_active_pixels(self, matcher, probe):
        cfg = FgsmConfig(epsilon=0.05)
        result = fgsm_attack(matcher, probe, cfg)
        delta = result.x_adv - probe
        # wherever not clipped by the [-1,1] range and gradient nonzero,
        # the step is exactly +-epsilon
        interior = (probe > -1 + 0.06) & (probe < 1 - 0.06) & (delta != 0)
        assert interior.sum() > delta.size * 0.5
        np.testing.assert_allclose(np.abs(delta[interior]), 0.05, atol=1e-7)

    def test_range_valid(self, matcher, probe):
        result = fgsm_attack(matcher, probe, FgsmConfig(epsilon=0.3))
        assert result.x_adv.min() >= -1.0 and result.x_adv.max() <= 1.0

    def test_deterministic(self, matcher, probe):
        a = fgsm_attack(matcher, probe, FgsmConfig(epsilon=0.05))
        b = fgsm_attack(matcher, probe, FgsmConfig(epsilon=0.05))
        np.testing.assert_array_equal(a.x_adv, b.x_adv)

    def test_increases_feature_match_loss(self, matcher, probe):
        result = fgsm_attack(matcher, probe, FgsmConfig(epsilon=0.06))
        assert result.loss > result.loss_trace[0]
        assert result.score_after < result.score_before

    def test_estimator_transform(self, matcher, rng):
        X = rng.uniform(-0.5, 0.5, size=(3, 16, 16, 3)).astype(np.float32)
        est = FgsmAttack(matcher=matcher, epsilon=0.05)
        out = est.transform(X)
        assert out.shape == X.shape
        assert np.abs(out - X).max() <= 0.05 + 1e-6

    def test_estimator_requires_matcher(self):
        with pytest.raises(ValueError):
            FgsmAttack().fit()


class TestPgd:
    def test_projection_invariant_every_iterate(self, matcher, probe):
        cfg = PgdConfig(epsilon=0.06, step_size=0.02, max_iters=8)
        seen = []

        def callback(step, iterate):
            seen.append(step)
            assert np.abs(iterate - probe).max() <= cfg.epsilon + 1e-6
            assert iterate.min() >= -1.0 and iterate.max() <= 1.0

        result = pgd_attack(matcher, probe, cfg, callback=callback)
        assert seen == list(range(8))
        assert np.abs(result.x_adv - probe).max() <= cfg.epsilon + 1e-6

    def test_single_step_equals_fgsm(self, matcher, probe):
        eps = 0.05
        pgd_result = pgd_attack(matcher, probe, PgdConfig(epsilon=eps, step_size=eps, max_iters=1))
        fgsm_result = fgsm_attack(matcher, probe, FgsmConfig(epsilon=eps))
        np.testing.assert_array_equal(pgd_result.x_adv, fgsm_result.x_adv)

    def test_best_iterate_at_least_first_step(self, matcher, probe):
        result = pgd_attack(matcher, probe, PgdConfig(epsilon=0.06, step_size=0.015, max_iters=10))
        assert result.loss >= result.loss_trace[1] - 1e-9

    def test_flagged_when_threshold_unreachable(self, matcher, probe):
        cfg = PgdConfig(epsilon=0.01, step_size=0.01, max_iters=2, success_threshold=-2.0)
        result = pgd_attack(matcher, probe, cfg)
        assert result.reached_threshold is False

    def test_early_stop_when_threshold_met(self, matcher, probe):
        cfg = PgdConfig(epsilon=0.2, step_size=0.05, max_iters=50, success_threshold=0.9)
        result = pgd_attack(matcher, probe, cfg)
        if result.reached_threshold:
            assert result.iterations < 50

    def test_deterministic(self, matcher, probe):
        cfg = PgdConfig(epsilon=0.06, step_size=0.02, max_iters=5)
        a = pgd_attack(matcher, probe, cfg)
        b = pgd_attack(matcher, probe, cfg)
        np.testing.assert_array_equal(a.x_adv, b.x_adv)
        assert a.loss_trace == b.loss_trace

    def test_random_start_stays_in_ball(self, matcher, probe):
        cfg = PgdConfig(epsilon=0.06, step_size=0.02, max_iters=3, random_start=True, seed=5)
        result = pgd_attack(matcher, probe, cfg)
        assert np.abs(result.x_adv - probe).max() <= cfg.epsilon + 1e-6

    def test_estimator_wrapper(self, matcher, rng):
        X = rng.uniform(-0.5, 0.5, size=(2, 16, 16, 3)).astype(np.float32)
        est = PgdAttack(matcher=matcher, epsilon=0.05, step_size=0.025, max_iters=3)
        out = est.transform(X)
        assert np.abs(out - X).max() <= 0.05 + 1e-6
