import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from imgcurate.diffmath import (
    GuidanceConfig,
    desk_schedule,
    cfg_mix,
    ddim_sample,
    ddpm_sample,
    forward_noise,
    gaussian_analytic_denoiser,
    guided_prediction,
    make_schedule,
    training_loss,
)


class TestSchedule:
    def test_single_step(self):
        s = make_schedule("linear", 1, 0.1, 0.1)
        assert np.allclose(s.alpha_bar, [0.9])

    def test_constant_beta_closed_form(self):
        s = make_schedule("linear", 20, 0.05, 0.05)
        t = np.arange(1, 21)
        assert np.allclose(s.alpha_bar, 0.95**t, atol=1e-12)

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_alpha_bar_strictly_decreasing(self, kind):
        s = make_schedule(kind, 100, 1e-4, 0.02)
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert np.all(s.alpha_bar > 0) and np.all(s.alpha_bar <= 1)

    def test_recurrence_exact(self):
        s = make_schedule("linear", 50, 1e-4, 0.02)
        prev = 1.0
        for t in range(50):
            expected = prev * (1.0 - s.beta[t])
            assert s.alpha_bar[t] == expected
            prev = s.alpha_bar[t]

    def test_snr_strictly_decreasing(self):
        s = make_schedule("linear", 100, 1e-4, 0.02)
        snr = s.alpha_bar / (1.0 - s.alpha_bar)
        assert np.all(np.diff(snr) < 0)

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            make_schedule("linear", 10, 0.5, 0.1)
        with pytest.raises(ValueError):
            make_schedule("linear", 0, 0.1, 0.2)


class TestForwardNoise:
    def test_near_identity_at_tiny_beta(self):
        s = make_schedule("linear", 10, 1e-8, 1e-8)
        x = np.array([1.0, -2.0, 3.0])
        out = forward_noise(x, 10, np.ones(3), s)
        assert np.allclose(out, x, atol=1e-3)

    def test_zero_signal(self):
        s = make_schedule("linear", 10, 0.1, 0.2)
        eps = np.array([1.0, 2.0])
        out = forward_noise(np.zeros(2), 5, eps, s)
        assert np.allclose(out, np.sqrt(1 - s.alpha_bar[4]) * eps)

    def test_moments(self):
        s = make_schedule("linear", 50, 1e-4, 0.02)
        rng = np.random.default_rng(0)
        x = np.full(100_000, 2.0)
        for t in (1, 25, 50):
            eps = rng.standard_normal(100_000)
            xt = forward_noise(x, t, eps, s)
            abar = s.alpha_bar[t - 1]
            n = xt.size
            assert abs(xt.mean() - np.sqrt(abar) * 2.0) < 4.0 * np.sqrt(1 - abar) / np.sqrt(n)
            assert abs(xt.var() - (1 - abar)) / (1 - abar) < 0.05

    def test_shape_and_range_errors(self):
        s = make_schedule("linear", 10, 0.1, 0.2)
        with pytest.raises(ValueError):
            forward_noise(np.zeros(3), 5, np.zeros(4), s)
        with pytest.raises(ValueError):
            forward_noise(np.zeros(3), 11, np.zeros(3), s)


class TestTrainingLoss:
    def test_zero_on_equal(self):
        assert training_loss(np.ones(5), np.ones(5)) == 0.0

    def test_unit_example(self):
        assert training_loss(np.array([1.0, 0.0]), np.zeros(2)) == 1.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=64), rng.normal(size=64)
        acc = 0.0
        for x, y in zip(a, b):
            acc += (x - y) ** 2
        assert training_loss(a, b) == pytest.approx(acc, rel=1e-12)

    def test_compose_with_forward(self):
        s = make_schedule("linear", 10, 0.1, 0.2)
        eps = np.random.default_rng(2).normal(size=8)
        forward_noise(np.zeros(8), 5, eps, s)
        assert training_loss(eps, eps) == 0.0


vec = arrays(np.float64, 8, elements=st.floats(-100, 100))


class TestCfgMix:
    def test_lambda_zero(self):
        a, b = np.array([1.0, 2.0]), np.array([9.0, 9.0])
        assert np.array_equal(cfg_mix(a, b, 0.0), a)

    def test_equal_inputs(self):
        a = np.array([3.0, -1.0])
        for lam in (0.0, 1.0, 7.5):
            assert np.array_equal(cfg_mix(a, a.copy(), lam), a)

    def test_scalar_case(self):
        assert cfg_mix(np.array([2.0]), np.array([1.0]), 1.0)[0] == 3.0

    @given(a=vec, b=vec, c=vec, d=vec, lam=st.floats(0, 10))
    @settings(max_examples=100, deadline=None)
    def test_linearity_exact(self, a, b, c, d, lam):
        lhs = cfg_mix(a, b, lam) + cfg_mix(c, d, lam)
        rhs = cfg_mix(a + c, b + d, lam)
        assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-6)


class TestGuidedPrediction:
    def test_exactly_two_calls(self):
        calls = []

        def den(z, t, cond):
            calls.append(cond)
            return np.zeros_like(z)

        g = GuidanceConfig(lambda_s=2.0, c_pos="p", c_neg="n")
        guided_prediction(den, np.zeros(4), 3, g)
        assert calls == ["p", "n"]

    def test_conditioning_ignorant_denoiser(self):
        def den(z, t, cond):
            return 0.5 * z

        z = np.arange(4.0)
        g = GuidanceConfig(lambda_s=3.0, c_pos="p", c_neg="n")
        assert np.allclose(guided_prediction(den, z, 1, g), 0.5 * z)

    def test_linear_denoiser_closed_form(self):
        a, b_pos, b_neg, lam = 0.7, 1.5, -0.25, 2.0

        def den(z, t, cond):
            return a * z + (b_pos if cond == "p" else b_neg)

        z = np.linspace(-1, 1, 6)
        got = guided_prediction(den, z, 1, GuidanceConfig(lam, "p", "n"))
        want = (1 + lam) * (a * z + b_pos) - lam * (a * z + b_neg)
        assert np.allclose(got, want)

    def test_failure_context(self):
        def den(z, t, cond):
            if cond == "n":
                raise RuntimeError("nope")
            return z

        with pytest.raises(RuntimeError, match="negative branch"):
            guided_prediction(den, np.zeros(2), 1, GuidanceConfig(1.0, "p", "n"))


class TestDdpmSample:
    def test_gaussian_data_fidelity(self):
        target_mean, target_std = 1.5, 0.4
        sched = desk_schedule(50)
        den = gaussian_analytic_denoiser(target_mean, target_std, sched)
        rng = np.random.default_rng(123)
        samples = ddpm_sample(den, sched, None, rng, (10_000,))
        assert abs(samples.mean() - target_mean) / target_mean < 0.05
        assert abs(samples.var() - target_std**2) / target_std**2 < 0.10

    def test_single_step_hand_computed(self):
        sched = make_schedule("linear", 1, 0.1, 0.1)

        def den(z, t, cond):  # returns the state itself as the noise estimate
            return z

        rng = np.random.default_rng(5)
        z0 = np.random.default_rng(5).standard_normal((3,))
        out = ddpm_sample(den, sched, None, rng, (3,))
        beta, abar = 0.1, 0.9
        want = (z0 - (beta / np.sqrt(1 - abar)) * z0) / np.sqrt(1 - beta)
        assert np.allclose(out, want)

    def test_seed_determinism(self):
        sched = make_schedule("linear", 20, 1e-3, 0.02)
        den = gaussian_analytic_denoiser(0.0, 1.0, sched)
        a = ddpm_sample(den, sched, None, np.random.default_rng(9), (16,))
        b = ddpm_sample(den, sched, None, np.random.default_rng(9), (16,))
        assert np.array_equal(a, b)

    def test_guided_path_runs(self):
        sched = make_schedule("linear", 10, 1e-3, 0.02)
        den = gaussian_analytic_denoiser(0.5, 0.5, sched)
        g = GuidanceConfig(1.5, "p", "n")
        out = ddpm_sample(den, sched, g, np.random.default_rng(1), (8,))
        assert np.isfinite(out).all()

    def test_ddim_deterministic_after_start(self):
        sched = make_schedule("linear", 20, 1e-3, 0.02)
        den = gaussian_analytic_denoiser(1.0, 0.3, sched)
        a = ddim_sample(den, sched, None, np.random.default_rng(4), (64,))
        b = ddim_sample(den, sched, None, np.random.default_rng(4), (64,))
        assert np.array_equal(a, b)
