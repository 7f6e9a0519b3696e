"""Schedule construction and the noising/denoising algebra."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scprior import (
    NoiseSchedule,
    ParameterError,
    ShapeError,
    TimestepPlan,
    build_schedule,
    ddim_step,
    forward_noise,
    ground_truth_prior_init,
    make_timestep_plan,
    truncation_step,
)

from _oracles import alpha_bar_scalar_loop


class TestBuildSchedule:
    def test_single_step_constant_beta(self):
        schedule = build_schedule(1, 0.5, 0.5)
        np.testing.assert_allclose(schedule.alpha_bar, [1.0, 0.5])

    def test_two_step_constant_beta(self):
        schedule = build_schedule(2, 0.1, 0.1)
        np.testing.assert_allclose(schedule.alpha_bar, [1.0, 0.9, 0.81])

    def test_default_ramp_matches_scalar_loop_oracle(self):
        schedule = build_schedule(1000, 0.00085, 0.012)
        oracle = alpha_bar_scalar_loop(1000, 0.00085, 0.012)
        np.testing.assert_allclose(schedule.alpha_bar, oracle, rtol=1e-12)

    def test_invalid_parameters(self):
        with pytest.raises(ParameterError):
            build_schedule(0, 0.1, 0.2)
        with pytest.raises(ParameterError):
            build_schedule(10, 0.0, 0.2)
        with pytest.raises(ParameterError):
            build_schedule(10, 0.3, 0.2)
        with pytest.raises(ParameterError):
            build_schedule(10, 0.3, 1.0)

    @settings(max_examples=50, deadline=None)
    @given(
        steps=st.integers(1, 500),
        b0=st.floats(1e-5, 0.05),
        spread=st.floats(0.0, 0.05),
    )
    def test_alpha_bar_strictly_decreasing(self, steps, b0, spread):
        schedule = build_schedule(steps, b0, b0 + spread)
        assert np.all(np.diff(schedule.alpha_bar) < 0)
        assert schedule.alpha_bar[0] == 1.0
        assert schedule.alpha_bar[-1] > 0

    def test_schedule_is_immutable(self):
        schedule = build_schedule(10)
        with pytest.raises(ValueError):
            schedule.alpha_bar[0] = 0.5

    def test_invariants_enforced_at_construction(self):
        with pytest.raises(ParameterError):
            NoiseSchedule(2, np.array([1.0, 0.9]))  # wrong length
        with pytest.raises(ParameterError):
            NoiseSchedule(2, np.array([0.99, 0.9, 0.8]))  # alpha_bar[0] != 1
        with pytest.raises(ParameterError):
            NoiseSchedule(2, np.array([1.0, 0.9, 0.95]))  # not decreasing


class TestForwardNoise:
    def test_t_zero_is_identity(self, rng):
        schedule = build_schedule(10)
        x0 = rng.normal(size=(3, 3, 2))
        eps = rng.normal(size=(3, 3, 2))
        np.testing.assert_array_equal(forward_noise(x0, 0, eps, schedule), x0)

    def test_zero_noise_is_pure_scaling(self, rng):
        schedule = build_schedule(10, 0.01, 0.02)
        x0 = rng.normal(size=(4, 2))
        out = forward_noise(x0, 5, np.zeros_like(x0), schedule)
        np.testing.assert_allclose(out, np.sqrt(schedule.alpha_bar[5]) * x0)

    def test_hand_evaluated_point(self):
        # alpha_bar[2] = 0.81 for constant beta 0.1
        schedule = build_schedule(2, 0.1, 0.1)
        out = forward_noise(np.ones((2, 2)), 2, np.ones((2, 2)), schedule)
        np.testing.assert_allclose(out, 0.9 + np.sqrt(0.19))

    def test_shape_mismatch_raises(self):
        schedule = build_schedule(4)
        with pytest.raises(ShapeError):
            forward_noise(np.zeros((2, 2)), 1, np.zeros((2, 3)), schedule)

    def test_t_out_of_range_raises(self):
        schedule = build_schedule(4)
        with pytest.raises(ParameterError):
            forward_noise(np.zeros(2), 5, np.zeros(2), schedule)
        with pytest.raises(ParameterError):
            forward_noise(np.zeros(2), -1, np.zeros(2), schedule)


class TestDdimStep:
    def test_exact_inversion_to_zero(self, rng):
        schedule = build_schedule(100)
        x0 = rng.normal(size=(5, 5, 3))
        eps = rng.normal(size=(5, 5, 3))
        for t in (1, 17, 100):
            x_t = forward_noise(x0, t, eps, schedule)
            back = ddim_step(x_t, eps, t, 0, schedule)
            np.testing.assert_allclose(back, x0, atol=1e-10)

    def test_zero_eps_hat_rescales_signal(self, rng):
        schedule = build_schedule(100)
        x_t = rng.normal(size=(4, 4, 1))
        out = ddim_step(x_t, np.zeros_like(x_t), 60, 20, schedule)
        ratio = np.sqrt(schedule.alpha_bar[20] / schedule.alpha_bar[60])
        np.testing.assert_allclose(out, ratio * x_t)

    def test_two_steps_equal_one_jump_with_constant_eps_hat(self, rng):
        schedule = build_schedule(200)
        x_t = rng.normal(size=(3, 3, 2))
        eps_hat = rng.normal(size=(3, 3, 2))
        via = ddim_step(ddim_step(x_t, eps_hat, 150, 70, schedule), eps_hat, 70, 10, schedule)
        direct = ddim_step(x_t, eps_hat, 150, 10, schedule)
        np.testing.assert_allclose(via, direct, atol=1e-10)

    def test_t_prev_not_below_t_raises(self):
        schedule = build_schedule(10)
        with pytest.raises(ParameterError):
            ddim_step(np.zeros(2), np.zeros(2), 5, 5, schedule)
        with pytest.raises(ParameterError):
            ddim_step(np.zeros(2), np.zeros(2), 5, 7, schedule)


class TestGroundTruthPriorInit:
    def test_mu_zero_returns_x0(self, rng):
        schedule = build_schedule(50)
        x0 = rng.normal(size=(2, 2, 2))
        out = ground_truth_prior_init(x0, 0.0, rng.normal(size=x0.shape), schedule)
        np.testing.assert_array_equal(out, x0)

    def test_mu_one_is_full_corruption(self, rng):
        schedule = build_schedule(50)
        x0 = rng.normal(size=(2, 2, 2))
        eps = rng.normal(size=x0.shape)
        np.testing.assert_array_equal(
            ground_truth_prior_init(x0, 1.0, eps, schedule),
            forward_noise(x0, 50, eps, schedule),
        )

    def test_zero_signal_is_scaled_noise(self, rng):
        schedule = build_schedule(100)
        eps = rng.normal(size=(3, 3, 1))
        out = ground_truth_prior_init(np.zeros((3, 3, 1)), 0.5, eps, schedule)
        np.testing.assert_allclose(out, np.sqrt(1 - schedule.alpha_bar[50]) * eps)

    def test_residual_variance_matches_schedule(self, rng):
        # Var(out - sqrt(ab)*x0) should equal 1 - ab within 3 standard errors.
        schedule = build_schedule(100)
        mu = 0.7
        t = truncation_step(mu, 100)
        x0 = rng.normal(size=(40, 40, 1))
        draws = 30
        residuals = []
        for _ in range(draws):
            eps = rng.normal(size=x0.shape)
            out = ground_truth_prior_init(x0, mu, eps, schedule)
            residuals.append(out - np.sqrt(schedule.alpha_bar[t]) * x0)
        flat = np.concatenate([r.ravel() for r in residuals])
        expected = 1.0 - schedule.alpha_bar[t]
        se = expected * np.sqrt(2.0 / (flat.size - 1))
        assert abs(flat.var() - expected) < 3 * se


class TestTimestepPlan:
    def test_full_plan(self):
        schedule = build_schedule(10)
        plan = make_timestep_plan(1.0, 11, schedule)
        assert plan.substeps == tuple(range(10, -1, -1))

    def test_endpoints_only(self):
        schedule = build_schedule(1000)
        plan = make_timestep_plan(0.5, 2, schedule)
        assert plan.substeps == (500, 0)

    def test_even_spacing(self):
        schedule = build_schedule(1000)
        plan = make_timestep_plan(0.8, 5, schedule)
        assert plan.substeps == (800, 600, 400, 200, 0)

    def test_mu_zero_plan(self):
        schedule = build_schedule(1000)
        plan = make_timestep_plan(0.0, 1, schedule)
        assert plan.substeps == (0,)

    def test_rounding_duplicates_removed(self):
        schedule = build_schedule(10)
        plan = make_timestep_plan(0.3, 4, schedule)
        assert plan.substeps[0] == 3
        assert plan.substeps[-1] == 0
        assert all(a > b for a, b in zip(plan.substeps, plan.substeps[1:]))

    def test_too_many_substeps_rejected(self):
        schedule = build_schedule(10)
        with pytest.raises(ParameterError):
            make_timestep_plan(0.3, 10, schedule)

    def test_single_substep_with_positive_start_rejected(self):
        schedule = build_schedule(10)
        with pytest.raises(ParameterError):
            make_timestep_plan(0.5, 1, schedule)

    def test_plan_invariants_enforced(self):
        with pytest.raises(ParameterError):
            TimestepPlan(mu=0.5, substeps=(5, 3))  # does not end at 0
        with pytest.raises(ParameterError):
            TimestepPlan(mu=0.5, substeps=(3, 3, 0))  # not strictly decreasing
        with pytest.raises(ParameterError):
            TimestepPlan(mu=2.0, substeps=(3, 0))

    @settings(max_examples=50, deadline=None)
    @given(data=st.data())
    def test_roundtrip_property_random_t(self, data):
        schedule = build_schedule(500)
        t = data.draw(st.integers(1, 500))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
        x0 = rng.normal(size=(4, 4, 2))
        eps = rng.normal(size=(4, 4, 2))
        x_t = forward_noise(x0, t, eps, schedule)
        np.testing.assert_allclose(ddim_step(x_t, eps, t, 0, schedule), x0, atol=1e-6)
