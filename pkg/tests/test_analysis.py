import numpy as np
import pytest

from jumpflux.analysis import (
    ExperimentPoint,
    collect_gap_samples,
    decompose_held_gap,
    fit_loglog_rate,
    mc_moment,
    mc_points,
    monotone_within_ci,
    sampling_drift_path,
    sup_norm_gap,
)
from jumpflux.errors import DegenerateFitError, GridMismatchError
from jumpflux.noise import LevyMeasureSpec, build_noise_record
from jumpflux.systems import (
    DiffusionFamily,
    JumpFamily,
    Model,
    SystemSpec,
    default_step_limit,
    simulate_coupled_bundle,
    solve_closed_loop,
)


class TestSupNormGap:
    def test_identical_paths(self):
        p = np.random.default_rng(0).normal(size=(10, 3))
        assert sup_norm_gap(p, p) == 0.0

    def test_constant_offset(self):
        base = np.zeros((7, 2))
        other = base + np.array([0.1, -0.2])
        assert sup_norm_gap(base, other) == pytest.approx(0.3)

    def test_max_at_endpoint_for_growing_gap(self):
        t = np.linspace(0.0, 1.0, 11)[:, None]
        assert sup_norm_gap(0.5 * t, np.zeros((11, 1))) == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(GridMismatchError):
            sup_norm_gap(np.zeros((5, 2)), np.zeros((6, 2)))


def point(eps, moment):
    return ExperimentPoint(eps, eps, 0.0, 10, moment, 0.0)


class TestFitLoglog:
    def test_exact_power_law(self):
        pts = [point(0.1, 1e-2), point(0.05, 2.5e-3), point(0.025, 6.25e-4)]
        rep = fit_loglog_rate(pts, 1.8)
        assert rep.slope == pytest.approx(2.0, abs=1e-12)
        assert rep.r_squared == pytest.approx(1.0, abs=1e-12)
        assert rep.verdict

    def test_constant_moments_slope_zero(self):
        pts = [point(0.1, 0.5), point(0.05, 0.5), point(0.025, 0.5)]
        rep = fit_loglog_rate(pts, 0.0)
        assert rep.slope == pytest.approx(0.0, abs=1e-12)

    def test_first_order_law(self):
        pts = [point(0.1, 0.1), point(0.05, 0.05), point(0.025, 0.025)]
        assert fit_loglog_rate(pts, 1.0).slope == pytest.approx(1.0, abs=1e-12)

    def test_zero_moment_rejected(self):
        pts = [point(0.1, 0.0), point(0.05, 1.0), point(0.025, 1.0)]
        with pytest.raises(DegenerateFitError):
            fit_loglog_rate(pts, 1.0)

    def test_needs_three_points(self):
        with pytest.raises(DegenerateFitError):
            fit_loglog_rate([point(0.1, 1.0), point(0.05, 0.5)], 1.0)

    def test_two_sided_verdict(self):
        pts = [point(0.1, 1e-2), point(0.05, 2.5e-3), point(0.025, 6.25e-4)]
        assert fit_loglog_rate(pts, 2.0, slope_tolerance=0.05).verdict
        assert not fit_loglog_rate(pts, 1.5, slope_tolerance=0.05).verdict


def test_monotone_within_ci():
    a = ExperimentPoint(0.2, 0.2, 0.0, 10, 1.0, 0.1)
    b = ExperimentPoint(0.1, 0.1, 0.0, 10, 0.5, 0.1)
    c = ExperimentPoint(0.05, 0.05, 0.0, 10, 0.65, 0.01)
    assert monotone_within_ci([a, b])
    assert not monotone_within_ci([a, b, c])


def simple_model(sigma_scale=0.0, with_jumps=False):
    system = SystemSpec(
        A=[[0.0, 1.0], [-1.0, 0.0]],
        B=np.eye(2),
        K=[[0.3, 1.0], [0.0, 0.3]],
        y0=[1.0, 0.5],
    )
    diffusion = DiffusionFamily.constant(sigma_scale * np.eye(2))
    if with_jumps:
        jump = JumpFamily.linear_in_mark(np.eye(2))
        levy = LevyMeasureSpec.atomic([[0.3, -0.2], [-0.25, 0.15]], [1.5, 1.0])
    else:
        jump = JumpFamily.zero(2)
        levy = LevyMeasureSpec.atomic(np.empty((0, 2)), [])
    return Model(system=system, diffusion=diffusion, jump=jump, levy=levy, horizon=1.0)


class TestMcMoment:
    def test_noise_free_moment_is_deterministic(self):
        # with all noise coefficients zero the gap to the closed loop is the
        # deterministic hold error; every path yields the same value and the
        # confidence interval collapses to zero
        model = simple_model(sigma_scale=0.0)
        h = default_step_limit(0.1, 1.0)
        got = mc_moment(model, 1e-12, 0.1, 1.0, 0.0, "lln", 8, 77, h)
        rec = build_noise_record(model.levy, 1.0, 0.1, h, 1, 0, 2)
        from jumpflux.systems import solve_sampled_hold

        want = sup_norm_gap(
            solve_sampled_hold(model.system, 0.1, rec.grid),
            solve_closed_loop(model.system, rec.grid),
        )
        assert got.ci_half_width == 0.0
        assert got.moment == pytest.approx(want * want, rel=1e-9)

    def test_ci_shrinks_with_path_count(self):
        model = simple_model(sigma_scale=0.3, with_jumps=True)
        h = default_step_limit(0.1, 1.0)
        small = mc_moment(model, 0.1, 0.1, 1.0, 0.0, "lln", 400, 5, h)
        large = mc_moment(model, 0.1, 0.1, 1.0, 0.0, "lln", 800, 5, h)
        ratio = large.ci_half_width / small.ci_half_width
        assert 1 / np.sqrt(2.0) * 0.8 <= ratio <= 1 / np.sqrt(2.0) * 1.2

    def test_worker_count_does_not_change_results(self):
        model = simple_model(sigma_scale=0.3, with_jumps=True)
        h = default_step_limit(0.1, 1.0)
        one = collect_gap_samples(model, 0.1, 0.1, 1.0, h, 30, 9, ("lln", "clt"), 1)
        many = collect_gap_samples(model, 0.1, 0.1, 1.0, h, 30, 9, ("lln", "clt"), 3)
        for key in one:
            assert np.array_equal(one[key], many[key])

    def test_requires_two_paths(self):
        model = simple_model()
        with pytest.raises(Exception, match="confidence interval"):
            mc_moment(model, 0.1, 0.1, 1.0, 0.0, "lln", 1, 5, 0.002)

    def test_remainder_matches_rescaled_gap(self):
        # |state - closed - eps * limit| == eps * |fluctuation - limit|
        model = simple_model(sigma_scale=0.3, with_jumps=True)
        h = default_step_limit(0.1, 1.0)
        got = mc_points(
            model, 0.1, 0.1, 1.0, 0.0, ("clt", "remainder"), 16, 4, h
        )
        assert got["remainder"].moment == pytest.approx(
            got["clt"].moment * 0.01, rel=1e-9
        )


class TestSamplingDrift:
    def test_zero_when_c_zero(self):
        path = np.random.default_rng(3).normal(size=(9, 2))
        assert np.array_equal(sampling_drift_path(0.0, path), np.zeros((9, 2)))

    def test_scalar_closed_form(self):
        # c = 2, closed loop e^{-t}: the drift integral is e^{-t} - 1
        system = SystemSpec(A=[[0.0]], B=[[1.0]], K=[[1.0]], y0=[1.0])
        levy = LevyMeasureSpec.atomic(np.empty((0, 1)), [])
        rec = build_noise_record(levy, 1.0, 0.5, 0.01, 1, 0, 1)
        closed = solve_closed_loop(system, rec.grid)
        drift = sampling_drift_path(2.0, closed)
        assert drift[-1, 0] == pytest.approx(np.exp(-1.0) - 1.0, abs=1e-12)

    def test_zero_for_constant_closed_loop(self):
        path = np.ones((5, 2))
        assert np.array_equal(sampling_drift_path(3.0, path), np.zeros((5, 2)))


class TestHeldGapDecomposition:
    def _bundle(self, model, eps=0.1, delta=0.05, c=0.5, seed=21, idx=0):
        h = default_step_limit(delta, model.horizon)
        return simulate_coupled_bundle(model, eps, delta, c, h, seed, idx)

    def test_noise_free_terms_vanish(self):
        model = simple_model(sigma_scale=0.0, with_jumps=False)
        b = self._bundle(model)
        d = decompose_held_gap(b, model.system, model.diffusion, model.jump, model.levy)
        assert d.sup_brownian_term == 0.0
        assert d.sup_jump_term == 0.0
        assert d.relative_residual <= 1e-8

    def test_ramp_and_drift_vanish_when_closed_loop_constant(self):
        system = SystemSpec(
            A=[[0.1, 0.0], [0.0, -0.2]],
            B=np.eye(2),
            K=[[0.1, 0.0], [0.0, -0.2]],
            y0=[1.0, -1.0],
        )
        model = Model(
            system=system,
            diffusion=DiffusionFamily.constant(0.2 * np.eye(2)),
            jump=JumpFamily.zero(2),
            levy=LevyMeasureSpec.atomic(np.empty((0, 2)), []),
            horizon=1.0,
        )
        b = self._bundle(model)
        d = decompose_held_gap(b, model.system, model.diffusion, model.jump, model.levy)
        # (A - BK) zero kills both the held ramp and the reference drift
        assert d.sup_held_ramp_gap == 0.0
        assert d.relative_residual <= 1e-8

    def test_identity_residual_on_random_configs(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            system = SystemSpec(
                A=rng.uniform(-1, 1, (2, 2)),
                B=np.eye(2),
                K=rng.uniform(-0.5, 0.5, (2, 2)),
                y0=rng.uniform(-1, 1, 2),
            )
            model = Model(
                system=system,
                diffusion=DiffusionFamily.affine(
                    0.2 * np.eye(2), [0.04 * np.eye(2), 0.02 * np.eye(2)]
                ),
                jump=JumpFamily.linear_in_mark(np.eye(2), [0.1 * np.eye(2), np.zeros((2, 2))]),
                levy=LevyMeasureSpec.atomic([[0.2, 0.2], [-0.3, 0.1]], [2.0, 1.0]),
                horizon=1.0,
            )
            b = self._bundle(model, seed=100 + trial)
            d = decompose_held_gap(
                b, model.system, model.diffusion, model.jump, model.levy
            )
            assert d.relative_residual <= 1e-8
