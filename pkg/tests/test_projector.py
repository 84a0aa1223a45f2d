import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_projection, kron_d, d1_matrix, d2_matrix

from gradwave import (
    AffineConstraintSet,
    DiscreteCurve,
    InvalidArgument,
    KinematicLimits,
    ProjectionSettings,
    convergence_certificate,
    factorize,
    lipschitz_constant,
    project_curve,
)
from gradwave.curves import diff, diff2, series_norm
from gradwave.projector import (
    curve_distance,
    dual_objective,
    dual_smooth_value,
    grad_dual,
    primal_from_dual,
    prox_dual,
)


class TestProx:
    def test_zero_threshold(self, rng):
        q = rng.normal(size=(5, 2))
        np.testing.assert_array_equal(prox_dual(q, 0.0, "RV"), q)
        np.testing.assert_array_equal(prox_dual(q, 0.0, "RIV"), q)

    def test_rv_soft_threshold(self):
        np.testing.assert_allclose(prox_dual(np.array([3.0, -0.5, -4.0]), 1.0, "RV"), [2.0, 0.0, -3.0])

    def test_riv_group(self):
        np.testing.assert_allclose(prox_dual(np.array([[3.0, 4.0]]), 5.0, "RIV"), [[0, 0]])
        np.testing.assert_allclose(prox_dual(np.array([[3.0, 4.0]]), 2.5, "RIV"), [[1.5, 2.0]])

    def test_negative_threshold(self):
        with pytest.raises(InvalidArgument):
            prox_dual(np.ones(3), -1.0, "RV")

    @given(st.floats(-10, 10), st.floats(0, 5))
    def test_rv_grid_bruteforce(self, x, t):
        grid = np.linspace(-15, 15, 300001)
        best = grid[np.argmin(0.5 * (grid - x) ** 2 + t * np.abs(grid))]
        assert prox_dual(np.array([x]), t, "RV")[0] == pytest.approx(best, abs=2e-4)

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 5))
    def test_moreau_decomposition(self, seed, t):
        # prox of t||.|| plus t * (projection onto the dual-norm ball) recovers q
        q = np.random.default_rng(seed).normal(size=(6, 2)) * 3
        p = prox_dual(q, t, "RIV")
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        ball = q / np.maximum(1.0, norms / t)
        np.testing.assert_allclose(p + ball, q, atol=1e-12)
        p = prox_dual(q, t, "RV")
        np.testing.assert_allclose(p + np.clip(q, -t, t), q, atol=1e-12)


def _fd_grad(fun, q1, q2, h=1e-6):
    g1, g2 = np.zeros_like(q1), np.zeros_like(q2)
    for g, q, other_first in ((g1, q1, True), (g2, q2, False)):
        for idx in np.ndindex(q.shape):
            e = np.zeros_like(q)
            e[idx] = h
            if other_first:
                g[idx] = (fun(q1 + e, q2) - fun(q1 - e, q2)) / (2 * h)
            else:
                g[idx] = (fun(q1, q2 + e) - fun(q1, q2 - e)) / (2 * h)
    return g1, g2


class TestDualGradient:
    @pytest.mark.parametrize("with_affine", [False, True])
    def test_finite_differences(self, rng, with_affine):
        c = DiscreteCurve(rng.normal(size=(6, 2)), 0.5)
        solver = None
        if with_affine:
            solver = factorize(AffineConstraintSet(6, 2, 0.5).add_point_constraint(1, [0, 0]).add_moment_nulling(0))
        q1, q2 = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        g1, g2 = grad_dual(q1, q2, c, solver)
        f1, f2 = _fd_grad(lambda a, b: dual_smooth_value(a, b, c, solver), q1, q2)
        scale = max(np.abs(g1).max(), np.abs(g2).max())
        assert np.max(np.abs(g1 - f1)) <= 1e-5 * scale
        assert np.max(np.abs(g2 - f2)) <= 1e-5 * scale

    def test_at_zero(self, rng):
        # sign convention: gradient of F~ = -F, i.e. minus (M1 c, M2 c) at q = 0
        c = DiscreteCurve(rng.normal(size=(7, 2)), 0.3)
        g1, g2 = grad_dual(np.zeros((7, 2)), np.zeros((7, 2)), c)
        np.testing.assert_allclose(-g1, diff(c.points, 0.3))
        np.testing.assert_allclose(-g2, diff2(c.points, 0.3))

    def test_lipschitz(self, rng):
        n, dt = 12, 0.7
        c = DiscreteCurve(rng.normal(size=(n, 2)), dt)
        L = lipschitz_constant(n, 2, dt).value
        for _ in range(100):
            q = rng.normal(size=(4, n, 2)) * rng.uniform(0.01, 10)
            ga = np.concatenate(grad_dual(q[0], q[1], c))
            gb = np.concatenate(grad_dual(q[2], q[3], c))
            assert np.linalg.norm(ga - gb) <= L * np.linalg.norm(q[:2] - q[2:]) * (1 + 1e-12)

    def test_primal_matches_dense_formula(self, rng):
        n, dt = 5, 0.5
        c = DiscreteCurve(rng.normal(size=(n, 2)), dt)
        q1, q2 = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        K1, K2 = kron_d(d1_matrix(n, dt), 2), kron_d(d2_matrix(n, dt), 2)
        want = c.points.ravel() - K1.T @ q1.ravel() - K2.T @ q2.ravel()
        np.testing.assert_allclose(primal_from_dual(q1, q2, c).points.ravel(), want, atol=1e-12)

    def test_weak_duality(self, rng):
        c = DiscreteCurve(rng.normal(size=(8, 2)) * 4, 1.0)
        lim = KinematicLimits(0.8, 0.6, "RIV")
        res = project_curve(c, lim)
        primal = 0.5 * np.sum((res.curve.points - c.points) ** 2)
        for _ in range(20):
            q1, q2 = rng.normal(size=(2, 8, 2))
            assert dual_objective(q1, q2, c, lim) <= primal + 1e-9


def _rest_to_rest(n, dt):
    # velocity 1 - cos vanishes at both ends, so the boundary rows stay small
    t = np.arange(n) * dt
    T = t[-1]
    x = t - T / (2 * np.pi) * np.sin(2 * np.pi * t / T)
    return DiscreteCurve(np.c_[x, 0.5 * x], dt)


class TestProjectCurveExamples:
    def test_two_point(self):
        c = DiscreteCurve(np.array([[0.0], [10.0]]), 1.0)
        res = project_curve(c, KinematicLimits(1.0, 1e6, "RV"))
        np.testing.assert_allclose(res.curve.points.ravel(), [4.5, 5.5], atol=1e-6)
        assert res.converged

    def test_feasible_input_unchanged(self):
        c = _rest_to_rest(200, 0.004)
        res = project_curve(c, KinematicLimits(17.0, 64.0), settings=ProjectionSettings(n_it=500))
        assert np.linalg.norm(res.curve.points - c.points) / np.linalg.norm(c.points) <= 1e-6

    def test_duration_fixed(self, rng):
        c = DiscreteCurve(rng.normal(size=(30, 2)), 0.1)
        res = project_curve(c, KinematicLimits(1.0, 1.0))
        assert res.curve.n == c.n and res.duration == c.duration

    def test_affine_pins_respected(self, rng):
        c = DiscreteCurve(np.cumsum(rng.normal(size=(40, 2)), axis=0), 0.5)
        a = AffineConstraintSet.for_curve(c).add_point_constraint(1, [0, 0]).add_point_constraint(40, [1, 1])
        res = project_curve(c, KinematicLimits(2.0, 1.0), affine=a)
        assert res.converged
        np.testing.assert_allclose(res.curve.points[0], 0, atol=1e-8)
        np.testing.assert_allclose(res.curve.points[-1], 1, atol=1e-8)

    def test_distance_forms(self, rng):
        c = DiscreteCurve(rng.normal(size=(10, 2)), 0.5)
        s = c.with_points(c.points + 1.0)
        assert curve_distance(s, c) == pytest.approx(np.sqrt(20 * 0.5))
        assert curve_distance(s, c, normalized=True) == pytest.approx(np.sqrt(2.0))


def _instance(seed):
    r = np.random.default_rng(seed)
    n, d = int(r.integers(3, 9)), int(r.integers(1, 3))
    mode = ["RV", "RIV"][seed % 2]
    return r.normal(size=(n, d)) * 3, r.uniform(0.5, 2), r.uniform(0.5, 2), mode


class TestAgainstDenseOracle:
    @pytest.mark.parametrize("seed", range(6))
    def test_unconstrained(self, seed):
        c, a, b, mode = _instance(seed)
        want, ok = dense_projection(c, 1.0, a, b, mode)
        assert ok
        got = project_curve(DiscreteCurve(c, 1.0), KinematicLimits(a, b, mode)).curve.points
        np.testing.assert_allclose(got, want, atol=1e-6)

    @pytest.mark.parametrize("mode", ["RV", "RIV"])
    def test_with_pins(self, rng, mode):
        n = 7
        c = rng.normal(size=(n, 2)) * 3
        aset = AffineConstraintSet(n, 2, 1.0).add_point_constraint(1, [0, 0]).add_point_constraint(n, [1, -1])
        want, ok = dense_projection(c, 1.0, 1.5, 1.0, mode, aset.rows.toarray(), aset.rhs)
        assert ok
        got = project_curve(DiscreteCurve(c, 1.0), KinematicLimits(1.5, 1.0, mode), affine=aset).curve.points
        np.testing.assert_allclose(got, want, atol=1e-6)


def _tsp_like(rng, n=120, dt=0.05):
    return DiscreteCurve(np.cumsum(rng.normal(size=(n, 2)) * 0.3, axis=0), dt)


class TestProjectionProperties:
    def test_variational_inequality(self, rng):
        lim = KinematicLimits(3.0, 20.0, "RIV")
        c = _tsp_like(rng)
        s = project_curve(c, lim).curve.points
        for _ in range(5):
            w = project_curve(c.with_points(c.points + rng.normal(size=c.points.shape)), lim).curve.points
            eps = 1e-5 * np.linalg.norm(c.points) * np.linalg.norm(w - s)
            assert np.vdot(c.points - s, w - s) <= eps

    @settings(max_examples=10)
    @given(st.integers(0, 2**32 - 1))
    def test_nonexpansive(self, seed):
        r = np.random.default_rng(seed)
        lim = KinematicLimits(3.0, 20.0, "RV")
        c1 = _tsp_like(r, 60)
        c2 = c1.with_points(c1.points + r.normal(size=c1.points.shape) * 0.5)
        p1 = project_curve(c1, lim).curve.points
        p2 = project_curve(c2, lim).curve.points
        assert np.linalg.norm(p1 - p2) <= np.linalg.norm(c1.points - c2.points) * (1 + 1e-4)

    def test_dual_running_max_nondecreasing(self, rng):
        res = project_curve(_tsp_like(rng), KinematicLimits(3.0, 20.0), settings=ProjectionSettings(refine=False))
        h = res.dual_objective_history
        assert len(h) > 1
        run = np.maximum.accumulate(h)
        assert np.all(np.diff(run) >= 0)

    def test_mode_ordering(self, rng):
        c = _tsp_like(rng)
        rv = project_curve(c, KinematicLimits(3.0, 20.0, "RV"))
        riv = project_curve(c, KinematicLimits(3.0, 20.0, "RIV"))
        assert rv.converged and riv.converged
        assert riv.distance >= rv.distance - 1e-6

    @pytest.mark.parametrize("mode", ["RV", "RIV"])
    def test_output_feasible(self, rng, mode):
        lim = KinematicLimits(3.0, 20.0, mode)
        res = project_curve(_tsp_like(rng), lim)
        s = res.curve
        assert series_norm(diff(s.points, s.dt), mode) <= lim.alpha * (1 + 1e-6)
        assert series_norm(diff2(s.points, s.dt), mode) <= lim.beta * (1 + 1e-6)

    def test_deterministic(self, rng):
        c = _tsp_like(rng)
        a = project_curve(c, KinematicLimits(3.0, 20.0)).curve.points
        b = project_curve(c, KinematicLimits(3.0, 20.0)).curve.points
        np.testing.assert_array_equal(a, b)


class TestCertificate:
    def test_bound_and_rate(self, rng):
        c = _tsp_like(rng, 64, 0.05)
        lim = KinematicLimits(3.0, 20.0)
        ref = project_curve(c, lim, settings=ProjectionSettings(n_it=20000, refine=False))
        run = project_curve(
            c, lim, settings=ProjectionSettings(n_it=400, refine=False, stop_early=False, track_iterates=True)
        )
        cert = convergence_certificate(run, ref)
        assert not cert.trivial
        assert cert.max_ratio <= 1.0
        assert cert.slope <= -1.0

    def test_trivial(self):
        c = _rest_to_rest(50, 0.01)
        lim = KinematicLimits(10.0, 50.0)
        ref = project_curve(c, lim)
        run = project_curve(c, lim, settings=ProjectionSettings(n_it=20, stop_early=False, track_iterates=True))
        cert = convergence_certificate(run, ref)
        assert cert.trivial and cert.slope is None

    def test_unconverged_reference(self, rng):
        c = _tsp_like(rng, 64, 0.05)
        lim = KinematicLimits(3.0, 20.0)
        short = ProjectionSettings(n_it=5, refine=False, stop_early=False, track_iterates=True)
        ref = project_curve(c, lim, settings=short)
        assert not ref.converged
        with pytest.raises(InvalidArgument):
            convergence_certificate(ref, ref)
        assert convergence_certificate(ref, ref, require_converged=False).max_ratio is not None

    def test_needs_tracking(self, rng):
        c = _tsp_like(rng, 20)
        r = project_curve(c, KinematicLimits(3.0, 20.0))
        with pytest.raises(InvalidArgument):
            convergence_certificate(r, r)
