import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradwave import (
    AffineConstraintSet,
    DependentConstraints,
    DiscreteCurve,
    HardwareSpec,
    InvalidArgument,
    KinematicLimits,
    build_affine_set,
    factorize,
    feasibility_report,
    limits_from_hardware,
    project_affine,
)
from gradwave.constraints import hardware_from_limits
from gradwave.curves import diff


class TestLimits:
    def test_scanner_constants(self):
        lim = limits_from_hardware(HardwareSpec(40.0, 150.0, 42.576))
        # 42.576e6 Hz/T * 0.040 T/m = 1.70304e6 1/(m s) = 17.0304 1/(cm ms)
        assert lim.alpha == pytest.approx(17.0304, rel=1e-12)
        assert lim.beta == pytest.approx(63.864, rel=1e-12)

    def test_linear_in_gamma(self):
        a = limits_from_hardware(HardwareSpec(40, 150, 42.576))
        b = limits_from_hardware(HardwareSpec(40, 150, 2 * 42.576))
        assert b.alpha == pytest.approx(2 * a.alpha) and b.beta == pytest.approx(2 * a.beta)

    @given(st.floats(1, 100), st.floats(10, 500), st.floats(1, 100))
    def test_round_trip(self, g, s, gamma):
        hw = HardwareSpec(g, s, gamma)
        back = hardware_from_limits(limits_from_hardware(hw), gamma)
        assert back.g_max == pytest.approx(g, rel=1e-12)
        assert back.s_max == pytest.approx(s, rel=1e-12)

    @pytest.mark.parametrize("kw", [dict(g_max=0), dict(s_max=-1), dict(gamma=float("nan"))])
    def test_hardware_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            HardwareSpec(**kw)

    def test_limits_invalid(self):
        with pytest.raises(InvalidArgument):
            KinematicLimits(0.0, 1.0)


def aset(n=6, d=2, dt=1.0):
    return AffineConstraintSet(n, d, dt)


class TestPointConstraints:
    def test_start_pin_rows(self):
        a = aset().add_point_constraint(1, [0, 0])
        assert a.p == 2
        dense = a.rows.toarray()
        assert dense[0, 0] == 1 and dense[1, 1] == 1 and dense.sum() == 2
        np.testing.assert_array_equal(a.rhs, [0, 0])

    def test_end_pin(self):
        a = aset().add_point_constraint(6, [6, 0])
        s = factorize(a).project(np.zeros((6, 2)))
        np.testing.assert_allclose(s[-1], [6, 0])

    def test_feasible_unchanged(self, rng):
        z = rng.normal(size=(6, 2))
        a = aset().add_point_constraint(3, z[2])
        np.testing.assert_allclose(factorize(a).project(z), z, atol=1e-14)

    def test_index_range(self):
        with pytest.raises(InvalidArgument):
            aset().add_point_constraint(0, [0, 0])
        with pytest.raises(InvalidArgument):
            aset().add_point_constraint(7, [0, 0])

    def test_duplicate_fails_at_factorization(self):
        a = aset().add_point_constraint(1, [0, 0]).add_point_constraint(1, [0, 0])
        with pytest.raises(DependentConstraints) as err:
            factorize(a)
        assert "point[1]" in str(err.value)


class TestMultishot:
    def pinned(self, a):
        return sorted({int(lab.split("[")[1].split("]")[0]) for lab in a.labels})

    def test_three_pins(self):
        a = AffineConstraintSet(11, 2, 1.0).add_multishot_constraints(5.0)
        assert self.pinned(a) == [1, 6, 11]

    def test_tr_equals_t(self):
        a = AffineConstraintSet(11, 2, 1.0).add_multishot_constraints(10.0)
        assert self.pinned(a) == [1, 11]

    def test_tr_beyond_t(self):
        a = AffineConstraintSet(11, 2, 1.0).add_multishot_constraints(25.0)
        assert self.pinned(a) == [1]

    def test_non_multiple_rejected(self):
        with pytest.raises(InvalidArgument):
            AffineConstraintSet(11, 2, 1.0).add_multishot_constraints(2.5)


class TestInitialSpeed:
    def test_projected_derivative_zero(self, rng):
        a = aset().add_initial_speed_zero()
        s = factorize(a).project(rng.normal(size=(6, 2)))
        np.testing.assert_allclose(diff(s, 1.0)[1], 0, atol=1e-14)

    def test_with_origin_pin(self, rng):
        a = aset().add_point_constraint(1, [0, 0]).add_initial_speed_zero()
        solver = factorize(a)
        s = solver.project(rng.normal(size=(6, 2)))
        np.testing.assert_allclose(s[:2], 0, atol=1e-14)
        assert np.linalg.matrix_rank(a.rows.toarray()) == 4


class TestMoments:
    def test_order0_closed_curve_satisfied(self, rng):
        pts = rng.normal(size=(9, 2))
        pts[-1] = pts[0]
        a = AffineConstraintSet(9, 2, 0.1).add_moment_nulling(0)
        np.testing.assert_allclose(a.residual(pts), 0, atol=1e-13)

    def test_order0_forces_closure(self, rng):
        a = AffineConstraintSet(9, 2, 0.1).add_moment_nulling(0)
        s = factorize(a).project(rng.normal(size=(9, 2)))
        np.testing.assert_allclose(s[-1], s[0], atol=1e-13)

    def test_order1_against_quadrature(self):
        n, dt = 11, 0.2
        t = np.arange(n) * dt
        pts = np.c_[np.abs(t - t[-1] / 2), 0.5 * t]
        # rectangle rule on the backward-difference velocity
        vel = np.zeros_like(pts)
        vel[1:] = (pts[1:] - pts[:-1]) / dt
        quad = np.array([np.sum(t * vel[:, j]) * dt for j in range(2)])
        a = AffineConstraintSet(n, 2, dt).add_moment_nulling(1)
        np.testing.assert_allclose(a.rows @ pts.ravel(), quad, rtol=1e-12, atol=1e-12)

    def test_negative_order(self):
        with pytest.raises(InvalidArgument):
            aset().add_moment_nulling(-1)


class TestFactorize:
    def test_empty_is_identity(self, rng):
        z = rng.normal(size=(6, 2))
        solver = factorize(aset())
        assert solver.empty
        np.testing.assert_array_equal(project_affine(solver, z), z)

    def test_pinning_gram_identity(self):
        a = aset().add_point_constraint(1, [0, 0]).add_point_constraint(4, [1, 1])
        gram = (a.rows @ a.rows.T).toarray()
        np.testing.assert_array_equal(gram, np.eye(4))

    def test_pseudo_inverse_dense_oracle(self, rng):
        a = AffineConstraintSet(5, 2, 1.0)
        A = rng.normal(size=(2, 10))
        for row, v in zip(A, rng.normal(size=2)):
            a._append(row[None, :], v, "rand")
        pinv = A.T @ np.linalg.inv(A @ A.T)
        r = rng.normal(size=2)
        np.testing.assert_allclose(factorize(a).apply_pseudo_inverse(r), pinv @ r, rtol=1e-10, atol=1e-12)

    def test_origin_pin_zeroes_first_point(self):
        z = np.ones((6, 2))
        s = factorize(aset().add_point_constraint(1, [0, 0])).project(z)
        np.testing.assert_array_equal(s[0], 0)
        np.testing.assert_array_equal(s[1:], 1)


def _random_set(rng, n=8, d=2):
    a = AffineConstraintSet(n, d, 0.5)
    a.add_point_constraint(1, rng.normal(size=d))
    a.add_point_constraint(n, rng.normal(size=d))
    a.add_moment_nulling(1)
    return a


class TestProjectionProperties:
    @given(st.integers(0, 2**32 - 1))
    def test_idempotent_and_feasible(self, seed):
        r = np.random.default_rng(seed)
        a = _random_set(r)
        solver = factorize(a)
        s = solver.project(r.normal(size=(8, 2)))
        assert np.max(np.abs(a.residual(s))) <= 1e-10 * max(1.0, np.abs(a.rhs).max())
        np.testing.assert_allclose(solver.project(s), s, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_nonexpansive(self, seed):
        r = np.random.default_rng(seed)
        solver = factorize(_random_set(r))
        z1, z2 = r.normal(size=(8, 2)), r.normal(size=(8, 2))
        d_out = np.linalg.norm(solver.project(z1) - solver.project(z2))
        assert d_out <= np.linalg.norm(z1 - z2) * (1 + 1e-12)

    @given(st.integers(0, 2**32 - 1))
    def test_residual_orthogonal_to_kernel(self, seed):
        r = np.random.default_rng(seed)
        a = _random_set(r)
        solver = factorize(a)
        z = r.normal(size=(8, 2))
        # kernel vectors: projections onto the homogeneous set
        homog = AffineConstraintSet(8, 2, 0.5)
        homog._rows, homog._rhs, homog.labels = list(a._rows), [0.0] * a.p, list(a.labels)
        ker = factorize(homog).project(r.normal(size=(8, 2)))
        assert abs(np.vdot(z - solver.project(z), ker)) <= 1e-10 * np.linalg.norm(z) * np.linalg.norm(ker) + 1e-12


class TestFeasibilityReport:
    def test_feasible_curve(self):
        c = DiscreteCurve(np.c_[np.linspace(0, 1, 11), np.zeros(11)], 1.0)
        rep = feasibility_report(c, KinematicLimits(1.0, 1.0))
        assert rep.speed == rep.accel == rep.affine == 0.0

    def test_double_speed(self):
        c = DiscreteCurve(np.array([[0.0, 0.0], [2.0, 0.0]]), 1.0)
        rep = feasibility_report(c, KinematicLimits(1.0, 100.0))
        assert rep.speed == pytest.approx(1.0)

    def test_linear_scaling(self, rng):
        pts = rng.normal(size=(10, 2))
        lim = KinematicLimits(1e6, 1e6, "RV")
        r1 = feasibility_report(DiscreteCurve(pts, 0.1), lim)
        r2 = feasibility_report(DiscreteCurve(2 * pts, 0.1), lim)
        assert r2.max_speed == pytest.approx(2 * r1.max_speed)
        assert r2.max_accel == pytest.approx(2 * r1.max_accel)

    def test_affine_residual(self):
        c = DiscreteCurve(np.ones((4, 2)), 1.0)
        a = AffineConstraintSet(4, 2, 1.0).add_point_constraint(1, [0, 0])
        assert feasibility_report(c, KinematicLimits(1, 1), a).affine == 1.0


class TestJsonBuilder:
    def test_kinds(self):
        items = [
            {"type": "point", "at": "start"},
            {"type": "point", "at": "end", "position": [1, 2]},
            {"type": "multishot", "tr_ms": 4.0},
            {"type": "initial_speed"},
            {"type": "moment", "order": 1},
        ]
        a = build_affine_set(items, 11, 2, 1.0)
        assert a.p == 2 + 2 + 3 * 2 + 2 + 2

    @pytest.mark.parametrize("item", [{"type": "nope"}, {"kind": "point"}, {"type": "point", "at": "middle"}])
    def test_rejects(self, item):
        with pytest.raises(InvalidArgument):
            build_affine_set([item], 5, 2, 1.0)
