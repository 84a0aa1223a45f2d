import numpy as np
import pytest

from gradwave import DiscreteCurve, InvalidArgument, KinematicLimits, feasibility_report
from gradwave.reparam import build_support, compare_traversal, speed_profile, time_optimal_reparam
from gradwave.trajectories import TspSpec, constant_speed_parameterization, tsp_tour
from gradwave.density import radial_density


def _circle(R=1.0, step_deg=1.0, turns=3):
    th = np.radians(np.arange(0, 360 * turns + step_deg / 2, step_deg))
    return R * np.c_[np.cos(th), np.sin(th)]


def _seg_dist(p, V):
    a, b = V[:-1], V[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0, 1)
    return np.min(np.linalg.norm(a + t[:, None] * ab - p, axis=1))


class TestSupport:
    def test_collinear(self):
        sp = build_support([[0, 0], [1, 0], [2, 0]], 1.0)
        assert list(sp.singular_indices) == [0, 2]
        assert sp.length == pytest.approx(2.0)

    def test_right_angle(self):
        sp = build_support([[0, 0], [1, 0], [1, 1]])
        assert list(sp.singular_indices) == [0, 1, 2]

    def test_fine_circle(self):
        sp = build_support(_circle(), 5.0)
        assert list(sp.singular_indices) == [0, len(sp.vertices) - 1]

    def test_open_end(self):
        sp = build_support([[0, 0], [1, 0]], stop_at_end=False)
        assert list(sp.singular_indices) == [0]

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            build_support([[0, 0]])
        with pytest.raises(InvalidArgument):
            build_support([[0, 0], [0, 0]])


class TestClosedForms:
    def test_trapezoid(self):
        sp = build_support([[0.0, 0.0], [4.0, 0.0]])
        lim = KinematicLimits(1.0, 1.0)
        assert speed_profile(sp, lim).duration == pytest.approx(5.0, rel=1e-3)
        _, T = time_optimal_reparam(sp, lim, 0.01)
        assert T == pytest.approx(5.0, abs=0.02)

    def test_triangle(self):
        sp = build_support([[0.0, 0.0], [1.0, 0.0]])
        lim = KinematicLimits(10.0, 1.0)
        assert speed_profile(sp, lim).duration == pytest.approx(2.0, rel=1e-3)
        _, T = time_optimal_reparam(sp, lim, 0.01)
        assert T == pytest.approx(2.0, abs=0.02)

    def test_circle_speed(self):
        lim = KinematicLimits(17.0304, 63.864)
        prof = speed_profile(build_support(_circle(turns=6), 5.0), lim)
        mid = prof.speed[len(prof.speed) // 3 : 2 * len(prof.speed) // 3]
        np.testing.assert_allclose(mid, np.sqrt(63.864), rtol=1e-3)


def _tour(n=40, seed=2):
    return tsp_tour(TspSpec(radial_density(3, 6, 64).power(2), n, seed))


LIM = KinematicLimits(17.0304, 63.864)


class TestProperties:
    @pytest.mark.parametrize("mode", ["RV", "RIV"])
    def test_feasible_within_slack(self, mode):
        lim = KinematicLimits(LIM.alpha, LIM.beta, mode)
        curve, _ = time_optimal_reparam(build_support(_tour()), lim, 0.004)
        rep = feasibility_report(curve, lim)
        assert rep.speed <= 0.02 and rep.accel <= 0.02

    def test_stops_at_corners(self):
        tour = _tour()
        sp = build_support(tour)
        curve, _ = time_optimal_reparam(sp, LIM, 0.004)
        for v in sp.vertices[sp.singular_indices]:
            hit = np.flatnonzero(np.all(np.abs(curve.points - v) <= 1e-9, axis=1))
            assert len(hit), "corner not sampled"
            # resting at a corner: the neighbouring samples sit within one accel step
            k = hit[0]
            if 0 < k < curve.n - 1:
                step = max(np.linalg.norm(curve.points[k] - curve.points[k - 1]), np.linalg.norm(curve.points[k + 1] - curve.points[k]))
                assert step <= LIM.beta * curve.dt**2 * 1.05

    def test_monotone_in_limits(self):
        sp = build_support(_tour())
        _, T = time_optimal_reparam(sp, LIM, 0.004)
        _, Ta = time_optimal_reparam(sp, KinematicLimits(LIM.alpha / 2, LIM.beta), 0.004)
        _, Tb = time_optimal_reparam(sp, KinematicLimits(LIM.alpha, LIM.beta / 2), 0.004)
        assert Ta >= T and Tb >= T

    def test_support_preserved(self):
        tour = _tour()
        curve, _ = time_optimal_reparam(build_support(tour), LIM, 0.004)
        worst = max(_seg_dist(p, tour) for p in curve.points)
        assert worst <= 1e-6 * 6.0

    def test_faster_than_feasible_input(self):
        # a slow, smooth and rest-to-rest input is feasible; the profile can only beat it
        shape = _circle(2.0, 1.0, 1)
        c = constant_speed_parameterization(shape, 0.2, 0.004)
        rep = feasibility_report(c, LIM)
        assert rep.speed == 0 and rep.accel == 0
        rep = compare_traversal(c, LIM, support=shape)
        assert rep.T_rep <= c.duration

    def test_tsp_ratio(self):
        tour = _tour(200, 0)
        c = constant_speed_parameterization(tour, 0.5 * LIM.alpha, 0.004)
        rep = compare_traversal(c, LIM, support=tour)
        assert rep.T_projection == pytest.approx(c.duration)
        assert rep.ratio >= 2.0
