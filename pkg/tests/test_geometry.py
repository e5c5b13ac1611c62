import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parareg._validation import DomainError
from parareg.families import random_cylinder_instance, random_slab_pair
from parareg.geometry import (
    GAMMA,
    Cylinder,
    ParabolicBall,
    SpaceTimePoint,
    VitaliCover,
    balls_disjoint,
    balls_intersect,
    common_slab,
    eta2,
    hat,
    intersection_cylinder,
    cylinder_radius_bound,
    min_opening,
    min_opening_ball,
    monte_carlo_measure,
    pb_contains,
    pb_volume,
    region_measure,
    vitali_cover,
)

openings = st.floats(0.1, 4.0)
heights = st.floats(0.01, 4.0)


def up(x, t, T=1.0, theta=1.0):
    return ParabolicBall(SpaceTimePoint(np.atleast_1d(x), t), T, theta, "up")


class TestVolume:
    @pytest.mark.parametrize("n,T,theta,expected", [(1, 1.0, 1.0, 4 / 3), (2, 1.0, 2.0, math.pi / 4)])
    def test_closed_form_values(self, n, T, theta, expected):
        assert pb_volume(up(np.zeros(n), 0.0, T, theta)) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("n,T,theta", [(1, 1.0, 1.0), (2, 1.0, 2.0), (3, 0.5, 0.75)])
    def test_monte_carlo_oracle(self, n, T, theta):
        b = up(np.zeros(n), 0.0, T, theta)
        mc, se = monte_carlo_measure(b.contains, b.bounding_box(), 10**6, seed=0)
        assert abs(mc - pb_volume(b)) / pb_volume(b) < 0.01
        assert se > 0

    def test_vanishes_with_height(self):
        vols = [pb_volume(up([0.0, 0.0], 0.0, T)) for T in (1e-2, 1e-4, 1e-8)]
        assert vols[-1] < 1e-15 and vols == sorted(vols, reverse=True)

    @given(T=heights, theta=openings, s=st.floats(0.1, 3.0), n=st.integers(1, 3))
    def test_parabolic_scaling(self, T, theta, s, n):
        v1 = pb_volume(up(np.zeros(n), 0.0, T, theta))
        v2 = pb_volume(up(np.zeros(n), 0.0, s * s * T, theta))
        assert v2 == pytest.approx(s ** (n + 2) * v1, rel=1e-12)

    def test_region_measure_against_volume(self):
        b = up([0.0], 0.0, 1.0, 1.0)
        res = region_measure(b.contains, b.bounding_box(), 1 / 128)
        assert abs(res.measure - pb_volume(b)) / pb_volume(b) < 0.02
        assert abs(res.measure - pb_volume(b)) <= res.error_bound

    def test_region_measure_trivial_predicates(self):
        box = (np.array([0.0, 0.0]), np.array([0.5, 2.0]))
        assert region_measure(lambda X, T: np.zeros(len(T), bool), box).measure == 0.0
        assert region_measure(lambda X, T: np.ones(len(T), bool), box).measure == pytest.approx(1.0, abs=1e-15)

    def test_degenerate_box_rejected(self):
        with pytest.raises(DomainError):
            region_measure(lambda X, T: T > 0, (np.zeros(2), np.zeros(2)))


class TestMembership:
    def test_vertex_is_member(self):
        assert pb_contains(up([0.3], -0.2), SpaceTimePoint([0.3], -0.2))

    def test_examples(self):
        b = up([0.0], 0.0)
        assert not pb_contains(b, SpaceTimePoint([0.5], 0.1))
        assert pb_contains(b, SpaceTimePoint([0.3], 0.5))

    def test_down_ball_orientation(self):
        b = ParabolicBall(SpaceTimePoint([0.0], 0.0), 1.0, 1.0, "down")
        assert pb_contains(b, SpaceTimePoint([0.3], -0.5))
        assert not pb_contains(b, SpaceTimePoint([0.3], 0.5))

    @pytest.mark.parametrize("kwargs", [dict(T=0.0), dict(theta=-1.0), dict(orientation="sideways")])
    def test_invalid_balls(self, kwargs):
        args = dict(vertex=SpaceTimePoint([0.0], 0.0), T=1.0, theta=1.0, orientation="up") | kwargs
        with pytest.raises(DomainError):
            ParabolicBall(**args)

    @given(T=heights, theta=openings, n=st.integers(1, 3), seed=st.integers(0, 2**16))
    def test_samples_are_members(self, T, theta, n, seed):
        b = up(np.zeros(n), 0.0, T, theta)
        X, S = b.sample(200, seed)
        assert b.contains(X, S, tol=1e-12).all()


class TestHat:
    def test_opening(self):
        assert hat(up([0.0], 0.0)).theta == pytest.approx(3 - 2 * math.sqrt(2), rel=1e-14)

    def test_eta2_value(self):
        assert eta2(2) == pytest.approx(0.0107233, rel=1e-5)

    @given(T=heights, theta=openings, n=st.integers(1, 3))
    def test_volume_ratio(self, T, theta, n):
        b = up(np.zeros(n), 0.0, T, theta)
        assert pb_volume(b) / pb_volume(hat(b)) == pytest.approx(eta2(n), rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_hat_contains_ball(self, n):
        b = up(np.full(n, 0.2), -0.4, 0.3, 2.0)
        X, S = b.sample(1000, 0)
        assert hat(b).contains(X, S, tol=1e-12).all()

    def test_hat_requires_up_ball(self):
        with pytest.raises(DomainError):
            hat(ParabolicBall(SpaceTimePoint([0.0], 0.0), 1.0, 1.0, "down"))


class TestMinOpening:
    def test_examples(self):
        assert min_opening([0.0], 0.0) == 1.0
        assert min_opening([0.5, 0.0], -0.5) == pytest.approx(2.0)

    @given(r=st.floats(0, 11 / 24), t=st.floats(-(11 / 24) ** 2, 0.0), n=st.integers(1, 3))
    def test_range_on_small_cylinder(self, r, t, n):
        x = np.zeros(n)
        x[0] = r
        assert 0.75 - 1e-12 <= min_opening(x, t) <= 4 + 1e-12

    @pytest.mark.parametrize("x,t", [([0.0], 0.0), ([0.4], -0.3), ([0.1, -0.5], -0.6)])
    def test_minimality(self, x, t):
        b = min_opening_ball(x, t)
        X, S = b.sample(1000, 0)
        inside = Cylinder(np.zeros(len(x)), 0.0, 1.0).contains(X, S, tol=1e-12)
        assert inside.all()
        shrunk = ParabolicBall(b.vertex, b.T, b.theta * (1 - 1e-6), "down")
        x = np.asarray(x, dtype=float)
        d = x / np.linalg.norm(x) if np.linalg.norm(x) > 0 else np.eye(len(x))[0]
        edge = x + math.sqrt(b.T / shrunk.theta) * d
        assert shrunk.contains(edge[None, :], [b.vertex.t - b.T], tol=1e-15)[0]
        assert np.linalg.norm(edge) > 1

    def test_rejects_outside(self):
        with pytest.raises(DomainError):
            min_opening([1.0], -0.5)
        with pytest.raises(DomainError):
            min_opening([0.0], 0.5)


class TestIntersectionCylinder:
    def test_worked_example(self):
        b = ParabolicBall(SpaceTimePoint([0.0], 0.0), 1.0, 1.0, "down")
        cyl = intersection_cylinder(b, SpaceTimePoint([0.0], -1.0), 1.0)
        assert cyl.radius == pytest.approx(0.5)
        assert cyl.top_time == pytest.approx(-0.5)
        assert cyl.center == (0.0,)

    def test_degenerate_center(self):
        b = ParabolicBall(SpaceTimePoint([0.2, 0.1], 0.0), 1.0, 2.0, "down")
        cyl = intersection_cylinder(b, SpaceTimePoint([0.2, 0.1], -0.5), 0.25)
        assert np.allclose(cyl.center, [0.2, 0.1])

    @given(seed=st.integers(0, 2**20), n=st.integers(1, 3))
    def test_containment_and_radius(self, seed, n):
        ball, p1, T = random_cylinder_instance(seed, n)
        cyl = intersection_cylinder(ball, p1, T)
        X, S = cyl.sample(500, seed)
        upb = ParabolicBall(p1, T, ball.theta, "up")
        assert (ball.contains(X, S, tol=1e-12) & upb.contains(X, S, tol=1e-12)).all()
        assert cyl.radius >= cylinder_radius_bound(T, ball.theta) * (1 - 1e-12)

    def test_bound_constant(self):
        assert cylinder_radius_bound(1.0, 1.0) == pytest.approx((math.sqrt(2) - 1) / 4)
        assert GAMMA == pytest.approx(0.10355339059327379)

    def test_preconditions(self):
        b = ParabolicBall(SpaceTimePoint([0.0], 0.0), 1.0, 1.0, "down")
        with pytest.raises(DomainError):
            intersection_cylinder(b, SpaceTimePoint([0.9], -0.1), 0.05)
        with pytest.raises(DomainError):
            intersection_cylinder(b, SpaceTimePoint([0.0], -0.5), 0.8)
        with pytest.raises(DomainError):
            intersection_cylinder(ParabolicBall(SpaceTimePoint([0.0], 0.0), 1.0, 0.5, "down"),
                                  SpaceTimePoint([0.0], -0.5), 0.1)


class TestCommonSlab:
    def test_identical_vertices(self):
        b = min_opening_ball([0.2], -0.1)
        slab, _ = common_slab(b, b)
        assert slab.lens_radius == pytest.approx(0.8)
        assert slab.center == (0.2,)

    def test_vertices_below_small_cylinder_rejected(self):
        # times -0.3 and -0.4 lie below -(11/24)^2
        with pytest.raises(DomainError):
            common_slab(min_opening_ball([0.0, 0.0], -0.3), min_opening_ball([0.2, 0.0], -0.4))

    def test_volume_for_nearby_vertices(self):
        b0 = min_opening_ball([0.0, 0.0], -0.15)
        b1 = min_opening_ball([0.2, 0.0], -0.2)
        slab, vol = common_slab(b0, b1)
        assert vol >= math.pi * (1 / 8) ** 2 * (1 / 8)
        X, S = slab.sample(10_000, 0)
        assert (b0.contains(X, S, tol=1e-12) & b1.contains(X, S, tol=1e-12)).all()

    @given(seed=st.integers(0, 2**20), n=st.integers(1, 3))
    def test_containment(self, seed, n):
        b0, b1 = random_slab_pair(seed, n)
        slab, vol = common_slab(b0, b1)
        X, S = slab.sample(500, seed)
        assert (b0.contains(X, S, tol=1e-12) & b1.contains(X, S, tol=1e-12)).all()
        assert vol > 0

    def test_requires_minimal_balls(self):
        b = ParabolicBall(SpaceTimePoint([0.0], 0.0), 1.0, 2.0, "down")
        with pytest.raises(DomainError):
            common_slab(b, b)


class TestVitali:
    def test_empty(self):
        assert vitali_cover(np.zeros((0, 2)), [], 1.0) == []

    def test_singleton(self):
        balls = vitali_cover([SpaceTimePoint([0.1], -0.5)], [0.2], 1.0)
        assert len(balls) == 1
        assert hat(balls[0]).contains([[0.1]], [-0.5])[0]

    def test_two_overlapping_equal_heights(self):
        pts = np.array([[0.0, -0.5], [0.05, -0.48]])
        vc = VitaliCover(theta=1.0).fit(pts, [0.2, 0.2])
        assert vc.selected_indices_ == [0]
        assert (vc.predict(pts) == 0).all()

    @given(seed=st.integers(0, 2**20), n=st.integers(1, 3))
    def test_disjoint_and_covering(self, seed, n):
        rng = np.random.default_rng(seed)
        pts = np.c_[rng.uniform(-1, 1, (30, n)), rng.uniform(-1, 0, 30)]
        T = 1.0 - rng.random(30)
        vc = VitaliCover(theta=1.0).fit(pts, T)
        b = vc.balls_
        assert all(balls_disjoint(p, q) for i, p in enumerate(b) for q in b[i + 1:])
        assert (vc.predict(pts) >= 0).all()

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        pts = np.c_[rng.uniform(-1, 1, (40, 2)), rng.uniform(-1, 0, 40)]
        T = rng.uniform(0.01, 1, 40)
        assert VitaliCover().fit(pts, T).selected_indices_ == VitaliCover().fit(pts, T).selected_indices_

    def test_bad_heights(self):
        with pytest.raises(DomainError):
            vitali_cover(np.array([[0.0, 0.0]]), [0.0], 1.0)

    def test_intersection_test_against_sampling(self):
        a = up([0.0], -0.5, 0.2, 1.0)
        b = up([0.5], -0.5, 0.2, 1.0)
        c = up([1.0], -0.5, 0.2, 1.0)
        assert balls_intersect(a, b)
        assert not balls_intersect(a, c)
