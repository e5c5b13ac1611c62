import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parareg._validation import DomainError
from parareg.barrier import (
    barrier_eval,
    barrier_params,
    comparison_check,
    sample_barrier_region,
    supersolution_sign_check,
)
from parareg.contact import ContactParabola
from parareg.geometry import GAMMA, SpaceTimePoint
from parareg.gridfn import GridFunction, SpaceTimeGrid
from parareg.operators import make_heat, make_pucci_minimal


def contact_poly(a, n):
    return ContactParabola(SpaceTimePoint(np.zeros(n), -1.0), a).as_quadpoly()


class TestParams:
    def test_alpha_theta_one(self):
        p = barrier_params(1.0, 1.0, 1.0, 2)
        assert GAMMA**2 / 16 == pytest.approx(0.00067, abs=5e-6)
        assert p.alpha == pytest.approx(0.125021, abs=1e-6)
        assert p.beta2 == pytest.approx(1 / p.alpha + 1) and p.beta2 == pytest.approx(8.99866, abs=1e-5)

    @given(theta=st.floats(0.75, 4.0), n=st.integers(1, 3), lam=st.floats(0.05, 1.0))
    def test_positivity(self, theta, n, lam):
        p = barrier_params(theta, lam, 1.0, n)
        assert p.beta1 > 0 and p.Cprime > n + 1
        assert p.beta2 == max(1 / p.alpha + 1, n / lam)

    def test_repaired_larger(self):
        assert barrier_params(1.0, 0.5, 1.0, 1, "repaired").beta1 > barrier_params(1.0, 0.5, 1.0, 1).beta1

    @pytest.mark.parametrize("theta", [0.5, 5.0])
    def test_theta_range(self, theta):
        with pytest.raises(DomainError):
            barrier_params(theta, 1.0, 1.0, 1)


class TestEvaluation:
    P = barrier_params(1.0, 1.0, 1.0, 1)

    def test_lateral_boundary_vanishes(self):
        T1 = 0.25
        tl = 0.3 * T1
        t = tl - self.P.delta_slab * T1
        x = math.sqrt(tl / self.P.alpha)
        assert barrier_eval(self.P, 0.01, T1, [x], t) == pytest.approx(0.0, abs=1e-15)

    def test_axis_at_top(self):
        a, T1 = 0.01, 0.25
        t = T1 - self.P.delta_slab * T1
        expected = a * self.P.Cprime * T1 * (1 - math.exp(-self.P.beta2 / self.P.alpha))
        assert barrier_eval(self.P, a, T1, [0.0], t) == pytest.approx(expected, rel=1e-12)

    def test_positive_inside(self):
        X, T = sample_barrier_region(self.P, 0.25, 500, seed=1)
        inside = np.sum(X**2, -1) / (T + self.P.delta_slab * 0.25) < 0.99 / self.P.alpha
        assert (barrier_eval(self.P, 0.01, 0.25, X, T)[inside] > 0).all()

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            barrier_eval(self.P, 0.01, 0.25, [0.0], -1.0)
        with pytest.raises(DomainError):
            barrier_eval(self.P, 0.01, 0.25, [1.0], 0.0)

    @pytest.mark.parametrize("n", [1, 2])
    def test_derivatives_match_finite_differences(self, n):
        p = barrier_params(2.0, 1.0, 1.0, n)
        a, T1 = 1e-3, 0.5
        X, T = sample_barrier_region(p, T1, 200, seed=2)
        tl = T + p.delta_slab * T1
        keep = (np.sum(X**2, -1) / tl < 0.5 / p.alpha) & (tl > 0.2 * T1)
        X, T = X[keep][:50], T[keep][:50]
        _, D2, phit = barrier_eval(p, a, T1, X, T, derivatives=True)
        # steps scaled to the local parabolic length
        et = 1e-5 * (T + p.delta_slab * T1)
        ft = (barrier_eval(p, a, T1, X, T + et) - barrier_eval(p, a, T1, X, T - et)) / (2 * et)
        assert np.allclose(ft, phit, rtol=1e-6, atol=1e-12)
        ex = 1e-4 * np.sqrt(T + p.delta_slab * T1)[:, None]
        for i in range(n):
            d = np.eye(n)[i] * ex
            fxx = (barrier_eval(p, a, T1, X + d, T) - 2 * barrier_eval(p, a, T1, X, T)
                   + barrier_eval(p, a, T1, X - d, T)) / ex[:, 0] ** 2
            assert np.allclose(fxx, D2[:, i, i], rtol=1e-4, atol=1e-9)


class TestSignCheck:
    @pytest.mark.parametrize("theta", [0.75, 1.0, 2.0, 4.0])
    @pytest.mark.parametrize("n", [1, 2])
    def test_repaired_schedule_passes(self, theta, n):
        F = make_pucci_minimal(0.5, 1.0, n, delta=1.0)
        p = barrier_params(theta, 0.5, 1.0, n, "repaired")
        a = 1e-3 * F.delta
        rep = supersolution_sign_check(F, contact_poly(a, n), p, a, 0.25, samples=2000, seed=0)
        assert rep.passed and rep.min_margin > 0

    def test_degenerate_barrier_fails(self):
        a = 1e-3
        F = make_pucci_minimal(0.5, 1.0, 1, delta=1.0)
        P1 = contact_poly(a, 1)
        rep = supersolution_sign_check(F, P1, barrier_params(1.0, 0.5, 1.0, 1), a, 0.25, samples=200, scale=0)
        assert not rep.passed
        # F(-a I) - a = -Lam a - a after the rescaling by a
        assert rep.min_margin == pytest.approx(-2.0)

    def test_report_is_deterministic(self):
        F = make_pucci_minimal(0.5, 1.0, 1, delta=1.0)
        p = barrier_params(1.0, 0.5, 1.0, 1)
        r1 = supersolution_sign_check(F, contact_poly(1e-3, 1), p, 1e-3, 0.25, samples=500, seed=4)
        r2 = supersolution_sign_check(F, contact_poly(1e-3, 1), p, 1e-3, 0.25, samples=500, seed=4)
        assert r1 == r2


class TestComparison:
    G = SpaceTimeGrid.unit(1, 1 / 16)

    def test_equal(self):
        h = GridFunction.from_function(self.G, lambda X, T: np.sin(X[..., 0]) * np.exp(-T))
        rep = comparison_check(make_heat(1), h, h, 0.1, 0.1, 0.5)
        assert rep.sup_diff == 0.0 and rep.ok

    def test_constant_shift(self):
        h = GridFunction.from_function(self.G, lambda X, T: X[..., 0] ** 2 + 2 * T)
        w = h + GridFunction(self.G, np.full(self.G.shape, 0.05))
        rep = comparison_check(make_heat(1), w, h, 0.05, 0.01, 0.5)
        assert rep.sup_diff == pytest.approx(0.05) and rep.ok
        assert rep.sub_residual_min == pytest.approx(0.1) and rep.super_residual_max == pytest.approx(-0.1)

    def test_grid_mismatch(self):
        h = GridFunction.zeros(self.G)
        with pytest.raises(DomainError):
            comparison_check(make_heat(1), GridFunction.zeros(SpaceTimeGrid.unit(1, 1 / 8)), h, 0.1, 0.1, 0.5)
