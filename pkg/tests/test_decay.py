import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parareg._validation import DomainError
from parareg.decay import (
    fit_decay_exponent,
    general_decay_trial,
    low_point,
    oscillation_decay_trial,
    scaled_decay_profile,
    supersolution_decay_trial,
)
from parareg.families import edge_bumps, smooth_data
from parareg.gridfn import GridFunction, SpaceTimeGrid
from parareg.operators import make_general, make_heat, make_pucci_minimal
from parareg.solver import solve_parabolic

G = SpaceTimeGrid.unit(1, 1 / 48)


def linear(g=G, eps=1e-3):
    return GridFunction.from_function(g, lambda X, T: eps * X[..., 0] + 0 * T)


class TestOscillationRatio:
    def test_linear(self):
        assert oscillation_decay_trial(linear()) == pytest.approx(1 / 3, abs=1e-12)

    def test_constant(self):
        assert oscillation_decay_trial(GridFunction(G, np.full(G.shape, 2e-3))) == 0.0

    @pytest.mark.parametrize("seed", range(4))
    def test_heat_solutions_contract(self, seed):
        g = SpaceTimeGrid.unit(1, 1 / 32)
        u = solve_parabolic(make_heat(1), smooth_data(seed, 1, 1e-3), g)
        assert 0 <= oscillation_decay_trial(u) < 1

    def test_smallness_guard(self):
        F = make_pucci_minimal(0.5, 1.0, 1, delta=1.0)
        with pytest.raises(DomainError):
            oscillation_decay_trial(linear(eps=0.5), F)


class TestProfile:
    def test_linear_profile(self):
        g = SpaceTimeGrid.unit(1, 1 / 64)
        prof = scaled_decay_profile(linear(g))
        assert prof.ratios[0] == 1.0
        assert np.allclose(prof.ratios, prof.rhos, atol=1e-12)
        assert prof.alpha_fit == pytest.approx(1.0, abs=1e-9)
        assert prof.within_bound and prof.monotone

    def test_solver_output(self):
        g = SpaceTimeGrid.unit(1, 1 / 32)
        u = solve_parabolic(make_pucci_minimal(0.5, 1.0, 1), smooth_data(7, 1, 1e-3), g)
        prof = scaled_decay_profile(u, make_pucci_minimal(0.5, 1.0, 1))
        assert prof.alpha_fit >= 0.01 and prof.monotone

    def test_ladder_floor(self):
        F = make_pucci_minimal(0.5, 1.0, 1, delta=1.0)
        g = SpaceTimeGrid.unit(1, 1 / 64)
        prof = scaled_decay_profile(linear(g, 1e-4), F)
        assert prof.rho_min == pytest.approx(0.1)
        assert min(prof.rhos) >= prof.rho_min

    @given(alpha=st.floats(0.05, 3.0), c=st.floats(0.2, 5.0))
    def test_fit_recovers_power_law(self, alpha, c):
        rhos = 0.5 ** np.arange(1, 6)
        assert fit_decay_exponent(rhos, c * rhos**alpha) == pytest.approx(alpha, rel=1e-9)
        assert fit_decay_exponent(rhos, rhos**alpha, intercept=False) == pytest.approx(alpha, rel=1e-9)

    def test_fit_degenerate(self):
        assert fit_decay_exponent([1.0, 0.5], [1.0, 0.0]) == pytest.approx(np.inf)


class TestSupersolution:
    def test_zero(self):
        u = GridFunction.zeros(G)
        rep = supersolution_decay_trial(u, None, (np.zeros(1), 0.0), 0.01)
        assert not rep.vacuous and rep.fractions == (0.0,) * 5

    def test_pucci_supersolution(self):
        g = SpaceTimeGrid.unit(1, 1 / 32)
        F = make_pucci_minimal(0.05, 1.0, 1)
        u = solve_parabolic(F, edge_bumps(1, 1e-3), g)
        (y0, s0), ok = low_point(u, 0.01)
        assert ok
        rep = supersolution_decay_trial(u, F, (y0, s0), 0.01)
        assert not rep.vacuous
        assert rep.fractions[0] <= 1 and rep.nonincreasing and rep.slope < 0

    def test_guards(self):
        u = GridFunction.zeros(G)
        with pytest.raises(DomainError):
            supersolution_decay_trial(u, None, (np.array([0.5]), 0.0), 0.01)
        with pytest.raises(DomainError):
            supersolution_decay_trial(u, None, (np.zeros(1), 0.0), 0.01, c1=1.5)


class TestGeneral:
    @staticmethod
    def operator(r, zcoef):
        return make_general(lambda M, p, z, x, t: M[..., 0, 0] + r * p[..., 0] + zcoef * z, 1, 1.0, 1.0,
                            grad_p_bound=r, grad_z_bound=abs(zcoef), delta=1.0)

    def test_small_lower_order(self):
        g = SpaceTimeGrid.unit(1, 1 / 32)
        F = self.operator(0.1, 0.01)
        u = solve_parabolic(F, smooth_data(2, 1, 1e-3), g)
        rep = general_decay_trial(u, F, nu0=0.5)
        assert rep.ratio < 1 and rep.hnu2
        assert rep.grad_p_max == pytest.approx(0.1, rel=1e-5)

    def test_reduces_without_lower_order(self):
        g = SpaceTimeGrid.unit(1, 1 / 32)
        u = solve_parabolic(make_heat(1), smooth_data(2, 1, 1e-3), g)
        assert general_decay_trial(u, make_heat(1), 0.5).ratio == oscillation_decay_trial(u)

    def test_large_zero_order_flagged(self):
        g = SpaceTimeGrid.unit(1, 1 / 16)
        F = self.operator(0.1, 5.0)
        u = solve_parabolic(F, smooth_data(2, 1, 1e-3), g, substeps=64)
        assert not general_decay_trial(u, F, nu0=0.5).preconditions_ok
