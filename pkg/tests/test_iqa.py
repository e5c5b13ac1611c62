import math

import numpy as np
import pytest

from parareg._validation import ConfigurationError, DomainError, StepError
from parareg.families import heat_mode, smooth_data
from parareg.gridfn import GridFunction, SpaceTimeGrid
from parareg.iqa import (
    ImprovementOfQuadratics,
    IqaSchedule,
    IqaState,
    consecutive_passing,
    extract_c2alpha,
    iqa_step,
    reconstruct,
    reduce_general,
    regularity_loop,
    rescale_w,
    rescaled_operator,
    solve_s0,
    taylor_at_origin,
)
from parareg.operators import QuadPoly, make_heat, make_logdet, make_pucci_minimal
from parareg.solver import residual, residual_mask, solve_parabolic

G = SpaceTimeGrid(1, 1 / 64, 1 / 1024)
P = QuadPoly([[0.2]], [0.1], 0.05, 0.2)


def on_grid(f, g=G):
    return GridFunction.from_function(g, f)


class TestRescale:
    def test_exact_polynomial(self):
        w, _ = rescale_w(on_grid(P), P, 0.5, 0.5)
        assert np.abs(w.values).max() < 1e-15

    def test_constant_bump(self):
        r, a = 0.5, 0.5
        w, _ = rescale_w(on_grid(lambda X, T: P(X, T) + r ** (2 + a)), P, r, a)
        mask = np.broadcast_to(w.grid.ball_mask, w.grid.shape)
        assert np.allclose(w.values[mask], 1.0, atol=1e-12)

    def test_round_trip(self):
        u = on_grid(smooth_data(1, 1, 1e-2))
        r, a = 0.25, 0.5
        w, _ = rescale_w(u, P, r, a, bound=np.inf)
        sub = G.sub_grid(r)
        back = reconstruct(P, w, r, a, G)
        assert np.allclose(back, u.values[G.sub_slices(sub)], rtol=0, atol=1e-15)

    def test_hypothesis_violated(self):
        with pytest.raises(StepError):
            rescale_w(on_grid(lambda X, T: 1.0 + 0 * T), QuadPoly.zero(1), 0.5, 0.5)

    def test_rescaled_operator(self):
        F = make_logdet(1)
        Ft = rescaled_operator(F, np.array([[0.1]]), 0.25, 0.5)
        N = np.array([[0.3]])
        assert Ft(N) == pytest.approx((math.log(1.1 + 0.5 * 0.3) - math.log(1.1)) / 0.5)
        assert Ft.delta == pytest.approx((0.5 - 0.1) / 0.5)


class TestTaylorAndRoot:
    def test_taylor_quadratic(self):
        Pt = taylor_at_origin(on_grid(P))
        assert np.allclose(Pt.M, P.M) and np.allclose(Pt.p, P.p)
        assert Pt.z == pytest.approx(P.z) and Pt.beta == pytest.approx(P.beta)

    def test_taylor_zero(self):
        Pt = taylor_at_origin(GridFunction.zeros(G))
        assert Pt.coefficient_size() == 0.0

    def test_root_already_solved(self):
        F = make_logdet(2)
        M = np.diag([0.1, -0.2])
        assert solve_s0(F, M, float(F(M))) == 0.0

    def test_root_trace(self):
        F = make_heat(3)
        M = np.diag([0.5, -0.1, 0.2])
        assert solve_s0(F, M, 1.0) == pytest.approx((1.0 - 0.6) / 3, abs=1e-12)

    def test_root_pucci(self):
        lam, eps, n = 0.4, 0.03, 2
        F = make_pucci_minimal(lam, 1.0, n)
        assert solve_s0(F, np.zeros((n, n)), n * lam * eps) == pytest.approx(eps, abs=1e-13)

    def test_root_no_sign_change(self):
        with pytest.raises(StepError):
            solve_s0(make_logdet(1), np.zeros((1, 1)), 5.0)

    def test_root_shrinks_with_scale(self):
        F = make_logdet(1)
        M = np.array([[0.1]])
        Mt = np.array([[0.3]])
        beta = 0.3 / 1.1
        s = [abs(solve_s0(rescaled_operator(F, M, r, 0.5), Mt, beta)) for r in 0.5 ** np.arange(1, 8)]
        assert all(b < a for a, b in zip(s, s[1:]))


class TestSchedule:
    def test_defaults(self):
        s = IqaSchedule(make_heat(1))
        assert s.mu == pytest.approx(0.125**2.5 / 4)
        assert s.r0 == 1.0 and all(s.conditions().values())
        assert s.header()["log_c0"] < -1000

    def test_rc4_violation(self):
        with pytest.raises(ConfigurationError, match="rc4"):
            IqaSchedule(make_heat(1), sigma=0.5)

    def test_finite_delta_shrinks_r0(self):
        assert IqaSchedule(make_logdet(1)).r0 < 1.0


class TestStep:
    @pytest.mark.parametrize("F", [make_heat(1), make_logdet(1)], ids=lambda F: F.name)
    def test_fixed_point(self, F):
        M = np.array([[0.2]])
        Q = QuadPoly(M, [0.1], 0.05, float(F(M)))
        sched = IqaSchedule(F)
        st = iqa_step(on_grid(Q), IqaState(0, Q, 1.0, 0.0, sched.alpha), F, sched.alpha, sched)
        assert np.allclose(st.poly.M, Q.M, atol=1e-10) and np.allclose(st.poly.p, Q.p, atol=1e-10)
        assert st.poly.z == pytest.approx(Q.z, abs=1e-10) and st.poly.beta == pytest.approx(Q.beta, abs=1e-10)
        assert st.scale == pytest.approx(sched.sigma)

    def test_alpha_mismatch(self):
        sched = IqaSchedule(make_heat(1))
        with pytest.raises(ConfigurationError):
            iqa_step(GridFunction.zeros(G), IqaState(0, P, 1.0, 0.0), make_heat(1), 0.25, sched)


class TestLoop:
    def test_zero(self):
        states, rep = regularity_loop(GridFunction.zeros(G), make_heat(1))
        assert all(s.poly.coefficient_size() == 0 for s in states)
        assert rep.C2 == 0.0 and rep.within_delta

    def test_smallness(self):
        F = make_logdet(1)
        with pytest.raises(DomainError):
            regularity_loop(on_grid(lambda X, T: 0.5 + 0 * T), F)

    def test_heat_levels(self):
        g = SpaceTimeGrid(1, 1 / 256, 16 / 256**2)
        u = on_grid(heat_mode(1, 0.1, [0.3]), g)
        states, rep = regularity_loop(u, make_heat(1))
        assert consecutive_passing(states) >= 3
        assert all(s.diagnostics["C_measured"] <= 1.0 for s in states[1:])

    def test_estimator(self):
        est = ImprovementOfQuadratics(make_heat(1), k_max=1).fit(on_grid(heat_mode(1, 0.1, [0.3])))
        assert len(est.states_) == 2 and est.c2_ >= 0
        assert np.isfinite(est.predict(np.zeros((1, 1)), np.zeros(1))).all()


class TestExtraction:
    def test_empty(self):
        assert extract_c2alpha([], 0.125, 1.0, 0.5) == (0.0, 0.0)

    def test_single_state(self):
        st = IqaState(0, QuadPoly([[0.3]], [0.1], 0.0, 0.2), 1.0, 0.0)
        C, Ca = extract_c2alpha([st], 0.125, 1.0, 0.5)
        assert C == pytest.approx(0.3) and Ca == pytest.approx(0.3 / 0.125**0.5)

    def test_consecutive(self):
        good = IqaState(0, QuadPoly.zero(1), 1.0, 0.0)
        bad = IqaState(1, QuadPoly.zero(1), 0.1, 1.0)
        assert consecutive_passing([good, bad, good, good]) == 2


class TestReduction:
    def test_zero_reference(self):
        F = make_logdet(1)
        G0 = reduce_general(F, GridFunction.zeros(G))
        M = np.array([[0.2]])
        assert G0(M, None, None, np.array([0.25]), -0.5) == pytest.approx(float(F(M)))

    def test_residual_identity(self):
        g = SpaceTimeGrid.unit(1, 1 / 32)
        F = make_pucci_minimal(0.5, 1.0, 1)
        u = solve_parabolic(F, smooth_data(1, 1, 1e-3), g)
        phi = solve_parabolic(F, smooth_data(2, 1, 1e-3), g)
        Gop = reduce_general(F, phi)
        mask = residual_mask(u)
        lhs = residual(Gop, u - phi).values[mask]
        rhs = residual(F, u).values[mask]
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)
