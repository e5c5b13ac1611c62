import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parareg._validation import BoundaryError, DomainError
from parareg.geometry import Cylinder
from parareg.gridfn import (
    GridFunction,
    InfConvolution,
    SpaceTimeGrid,
    extend,
    fd_expansion,
    inf_convolution,
    oscillation,
    region_mask,
    semiconcavity_check,
    sup_convolution,
)

G1 = SpaceTimeGrid.unit(1, 1 / 32)
G2 = SpaceTimeGrid.unit(2, 1 / 16)


def gf(g, f):
    return GridFunction.from_function(g, f)


class TestGrid:
    def test_node_counts(self):
        assert G1.shape == (G1.nt, 65)
        assert G1.ts[0] == -1.0 and G1.ts[-1] == 0.0

    def test_default_time_step_is_dyadic(self):
        assert SpaceTimeGrid.unit(1, 1 / 10).tau == 2.0**-7

    @pytest.mark.parametrize("kwargs", [dict(h=0.3), dict(tau=0.3), dict(h=-1.0)])
    def test_incommensurate_steps(self, kwargs):
        args = dict(n=1, h=1 / 8, tau=1 / 64) | kwargs
        with pytest.raises(DomainError):
            SpaceTimeGrid(**args)

    def test_sub_grid_alignment(self):
        sub = G1.sub_grid(0.5)
        u = gf(G1, lambda X, T: X[..., 0] + T)
        r = u.restrict(0.5)
        assert r.grid == sub
        assert r.values[-1, 0] == pytest.approx(-0.5)

    def test_sub_grid_too_large(self):
        with pytest.raises(DomainError):
            G1.sub_grid(2.0)


class TestGridFunction:
    def test_immutable(self):
        u = GridFunction.zeros(G1)
        with pytest.raises(AttributeError):
            u.values = None
        with pytest.raises(ValueError):
            u.values[0, 0] = 1.0

    def test_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            GridFunction(G1, np.full(G1.shape, np.nan))

    def test_csv_and_bytes_round_trip(self):
        u = gf(G2, lambda X, T: np.sin(X[..., 0]) * X[..., 1] + T)
        mask = np.broadcast_to(G2.ball_mask, G2.shape)
        v = GridFunction.from_csv(u.to_csv())
        assert np.array_equal(v.values[mask], u.values[mask])
        w = GridFunction.from_bytes(u.to_bytes())
        assert np.array_equal(w.values, u.values) and w.grid == u.grid

    def test_arithmetic(self):
        u = gf(G1, lambda X, T: X[..., 0])
        assert np.allclose((2 * u - u).values, u.values)
        with pytest.raises(DomainError):
            u + GridFunction.zeros(G2)


class TestOscillation:
    def test_constant(self):
        assert oscillation(GridFunction(G1, np.full(G1.shape, 3.0))) == 0.0

    @pytest.mark.parametrize("radius,expected", [(1.0, 2.0), (1 / 3, 2 / 3)])
    def test_linear(self, radius, expected):
        g = SpaceTimeGrid.unit(1, 1 / 48)
        u = gf(g, lambda X, T: X[..., 0] + 0 * T)
        assert oscillation(u, Cylinder([0.0], 0.0, radius)) == pytest.approx(expected, abs=1e-12)

    def test_empty_region(self):
        with pytest.raises(DomainError):
            oscillation(GridFunction.zeros(G1), lambda X, T: np.zeros(len(T), bool))

    def test_region_mask_forms_agree(self):
        c = Cylinder([0.0, 0.0], 0.0, 0.5)
        a = region_mask(G2, c)
        b = region_mask(G2, lambda X, T: c.contains(X, T, tol=1e-12))
        assert np.array_equal(a, b)


class TestFiniteDifferences:
    def test_zero(self):
        e = fd_expansion(GridFunction.zeros(G2), (5, 8, 8))
        assert e.value == 0 and not e.gradient.any() and not e.hessian.any() and e.time_slope == 0

    @given(seed=st.integers(0, 2**16))
    def test_exact_on_quadratics(self, seed):
        rng = np.random.default_rng(seed)
        B = rng.normal(size=(2, 2))
        M, p, beta = B + B.T, rng.normal(size=2), rng.normal()
        u = gf(G2, lambda X, T: 0.5 * np.einsum("...i,ij,...j", X, M, X) + X @ p + beta * T)
        node = (10, 8 + 2, 8 - 3)
        e = fd_expansion(u, node)
        x = G2.coords[node[1:]]
        assert np.allclose(e.hessian, M, atol=1e-9)
        assert np.allclose(e.gradient, M @ x + p, atol=1e-10)
        assert e.time_slope == pytest.approx(beta, abs=1e-9)

    def test_second_order_accuracy(self):
        errs = []
        for h in (1 / 16, 1 / 32, 1 / 64):
            g = SpaceTimeGrid(1, h, h * h)
            u = gf(g, lambda X, T: np.sin(X[..., 0]) * np.exp(-T))
            e = fd_expansion(u, g.node_index([0.25], -0.5))
            errs.append(abs(e.gradient[0] - np.cos(0.25) * np.exp(0.5)) + abs(e.hessian[0, 0] + np.sin(0.25) * np.exp(0.5)))
        assert np.log2(errs[0] / errs[1]) > 1.8 and np.log2(errs[1] / errs[2]) > 1.8

    def test_boundary_stencil(self):
        with pytest.raises(BoundaryError):
            fd_expansion(GridFunction.zeros(G1), (0, 32))
        with pytest.raises(BoundaryError):
            fd_expansion(GridFunction.zeros(G1), (5, 0))


class TestConvolutions:
    def test_constant(self):
        u = GridFunction(G1, np.full(G1.shape, 2.0))
        assert np.array_equal(inf_convolution(u, 0.1).values, u.values)
        assert np.array_equal(sup_convolution(u, 0.1).values, u.values)

    def test_moreau_envelope_of_abs(self):
        # h = 1/20 puts both x = 0.2 and the minimiser x - eps/2 on the grid
        g = SpaceTimeGrid(1, 1 / 20, 1 / 100)
        u = gf(g, lambda X, T: np.abs(X[..., 0]) + 0 * T)
        k = g.m + 4
        assert inf_convolution(u, 0.2).values[5, k] == pytest.approx(0.15, abs=1e-12)
        v = gf(g, lambda X, T: -np.abs(X[..., 0]) + 0 * T)
        assert sup_convolution(v, 0.2).values[5, k] == pytest.approx(-0.15, abs=1e-12)

    def test_brute_force_n2(self):
        rng = np.random.default_rng(1)
        u = GridFunction(G2, rng.normal(size=G2.shape))
        ue = inf_convolution(u, 0.05)
        ball = G2.ball_mask
        X = G2.coords[ball]
        k, i, j = 10, 8, 12
        best = min(
            np.min(u.values[kk][ball] + (np.sum((X - G2.coords[i, j]) ** 2, 1) + (G2.ts[kk] - G2.ts[k]) ** 2) / 0.05)
            for kk in range(G2.nt)
        )
        assert ue.values[k, i, j] == pytest.approx(best, abs=1e-13)

    @given(seed=st.integers(0, 2**16), eps=st.floats(0.01, 1.0))
    def test_monotone_and_below(self, seed, eps):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=G1.shape)
        u, v = GridFunction(G1, a), GridFunction(G1, a + rng.random(G1.shape))
        ue, ve = inf_convolution(u, eps), inf_convolution(v, eps)
        assert (ue.values <= ve.values + 1e-15).all()
        assert (ue.values <= u.values).all()

    @given(seed=st.integers(0, 2**16))
    def test_duality(self, seed):
        u = GridFunction(G1, np.random.default_rng(seed).normal(size=G1.shape))
        assert np.array_equal(sup_convolution(u, 0.1).values, -inf_convolution(-u, 0.1).values)

    def test_transformer(self):
        u = gf(G1, lambda X, T: np.abs(X[..., 0]) + T)
        t = InfConvolution(eps=0.1).fit(u)
        assert np.array_equal(t.transform(u).values, inf_convolution(u, 0.1).values)
        assert t.get_params()["eps"] == 0.1
        with pytest.raises(DomainError):
            InfConvolution(kind="median").fit(u)


class TestSemiconcavityAndExtension:
    def test_smooth(self):
        u = gf(G1, lambda X, T: 0.5 * np.sin(X[..., 0]) + 0.5 * T)
        assert semiconcavity_check(u, 2.0)

    def test_concave_kink(self):
        u = gf(G1, lambda X, T: -np.abs(X[..., 0]) + 0 * T)
        assert semiconcavity_check(u, 0.1)

    def test_convex_kink(self):
        u = gf(G1, lambda X, T: np.abs(X[..., 0]) + 0 * T)
        assert not semiconcavity_check(u, 1.0)

    def test_extension(self):
        u = gf(G1, lambda X, T: np.sin(3 * X[..., 0]) * (1 + T))
        e = extend(u, before=0.25, after=0.125)
        k0 = int(round(0.25 / G1.tau))
        assert np.array_equal(e.values[k0:k0 + G1.nt], u.values)
        assert e.values.min() == u.values.min() and e.values.max() == u.values.max()
        c = GridFunction(G1, np.full(G1.shape, 1.5))
        assert (extend(c, 0.5).values == 1.5).all()
