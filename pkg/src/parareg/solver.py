"""Monotone explicit finite-difference solver for ``F(D^2u, Du, u, x, t) - u_t = 0``.

Forward Euler in time, central differences in space.  Nodes whose ``3^n``
stencil leaves the spatial ball are boundary nodes pinned to the data.  The
grid's time step is split into ``substeps`` internal steps so that the CFL
bound ``dt <= h^2 / (2 n Lam + |grad_p F| h n)`` holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import ConfigurationError, DomainError, rng_from
from .gridfn import GridFunction, SpaceTimeGrid, fd_fields, region_mask
from .geometry import Cylinder
from .operators import EllipticOperator, make_linear


def cfl_limit(F, h):
    n = F.n
    return h * h / (2 * n * F.Lam + F.grad_p_bound * h * n)


@dataclass(frozen=True)
class SolveInfo:
    substeps: int
    dt: float
    monotone: bool
    clamped_steps: int


def _inner(V, n, off):
    return V[tuple(slice(1 + o, V.shape[a + V.ndim - n] - 1 + o) for a, o in enumerate(off))]


def _inner_derivatives(V, h, n, need_grad=True, need_mixed=True):
    """Hessian (and gradient) on the inner box ``[1:-1]^n`` of a spatial array."""
    z = (0,) * n
    c = _inner(V, n, z)
    e = np.eye(n, dtype=int)
    H = np.zeros(c.shape + (n, n))
    G = np.zeros(c.shape + (n,)) if need_grad else None
    for i in range(n):
        fp, fm = _inner(V, n, e[i]), _inner(V, n, -e[i])
        H[..., i, i] = (fp - 2 * c + fm) / (h * h)
        if need_grad:
            G[..., i] = (fp - fm) / (2 * h)
        if need_mixed:
            for j in range(i + 1, n):
                H[..., i, j] = H[..., j, i] = (
                    _inner(V, n, e[i] + e[j]) - _inner(V, n, e[i] - e[j])
                    - _inner(V, n, -e[i] + e[j]) + _inner(V, n, -e[i] - e[j])
                ) / (4 * h * h)
    return c, G, H


class _BoundarySampler:
    def __init__(self, bdata, grid):
        self.grid = grid
        if isinstance(bdata, GridFunction):
            if bdata.grid != grid:
                raise DomainError("grid-function boundary data must live on the solution grid")
            self.values = bdata.values
            self.func = None
        elif callable(bdata):
            self.values = None
            self.func = bdata
        else:
            raise DomainError("boundary data must be a callable f(X, T) or a GridFunction")

    def slice(self, t):
        g = self.grid
        if self.func is not None:
            return np.broadcast_to(self.func(g.coords, np.full(g.spatial_shape, t)), g.spatial_shape).astype(float)
        s = (t - g.t_min) / g.tau
        k = int(math.floor(s + 1e-9))
        if k >= g.nt - 1:
            return self.values[-1].copy()
        w = s - k
        if w < 1e-9:
            return self.values[k].copy()
        return (1 - w) * self.values[k] + w * self.values[k + 1]


def _clamp(F, M):
    if not math.isfinite(F.delta):
        return M, False
    w, Q = np.linalg.eigh(M)
    if np.all(np.abs(w) <= F.delta):
        return M, False
    w = np.clip(w, -F.delta, F.delta)
    return (Q * w[..., None, :]) @ np.swapaxes(Q, -1, -2), True


def monotone_update(F, h, dt, seed=0, trials=64, scale=1.0):
    """Check that the explicit update is nondecreasing in every stencil value."""
    rng = rng_from(seed)
    n = F.n
    shape = (3,) * n
    x0 = np.zeros(n)
    for _ in range(trials):
        V = scale * rng.standard_normal(shape) * h * h
        base = _update_patch(F, V, h, dt, x0)
        for idx in np.ndindex(*shape):
            W = V.copy()
            W[idx] += 1e-7 * scale * h * h
            if _update_patch(F, W, h, dt, x0) < base - 1e-12 * scale * h * h:
                return False
    return True


def _update_patch(F, V, h, dt, x0):
    n = F.n
    Vp = np.pad(V, 1, mode="edge")
    c, G, H = _inner_derivatives(Vp, h, n)
    ci = (1,) * n
    return c[ci] + dt * float(F(H[ci], G[ci], c[ci], x0, 0.0, check_domain=False))


def solve_parabolic(F, bdata, grid, *, substeps=None, cfl_factor=1.0, clamp=True,
                    check_monotone=True, return_info=False):
    """Explicit monotone solve of ``F[u] - u_t = 0`` on the grid's cylinder.

    Parameters
    ----------
    F : EllipticOperator
    bdata : callable or GridFunction
        ``bdata(X, T)`` on the whole box, or a grid function on ``grid``
        (interpolated linearly in time between stored slices).  Only the
        bottom slice and the boundary nodes are read.
    grid : SpaceTimeGrid
        Defines the domain ``B_R x (t_min, t_max]``.
    substeps : int, optional
        Internal steps per grid step; chosen from the CFL bound when omitted.
    cfl_factor : float
        Fraction of the CFL limit used when ``substeps`` is omitted.
    """
    if not isinstance(F, EllipticOperator):
        raise DomainError("F must be an EllipticOperator")
    if F.n != grid.n:
        raise DomainError("operator and grid dimensions differ")
    limit = cfl_limit(F, grid.h)
    if substeps is None:
        if not 0 < cfl_factor <= 1:
            raise ConfigurationError("cfl_factor must lie in (0, 1]")
        substeps = max(1, math.ceil(grid.tau / (cfl_factor * limit) - 1e-9))
    substeps = int(substeps)
    dt = grid.tau / substeps
    if substeps < 1 or dt > limit * (1 + 1e-12):
        raise ConfigurationError(f"CFL violated: dt = {dt:.3e} > {limit:.3e}")
    monotone = monotone_update(F, grid.h, dt) if check_monotone else True

    n = grid.n
    sampler = _BoundarySampler(bdata, grid)
    interior = grid.interior_mask
    inner = interior[(slice(1, -1),) * n]
    pinned = ~interior
    X_in = grid.coords[(slice(1, -1),) * n][inner]
    out = np.empty(grid.shape)
    V = sampler.slice(grid.ts[0])
    out[0] = V
    lin = F.linear if (F.linear is not None) else None
    need_grad = F.lower_order
    clamped = 0
    for k in range(1, grid.nt):
        for s in range(substeps):
            t = grid.ts[k - 1] + s * dt
            c, G, H = _inner_derivatives(V, grid.h, n, need_grad, need_mixed=lin is None or n > 1)
            if lin is not None:
                A, b, cc = lin
                rate = np.einsum("ij,...ji->...", A, H)[inner]
                if need_grad:
                    rate = rate + G[inner] @ b + cc * c[inner]
            else:
                M = H[inner]
                if clamp:
                    M, hit = _clamp(F, M)
                    clamped += int(hit)
                rate = F(M, None if G is None else G[inner], c[inner], X_in, np.full(len(M), t), check_domain=False)
            Vn = V.copy()
            Vn[(slice(1, -1),) * n][inner] = c[inner] + dt * rate
            tn = t + dt if s < substeps - 1 else grid.ts[k]
            Vn[pinned] = sampler.slice(tn)[pinned]
            V = Vn
        out[k] = V
    sol = GridFunction(grid, out)
    if return_info:
        return sol, SolveInfo(substeps, dt, monotone, clamped)
    return sol


def _points(grid):
    X = np.broadcast_to(grid.coords, grid.shape + (grid.n,))
    T = np.broadcast_to(grid.ts.reshape((-1,) + (1,) * grid.n), grid.shape)
    return X, T


def residual(F, u):
    """Nodewise ``F(D^2_h u, D_h u, u, x, t) - backward u_t``; zero at nodes without a full stencil."""
    f = fd_fields(u)
    X, T = _points(u.grid)
    out = np.zeros(u.grid.shape)
    v = f.valid
    out[v] = F(f.hessian[v], f.gradient[v], f.value[v], X[v], T[v], check_domain=False) - f.time_slope[v]
    return GridFunction(u.grid, out)


def residual_mask(u):
    """Nodes where :func:`residual` is meaningful."""
    return fd_fields(u).valid


@dataclass(frozen=True)
class HeatReport:
    eps: float
    grad: float
    hess: float
    time: float
    third: float

    @property
    def constant(self):
        return max(self.grad, self.hess, self.time, self.third)


def interior_derivative_report(hsol, eps):
    """Max of ``eps|Dh|, eps^2|D^2h|, eps^2|h_t|, eps^3|D^3h|`` over ``Q_{R - eps}``."""
    g = hsol.grid
    R = g.spatial_radius - eps
    if R <= 0:
        raise DomainError("eps exceeds the grid radius")
    f = fd_fields(hsol)
    inner = region_mask(g, Cylinder(np.zeros(g.n), g.t_max, R)) & f.valid
    if not inner.any():
        raise DomainError("no interior nodes in the shrunken cylinder")
    third = np.zeros(g.shape)
    for i in range(g.n):
        Hf = np.nan_to_num(f.hessian)
        d3 = (np.roll(Hf, -1, axis=1 + i) - np.roll(Hf, 1, axis=1 + i)) / (2 * g.h)
        third = np.maximum(third, np.abs(d3.reshape(g.shape + (-1,))).max(axis=-1))
    third_ok = inner.copy()
    for i in range(g.n):
        third_ok &= np.roll(inner, 1, axis=1 + i) & np.roll(inner, -1, axis=1 + i)
    def norm(a):
        return np.abs(np.nan_to_num(a)).reshape(g.shape + (-1,)).max(axis=-1)

    return HeatReport(
        eps,
        eps * float(norm(f.gradient)[inner].max()),
        eps**2 * float(norm(f.hessian)[inner].max()),
        eps**2 * float(np.abs(f.time_slope[inner]).max()),
        eps**3 * float(third[third_ok].max()) if third_ok.any() else 0.0,
    )


def solve_linear_heat(A, bdata, grid, eps=None, **kwargs):
    """Solve ``tr(A D^2h) - h_t = 0``; returns ``(h, HeatReport)``.

    ``eps`` defaults to a quarter of the grid radius.
    """
    F = make_linear(A)
    h = solve_parabolic(F, bdata, grid, **kwargs)
    eps = grid.spatial_radius / 4 if eps is None else eps
    return h, interior_derivative_report(h, eps)


@dataclass(frozen=True)
class TouchReport:
    kind: str
    n_points: int
    violations: int
    worst: float
    witnesses: list


def viscosity_touch_test(F, u, points=None, kind="super", tol=None):
    """Sign test with stencil-touching paraboloids at sampled interior nodes.

    A paraboloid ``M x^2/2 + b x + c + beta t`` touching from below at a node
    (using the node, its spatial neighbours and its predecessor in time) must
    satisfy ``d^T M d <= second difference along d`` and
    ``beta >= backward difference``; by monotonicity of ``F`` the extreme
    admissible paraboloid is the finite-difference one.  From below the test
    requires ``F(M) - beta <= tol`` (supersolution), from above ``>= -tol``.
    In ``n >= 2`` the extreme paraboloid is taken to be the central-difference
    one, which is admissible but not necessarily extreme.

    Parameters
    ----------
    points : array of node indices ``(m, n + 1)`` or None for all interior nodes.
    kind : {"super", "sub"}
    """
    if kind not in ("super", "sub"):
        raise DomainError("kind must be 'super' or 'sub'")
    g = u.grid
    tol = 10 * (g.h**2 + g.tau) if tol is None else tol
    f = fd_fields(u)
    if points is None:
        points = np.argwhere(f.valid)
    points = np.atleast_2d(np.asarray(points, dtype=int))
    key = tuple(points.T)
    if not np.all(f.valid[key]):
        raise DomainError("touch test points need full interior stencils")
    X, T = _points(g)
    val = F(f.hessian[key], f.gradient[key], f.value[key], X[key], T[key], check_domain=False) - f.time_slope[key]
    bad = val > tol if kind == "super" else val < -tol
    worst = float(val.max() if kind == "super" else -val.min()) if len(val) else 0.0
    wit = [{"node": points[i].tolist(), "value": float(val[i])} for i in np.flatnonzero(bad)[:10]]
    return TouchReport(kind, len(points), int(bad.sum()), worst, wit)


class ParabolicSolver(BaseEstimator):
    """Estimator-style front end: ``fit(bdata)`` solves, ``predict(X, T)`` reads nodes.

    Parameters mirror :func:`solve_parabolic`; the operator and grid are
    hyper-parameters so that ``get_params``/``set_params`` cover a run.
    """

    def __init__(self, operator=None, grid=None, substeps=None, cfl_factor=1.0):
        self.operator = operator
        self.grid = grid
        self.substeps = substeps
        self.cfl_factor = cfl_factor

    def fit(self, bdata, y=None):
        if self.operator is None or self.grid is None:
            raise ConfigurationError("operator and grid are required")
        self.solution_, self.info_ = solve_parabolic(
            self.operator, bdata, self.grid, substeps=self.substeps, cfl_factor=self.cfl_factor, return_info=True
        )
        return self

    def predict(self, X, T):
        g = self.grid
        X = np.asarray(X, dtype=float).reshape(-1, g.n)
        k = g.time_index(np.asarray(T, dtype=float).reshape(-1))
        idx = np.rint(X / g.h).astype(int) + g.m
        return self.solution_.values[(k,) + tuple(idx.T)]

    def residual(self):
        return residual(self.operator, self.solution_)
