"""Uniform space-time grids over cylinders, grid functions and their calculus.

Arrays are laid out as ``values[k, i_1, ..., i_n]`` with time index first.
Spatial nodes are ``x = h * (i - m)`` for ``i = 0..2m`` (``m = R / h``) on every
axis; only nodes with ``|x| <= R`` belong to the grid (``ball_mask``), the
remaining box entries are carried along but never read by any operation.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import BoundaryError, DomainError, check_dimension, check_positive


def _as_int_ratio(num, den, what):
    q = num / den
    k = round(q)
    if k < 1 or abs(q - k) > 1e-9 * max(1.0, abs(q)):
        raise DomainError(f"{what} must be a positive integer multiple, got ratio {q}")
    return int(k)


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Node set ``{x in hZ^n : |x| <= R} x {t_min + k tau : k = 0..K}``."""

    n: int
    h: float
    tau: float
    spatial_radius: float = 1.0
    t_min: float = -1.0
    t_max: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "n", check_dimension(self.n))
        for name in ("h", "tau", "spatial_radius"):
            object.__setattr__(self, name, check_positive(getattr(self, name), name))
        if not self.t_max > self.t_min:
            raise DomainError("need t_max > t_min")
        _as_int_ratio(self.spatial_radius, self.h, "spatial_radius / h")
        _as_int_ratio(self.t_max - self.t_min, self.tau, "(t_max - t_min) / tau")

    @classmethod
    def unit(cls, n, h, tau=None):
        """Grid on ``Q_1``; ``tau`` defaults to the largest dyadic value ``<= h^2``."""
        if tau is None:
            tau = 2.0 ** math.floor(math.log2(h * h))
        return cls(n, h, tau)

    @property
    def m(self):
        return int(round(self.spatial_radius / self.h))

    @property
    def nt(self):
        return int(round((self.t_max - self.t_min) / self.tau)) + 1

    @cached_property
    def xs(self):
        return self.h * np.arange(-self.m, self.m + 1)

    @cached_property
    def ts(self):
        return self.t_min + self.tau * np.arange(self.nt)

    @property
    def spatial_shape(self):
        return (2 * self.m + 1,) * self.n

    @property
    def shape(self):
        return (self.nt,) + self.spatial_shape

    @cached_property
    def coords(self):
        """Spatial node coordinates, shape ``spatial_shape + (n,)``."""
        return np.stack(np.meshgrid(*([self.xs] * self.n), indexing="ij"), axis=-1)

    @cached_property
    def radius2(self):
        return np.sum(self.coords**2, axis=-1)

    @cached_property
    def ball_mask(self):
        return self.radius2 <= self.spatial_radius**2 * (1 + 1e-12)

    @cached_property
    def interior_mask(self):
        """Nodes whose full ``3^n`` stencil lies in the ball."""
        out = self.ball_mask.copy()
        for off in np.ndindex(*(3,) * self.n):
            out &= shift(self.ball_mask, np.array(off) - 1, fill=False)
        return out

    @property
    def cell_volume(self):
        return self.h**self.n * self.tau

    def time_index(self, t):
        k = (np.asarray(t, dtype=float) - self.t_min) / self.tau
        return np.rint(k).astype(int)

    def node_index(self, x, t):
        """Nearest node ``(k, i_1, .., i_n)`` to ``(x, t)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = np.rint(x / self.h).astype(int) + self.m
        return (int(self.time_index(t)),) + tuple(int(i) for i in idx)

    def sub_grid(self, radius, t_min=None, t_max=None):
        t_max = self.t_max if t_max is None else t_max
        t_min = t_max - radius**2 if t_min is None else t_min
        g = SpaceTimeGrid(self.n, self.h, self.tau, radius, t_min, t_max)
        if g.m > self.m or t_min < self.t_min - 1e-12 or t_max > self.t_max + 1e-12:
            raise DomainError("sub-grid exceeds the parent grid")
        _as_int_ratio(t_max - self.t_min + self.tau, self.tau, "sub-grid time alignment")
        return g

    def sub_slices(self, sub):
        """Index tuple extracting ``sub``'s nodes from arrays on this grid."""
        k0 = int(round((sub.t_min - self.t_min) / self.tau))
        off = self.m - sub.m
        return (slice(k0, k0 + sub.nt),) + (slice(off, off + 2 * sub.m + 1),) * self.n

    def rescaled(self, r):
        """Grid of the same nodes in coordinates ``(x / r, t / r^2)``."""
        return SpaceTimeGrid(
            self.n, self.h / r, self.tau / r**2, self.spatial_radius / r, self.t_min / r**2, self.t_max / r**2
        )

    def meta(self):
        return {
            "n": self.n, "h": self.h, "tau": self.tau, "spatial_radius": self.spatial_radius,
            "t_min": self.t_min, "t_max": self.t_max,
        }


def shift(a, offset, axes=None, fill=np.nan):
    """``out[i] = a[i + offset]`` along ``axes`` (trailing axes by default)."""
    offset = np.atleast_1d(offset).astype(int)
    if axes is None:
        axes = tuple(range(a.ndim - offset.size, a.ndim))
    out = np.full_like(a, fill, dtype=np.result_type(a, np.asarray(fill)))
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    for ax, o in zip(axes, offset):
        size = a.shape[ax]
        if abs(o) >= size:
            return out
        if o >= 0:
            src[ax], dst[ax] = slice(o, size), slice(0, size - o)
        else:
            src[ax], dst[ax] = slice(0, size + o), slice(-o, size)
    out[tuple(dst)] = a[tuple(src)]
    return out


class GridFunction:
    """Immutable real function sampled on a :class:`SpaceTimeGrid`.

    Entries outside the spatial ball are kept (they are finite) but carry no
    meaning.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape:
            raise DomainError(f"values must have shape {grid.shape}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DomainError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    @classmethod
    def from_function(cls, grid, f):
        """Sample ``f(X, T)`` with ``X`` of shape ``(..., n)`` and ``T`` of shape ``(...)``."""
        X = np.broadcast_to(grid.coords, (grid.nt,) + grid.coords.shape)
        T = np.broadcast_to(grid.ts.reshape((-1,) + (1,) * grid.n), grid.shape)
        return cls(grid, np.broadcast_to(f(X, T), grid.shape))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def _binary(self, other, op):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise DomainError("grid mismatch")
            other = other.values
        return GridFunction(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def restrict(self, radius, t_min=None, t_max=None):
        sub = self.grid.sub_grid(radius, t_min, t_max)
        return GridFunction(sub, self.values[self.grid.sub_slices(sub)])

    def max_abs(self, region=None):
        return float(np.max(np.abs(self.values[region_mask(self.grid, region)])))

    def to_csv(self):
        """CSV of ``(k, i_1..i_n, value)`` rows for ball nodes; grid metadata in a comment header."""
        buf = io.StringIO()
        buf.write("# " + json.dumps(self.grid.meta(), sort_keys=True) + "\n")
        cols = ["k"] + [f"i{j + 1}" for j in range(self.grid.n)] + ["value"]
        buf.write(",".join(cols) + "\n")
        mask = np.broadcast_to(self.grid.ball_mask, self.grid.shape)
        idx = np.argwhere(mask)
        for row, v in zip(idx, self.values[mask]):
            buf.write(",".join(str(int(i)) for i in row) + f",{float(v)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        grid = SpaceTimeGrid(**json.loads(lines[0][1:]))
        values = np.zeros(grid.shape)
        data = np.loadtxt(lines[2:], delimiter=",", ndmin=2)
        if data.size:
            values[tuple(data[:, :-1].astype(int).T)] = data[:, -1]
        return cls(grid, values)

    def to_bytes(self):
        """Flat little-endian float64 dump prefixed by a JSON metadata line."""
        head = json.dumps(self.grid.meta(), sort_keys=True).encode() + b"\n"
        return head + self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        head, body = blob.split(b"\n", 1)
        grid = SpaceTimeGrid(**json.loads(head))
        return cls(grid, np.frombuffer(body, dtype="<f8").reshape(grid.shape))


@dataclass(frozen=True)
class SecondOrderExpansion:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    time_slope: float

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        object.__setattr__(self, "hessian", 0.5 * (H + H.T))
        object.__setattr__(self, "gradient", np.asarray(self.gradient, dtype=float))


def region_mask(grid, region=None):
    """Boolean mask over ``grid.shape`` for a region.

    ``region`` may be ``None`` (all ball nodes), a boolean array, an object
    with ``contains(X, T)`` (cylinders, parabolic balls, slabs) or a callable
    ``(X, T) -> bool``.
    """
    full = np.broadcast_to(grid.ball_mask, grid.shape)
    if region is None:
        return full.copy()
    if isinstance(region, np.ndarray) and region.dtype == bool:
        return np.broadcast_to(region, grid.shape) & full
    pred = region.contains if hasattr(region, "contains") else region
    X = np.broadcast_to(grid.coords, grid.shape + (grid.n,)).reshape(-1, grid.n)
    T = np.broadcast_to(grid.ts.reshape((-1,) + (1,) * grid.n), grid.shape).reshape(-1)
    inside = np.asarray(pred(X, T, tol=1e-12) if hasattr(region, "contains") else pred(X, T), dtype=bool)
    return inside.reshape(grid.shape) & full


def oscillation(u, region=None):
    """``max - min`` of ``u`` over the grid nodes in ``region``."""
    mask = region_mask(u.grid, region)
    if not mask.any():
        raise DomainError("region contains no grid nodes")
    v = u.values[mask]
    return float(v.max() - v.min())


def _derivative_stencils(V, h, n):
    """Central gradient/Hessian of the trailing ``n`` axes (NaN where the stencil leaves the array)."""
    grad = np.empty(V.shape + (n,))
    hess = np.empty(V.shape + (n, n))
    e = np.eye(n, dtype=int)
    for i in range(n):
        fp, fm = shift(V, e[i]), shift(V, -e[i])
        grad[..., i] = (fp - fm) / (2 * h)
        hess[..., i, i] = (fp - 2 * V + fm) / h**2
        for j in range(i + 1, n):
            mixed = (
                shift(V, e[i] + e[j]) - shift(V, e[i] - e[j]) - shift(V, -e[i] + e[j]) + shift(V, -e[i] - e[j])
            ) / (4 * h * h)
            hess[..., i, j] = hess[..., j, i] = mixed
    return grad, hess


@dataclass(frozen=True)
class FDFields:
    """Whole-grid finite-difference fields; entries are meaningful where ``valid``."""

    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    time_slope: np.ndarray
    valid: np.ndarray


def fd_fields(u):
    g = u.grid
    V = u.values
    grad, hess = _derivative_stencils(V, g.h, g.n)
    ut = np.full(V.shape, np.nan)
    ut[1:] = (V[1:] - V[:-1]) / g.tau
    valid = np.broadcast_to(g.interior_mask, g.shape).copy()
    valid[0] = False
    return FDFields(V, grad, hess, ut, valid)


def fd_expansion_at(u, nodes):
    """Vectorised expansions at node indices of shape ``(m, n + 1)``.

    Returns ``(value, gradient, hessian, time_slope)`` arrays.  Raises
    :class:`BoundaryError` if any stencil leaves the interior.
    """
    g = u.grid
    nodes = np.atleast_2d(np.asarray(nodes, dtype=int))
    k, sp = nodes[:, 0], nodes[:, 1:]
    inside = (k >= 1) & (k < g.nt) & np.all((sp >= 0) & (sp < 2 * g.m + 1), axis=1)
    if not np.all(inside) or not np.all(g.interior_mask[tuple(sp.T)]):
        raise BoundaryError("finite-difference stencil leaves the grid interior")
    V = u.values
    h, n = g.h, g.n

    def at(dk, off):
        return V[(k + dk,) + tuple((sp + off).T)]

    e = np.eye(n, dtype=int)
    z = np.zeros(n, dtype=int)
    val = at(0, z)
    grad = np.empty((len(k), n))
    hess = np.empty((len(k), n, n))
    for i in range(n):
        fp, fm = at(0, e[i]), at(0, -e[i])
        grad[:, i] = (fp - fm) / (2 * h)
        hess[:, i, i] = (fp - 2 * val + fm) / h**2
        for j in range(i + 1, n):
            hess[:, i, j] = hess[:, j, i] = (
                at(0, e[i] + e[j]) - at(0, e[i] - e[j]) - at(0, -e[i] + e[j]) + at(0, -e[i] - e[j])
            ) / (4 * h * h)
    ut = (val - at(-1, z)) / g.tau
    return val, grad, hess, ut


def fd_expansion(u, node):
    """Second-order expansion at one node: central differences in space, backward in time."""
    val, grad, hess, ut = fd_expansion_at(u, [node])
    return SecondOrderExpansion(float(val[0]), grad[0], hess[0], float(ut[0]))


def _min_plus_axis(V, axis, step, eps, window):
    """``min_d V[i + d] + (d step)^2 / eps`` along one axis, ``|d| <= window``."""
    out = V.copy()
    for d in range(1, window + 1):
        pen = (d * step) ** 2 / eps
        out = np.minimum(out, shift(V, d, axes=(axis,), fill=np.inf) + pen)
        out = np.minimum(out, shift(V, -d, axes=(axis,), fill=np.inf) + pen)
    return out


def inf_convolution(u, eps, time=True):
    """``u_eps(x, t) = min_{(xi, s)} u(xi, s) + (|xi - x|^2 + (s - t)^2) / eps`` over grid nodes.

    The quadratic penalty is separable, so the minimum is taken axis by axis;
    each pass only scans offsets with penalty below ``osc(u)`` because farther
    nodes can never win.  This is exact, not an approximation.

    Parameters
    ----------
    u : GridFunction
    eps : float
    time : bool
        Penalise time displacement too (default) or convolve each time slice
        separately.
    """
    check_positive(eps, "eps")
    g = u.grid
    ball = np.broadcast_to(g.ball_mask, g.shape)
    V = np.where(ball, u.values, np.inf)
    osc = float(np.ptp(u.values[ball]))
    wx = int(math.floor(math.sqrt(eps * osc) / g.h + 1e-9))
    out = V
    for ax in range(1, g.n + 1):
        out = _min_plus_axis(out, ax, g.h, eps, min(wx, 2 * g.m))
    if time:
        wt = int(math.floor(math.sqrt(eps * osc) / g.tau + 1e-9))
        out = _min_plus_axis(out, 0, g.tau, eps, min(wt, g.nt - 1))
    return GridFunction(g, np.where(ball, out, u.values))


def sup_convolution(u, eps, time=True):
    """Mirror of :func:`inf_convolution`; equals ``-inf_convolution(-u, eps)``."""
    return -inf_convolution(-u, eps, time)


class InfConvolution(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`inf_convolution` (``kind='sup'`` for the mirror)."""

    def __init__(self, eps=0.1, kind="inf", time=True):
        self.eps = eps
        self.kind = kind
        self.time = time

    def fit(self, u, y=None):
        check_positive(self.eps, "eps")
        if self.kind not in ("inf", "sup"):
            raise DomainError("kind must be 'inf' or 'sup'")
        return self

    def transform(self, u):
        f = inf_convolution if self.kind == "inf" else sup_convolution
        return f(u, self.eps, self.time)


def semiconcavity_check(u, b, region=None, tol=None):
    """Whether fd Hessian eigenvalues are ``<= b + tol`` and ``u_t >= -b - tol`` on interior nodes."""
    check_positive(b, "b")
    g = u.grid
    if tol is None:
        tol = 1e-6 + 10 * (g.h**2 + g.tau)
    f = fd_fields(u)
    mask = f.valid & region_mask(g, region)
    if not mask.any():
        return True
    H = f.hessian[mask]
    top = H[:, 0, 0] if g.n == 1 else np.linalg.eigvalsh(H)[:, -1]
    return bool(np.all(top <= b + tol) and np.all(f.time_slope[mask] >= -b - tol))


def extend(u, before=0.0, after=0.0):
    """Constant-in-time extension by ``before``/``after`` time units, clamped to ``[min u, max u]``."""
    g = u.grid
    kb = int(round(before / g.tau))
    ka = int(round(after / g.tau))
    if kb < 0 or ka < 0:
        raise DomainError("extension lengths must be nonnegative")
    ball = np.broadcast_to(g.ball_mask, g.shape)
    lo, hi = u.values[ball].min(), u.values[ball].max()
    V = np.concatenate([np.repeat(u.values[:1], kb, 0), u.values, np.repeat(u.values[-1:], ka, 0)])
    ext = SpaceTimeGrid(g.n, g.h, g.tau, g.spatial_radius, g.t_min - kb * g.tau, g.t_max + ka * g.tau)
    return GridFunction(ext, np.clip(V, lo, hi))
