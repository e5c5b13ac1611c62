"""Contact sets of concave parabolas, the ABP transport map and contact-set experiments.

A concave parabola of opening ``a`` with vertex ``(y, s)`` is
``P(x, t) = -(a/2)|x - y|^2 + a (t - s)``.  It contacts ``v = u - min u`` at
``(x, t)`` when ``P <= v`` on the slice at ``t`` with equality at ``x``, and
``P < v`` on every earlier slice.  Only grid times are inspected.

Vertices and contact points are grid nodes, given as integer index rows
``(k, i_1, ..., i_n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import BoundaryError, DomainError, check_positive
from .geometry import ParabolicBall, SpaceTimePoint, min_opening
from .gridfn import GridFunction, SecondOrderExpansion, fd_expansion_at, region_mask, shift
from .operators import QuadPoly, jacobian_bound


@dataclass(frozen=True)
class ContactParabola:
    vertex: SpaceTimePoint
    opening: float
    orientation: str = "concave"

    def __post_init__(self):
        check_positive(self.opening, "opening")
        if self.orientation not in ("concave", "convex"):
            raise DomainError("orientation must be 'concave' or 'convex'")
        if not isinstance(self.vertex, SpaceTimePoint):
            object.__setattr__(self, "vertex", SpaceTimePoint(*self.vertex))

    def __call__(self, X, T):
        a, y, s = self.opening, self.vertex.xa, self.vertex.t
        val = -0.5 * a * np.sum((np.asarray(X) - y) ** 2, axis=-1) + a * (np.asarray(T) - s)
        return val if self.orientation == "concave" else -val

    def as_quadpoly(self):
        a, y, s = self.opening, self.vertex.xa, self.vertex.t
        n = y.size
        P = QuadPoly(-a * np.eye(n), a * y, -0.5 * a * float(y @ y) - a * s, a)
        if self.orientation == "convex":
            P = QuadPoly(-P.M, -P.p, -P.z, -P.beta)
        return P


@dataclass(frozen=True)
class ContactRecord:
    vertex: SpaceTimePoint
    contact_point: SpaceTimePoint
    node: tuple
    expansion: SecondOrderExpansion | None


def _shifted(u, umin):
    g = u.grid
    ball = np.broadcast_to(g.ball_mask, g.shape)
    umin = float(u.values[ball].min()) if umin is None else float(umin)
    return u.values - umin, ball


def default_tolerance(u, a, mode="machine"):
    """Contact gap tolerance.

    ``"machine"`` is a rounding-level tolerance; ``"grid"`` is the coarse
    ``1e-8 + 2 (Lip(u) + a) h`` rule, which accepts contacts up to about two
    grid cells early.
    """
    g = u.grid
    scale = max(1.0, float(np.max(np.abs(u.values))), a)
    if mode == "machine":
        return 1e-12 * scale
    if mode == "grid":
        lip = 0.0
        for ax in range(1, g.n + 1):
            d = np.abs(np.diff(u.values, axis=ax)) / g.h
            lip = max(lip, float(np.nanmax(d)))
        return 1e-8 + 2 * (lip + a) * g.h
    raise DomainError(f"unknown tolerance mode {mode!r}")


def _resolve_tol(u, a, tol):
    return default_tolerance(u, a, tol) if isinstance(tol, str) else float(tol)


def contact_point(u, parabola, tol="machine", umin=None):
    """First-touch contact of a concave parabola with ``u - min u`` (brute-force scan).

    Returns ``None`` when no contact occurs by the last grid time.
    """
    g = u.grid
    a = parabola.opening
    V, ball = _shifted(u, umin)
    tol = _resolve_tol(u, a, tol)
    y = parabola.vertex.xa
    iy = np.rint(y / g.h)
    # squared distances from integer offsets so that ties match the sweep
    off = np.stack(np.meshgrid(*([np.arange(-g.m, g.m + 1)] * g.n), indexing="ij"), axis=-1) - iy
    d2 = np.sum(off**2, axis=-1) * g.h**2 if np.allclose(iy * g.h, y, atol=1e-12) else np.sum((g.coords - y) ** 2, -1)
    pen = np.where(g.ball_mask, 0.5 * a * d2, np.inf)
    for j in range(g.nt):
        tj = g.ts[j]
        if tj < parabola.vertex.t - 1e-12:
            continue
        vals = V[j] + pen
        flat = int(np.argmin(vals))
        gap = vals.flat[flat] - a * (tj - parabola.vertex.t)
        if gap <= tol:
            sp = np.unravel_index(flat, g.spatial_shape)
            node = (j,) + tuple(int(i) for i in sp)
            return _record(u, parabola.vertex, node, umin)
    return None


def _record(u, vertex, node, umin):
    g = u.grid
    x = g.coords[node[1:]]
    try:
        val, grad, hess, ut = fd_expansion_at(u, [node])
        V, _ = _shifted(u, umin)
        exp = SecondOrderExpansion(float(V[node]), grad[0], hess[0], float(ut[0]))
    except BoundaryError:
        exp = None
    return ContactRecord(vertex, SpaceTimePoint(x, g.ts[node[0]]), node, exp)


def _min_plus_tracked(V, axis, step, eps, window):
    out = V.copy()
    arg = np.zeros(V.shape, dtype=np.int64)
    for d in range(1, window + 1):
        pen = (d * step) ** 2 / eps
        for sgn in (-1, 1):
            cand = shift(V, sgn * d, axes=(axis,), fill=np.inf) + pen
            better = cand < out
            out = np.where(better, cand, out)
            arg = np.where(better, sgn * d, arg)
    return out, arg


def _spatial_envelope(V, g, a):
    """``G[j, y] = min_xi V[j, xi] + (a/2)|xi - y|^2`` with argmin node indices."""
    eps = 2.0 / a
    finite = V[np.isfinite(V)]
    osc = float(finite.max() - finite.min()) if finite.size else 0.0
    W = min(int(math.floor(math.sqrt(eps * osc) / g.h + 1e-9)) + 1, 2 * g.m)
    n = g.n
    cur = V
    args = []
    for ax in range(1, n + 1):
        cur, arg = _min_plus_tracked(cur, ax, g.h, eps, W)
        args.append(arg)
    # unwind: the last pass picks the last coordinate, earlier passes are read at the shifted positions
    idx = np.indices(V.shape)
    pos = [idx[ax] for ax in range(1, n + 1)]
    res = [None] * n
    for ax in range(n, 0, -1):
        where = (idx[0],) + tuple(res[b - 1] if b > ax else idx[b] for b in range(1, n + 1))
        res[ax - 1] = pos[ax - 1] + args[ax - 1][where]
    return cur, np.stack(res, axis=-1)


@dataclass(frozen=True)
class ContactSet:
    """Vertices and their first-touch contact nodes (``-1`` rows when none)."""

    grid: object
    opening: float
    vertices: np.ndarray
    contacts: np.ndarray

    @property
    def found(self):
        return self.contacts[:, 0] >= 0

    def mask(self):
        """Boolean mask of contact nodes over ``grid.shape``."""
        out = np.zeros(self.grid.shape, dtype=bool)
        c = self.contacts[self.found]
        out[tuple(c.T)] = True
        return out

    def pairs(self):
        f = self.found
        return self.vertices[f], self.contacts[f]


def _vertex_rows(g, E):
    if E is None:
        E = np.broadcast_to(g.ball_mask, g.shape)
    E = np.asarray(E)
    if E.dtype == bool:
        if E.shape != g.shape:
            raise DomainError("vertex mask must match the grid shape")
        return np.argwhere(E & np.broadcast_to(g.ball_mask, g.shape))
    return np.atleast_2d(E.astype(int))


def contact_sweep(u, a, E=None, tol="machine", umin=None):
    """All first-touch contacts for grid vertices ``E`` in one global sweep.

    With ``G_j(y)`` the spatial envelope of ``v`` at time ``t_j``, the vertex
    ``(y, s_k)`` touches at the first ``j >= k`` with
    ``s_k <= t_j + (tol - G_j(y)) / a``; a running maximum over ``j`` turns
    this into one ``searchsorted`` per spatial column.
    """
    check_positive(a, "a")
    g = u.grid
    V, ball = _shifted(u, umin)
    tol = _resolve_tol(u, a, tol)
    Vinf = np.where(ball, V, np.inf)
    G, ARG = _spatial_envelope(Vinf, g, a)
    t_col = g.ts.reshape((-1,) + (1,) * g.n)
    with np.errstate(invalid="ignore"):
        sigma = t_col + (tol - G) / a
    kappa = np.floor((sigma - g.t_min) / g.tau + 1e-9)
    kappa = np.where(np.isfinite(kappa), kappa, -1).astype(np.int64)
    kappa = np.minimum(kappa, np.arange(g.nt).reshape(t_col.shape))
    K = np.maximum.accumulate(kappa, axis=0)
    rows = _vertex_rows(g, E)
    contacts = np.full_like(rows, -1)
    if len(rows):
        Kf = K.reshape(g.nt, -1)
        cols = np.ravel_multi_index(tuple(rows[:, 1:].T), g.spatial_shape)
        j = np.empty(len(rows), dtype=np.int64)
        for c in np.unique(cols):
            sel = cols == c
            j[sel] = np.searchsorted(Kf[:, c], rows[sel, 0], side="left")
        ok = j < g.nt
        jj = j[ok]
        contacts[ok, 0] = jj
        contacts[ok, 1:] = ARG[(jj,) + tuple(rows[ok, 1:].T)]
    return ContactSet(g, float(a), rows, contacts)


def contact_set(u, E=None, a=1.0, tol="machine", umin=None):
    """Boolean mask of ``A_a(E)`` (contact nodes of vertices in ``E``)."""
    return contact_sweep(u, a, E, tol, umin).mask()


def contact_set_scan(u, E=None, a=1.0, tol="machine", umin=None):
    """Reference implementation of :func:`contact_set` by per-vertex scans."""
    g = u.grid
    out = np.zeros(g.shape, dtype=bool)
    for row in _vertex_rows(g, E):
        vx = SpaceTimePoint(g.coords[tuple(row[1:])], g.ts[row[0]])
        rec = contact_point(u, ContactParabola(vx, a), tol, umin)
        if rec is not None:
            out[rec.node] = True
    return out


def transport_map(u, record, a, umin=None):
    """Vertex recovered from a contact: ``y = x + grad v / a``, ``s = t - v / a - |x - y|^2 / 2``."""
    if record.expansion is None:
        raise BoundaryError("contact point has no interior stencil")
    e = record.expansion
    x = record.contact_point.xa
    y = x + e.gradient / a
    s = record.contact_point.t - e.value / a - 0.5 * float(np.sum((x - y) ** 2))
    return SpaceTimePoint(y, s)


def abp_jacobian(u, record, a):
    """``det(I + D^2 v / a) (1 - v_t / a)`` at a contact, clamped below at zero."""
    if record.expansion is None:
        raise BoundaryError("contact point has no interior stencil")
    e = record.expansion
    n = e.gradient.size
    return max(0.0, float(np.linalg.det(np.eye(n) + e.hessian / a) * (1 - e.time_slope / a)))


def jacobians_at(u, nodes, a):
    """Vectorised :func:`abp_jacobian` at contact nodes ``(m, n + 1)``."""
    _, _, hess, ut = fd_expansion_at(u, nodes)
    n = u.grid.n
    det = np.linalg.det(np.eye(n) + hess / a)
    return np.maximum(0.0, det * (1 - ut / a))


@dataclass(frozen=True)
class ABPReport:
    vertex_measure: float
    contact_measure: float
    jacobian_integral: float
    jacobian_max: float
    jacobian_bound: float
    interior: bool

    @property
    def abp_ratio(self):
        """``integral of J over A`` divided by ``|E|`` (at least 1 in the continuum)."""
        return self.jacobian_integral / self.vertex_measure if self.vertex_measure else float("nan")

    @property
    def lower_bound_ok(self):
        return self.contact_measure >= self.vertex_measure / self.jacobian_bound * (1 - 1e-12)


def abp_inequality_check(u, E, a, lam=1.0, Lam=1.0, tol="machine", umin=None):
    """Compare ``|E|`` with the Jacobian integral over ``A_a(E)`` and with ``|A_a(E)|``."""
    g = u.grid
    cs = contact_sweep(u, a, E, tol, umin)
    _, contacts = cs.pairs()
    uniq = np.unique(contacts, axis=0) if len(contacts) else contacts
    interior = bool(len(uniq)) and bool(np.all(g.interior_mask[tuple(uniq[:, 1:].T)]) and np.all(uniq[:, 0] >= 1))
    cell = g.cell_volume
    if not interior:
        ok = np.array([g.interior_mask[tuple(c[1:])] and c[0] >= 1 for c in uniq], dtype=bool)
        uniq = uniq[ok]
    J = jacobians_at(u, uniq, a) if len(uniq) else np.zeros(0)
    return ABPReport(
        vertex_measure=len(cs.vertices) * cell,
        contact_measure=len(uniq) * cell,
        jacobian_integral=float(J.sum()) * cell,
        jacobian_max=float(J.max()) if len(J) else 0.0,
        jacobian_bound=jacobian_bound(g.n, lam, Lam),
        interior=interior,
    )


def _node_count(g, region):
    return int(np.count_nonzero(region_mask(g, region)))


@dataclass(frozen=True)
class HomogeneityReport:
    ladder: tuple
    fractions: tuple
    c_found: float | None
    vacuous: bool

    @property
    def c1(self):
        return None if self.c_found is None else 1.0 / self.c_found


def _contact_mask(u, a, tol, vertices):
    if vertices == "continuous":
        return contact_set_continuous(u, a)
    if vertices == "grid":
        return contact_set(u, None, a, tol)
    raise DomainError("vertices must be 'grid' or 'continuous'")


def homogeneity_experiment(u, F, pb_down, pb_up, a, ladder=(1, 2, 4, 8, 16, 32, 64), tol="machine",
                           vertices="grid"):
    """Mass fraction of ``A_{c a}(Q_1) ∩ pb_down ∩ pb_up`` in ``pb_up`` along a dilation ladder.

    The recorded constant is the smallest ``c`` whose fraction reaches ``1/c``;
    ``c1 = 1/c``.  The experiment is vacuous unless the top slice of
    ``pb_up`` meets ``A_a(Q_1) ∩ pb_down``.  ``vertices="continuous"``
    (``n = 1`` only) uses :func:`contact_set_continuous`.
    """
    g = u.grid
    down = region_mask(g, pb_down)
    up = region_mask(g, pb_up)
    top_k = int(g.time_index(pb_up.vertex.t + pb_up.T))
    A0 = _contact_mask(u, a, tol, vertices)
    top = np.zeros_like(up)
    if 0 <= top_k < g.nt:
        top[top_k] = up[top_k]
    if not np.any(A0 & down & top):
        return HomogeneityReport(tuple(ladder), (), None, True)
    denom = max(1, int(np.count_nonzero(up)))
    fracs = []
    found = None
    for c in ladder:
        A = A0 if c == 1 else _contact_mask(u, c * a, tol, vertices)
        frac = np.count_nonzero(A & down & up) / denom
        fracs.append(float(frac))
        if found is None and frac >= 1.0 / c:
            found = float(c)
    return HomogeneityReport(tuple(ladder), tuple(fracs), found, False)


@dataclass(frozen=True)
class DecayFit:
    values: tuple
    slope: float

    @property
    def nonincreasing(self):
        v = np.array(self.values)
        return bool(np.all(np.diff(v) <= 1e-15))


def log_linear_slope(values):
    """Least-squares slope of ``log m_k`` against ``k`` over the positive entries."""
    v = np.asarray(values, dtype=float)
    k = np.arange(v.size)
    pos = v > 0
    if pos.sum() < 2:
        return -math.inf if pos.sum() < v.size else 0.0
    return float(np.polyfit(k[pos], np.log(v[pos]), 1)[0])


def measure_decay_experiment(u, F, pb_down, a, k_max, c1, tol="machine", require_vertex_contact=True,
                             vertices="grid"):
    """``m_k = |pb_down \\ A_{a / c1^k}(Q_1)| / |pb_down|`` for ``k = 0..k_max`` (node counts).

    With ``vertices="continuous"`` the contact sets are exactly monotone in
    the opening, so ``m_k`` is nonincreasing by construction.
    """
    g = u.grid
    down = region_mask(g, pb_down)
    if not down.any():
        raise DomainError("pb_down contains no grid nodes")
    if require_vertex_contact:
        A = _contact_mask(u, a, tol, vertices)
        node = g.node_index(pb_down.vertex.xa, pb_down.vertex.t)
        if not A[node]:
            raise DomainError("the vertex of pb_down must be a contact point of opening a")
    total = int(np.count_nonzero(down))
    vals = []
    for k in range(k_max + 1):
        A = _contact_mask(u, a * c1 ** (-k), tol, vertices)
        vals.append(np.count_nonzero(down & ~A) / total)
    return DecayFit(tuple(float(v) for v in vals), log_linear_slope(vals))


def min_opening_down_ball(x, t):
    return ParabolicBall(SpaceTimePoint(x, t), 1.0 + t, min_opening(x, t), "down")


def contact_set_continuous(u, a, umin=None):
    """``A_a(closed Q_1)`` with vertices ranging over the continuum (``n = 1``).

    A node ``(x, t)`` is a contact point when some vertex ``y`` in ``[-1, 1]``
    with ``s = t - v(x, t)/a - (x - y)^2/2 >= -1`` gives a parabola lying
    below ``v`` at every node of the slices ``tau <= t``.  Writing
    ``W = v - a tau + a xi^2 / 2``, each node imposes the linear constraint
    ``a y (xi - x) <= W(xi, tau) - W(x, t)``, and earlier slices enter only
    through their running minimum, so the feasible ``y`` form an interval.
    Unlike :func:`contact_set` this set is exactly monotone in ``a``.
    """
    check_positive(a, "a")
    g = u.grid
    if g.n != 1:
        raise DomainError("continuous-vertex contact sets are implemented for n = 1")
    V, _ = _shifted(u, umin)
    xs = g.xs
    W = V - a * g.ts[:, None] + 0.5 * a * xs[None, :] ** 2
    run = np.full(xs.shape, np.inf)
    d = xs[None, :] - xs[:, None]
    pos, neg = d > 0, d < 0
    out = np.zeros(g.shape, dtype=bool)
    with np.errstate(invalid="ignore", divide="ignore"):
        for j in range(g.nt):
            Wj = W[j]
            cur = np.minimum(Wj[None, :], run[None, :]) - Wj[:, None]
            q = cur / (a * d)
            U = np.min(np.where(pos, q, np.inf), axis=1)
            L = np.max(np.where(neg, q, -np.inf), axis=1)
            reach = 2 * (g.ts[j] + 1 - V[j] / a)
            R = np.sqrt(np.maximum(reach, 0.0))
            L = np.maximum.reduce([L, xs - R, np.full_like(L, -1.0)])
            U = np.minimum.reduce([U, xs + R, np.full_like(U, 1.0)])
            out[j] = (L <= U) & (reach >= 0) & (run - Wj >= 0)
            run = np.minimum(run, Wj)
    return out
