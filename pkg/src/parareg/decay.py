"""Oscillation-decay experiments on grid solutions and supersolutions.

All routines assume the unit grid on ``Q_1 = B_1 x (-1, 0]`` (or a grid of
another radius, with every cylinder scaled to it) and read ``u`` at nodes only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import DomainError, check_positive, rng_from
from .contact import ContactParabola, contact_point, log_linear_slope, min_opening_down_ball
from .geometry import Cylinder, SpaceTimePoint
from .gridfn import inf_convolution, oscillation, region_mask
from .solver import residual, residual_mask

C_PRACTICAL = 1e-2


def _check_small(u, F, c_practical):
    if F is None or not math.isfinite(F.delta):
        return
    size = u.max_abs()
    if size > c_practical * F.delta:
        raise DomainError(f"|u| = {size:.3g} exceeds c_practical * delta = {c_practical * F.delta:.3g}")


def _cylinder(g, rho):
    return Cylinder(np.zeros(g.n), g.t_max, rho * g.spatial_radius)


def _ratio(u, rho, osc1=None):
    g = u.grid
    osc1 = oscillation(u, _cylinder(g, 1.0)) if osc1 is None else osc1
    if osc1 == 0:
        return 0.0
    return oscillation(u, _cylinder(g, rho)) / osc1


def oscillation_decay_trial(u, F=None, c_practical=C_PRACTICAL):
    """``osc_{Q_{1/3}} u / osc_{Q_1} u``, with ``0/0`` reported as 0."""
    _check_small(u, F, c_practical)
    return _ratio(u, 1.0 / 3.0)


@dataclass(frozen=True)
class DecayProfile:
    """Tabulated ``rho -> osc_{Q_rho} u / osc_{Q_1} u`` on a dyadic ladder."""

    rhos: tuple
    ratios: tuple
    alpha_fit: float
    rho_min: float
    grid_tol: float

    @property
    def within_bound(self):
        """``ratio <= 2 rho^alpha_fit`` on every rung."""
        return all(r <= 2 * rho**self.alpha_fit + 1e-12 for rho, r in zip(self.rhos, self.ratios))

    @property
    def monotone(self):
        """Nonincreasing as ``rho`` decreases, up to ``2 (h + tau)``."""
        return bool(np.all(np.diff(self.ratios) <= self.grid_tol))

    def rows(self):
        return [{"rho": r, "ratio": q, "bound": 2 * r**self.alpha_fit} for r, q in zip(self.rhos, self.ratios)]


def fit_decay_exponent(rhos, ratios, intercept=True):
    """Least-squares slope ``alpha`` of ``log ratio`` against ``log rho``.

    With ``intercept=False`` the line is forced through the origin
    (``ratio(1) = 1``). Rungs with zero ratio carry no information and are
    skipped; with fewer than two left the exponent is ``inf`` (the profile
    vanishes).
    """
    rhos = np.asarray(rhos, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    use = ratios > 0
    if not intercept:
        use &= rhos < 1
    if use.sum() < (2 if intercept else 1):
        return math.inf
    lx, ly = np.log(rhos[use]), np.log(ratios[use])
    if intercept:
        return float(np.polyfit(lx, ly, 1)[0])
    return float(np.sum(lx * ly) / np.sum(lx * lx))


def scaled_decay_profile(u, F=None, c_practical=C_PRACTICAL, min_cells=4):
    """Dyadic oscillation profile down to ``max(sqrt(|u| / (c_practical delta)), min_cells h)``.

    Returns
    -------
    DecayProfile
    """
    _check_small(u, F, c_practical)
    g = u.grid
    delta = math.inf if F is None else F.delta
    rho_min = math.sqrt(u.max_abs() / (c_practical * delta)) if math.isfinite(delta) else 0.0
    floor = max(rho_min, min_cells * g.h / g.spatial_radius)
    osc1 = oscillation(u, _cylinder(g, 1.0))
    rhos, ratios = [], []
    rho = 1.0
    while rho >= floor * (1 - 1e-12):
        rhos.append(rho)
        ratios.append(_ratio(u, rho, osc1))
        rho /= 2
    alpha = fit_decay_exponent(rhos, ratios)
    return DecayProfile(tuple(rhos), tuple(ratios), alpha, rho_min, 2 * (g.h + g.tau))


@dataclass(frozen=True)
class SupersolutionDecayReport:
    opening: float
    vertex: tuple
    contact: tuple | None
    ball: object
    thresholds: tuple
    fractions: tuple
    vacuous: bool
    note: str = ""

    @property
    def slope(self):
        return log_linear_slope(self.fractions) if self.fractions else math.nan

    @property
    def nonincreasing(self):
        return bool(np.all(np.diff(self.fractions) <= 1e-15))


def supersolution_decay_trial(u, F, y0s0, nu, k_max=4, c1=0.5, c_practical=C_PRACTICAL,
                              eps=None, tol="machine"):
    """Measure-decay of ``{u > 64 nu c1^-k osc + min}`` inside a contact ball.

    The concave parabola of opening ``a = 64 nu osc`` with vertex
    ``(y0, s0 - 1/64)`` is lowered onto the inf-convolution of ``u``
    (``eps = 4h`` by default); its first contact ``(x0, t0)`` anchors the
    minimal-opening down-ball in which the level-set fractions are counted.

    Parameters
    ----------
    u : GridFunction
        Grid supersolution on the unit grid.
    F : EllipticOperator
    y0s0 : (array, float)
        A node of ``Q_{1/3}`` with ``u(y0, s0) <= nu osc + min``.
    nu : float
    k_max : int
    c1 : float
        Ladder ratio, ``0 < c1 < 1``.
    """
    check_positive(nu, "nu")
    if not 0 < c1 < 1:
        raise DomainError("c1 must lie in (0, 1)")
    _check_small(u, F, c_practical)
    g = u.grid
    y0 = np.atleast_1d(np.asarray(y0s0[0], dtype=float))
    s0 = float(y0s0[1])
    if np.linalg.norm(y0) >= 1 / 3 or not -1 / 9 < s0 <= g.t_max + 1e-12:
        raise DomainError("(y0, s0) must lie in Q_{1/3}")
    ball_mask = region_mask(g)
    mn = float(u.values[ball_mask].min())
    osc = float(u.values[ball_mask].max()) - mn
    if u.values[g.node_index(y0, s0)] > nu * osc + mn + 1e-15:
        raise DomainError("u(y0, s0) exceeds nu * osc + min")
    thresholds = tuple(64 * nu * c1 ** (-k) * osc for k in range(k_max + 1))
    vertex = SpaceTimePoint(y0, s0 - 1.0 / 64.0)
    if osc == 0:
        return SupersolutionDecayReport(0.0, (tuple(y0), vertex.t), None, None, thresholds,
                                        (0.0,) * (k_max + 1), False, "constant u")
    a = 64 * nu * osc
    v = inf_convolution(u, 4 * g.h if eps is None else eps)
    rec = contact_point(v, ContactParabola(vertex, a), tol)
    if rec is None:
        return SupersolutionDecayReport(a, (tuple(y0), vertex.t), None, None, thresholds, (), True,
                                        "no contact found")
    x0, t0 = rec.contact_point.xa, rec.contact_point.t
    try:
        ball = min_opening_down_ball(x0, t0)
    except DomainError as exc:
        return SupersolutionDecayReport(a, (tuple(y0), vertex.t), (tuple(x0), t0), None, thresholds, (), True,
                                        f"contact ball undefined: {exc}")
    inside = region_mask(g, ball)
    total = int(np.count_nonzero(inside))
    if total == 0:
        return SupersolutionDecayReport(a, (tuple(y0), vertex.t), (tuple(x0), t0), ball, thresholds, (), True,
                                        "contact ball holds no grid nodes")
    fracs = tuple(float(np.count_nonzero(inside & (u.values > th + mn)) / total) for th in thresholds)
    return SupersolutionDecayReport(a, (tuple(y0), vertex.t), (tuple(x0), t0), ball, thresholds, fracs, False)


def low_point(u, nu, radius=1.0 / 3.0):
    """A node of ``Q_radius`` minimising ``u`` and whether it satisfies ``u <= nu osc + min``."""
    g = u.grid
    region = region_mask(g, _cylinder(g, radius)) & (g.ts > -1 / 9 + 1e-12).reshape((-1,) + (1,) * g.n)
    idx = np.argwhere(region)
    k = idx[np.argmin(u.values[tuple(idx.T)])]
    ball = region_mask(g)
    mn = float(u.values[ball].min())
    osc = float(u.values[ball].max()) - mn
    ok = bool(u.values[tuple(k)] <= nu * osc + mn)
    return (g.coords[tuple(k[1:])], float(g.ts[k[0]])), ok


@dataclass(frozen=True)
class GeneralDecayReport:
    ratio: float
    residual_max: float
    residual_bound: float
    grad_p_max: float
    grad_z_max: float
    nu0: float

    @property
    def hnu1(self):
        return self.residual_max <= self.residual_bound

    @property
    def hnu2(self):
        return self.grad_p_max <= 1 + 1e-9 and self.grad_z_max <= self.nu0 + 1e-9

    @property
    def preconditions_ok(self):
        return self.hnu1 and self.hnu2


def sampled_lower_order_gradients(F, u, samples=200, seed=0, step=1e-6):
    """Central-difference ``max |grad_p F|`` and ``max |grad_z F|`` at sampled interior nodes of ``u``."""
    from .gridfn import fd_fields

    if not F.lower_order:
        return 0.0, 0.0
    g = u.grid
    f = fd_fields(u)
    idx = np.argwhere(f.valid)
    rng = rng_from(seed)
    idx = idx[rng.choice(len(idx), size=min(samples, len(idx)), replace=False)]
    key = tuple(idx.T)
    M, p, z = f.hessian[key], f.gradient[key], f.value[key]
    X = g.coords[tuple(idx[:, 1:].T)]
    T = g.ts[idx[:, 0]]
    gp = np.zeros((len(idx), g.n))
    for i in range(g.n):
        e = np.zeros(g.n)
        e[i] = step
        gp[:, i] = (F(M, p + e, z, X, T, check_domain=False) - F(M, p - e, z, X, T, check_domain=False)) / (2 * step)
    gz = (F(M, p, z + step, X, T, check_domain=False) - F(M, p, z - step, X, T, check_domain=False)) / (2 * step)
    return float(np.linalg.norm(gp, axis=1).max()), float(np.abs(gz).max())


def general_decay_trial(u, F, nu0, c_practical=C_PRACTICAL, samples=200, seed=0):
    """Oscillation ratio for an operator with lower-order terms, with its preconditions measured.

    The residual bound ``nu0 c_practical delta`` and the gradient bounds
    ``|grad_p F| <= 1``, ``|grad_z F| <= nu0`` are reported, not enforced.
    """
    ratio = oscillation_decay_trial(u, F, c_practical)
    mask = residual_mask(u)
    res = residual(F, u).values
    rmax = float(np.abs(res[mask]).max()) if mask.any() else 0.0
    gp, gz = sampled_lower_order_gradients(F, u, samples, seed)
    return GeneralDecayReport(ratio, rmax, nu0 * c_practical * F.delta, gp, gz, float(nu0))
