"""Improvement of quadratic approximations and the resulting C^{2,alpha} estimate.

A state at level ``k`` holds a quadratic ``P_k`` with ``F(M_k) = beta_k`` and
``|u - P_k| <= r_k^{2 + alpha}`` on ``Q_{r_k}``, ``r_k = sigma^k r0``.  One
step rescales the error to ``w`` on ``Q_1``, solves the heat equation
linearised at ``M_k`` with data ``w``, reads off the second-order Taylor
polynomial of the solution at the origin, corrects its Hessian by ``s0 I`` so
that the new polynomial solves the equation, and checks the error on the
next cylinder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from ._validation import ConfigurationError, DomainError, StepError, check_positive, spectral_norm
from .gridfn import GridFunction, fd_expansion, fd_fields
from .operators import EllipticOperator, QuadPoly, constant_c0, df_at
from .solver import solve_linear_heat

ROOT_TOL = 1e-12


@dataclass(frozen=True)
class IqaSchedule:
    """Step constants and the five admissibility inequalities.

    ``mu`` defaults to ``sigma^{2 + alpha} / 4`` (equality in the last
    inequality) and ``r0`` to the largest dyadic radius ``<= 1`` passing the
    first three; ``c_practical`` stands in for the unusable ``c0``.

    Parameters
    ----------
    F : EllipticOperator
    sigma, alpha : float
    Ctilde : float
        Interior-estimate constant for the linearised equation; compared
        with the measured value at every step.
    C : float
        Constant in the coefficient-increment bounds.
    eps : float
        Interior margin of the comparison cylinder ``Q_{3/4 - eps}``.
    """

    F: EllipticOperator
    sigma: float = 0.125
    alpha: float = 0.5
    Ctilde: float = 0.5
    C: float = 1.0
    eps: float = 0.125
    c_practical: float = 1e-2
    mu: float | None = None
    r0: float | None = None
    slack: float = 2.0

    def __post_init__(self):
        for name in ("sigma", "alpha", "Ctilde", "C", "eps", "c_practical", "slack"):
            check_positive(getattr(self, name), name)
        if not 0 < self.sigma < 1 or not 0 < self.alpha < 1:
            raise ConfigurationError("need 0 < sigma < 1 and 0 < alpha < 1")
        if self.mu is None:
            object.__setattr__(self, "mu", self.sigma ** (2 + self.alpha) / 4)
        if self.r0 is None:
            object.__setattr__(self, "r0", self._largest_r0())
        bad = [name for name, ok in self.conditions().items() if not ok]
        if bad:
            raise ConfigurationError(f"schedule violates {', '.join(bad)}", )

    def _rc123(self, r):
        F, a, e, Ct, mu = self.F, self.alpha, self.eps, self.Ctilde, self.mu
        d = F.delta
        cp = self.c_practical
        rc1 = not math.isfinite(d) or math.sqrt(r**a / (cp * d)) < e / 2
        rc2 = not math.isfinite(d) or r**a * (Ct / e**2 + mu) < d / 2
        rc3 = (Ct / e**2) * float(F.omega(r**a / e**2)) < F.lam * F.n * mu
        return {"rc1": rc1, "rc2": rc2, "rc3": rc3}

    def _largest_r0(self):
        r = 1.0
        for _ in range(200):
            if all(self._rc123(r).values()):
                return r
            r /= 2
        raise ConfigurationError("no dyadic r0 >= 2^-200 satisfies rc1-rc3")

    def conditions(self):
        out = self._rc123(self.r0)
        out["rc4"] = self.Ctilde * self.sigma**self.alpha < 0.25
        out["rc5"] = self.mu <= self.sigma ** (2 + self.alpha) / 4 * (1 + 1e-12)
        return out

    @property
    def smallness(self):
        """Threshold ``mu2 = r0^{2 + 1/2}`` on ``|u|`` for starting the iteration."""
        return self.r0**2.5

    def header(self):
        return {
            "operator": self.F.name, "n": self.F.n, "sigma": self.sigma, "alpha": self.alpha,
            "Ctilde": self.Ctilde, "C": self.C, "eps": self.eps, "mu": self.mu, "r0": self.r0,
            "mu2": self.smallness, "c_practical": self.c_practical,
            "log_c0": constant_c0(self.F.n, self.F.lam, self.F.Lam), "slack": self.slack,
        }


@dataclass(frozen=True)
class IqaState:
    level: int
    poly: QuadPoly
    scale: float
    approx_error: float
    alpha: float = 0.5
    diagnostics: dict = field(default_factory=dict)

    @property
    def bound(self):
        return self.scale ** (2 + self.alpha)

    def row(self, slack=2.0):
        P = self.poly
        return {
            "k": self.level, "r_k": self.scale, "norm_M": float(spectral_norm(P.M)),
            "norm_p": float(np.linalg.norm(P.p)), "abs_z": abs(P.z), "abs_beta": abs(P.beta),
            "approx_error": self.approx_error, "bound": self.bound,
            "pass": bool(self.approx_error <= slack * self.bound),
        }


def rescaled_operator(F, M, r, alpha):
    """``Ftilde(N) = r^-alpha (F(M + r^alpha N) - F(M))``."""
    M = np.asarray(M, dtype=float)
    ra = r**alpha
    base = float(F(M, check_domain=False))
    delta = (F.delta - float(spectral_norm(M))) / ra if math.isfinite(F.delta) else math.inf
    if delta <= 0:
        raise DomainError("M lies outside the operator's domain")

    def func(N, p, z, x, t):
        return (F(M + ra * N, check_domain=False) - base) / ra

    return EllipticOperator(
        func, F.n, F.lam, F.Lam, delta=delta, K=F.K, omega=lambda s: F.omega(ra * np.asarray(s)),
        name=f"rescaled-{F.name}", omega_continuous=F.omega_continuous,
    )


def _poly_on(grid, P, sl=None):
    X = grid.coords
    T = grid.ts.reshape((-1,) + (1,) * grid.n)
    vals = P(np.broadcast_to(X, grid.shape + (grid.n,)), np.broadcast_to(T, grid.shape))
    return vals if sl is None else vals[sl]


def rescale_w(u, poly, r, alpha, F=None, bound=1.0):
    """``w(x, t) = (u - P)(r x, r^2 t) / r^{2 + alpha}`` on the unit grid.

    Returns
    -------
    w : GridFunction
    Ftilde : EllipticOperator or None
        The rescaled operator at ``poly.M`` when ``F`` is given.

    Raises
    ------
    StepError
        If ``|w| > bound`` (the approximation hypothesis fails on ``Q_r``).
    """
    g = u.grid
    sub = g.sub_grid(r)
    sl = g.sub_slices(sub)
    diff = u.values[sl] - _poly_on(g, poly, sl)
    w = diff / r ** (2 + alpha)
    wg = GridFunction(sub.rescaled(r), np.where(np.broadcast_to(sub.ball_mask, sub.shape), w, 0.0))
    size = wg.max_abs()
    if size > bound * (1 + 1e-12):
        raise StepError("approximation hypothesis fails", {"sup_w": size, "bound": bound, "r": r})
    Ft = None if F is None else rescaled_operator(F, poly.M, r, alpha)
    return wg, Ft


def reconstruct(poly, w, r, alpha, grid):
    """Inverse of :func:`rescale_w` on ``grid``'s sub-cylinder of radius ``r``."""
    sub = grid.sub_grid(r)
    return _poly_on(grid, poly, grid.sub_slices(sub)) + r ** (2 + alpha) * w.values


def _origin(grid):
    return (grid.nt - 1,) + (grid.m,) * grid.n


def taylor_at_origin(h):
    """Second-order Taylor polynomial of ``h`` at ``(0, 0)`` from finite differences."""
    e = fd_expansion(h, _origin(h.grid))
    return QuadPoly(e.hessian, e.gradient, e.value, e.time_slope)


def solve_s0(Ftilde, Mtilde, betatilde, delta_tilde=None):
    """Root of ``s -> Ftilde(Mtilde + s I) - betatilde`` on ``[-delta/2, delta/2]``.

    With an unbounded domain the bracket doubles from 1 until the sign changes.
    """
    n = Ftilde.n
    Mtilde = np.atleast_2d(np.asarray(Mtilde, dtype=float))
    delta_tilde = Ftilde.delta if delta_tilde is None else delta_tilde
    I = np.eye(n)
    tol = ROOT_TOL * max(1.0, abs(betatilde))

    def g(s):
        return float(Ftilde(Mtilde + s * I, check_domain=False)) - betatilde

    if abs(g(0.0)) <= tol:
        return 0.0
    if math.isfinite(delta_tilde):
        lo, hi = -delta_tilde / 2, delta_tilde / 2
        glo, ghi = g(lo), g(hi)
        if glo > 0 or ghi < 0:
            raise StepError("no sign change", {"g_lo": glo, "g_hi": ghi, "s_max": hi})
    else:
        hi = 1.0
        while g(hi) < 0 or g(-hi) > 0:
            hi *= 2
            if hi > 1e300:
                raise StepError("no sign change", {"g_lo": g(-hi), "g_hi": g(hi)})
        lo = -hi
    s = brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(s)) > tol:
        raise StepError("root finder did not reach tolerance", {"residual": g(s), "tol": tol})
    return float(s)


def _sup_error(u, P, r):
    g = u.grid
    sub = g.sub_grid(r)
    sl = g.sub_slices(sub)
    diff = np.abs(u.values[sl] - _poly_on(g, P, sl))
    return float(diff[np.broadcast_to(sub.ball_mask, sub.shape)].max())


def iqa_step(u, state, F, alpha, schedule):
    """One improvement step from ``Q_r`` to ``Q_{sigma r}``; returns the next state.

    Raises
    ------
    StepError
        When a sub-step fails or a bound is violated; ``diagnostics`` names
        the failed inequality and the margin.
    """
    if abs(alpha - schedule.alpha) > 1e-15:
        raise ConfigurationError("alpha must match the schedule")
    sigma, slack = schedule.sigma, schedule.slack
    r = state.scale
    P = state.poly
    w, Ft = rescale_w(u, P, r, alpha, F, bound=slack)
    A = df_at(F, P.M)
    sub = w.grid.sub_grid(0.75, t_min=-0.75**2)
    hsol, heat = solve_linear_heat(A, w.restrict(0.75, t_min=-0.75**2), sub, eps=0.75 - 0.5)
    Pt = taylor_at_origin(hsol)
    s0 = solve_s0(Ft, Pt.M, Pt.beta)
    ra = r**alpha
    Pn = QuadPoly(
        P.M + ra * (Pt.M + s0 * np.eye(F.n)),
        P.p + r ** (1 + alpha) * Pt.p,
        P.z + r ** (2 + alpha) * Pt.z,
        P.beta + ra * Pt.beta,
    )
    rn = sigma * r
    err = _sup_error(u, Pn, rn)
    taylor_err = _taylor_defect(hsol, Pt, sigma)
    incr = P.scaled_increment(Pn, r)
    C_measured = max(incr) / r ** (2 + alpha)
    diag = {
        "r": r, "s0": s0, "heat_constant": heat.constant, "Ctilde_measured": taylor_err / sigma**3,
        "increments": incr, "C_measured": C_measured, "sup_w": w.max_abs(),
        "equation_defect": float(F(Pn.M, check_domain=False)) - Pn.beta,
    }
    bound = rn ** (2 + alpha)
    if err > slack * bound:
        raise StepError("approximation bound violated on the next cylinder",
                        {**diag, "error": err, "bound": slack * bound, "margin": slack * bound - err})
    if C_measured > schedule.C:
        raise StepError("coefficient increments exceed C r^{2+alpha}",
                        {**diag, "C": schedule.C, "margin": schedule.C - C_measured})
    return IqaState(state.level + 1, Pn, rn, err, alpha, diag)


def _taylor_defect(hsol, Pt, sigma):
    """``sup_{Q_sigma} |h - Ptilde|``."""
    g = hsol.grid
    sub = g.sub_grid(sigma)
    sl = g.sub_slices(sub)
    d = np.abs(hsol.values[sl] - _poly_on(g, Pt, sl))
    return float(d[np.broadcast_to(sub.ball_mask, sub.shape)].max())


@dataclass(frozen=True)
class C2AlphaReport:
    C2: float
    C2alpha: float
    levels: int
    delta: float

    @property
    def within_delta(self):
        return self.C2 <= self.delta


def extract_c2alpha(states, sigma, r0, alpha):
    """``C = max_k max(|M_k|, |p_k|, |z_k|, |beta_k|)`` and ``C / (sigma r0)^alpha``."""
    if not states:
        return 0.0, 0.0
    C = max(s.poly.coefficient_size() for s in states)
    return C, C / (sigma * r0) ** alpha


def regularity_loop(u, F, alpha=0.5, k_max=None, schedule=None, min_cells=8):
    """Iterate :func:`iqa_step` from ``P_0 = 0`` while ``r_k >= min_cells h`` and ``(sigma r_k)^2 >= tau``.

    Returns
    -------
    states : list of IqaState
        Level 0 is the zero polynomial on ``Q_{r0}``; a failed step ends the
        list and its diagnostics are attached to the last state under
        ``"stopped"``.
    report : C2AlphaReport
    """
    schedule = IqaSchedule(F, alpha=alpha) if schedule is None else schedule
    g = u.grid
    size = u.max_abs()
    if size > schedule.smallness:
        raise DomainError(f"|u| = {size:.3g} exceeds the smallness threshold {schedule.smallness:.3g}")
    r0 = schedule.r0
    P0 = QuadPoly.zero(F.n)
    states = [IqaState(0, P0, r0, _sup_error(u, P0, r0), alpha)]
    k = 0
    def resolvable(r):
        return r >= min_cells * g.h * (1 - 1e-12) and (schedule.sigma * r) ** 2 >= g.tau * (1 - 1e-12)

    while resolvable(states[-1].scale) and (k_max is None or k < k_max):
        try:
            states.append(iqa_step(u, states[-1], F, alpha, schedule))
        except StepError as exc:
            last = states[-1]
            states[-1] = IqaState(last.level, last.poly, last.scale, last.approx_error, alpha,
                                  {**last.diagnostics, "stopped": str(exc), **exc.diagnostics})
            break
        k += 1
    C, Ca = extract_c2alpha(states, schedule.sigma, r0, alpha)
    return states, C2AlphaReport(C, Ca, len(states), F.delta)


def consecutive_passing(states, slack=2.0):
    """Length of the longest run of states with ``approx_error <= slack r_k^{2 + alpha}``."""
    best = run = 0
    for s in states:
        run = run + 1 if s.approx_error <= slack * s.bound else 0
        best = max(best, run)
    return best


def reduce_general(F, phi):
    """Operator ``G(M, p, z, x, t) = F(D^2 phi + M, D phi + p, phi + z, x, t) - phi_t``.

    ``phi``'s derivatives come from finite differences at the node nearest to
    ``(x, t)``; ``G(0, 0, 0, x, t)`` is the residual of ``phi`` and vanishes
    where ``phi`` solves the equation.
    """
    g = phi.grid
    f = fd_fields(phi)
    H = np.nan_to_num(f.hessian)
    D = np.nan_to_num(f.gradient)
    V = f.value
    Vt = np.nan_to_num(f.time_slope)

    def lookup(x, t):
        x = np.asarray(x, dtype=float)
        k = g.time_index(t)
        idx = np.rint(x / g.h).astype(int) + g.m
        if np.any(idx < 0) or np.any(idx > 2 * g.m) or np.any(k < 0) or np.any(k >= g.nt):
            raise DomainError("(x, t) outside phi's grid")
        return (k,) + tuple(np.moveaxis(idx, -1, 0))

    def func(M, p, z, x, t):
        key = lookup(x, t)
        return F(H[key] + M, D[key] + p, V[key] + z, x, t, check_domain=False) - Vt[key]

    return EllipticOperator(
        func, F.n, F.lam, F.Lam, delta=F.delta, K=F.K, omega=F.omega, name=f"reduced-{F.name}",
        grad_p_bound=F.grad_p_bound, grad_z_bound=F.grad_z_bound, lower_order=True,
        omega_continuous=F.omega_continuous,
    )


class ImprovementOfQuadratics(BaseEstimator):
    """Estimator front end for :func:`regularity_loop`.

    ``fit(u)`` runs the iteration; ``states_``, ``c2_`` and ``c2alpha_`` hold
    the result and ``predict(X, T)`` evaluates the finest polynomial.
    """

    def __init__(self, operator=None, sigma=0.125, alpha=0.5, Ctilde=0.5, C=1.0, eps=0.125,
                 c_practical=1e-2, slack=2.0, k_max=None):
        self.operator = operator
        self.sigma = sigma
        self.alpha = alpha
        self.Ctilde = Ctilde
        self.C = C
        self.eps = eps
        self.c_practical = c_practical
        self.slack = slack
        self.k_max = k_max

    def fit(self, u, y=None):
        if self.operator is None:
            raise ConfigurationError("operator is required")
        self.schedule_ = IqaSchedule(self.operator, self.sigma, self.alpha, self.Ctilde, self.C, self.eps,
                                     self.c_practical, slack=self.slack)
        self.states_, report = regularity_loop(u, self.operator, self.alpha, self.k_max, self.schedule_)
        self.c2_, self.c2alpha_ = report.C2, report.C2alpha
        return self

    def predict(self, X, T):
        return self.states_[-1].poly(X, T)
