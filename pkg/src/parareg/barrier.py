"""Explicit barrier for the homogeneity of contact sets, and the comparison functions ``h_{mu +-}``.

The barrier lives in local coordinates where its base point sits at the
origin; :func:`barrier_eval` accepts the caller's coordinates ``(x, t)``
relative to the centre ``(x2, t2)`` of the small cylinder and applies the
time shift ``t_local = t - t2 + delta_slab * T1`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import DomainError, check_ellipticity, rng_from, spectral_norm
from .geometry import GAMMA, Cylinder
from .gridfn import region_mask


@dataclass(frozen=True)
class BarrierParams:
    alpha: float
    beta1: float
    beta2: float
    Cprime: float
    theta: float
    n: int
    gamma: float = GAMMA
    schedule: str = "original"

    @property
    def delta_slab(self):
        """Time offset ``(gamma^2 / 16)(alpha / theta)`` of the barrier's base point."""
        return self.gamma**2 / 16.0 * self.alpha / self.theta


def barrier_params(theta, lam, Lam, n, schedule="original"):
    """Constants of the barrier.

    ``schedule="original"`` uses ``beta1 = (lam beta2 + Lam n) / (1 - exp(-beta2 / (2 alpha)))``.
    ``schedule="repaired"`` raises ``beta1`` to
    ``(2 Lam n beta2 + beta2 / (2 alpha) + Lam n + 1) / (1 - exp(-beta2 / (2 alpha)))``, which
    makes the inner region ``rho <= 1 / (2 alpha)`` a strict supersolution
    (the radial Hessian eigenvalue ``-2 beta2`` must be beaten there).
    """
    lam, Lam = check_ellipticity(lam, Lam)
    if not 0.75 <= theta <= 4:
        raise DomainError(f"theta must lie in [3/4, 4], got {theta}")
    alpha = (theta / 2.0) / (4.0 - GAMMA**2 / 16.0)
    beta2 = max(1.0 / alpha + 1.0, Lam * n / lam)
    denom = 1.0 - math.exp(-beta2 / (2.0 * alpha))
    if schedule == "original":
        beta1 = (lam * beta2 + Lam * n) / denom
    elif schedule == "repaired":
        beta1 = (2 * Lam * n * beta2 + beta2 / (2 * alpha) + Lam * n + 1) / denom
    else:
        raise DomainError(f"unknown schedule {schedule!r}")
    Cprime = (n + 1) * math.exp(beta2 / alpha)
    return BarrierParams(alpha, beta1, beta2, Cprime, float(theta), int(n), GAMMA, schedule)


def _local(params, T1, x, t, center):
    x = np.asarray(x, dtype=float)
    if params.n == 1 and x.ndim == 0:
        x = x.reshape(1)
    x2 = np.zeros(params.n) if center is None else np.asarray(center[0], dtype=float)
    t2 = 0.0 if center is None else float(center[1])
    xl = x - x2
    tl = np.asarray(t, dtype=float) - t2 + params.delta_slab * T1
    return xl, tl


def barrier_eval(params, a, T1, x, t, center=None, derivatives=False):
    """Barrier value (and optionally its Hessian and time derivative).

    Parameters
    ----------
    params : BarrierParams
    a, T1 : float
    x : array of shape (..., n)
    t : array of shape (...)
    center : (x2, t2) or None
        Centre of the small cylinder; the origin by default.
    derivatives : bool
        Return ``(phi, D2phi, phi_t)`` instead of ``phi``.
    """
    xl, tl = _local(params, T1, x, t, center)
    if np.any(tl < params.delta_slab * T1 * (1 - 1e-12)):
        raise DomainError("time below the slab")
    r2 = np.sum(xl**2, axis=-1)
    rho = r2 / tl
    if np.any(rho > (1 + 1e-12) / params.alpha):
        raise DomainError("rho exceeds 1/alpha")
    b1, b2, C = params.beta1, params.beta2, params.Cprime
    tau = tl / T1
    ecut = math.exp(-b2 / params.alpha)
    e = np.exp(-b2 * rho)
    phi = a * C * T1 * tau ** (-b1) * (e - ecut)
    if not derivatives:
        return phi
    K = a * C * tau ** (-(b1 + 1)) * e
    n = params.n
    outer = xl[..., :, None] * xl[..., None, :] / tl[..., None, None]
    D2 = K[..., None, None] * (4 * b2**2 * outer - 2 * b2 * np.eye(n))
    phit = K * (b2 * rho - b1 * (1 - np.exp(b2 * (rho - 1.0 / params.alpha))))
    return phi, D2, phit


def sample_barrier_region(params, T1, m, seed=None, center=None):
    """``m`` points in ``{t_local in [delta T1, (1/2 + delta) T1], rho <= 1/alpha}``.

    Half of the times are uniform, half log-uniform (the bottom of the region
    is where the barrier is steepest); the base point ``rho = 0`` at the
    lowest time and a lateral-boundary point are always included.
    """
    rng = rng_from(seed)
    n = params.n
    lo, hi = params.delta_slab * T1, (0.5 + params.delta_slab) * T1
    m1 = m // 2
    tl = np.r_[rng.uniform(lo, hi, m1), np.exp(rng.uniform(math.log(lo), math.log(hi), m - m1))]
    g = rng.standard_normal((m, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = np.sqrt(tl / params.alpha) * rng.random((m, 1))[:, 0] ** (1.0 / n)
    xl = g * rad[:, None]
    xl[0], tl[0] = 0.0, lo
    xl[1], tl[1] = 0.0, hi
    xl[2] = np.sqrt(hi / params.alpha) * np.eye(n)[0] * (1 - 1e-12)
    tl[2] = hi
    x2 = np.zeros(n) if center is None else np.asarray(center[0], dtype=float)
    t2 = 0.0 if center is None else float(center[1])
    return xl + x2, tl + t2 - params.delta_slab * T1


@dataclass(frozen=True)
class SignCheckReport:
    passed: bool
    min_margin: float
    witness: dict | None
    max_hessian: float
    hessian_within_delta: bool
    samples: int


def _log_scaled_derivatives(params, a, T1, xl, tl):
    """``log K`` with ``D^2 phi = K A`` and ``phi_t = K q`` (overflow-free)."""
    b1, b2 = params.beta1, params.beta2
    rho = np.sum(xl**2, axis=-1) / tl
    logK = math.log(a * params.Cprime) - (b1 + 1) * np.log(tl / T1) - b2 * rho
    outer = xl[..., :, None] * xl[..., None, :] / tl[..., None, None]
    A = 4 * b2**2 * outer - 2 * b2 * np.eye(params.n)
    q = b2 * rho - b1 * (1 - np.exp(b2 * (rho - 1.0 / params.alpha)))
    return logK, A, q


def supersolution_sign_check(F, P1, params, a, T1, samples=10_000, seed=0, center=None, scale=1.0):
    """Strict positivity of ``F(D^2(P1 + scale phi)) - d_t(P1 + scale phi)`` on the barrier region.

    ``scale = 0`` switches the barrier off (degenerate check).  Near the
    bottom of the region the barrier's derivatives exceed the floating-point
    range, so for positively homogeneous ``F`` every sample is divided by
    ``s = max(|P1|-coefficients, K)`` before evaluation; the reported margin
    is the minimum of the rescaled residual, whose sign is that of the true
    residual.
    """
    X, T = sample_barrier_region(params, T1, samples, seed, center)
    xl, tl = _local(params, T1, X, T, center)
    logK, A, q = _log_scaled_derivatives(params, a, T1, xl, tl)
    if scale == 0:
        logK = np.full_like(logK, -np.inf)
    else:
        logK = logK + math.log(scale)
    if F.homogeneous:
        logp = math.log(max(float(spectral_norm(P1.M)), abs(P1.beta), 1e-300))
        logs = np.maximum(logK, logp)
    else:
        logs = np.zeros_like(logK)
    w = np.exp(logK - logs)
    ps = np.exp(-logs)
    M = P1.M * ps[:, None, None] + w[:, None, None] * A
    val = F(M, check_domain=False) - (P1.beta * ps + w * q)
    k = int(np.argmin(val))
    margin = float(val[k])
    with np.errstate(over="ignore"):
        hnorm = np.exp(logK) * spectral_norm(A)
    hmax = float(np.max(hnorm)) if scale else 0.0
    passed = bool(margin > 0)
    wit = None if passed else {"x": X[k].tolist(), "t": float(T[k]), "scaled_value": margin}
    return SignCheckReport(passed, margin, wit, hmax, bool(hmax <= F.delta), samples)


@dataclass(frozen=True)
class ComparisonReport:
    sup_diff: float
    bound: float
    slack: float
    sub_residual_min: float
    super_residual_max: float

    @property
    def ok(self):
        return self.sup_diff <= self.bound + self.slack


def comparison_check(Ftilde, w, h, mu, eps, alpha0, slack=None):
    """``|w - h|`` over ``Q_{3/4 - eps}`` against ``mu + 4 eps^alpha0``.

    Also evaluates the residuals of ``h_{mu+-} = h +- mu(|x|^2 - (3/4 - eps)^2) -+ 4 eps^alpha0``
    under ``Ftilde`` (subsolution residual should be ``>= 0``, supersolution ``<= 0``).
    """
    from .gridfn import fd_fields

    if w.grid != h.grid:
        raise DomainError("w and h must share a grid")
    g = w.grid
    R = 0.75 - eps
    if R <= 0:
        raise DomainError("eps too large")
    mask = region_mask(g, Cylinder(np.zeros(g.n), g.t_max, R))
    diff = float(np.max(np.abs(w.values - h.values)[mask]))
    f = fd_fields(h)
    v = f.valid & mask
    n = g.n
    bump = 2 * mu * np.eye(n)
    Fp = Ftilde(f.hessian[v] + bump, check_domain=False) - f.time_slope[v]
    Fm = Ftilde(f.hessian[v] - bump, check_domain=False) - f.time_slope[v]
    slack = 10 * (g.h**2 + g.tau) if slack is None else slack
    return ComparisonReport(
        diff, mu + 4 * eps**alpha0, slack,
        float(Fp.min()) if Fp.size else 0.0,
        float(Fm.max()) if Fm.size else 0.0,
    )
