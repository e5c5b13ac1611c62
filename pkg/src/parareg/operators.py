"""Elliptic operators ``F(M, p, z, x, t)``, quadratic polynomials and hypothesis checks.

Matrix arguments are batches of symmetric matrices of shape ``(..., n, n)``;
``p`` and ``x`` have shape ``(..., n)``; ``z`` and ``t`` have shape ``(...)``.
Omitted lower-order arguments default to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._validation import (
    DomainError,
    as_symmetric,
    as_vector,
    check_dimension,
    check_ellipticity,
    check_positive,
    rng_from,
    spectral_norm,
)

UNBOUNDED = math.inf


def _zero_modulus(s):
    return 0.0 * np.asarray(s, dtype=float)


def _eigvals(M):
    if M.shape[-1] == 1:
        return M[..., 0, :1]
    return np.linalg.eigvalsh(M)


@dataclass(frozen=True)
class EllipticOperator:
    """Evaluatable operator with declared structural constants.

    Parameters
    ----------
    func : callable
        ``func(M, p, z, x, t)`` on broadcast batches.
    n : int
    lam, Lam : float
        Ellipticity constants, ``0 < lam <= 1 <= Lam``.
    delta : float
        Radius of the matrix neighbourhood where the hypotheses hold;
        ``inf`` for globally elliptic operators.
    K : float
        Bound on the full gradient of ``F``.
    omega : callable
        Modulus of continuity of ``grad_M F`` (spectral norm).
    grad_p_bound, grad_z_bound : float
        Bounds on ``|grad_p F|`` and ``|grad_z F|``; drive the CFL condition.
    lower_order : bool
        Whether ``F`` depends on ``(p, z, x, t)`` at all.
    linear : tuple or None
        ``(A, b, c)`` for linear operators (fast path in the solver).
    omega_continuous : bool
        ``False`` when ``omega`` is only a bounded jump (Pucci operators).
    homogeneous : bool
        ``F(sM, sp, sz, x, t) = s F(M, p, z, x, t)`` for ``s > 0``.
    """

    func: Callable
    n: int
    lam: float
    Lam: float
    delta: float = UNBOUNDED
    K: float = UNBOUNDED
    omega: Callable = _zero_modulus
    name: str = "custom"
    grad_p_bound: float = 0.0
    grad_z_bound: float = 0.0
    lower_order: bool = False
    linear: tuple | None = None
    omega_continuous: bool = True
    homogeneous: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        check_dimension(self.n)
        check_ellipticity(self.lam, self.Lam)
        check_positive(self.delta, "delta", allow_inf=True)

    def evaluate(self, M, p=None, z=None, x=None, t=None, check_domain=True):
        M = np.asarray(M, dtype=float)
        if M.ndim < 2:
            M = M.reshape(M.shape + (1, 1)) if self.n == 1 else M
        if M.shape[-2:] != (self.n, self.n):
            raise DomainError(f"matrix argument must be {self.n}x{self.n}")
        batch = M.shape[:-2]
        if check_domain and math.isfinite(self.delta):
            if np.any(spectral_norm(M) > self.delta * (1 + 1e-12)):
                raise DomainError(f"{self.name}: matrix argument outside the ball of radius {self.delta}")
        p = np.zeros(batch + (self.n,)) if p is None else np.asarray(p, dtype=float)
        x = np.zeros(batch + (self.n,)) if x is None else np.asarray(x, dtype=float)
        z = np.zeros(batch) if z is None else np.asarray(z, dtype=float)
        t = np.zeros(batch) if t is None else np.asarray(t, dtype=float)
        return self.func(M, p, z, x, t)

    __call__ = evaluate


def _pucci(lam, Lam, n, delta, minimal):
    lo, hi = (lam, Lam) if minimal else (Lam, lam)

    def func(M, p, z, x, t):
        ev = _eigvals(M)
        return np.sum(np.where(ev > 0, lo * ev, hi * ev), axis=-1)

    jump = Lam - lam

    def omega(s):
        s = np.asarray(s, dtype=float)
        return np.where(s > 0, jump, 0.0)

    kind = "min" if minimal else "max"
    return EllipticOperator(
        func, n, lam, Lam, delta=delta, K=Lam * math.sqrt(n), omega=omega, name=f"pucci-{kind}",
        omega_continuous=jump == 0, homogeneous=True, params={"lambda": lam, "Lambda": Lam},
    )


def make_pucci_minimal(lam, Lam, n, delta=UNBOUNDED):
    """``M^-(M) = lam * (positive eigenvalues) + Lam * (negative eigenvalues)``."""
    lam, Lam = check_ellipticity(lam, Lam)
    return _pucci(lam, Lam, check_dimension(n), delta, True)


def make_pucci_maximal(lam, Lam, n, delta=UNBOUNDED):
    """``M^+(M) = Lam * (positive eigenvalues) + lam * (negative eigenvalues)``."""
    lam, Lam = check_ellipticity(lam, Lam)
    return _pucci(lam, Lam, check_dimension(n), delta, False)


def make_linear(A, b=None, c=0.0, lam=None, Lam=None):
    """``F(M, p, z) = tr(A M) + b . p + c z``.

    ``lam``/``Lam`` default to ``min(1, eig_min(A))`` and ``max(1, eig_max(A))``;
    explicit values must bound the spectrum of ``A``.
    """
    A = as_symmetric(np.atleast_2d(A))
    n = check_dimension(A.shape[0])
    b = np.zeros(n) if b is None else as_vector(b, n, "b")
    c = float(c)
    ev = np.linalg.eigvalsh(A)
    lam = min(1.0, ev[0]) if lam is None else float(lam)
    Lam = max(1.0, ev[-1]) if Lam is None else float(Lam)
    if ev[0] < lam - 1e-12 or ev[-1] > Lam + 1e-12 or ev[0] <= 0:
        raise DomainError(f"A has spectrum [{ev[0]}, {ev[-1]}] outside [{lam}, {Lam}]")
    A.setflags(write=False)
    b.setflags(write=False)

    def func(M, p, z, x, t):
        return np.einsum("ij,...ji->...", A, M) + p @ b + c * z

    K = math.sqrt(float(np.sum(A * A)) + float(b @ b) + c * c)
    lower = bool(np.any(b != 0) or c != 0)
    name = "heat" if not lower and np.allclose(A, np.eye(n)) else "linear"
    return EllipticOperator(
        func, n, lam, Lam, K=K, name=name, grad_p_bound=float(np.linalg.norm(b)), grad_z_bound=abs(c),
        lower_order=lower, linear=(A, b, c), homogeneous=True, params={"A": A.tolist(), "b": b.tolist(), "c": c},
    )


def make_heat(n):
    return make_linear(np.eye(check_dimension(n)))


def make_logdet(n):
    """``F(M) = log det(I + M)`` on ``|M| <= 1/2`` with ``lam = 2/3``, ``Lam = 2``."""
    n = check_dimension(n)

    def func(M, p, z, x, t):
        sign, logdet = np.linalg.slogdet(np.eye(n) + M)
        return logdet

    return EllipticOperator(
        func, n, 2.0 / 3.0, 2.0, delta=0.5, K=2.0 * math.sqrt(n), omega=lambda s: 4.0 * np.asarray(s, dtype=float),
        name="logdet",
    )


def make_general(func, n, lam, Lam, **kwargs):
    """Wrap a user function ``func(M, p, z, x, t)`` depending on lower-order terms."""
    kwargs.setdefault("lower_order", True)
    return EllipticOperator(func, check_dimension(n), lam, Lam, **kwargs)


def make_operator(name, n, **params):
    """Build a built-in operator from a config name and parameter map."""
    name = name.lower()
    if name in ("heat", "linear-heat", "laplace"):
        return make_heat(n)
    if name in ("pucci-min", "pucci-minimal"):
        return make_pucci_minimal(params.get("lambda", 0.5), params.get("Lambda", 1.0), n,
                                  params.get("delta", UNBOUNDED))
    if name in ("pucci-max", "pucci-maximal"):
        return make_pucci_maximal(params.get("lambda", 0.5), params.get("Lambda", 1.0), n,
                                  params.get("delta", UNBOUNDED))
    if name == "linear":
        return make_linear(params.get("A", np.eye(n)), params.get("b"), params.get("c", 0.0))
    if name == "logdet":
        return make_logdet(n)
    raise DomainError(f"unknown operator {name!r}")


@dataclass(frozen=True)
class QuadPoly:
    """``P(x, t) = x^T M x / 2 + p . x + z + beta t``."""

    M: np.ndarray
    p: np.ndarray
    z: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        M = as_symmetric(np.atleast_2d(self.M))
        p = as_vector(self.p, M.shape[0], "p")
        M.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "z", float(self.z))
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def zero(cls, n):
        return cls(np.zeros((n, n)), np.zeros(n))

    @property
    def n(self):
        return self.p.shape[0]

    def __call__(self, X, T):
        X = np.asarray(X, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", X, self.M, X) + X @ self.p + self.z + self.beta * np.asarray(T)

    def scaled_increment(self, other, r):
        """``(r^2 |dM|, r |dp|, |dz|, r^2 |dbeta|)`` between two polynomials."""
        return (
            r * r * float(spectral_norm(other.M - self.M)),
            r * float(np.linalg.norm(other.p - self.p)),
            abs(other.z - self.z),
            r * r * abs(other.beta - self.beta),
        )

    def coefficient_size(self):
        return max(float(spectral_norm(self.M)), float(np.linalg.norm(self.p)), abs(self.z), abs(self.beta))


def df_at(F, M, p=None, z=None, x=None, t=None, eta=None):
    """Central-difference gradient of ``F`` in the matrix slot (symmetric, trace pairing)."""
    n = F.n
    M = as_symmetric(np.atleast_2d(M), n)
    if eta is None:
        eta = 1e-4 * F.delta if math.isfinite(F.delta) else 1e-6 * max(1.0, float(spectral_norm(M)))
    if math.isfinite(F.delta) and float(spectral_norm(M)) + 2 * eta > F.delta:
        raise DomainError("finite-difference stencil leaves the operator's domain")
    dirs = []
    for i in range(n):
        for j in range(i, n):
            S = np.zeros((n, n))
            S[i, j] = S[j, i] = 1.0
            dirs.append((i, j, S))
    stack = np.array([M + eta * S for *_, S in dirs] + [M - eta * S for *_, S in dirs])
    args = [None if a is None else np.broadcast_to(a, (len(stack),) + np.shape(a)) for a in (p, z, x, t)]
    vals = F(stack, *args)
    G = np.zeros((n, n))
    half = len(dirs)
    for k, (i, j, _) in enumerate(dirs):
        d = (vals[k] - vals[half + k]) / (2 * eta)
        if i == j:
            G[i, i] = d
        else:
            G[i, j] = G[j, i] = d / 2
    return G


def constant_c0(n, lam, Lam):
    """``log c0 = 2 log lam - 2 log Lam - log(n + 5) - 1000 Lam n / lam``."""
    lam, Lam = check_ellipticity(lam, Lam)
    return 2 * math.log(lam) - 2 * math.log(Lam) - math.log(n + 5) - 1000.0 * Lam * n / lam


def constant_c2(n, lam, Lam):
    lam, Lam = check_ellipticity(lam, Lam)
    return (1 + Lam * n / lam) ** (n + 1)


def jacobian_bound(n, lam, Lam):
    """Upper bound ``(1 + Lam n / lam)^n (1 + Lam n)`` on the transport Jacobian."""
    lam, Lam = check_ellipticity(lam, Lam)
    return (1 + Lam * n / lam) ** n * (1 + Lam * n)


def constant_alpha0(nu0):
    nu0 = float(nu0)
    if not 0 < nu0 < 1:
        raise DomainError(f"nu0 must lie in (0, 1), got {nu0}")
    return -math.log(1 - nu0) / math.log(3)


def eigenbound_check(F, M, a, c_practical=1e-2):
    """Conclusion ``|M| <= delta`` under ``M >= -a I`` and ``F(M) <= a``.

    Returns ``True`` vacuously when the hypotheses on ``M`` do not hold.
    """
    if not 0 < a < c_practical * F.delta:
        raise DomainError("need 0 < a < c_practical * delta")
    M = as_symmetric(np.atleast_2d(M), F.n)
    ev = np.linalg.eigvalsh(M)
    if ev[0] < -a or F(M, check_domain=False) > a:
        return True
    return bool(max(abs(ev[0]), abs(ev[-1])) <= F.delta)


@dataclass(frozen=True)
class HypothesisResult:
    passed: bool
    worst: float
    witness: dict | None = None


@dataclass(frozen=True)
class HypothesisReport:
    results: dict

    @property
    def passed(self):
        return all(r.passed for r in self.results.values())

    def __getitem__(self, key):
        return self.results[key]


def _random_symmetric(rng, m, n, norm):
    A = rng.standard_normal((m, n, n))
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    return A * (norm / np.maximum(spectral_norm(A), 1e-300))[:, None, None]


def _random_psd(rng, m, n, norm):
    B = rng.standard_normal((m, n, n))
    # low-rank directions exercise the extreme ratios of the trace pairing
    rank = rng.integers(1, n + 1, size=m)
    B[np.arange(n)[None, :] >= rank[:, None]] = 0.0
    N = B @ np.swapaxes(B, 1, 2)
    return N * (norm / np.maximum(spectral_norm(N), 1e-300))[:, None, None]


def verify_hypotheses(F, phi=None, samples=1000, seed=None, norm="trace", tol=1e-9, residual_tol=None):
    """Sampled check of monotonicity, ellipticity, residual, gradient and modulus hypotheses.

    Parameters
    ----------
    F : EllipticOperator
    phi : GridFunction or None
        Reference solution; ``None`` stands for ``phi = 0`` on a point.
    samples : int
    seed : int or Generator
    norm : {"trace", "spectral"}
        Norm of the positive increment ``N`` in the ellipticity bounds.
    """
    from .gridfn import fd_fields

    if samples <= 0:
        raise DomainError("samples must be positive")
    rng = rng_from(seed)
    n = F.n
    radius = 0.99 * F.delta if math.isfinite(F.delta) else 10.0
    if phi is None:
        D2 = np.zeros((samples, n, n))
        Dp = np.zeros((samples, n))
        z0 = np.zeros(samples)
        xs = np.zeros((samples, n))
        ts = np.zeros(samples)
        residual = 0.0
        res_tol = 0.0
    else:
        f = fd_fields(phi)
        idx = np.argwhere(f.valid)
        if not len(idx):
            raise DomainError("phi has no interior nodes")
        pick = idx[rng.integers(len(idx), size=samples)]
        key = tuple(pick.T)
        D2, Dp, z0, ts = f.hessian[key], f.gradient[key], f.value[key], phi.grid.ts[pick[:, 0]]
        xs = phi.grid.coords[tuple(pick[:, 1:].T)]
        allkey = f.valid
        res = F(f.hessian[allkey], f.gradient[allkey], f.value[allkey],
                np.broadcast_to(phi.grid.coords, phi.grid.shape + (n,))[allkey],
                np.broadcast_to(phi.grid.ts.reshape((-1,) + (1,) * n), phi.grid.shape)[allkey],
                check_domain=False) - f.time_slope[allkey]
        residual = float(np.max(np.abs(res)))
        g = phi.grid
        res_tol = 10 * (g.h**2 + g.tau) if residual_tol is None else residual_tol
    # perturbations M' with |M'| <= radius/2 and N >= 0 with |M' + N| <= radius
    Mp = _random_symmetric(rng, samples, n, radius * 0.5 * rng.random(samples))
    Nn = _random_psd(rng, samples, n, radius * 0.5 * rng.random(samples))
    p = Dp + rng.uniform(-1, 1, (samples, n))
    z = z0 + rng.uniform(-1, 1, samples)
    M = D2 + Mp
    base = F(M, p, z, xs, ts, check_domain=False)
    up = F(M + Nn, p, z, xs, ts, check_domain=False)
    inc = up - base
    size = np.trace(Nn, axis1=1, axis2=2) if norm == "trace" else spectral_norm(Nn)
    results = {}

    def record(name, excess, extra=None):
        worst = int(np.argmax(excess))
        ok = bool(excess[worst] <= tol)
        wit = None
        if not ok:
            wit = {"M": M[worst].tolist(), "N": Nn[worst].tolist(), "excess": float(excess[worst])}
            if extra is not None:
                wit.update(extra(worst))
        results[name] = HypothesisResult(ok, float(excess[worst]), wit)

    record("H1", -inc)
    record("H2", np.maximum(F.lam * size - inc, inc - F.Lam * size) / np.maximum(size, 1e-300) * (size > 1e-12))
    results["H3"] = HypothesisResult(residual <= res_tol + tol, residual, None if residual <= res_tol + tol else {"residual": residual})

    # H4: gradient in all slots by central differences
    step = 1e-6
    grads = []
    for i in range(n):
        for j in range(i, n):
            S = np.zeros((n, n))
            S[i, j] = S[j, i] = 1.0
            d = (F(M + step * S, p, z, xs, ts, check_domain=False) - F(M - step * S, p, z, xs, ts, check_domain=False)) / (2 * step)
            grads.append(d if i == j else d / 2 * math.sqrt(2))
    e = np.eye(n)
    for i in range(n):
        grads.append((F(M, p + step * e[i], z, xs, ts, check_domain=False) - F(M, p - step * e[i], z, xs, ts, check_domain=False)) / (2 * step))
        grads.append((F(M, p, z, xs + step * e[i], ts, check_domain=False) - F(M, p, z, xs - step * e[i], ts, check_domain=False)) / (2 * step))
    grads.append((F(M, p, z + step, xs, ts, check_domain=False) - F(M, p, z - step, xs, ts, check_domain=False)) / (2 * step))
    grads.append((F(M, p, z, xs, ts + step, check_domain=False) - F(M, p, z, xs, ts - step, check_domain=False)) / (2 * step))
    gnorm = np.sqrt(np.sum(np.array(grads) ** 2, axis=0))
    record("H4", gnorm - F.K - 1e-5 * max(1.0, F.K if math.isfinite(F.K) else 1.0))

    # H5: modulus domination of grad_M F increments
    m5 = min(samples, 500)
    E = _random_symmetric(rng, m5, n, radius * 0.25 * 10 ** rng.uniform(-4, 0, m5))
    A = M[:m5] * 0.5
    B = A + E
    eta = 1e-7 * (radius if math.isfinite(radius) else 1.0)
    diffs = np.empty(m5)
    for k in range(m5):
        GA = df_at(F, A[k], p[k], z[k], xs[k], ts[k], eta=eta)
        GB = df_at(F, B[k], p[k], z[k], xs[k], ts[k], eta=eta)
        diffs[k] = spectral_norm(GA - GB)
    dist = spectral_norm(E)
    excess = diffs - np.asarray(F.omega(dist)) - 1e-5
    worst = int(np.argmax(excess))
    ok = bool(excess[worst] <= 0)
    results["H5"] = HypothesisResult(
        ok, float(excess[worst]),
        None if ok else {"A": A[worst].tolist(), "B": B[worst].tolist(), "excess": float(excess[worst])},
    )
    return HypothesisReport(results)
