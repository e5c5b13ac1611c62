"""Error types and small input-validation helpers shared by all modules."""

from __future__ import annotations

import numbers

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class BoundaryError(ValueError):
    """A finite-difference stencil leaves the grid or its interior."""


class ConfigurationError(ValueError):
    """Inconsistent numerical configuration (CFL, schedule constants, ...)."""


class StepError(RuntimeError):
    """An improvement-of-quadratics step could not be completed.

    Attributes
    ----------
    diagnostics : dict
        Which inequality failed and the margins involved.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


def check_dimension(n):
    if not isinstance(n, numbers.Integral) or not 1 <= int(n) <= 3:
        raise DomainError(f"dimension must be 1, 2 or 3, got {n!r}")
    return int(n)


def check_positive(value, name, *, allow_inf=False):
    value = float(value)
    if not (value > 0) or (np.isinf(value) and not allow_inf) or np.isnan(value):
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


def check_ellipticity(lam, Lam):
    lam, Lam = float(lam), float(Lam)
    if not (0 < lam <= 1 <= Lam) or not np.isfinite(Lam):
        raise DomainError(f"need 0 < lambda <= 1 <= Lambda, got ({lam}, {Lam})")
    return lam, Lam


def as_vector(x, n=None, name="x"):
    """Return ``x`` as a float vector (scalars become length-1 vectors)."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DomainError(f"{name} must be a vector, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DomainError(f"{name} must have length {n}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def as_points(X, n, name="X"):
    """Coerce a batch of spatial points to shape ``(m, n)``."""
    arr = np.asarray(X, dtype=float)
    if n == 1 and arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim == 1 and arr.shape[0] == n:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != n:
        raise DomainError(f"{name} must have shape (m, {n}), got {arr.shape}")
    return arr


def as_symmetric(M, n=None, name="M"):
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.shape[-2:] != (arr.shape[-1], arr.shape[-1]):
        raise DomainError(f"{name} must be square, got shape {arr.shape}")
    if n is not None and arr.shape[-1] != n:
        raise DomainError(f"{name} must be {n}x{n}, got {arr.shape}")
    return 0.5 * (arr + np.swapaxes(arr, -1, -2))


def spectral_norm(M):
    """Spectral norm of a (batch of) symmetric matrices."""
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 1:
        return np.abs(M[..., 0, 0])
    return np.max(np.abs(np.linalg.eigvalsh(M)), axis=-1)


def rng_from(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
