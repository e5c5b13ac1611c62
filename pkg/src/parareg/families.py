"""Random instance generators and boundary-data families shared by tests and suites."""

from __future__ import annotations

import math

import numpy as np

from ._validation import check_dimension, rng_from
from .geometry import SLAB_VERTEX_RADIUS, ParabolicBall, SpaceTimePoint, _uniform_unit_ball, min_opening_ball
from .operators import QuadPoly


def random_cylinder_instance(seed=None, n=1):
    """``(pb_down, p1, T)`` satisfying the preconditions of ``intersection_cylinder``."""
    rng = rng_from(seed)
    n = check_dimension(n)
    theta = rng.uniform(0.75, 4.0)
    T0 = rng.uniform(0.05, 1.0)
    x0 = 0.5 * _uniform_unit_ball(rng, 1, n)[0]
    t0 = rng.uniform(-0.5, 0.0)
    ball = ParabolicBall(SpaceTimePoint(x0, t0), T0, theta, "down")
    while True:
        X, T = ball.sample(1, rng)
        if t0 - T[0] > 1e-6:
            break
    p1 = SpaceTimePoint(X[0], T[0])
    T = rng.uniform(1e-3, 1.0) * (t0 - T[0])
    return ball, p1, T


def random_slab_vertex(seed=None, n=1):
    """Uniform point of the closed cylinder of radius ``11/24`` (as a vertex pair member)."""
    rng = rng_from(seed)
    x = SLAB_VERTEX_RADIUS * _uniform_unit_ball(rng, 1, check_dimension(n))[0]
    t = -rng.uniform(0.0, SLAB_VERTEX_RADIUS**2)
    return x, t


def random_slab_pair(seed=None, n=1):
    rng = rng_from(seed)
    return tuple(min_opening_ball(*random_slab_vertex(rng, n)) for _ in range(2))


def smooth_data(seed=None, n=1, amplitude=1e-3, modes=3):
    """Random trigonometric data ``f(X, T)`` with ``sup |f| <= amplitude``."""
    rng = rng_from(seed)
    n = check_dimension(n)
    k = rng.normal(0.0, 2.0, (modes, n))
    phase = rng.uniform(0, 2 * math.pi, modes)
    w = rng.uniform(-1, 1, modes)
    drift = rng.uniform(-1, 1, modes)
    scale = amplitude / (np.sum(np.abs(w)) * 2.0)

    def f(X, T):
        X = np.asarray(X, dtype=float)
        T = np.asarray(T, dtype=float)
        arg = X @ k.T + phase
        return scale * np.sum(w * np.sin(arg) * (1 + drift * T[..., None]), axis=-1)

    return f


def heat_mode(n, amplitude=0.1, phases=None):
    """Exact solution ``A sum_i sin(x_i + phi_i) e^{-t}`` of ``u_t = Laplace u``."""
    n = check_dimension(n)
    phases = np.zeros(n) if phases is None else np.asarray(phases, dtype=float)

    def f(X, T):
        X = np.asarray(X, dtype=float)
        return amplitude * np.sum(np.sin(X + phases), axis=-1) * np.exp(-np.asarray(T, dtype=float))

    return f


def quadratic_solution(F, seed=None, scale=0.1):
    """Random ``QuadPoly`` with ``beta = F(M)``, an exact solution of ``F(D^2u) = u_t``."""
    rng = rng_from(seed)
    n = F.n
    B = rng.normal(size=(n, n))
    M = scale * (B + B.T) / 2
    p = scale * rng.normal(size=n)
    z = scale * rng.normal()
    return QuadPoly(M, p, z, float(F(M)))


def edge_bumps(n, amplitude=1e-3, centers=(-0.8, 0.8), width=0.1):
    """Bottom-slice bumps near the lateral boundary; zero on the lateral boundary itself."""
    n = check_dimension(n)
    centers = [np.full(n, c) / math.sqrt(n) for c in centers]

    def f(X, T):
        X = np.asarray(X, dtype=float)
        T = np.asarray(T, dtype=float)
        bottom = T <= -1 + 1e-12
        out = sum(np.exp(-np.sum((X - c) ** 2, axis=-1) / (2 * width**2)) for c in centers)
        r = np.sqrt(np.sum(X**2, axis=-1))
        out = out * np.clip((1 - r) / 0.05, 0, 1)
        return np.where(bottom, amplitude * out, 0.0)

    return f
