"""Registry of the structural constants, closed-form and measured."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from ._validation import check_dimension, check_ellipticity, rng_from
from .families import random_cylinder_instance, random_slab_pair
from .geometry import (
    SLAB_VERTEX_RADIUS,
    ParabolicBall,
    SpaceTimePoint,
    common_slab,
    eta2,
    intersection_cylinder,
    min_opening_ball,
    pb_volume,
)
from .operators import constant_alpha0, constant_c0, constant_c2

CLOSED_FORM = "closed-form"
EMPIRICAL = "empirical"


@dataclass(frozen=True)
class LedgerEntry:
    name: str
    value: float
    provenance: str
    log_space: bool = False
    note: str = ""


def _eta0_ratio(theta, rho, frac, n):
    """Volume ratio for the scale-free input: vertex at the origin, ``p1`` at depth one."""
    theta = min(max(theta, 0.75), 4.0)
    rho = min(max(rho, 0.0), 1.0 - 1e-9)
    frac = min(max(frac, 1e-3), 1.0)
    ball = ParabolicBall(SpaceTimePoint(np.zeros(n), 0.0), 1.0, theta, "down")
    x1 = np.zeros(n)
    x1[0] = rho / math.sqrt(theta)
    p1 = SpaceTimePoint(x1, -1.0)
    cyl = intersection_cylinder(ball, p1, frac)
    return cyl.volume / pb_volume(ParabolicBall(p1, frac, theta, "up"))


def _polish(objective, starts, bounds):
    best = math.inf
    for x0 in starts:
        res = minimize(objective, x0, method="Powell", bounds=bounds, options={"xtol": 1e-8, "ftol": 1e-12})
        best = min(best, float(res.fun), float(objective(x0)))
    return best


def measure_eta0(n, instances=1000, seed=0, polish=3):
    """Infimum estimate of ``|cylinder| / |PB^theta_T(p1)|`` over intersection-cylinder inputs.

    Random valid inputs are reduced to the scale-free coordinates
    ``(theta, |x1 - x0| / sqrt((t0 - t1) / theta), T / (t0 - t1))``; the
    ``polish`` worst ones seed a bounded local minimisation.
    """
    rng = rng_from(seed)
    cand = []
    for _ in range(instances):
        ball, p1, T = random_cylinder_instance(rng, n)
        L = ball.vertex.t - p1.t
        z = (ball.theta, float(np.linalg.norm(p1.xa - ball.vertex.xa)) / math.sqrt(L / ball.theta), T / L)
        cand.append((_eta0_ratio(*z, n), z))
    cand.sort(key=lambda c: c[0])
    if not polish:
        return cand[0][0]
    starts = [c[1] for c in cand[:polish]]
    return _polish(lambda z: _eta0_ratio(*z, n), starts, [(0.75, 4.0), (0.0, 1.0 - 1e-9), (1e-3, 1.0)])


def _slab_ratio(z, n):
    R = SLAB_VERTEX_RADIUS
    balls = []
    for i in range(2):
        x = np.asarray(z[i * (n + 1): i * (n + 1) + n], dtype=float)
        norm = float(np.linalg.norm(x))
        if norm > 1:
            x = x / norm
        t = -min(max(z[i * (n + 1) + n], 0.0), 1.0) * R * R
        balls.append(min_opening_ball(R * x, t))
    _, vol = common_slab(*balls)
    return vol / max(pb_volume(balls[0]), pb_volume(balls[1]))


def measure_eta1(n, pairs=1000, seed=0, polish=3):
    """Infimum estimate of ``|slab| / |PB_i|`` over vertex pairs in the cylinder of radius 11/24."""
    rng = rng_from(seed)
    R = SLAB_VERTEX_RADIUS
    cand = []
    for _ in range(pairs):
        b0, b1 = random_slab_pair(rng, n)
        z = np.r_[b0.vertex.xa / R, -b0.vertex.t / R**2, b1.vertex.xa / R, -b1.vertex.t / R**2]
        cand.append((_slab_ratio(z, n), z))
    cand.sort(key=lambda c: c[0])
    if not polish:
        return cand[0][0]
    starts = [c[1] for c in cand[:polish]]
    bounds = ([(-1.0, 1.0)] * n + [(0.0, 1.0)]) * 2
    return _polish(lambda z: _slab_ratio(z, n), starts, bounds)


@dataclass
class ConstantsLedger:
    """Constants for one ``(n, lam, Lam)`` with provenance tags.

    ``c0`` is stored as ``log c0``.  Closed-form entries depend only on
    ``(n, lam, Lam, nu0)``; empirical entries are supplied by the caller
    (usually from the decay and homogeneity suites) or measured here.
    """

    n: int
    lam: float
    Lam: float
    c_practical: float = 1e-2
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n = check_dimension(self.n)
        self.lam, self.Lam = check_ellipticity(self.lam, self.Lam)
        self._closed_form()

    def _closed_form(self):
        n, lam, Lam = self.n, self.lam, self.Lam
        self.add("c0", constant_c0(n, lam, Lam), CLOSED_FORM, log_space=True,
                 note="stored as log c0; experiments use c_practical")
        self.add("c2", constant_c2(n, lam, Lam), CLOSED_FORM)
        self.add("eta2", eta2(n), CLOSED_FORM)

    def add(self, name, value, provenance, log_space=False, note=""):
        if provenance not in (CLOSED_FORM, EMPIRICAL):
            raise ValueError(f"unknown provenance {provenance!r}")
        self.entries[name] = LedgerEntry(name, float(value), provenance, log_space, note)
        return self

    def set_nu0(self, nu0, note="1 - max oscillation ratio over the decay suite"):
        self.add("nu0", nu0, EMPIRICAL, note=note)
        self.add("alpha0", constant_alpha0(nu0), CLOSED_FORM, note="from the empirical nu0")
        return self

    def measure_geometry(self, instances=1000, seed=0):
        self.add("eta0", measure_eta0(self.n, instances, seed), EMPIRICAL,
                 note=f"polished minimum over {instances} random inputs, seed {seed}")
        self.add("eta1", measure_eta1(self.n, instances, seed), EMPIRICAL,
                 note=f"polished minimum over {instances} random vertex pairs, seed {seed}")
        return self

    def __getitem__(self, name):
        return self.entries[name]

    def __contains__(self, name):
        return name in self.entries

    def rows(self):
        meta = {"n": self.n, "lambda": self.lam, "Lambda": self.Lam, "c_practical": self.c_practical}
        return [{**meta, **asdict(e)} for e in self.entries.values()]

    def to_dict(self):
        return {
            "n": self.n, "lambda": self.lam, "Lambda": self.Lam, "c_practical": self.c_practical,
            "entries": {k: asdict(e) for k, e in self.entries.items()},
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def relative_spread(values):
    """``(max - min) / mean`` of positive measurements."""
    v = np.asarray(values, dtype=float)
    return float((v.max() - v.min()) / v.mean())
