"""Parabolic balls, cylinders, intersection constructions and a Vitali-type cover.

A parabolic ball of opening ``theta`` and height ``T`` with vertex ``(x0, t0)`` is

* up:   ``theta |x - x0|^2 <= t - t0 <= T``
* down: ``theta |x - x0|^2 <= t0 - t <= T``

Everything here is immutable; batch predicates take spatial points of shape
``(m, n)`` and times of shape ``(m,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import (
    DomainError,
    as_points,
    as_vector,
    check_dimension,
    check_positive,
    rng_from,
)

GAMMA = (math.sqrt(2.0) - 1.0) / 4.0
HAT_FACTOR = (math.sqrt(2.0) + 1.0) ** 2
SLAB_VERTEX_RADIUS = 11.0 / 24.0


def unit_ball_volume(n):
    """Lebesgue measure of the unit ball in R^n."""
    return math.pi ** (n / 2.0) / math.gamma(n / 2.0 + 1.0)


def eta2(n):
    """Volume ratio between a parabolic ball and its hat."""
    return 4.0 ** (-(1.0 + n / 2.0)) * (math.sqrt(2.0) + 1.0) ** (-n)


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple
    t: float

    def __post_init__(self):
        x = tuple(float(v) for v in as_vector(self.x, name="x"))
        check_dimension(len(x))
        if not math.isfinite(float(self.t)):
            raise DomainError("t must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self):
        return len(self.x)

    @property
    def xa(self):
        return np.array(self.x)


def _point(p, t=None):
    if isinstance(p, SpaceTimePoint):
        return p
    if t is None:
        x, t = p
        return SpaceTimePoint(x, t)
    return SpaceTimePoint(p, t)


def _uniform_unit_ball(rng, m, n):
    g = rng.standard_normal((m, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random((m, 1)) ** (1.0 / n)


@dataclass(frozen=True)
class ParabolicBall:
    """``PB^{theta}_T`` (``orientation='up'``) or ``PB^{-theta}_T`` (``'down'``)."""

    vertex: SpaceTimePoint
    T: float
    theta: float
    orientation: str = "up"

    def __post_init__(self):
        object.__setattr__(self, "vertex", _point(self.vertex))
        object.__setattr__(self, "T", check_positive(self.T, "T"))
        object.__setattr__(self, "theta", check_positive(self.theta, "theta"))
        if self.orientation not in ("up", "down"):
            raise DomainError(f"orientation must be 'up' or 'down', got {self.orientation!r}")

    @property
    def n(self):
        return self.vertex.n

    @property
    def sign(self):
        return 1.0 if self.orientation == "up" else -1.0

    @property
    def volume(self):
        return pb_volume(self)

    @property
    def time_range(self):
        t0 = self.vertex.t
        return (t0, t0 + self.T) if self.orientation == "up" else (t0 - self.T, t0)

    def radius_at(self, t):
        """Spatial radius of the slice at time ``t`` (NaN outside the time range)."""
        depth = self.sign * (np.asarray(t, dtype=float) - self.vertex.t)
        ok = (depth >= 0) & (depth <= self.T)
        return np.where(ok, np.sqrt(np.clip(depth, 0, None) / self.theta), np.nan)

    def contains(self, X, T, tol=0.0):
        X = as_points(X, self.n)
        T = np.asarray(T, dtype=float).reshape(-1)
        depth = self.sign * (T - self.vertex.t)
        dist2 = np.sum((X - self.vertex.xa) ** 2, axis=1)
        return (self.theta * dist2 <= depth + tol) & (depth <= self.T + tol)

    def bounding_box(self):
        R = math.sqrt(self.T / self.theta)
        lo, hi = self.time_range
        x = self.vertex.xa
        return np.r_[x - R, lo], np.r_[x + R, hi]

    def sample(self, m, seed=None):
        """Draw ``m`` points uniformly from the ball (exact, no rejection)."""
        rng = rng_from(seed)
        depth = self.T * rng.random(m) ** (1.0 / (1.0 + self.n / 2.0))
        X = self.vertex.xa + np.sqrt(depth / self.theta)[:, None] * _uniform_unit_ball(rng, m, self.n)
        return X, self.vertex.t + self.sign * depth


@dataclass(frozen=True)
class Cylinder:
    """``Q_r(x, t) = B_r(x) x (t - r^2, t]``; membership uses the closure."""

    center: tuple
    top_time: float
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in as_vector(self.center, name="center"))
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "top_time", float(self.top_time))
        object.__setattr__(self, "radius", check_positive(self.radius, "radius"))

    @property
    def n(self):
        return len(self.center)

    @property
    def volume(self):
        return unit_ball_volume(self.n) * self.radius ** (self.n + 2)

    def contains(self, X, T, tol=0.0):
        X = as_points(X, self.n)
        T = np.asarray(T, dtype=float).reshape(-1)
        r = self.radius
        dist2 = np.sum((X - np.array(self.center)) ** 2, axis=1)
        return (dist2 <= r * r + tol) & (T <= self.top_time + tol) & (T >= self.top_time - r * r - tol)

    def bounding_box(self):
        c = np.array(self.center)
        return np.r_[c - self.radius, self.top_time - self.radius**2], np.r_[c + self.radius, self.top_time]

    def sample(self, m, seed=None):
        rng = rng_from(seed)
        X = np.array(self.center) + self.radius * _uniform_unit_ball(rng, m, self.n)
        return X, self.top_time - self.radius**2 * rng.random(m)


@dataclass(frozen=True)
class Slab:
    """``B_rho(center) x [t_bottom, t_top]`` together with the lens data it came from."""

    center: tuple
    radius: float
    t_bottom: float
    t_top: float
    lens_radius: float = field(default=float("nan"))
    height: float = field(default=float("nan"))

    @property
    def n(self):
        return len(self.center)

    @property
    def volume(self):
        return unit_ball_volume(self.n) * self.radius**self.n * (self.t_top - self.t_bottom)

    def contains(self, X, T, tol=0.0):
        X = as_points(X, self.n)
        T = np.asarray(T, dtype=float).reshape(-1)
        dist2 = np.sum((X - np.array(self.center)) ** 2, axis=1)
        return (dist2 <= self.radius**2 + tol) & (T >= self.t_bottom - tol) & (T <= self.t_top + tol)

    def sample(self, m, seed=None):
        rng = rng_from(seed)
        X = np.array(self.center) + self.radius * _uniform_unit_ball(rng, m, self.n)
        return X, self.t_bottom + (self.t_top - self.t_bottom) * rng.random(m)


def pb_volume(ball):
    """``2 w_n / (n + 2) * T^(1 + n/2) * theta^(-n/2)``."""
    n = ball.n
    return 2.0 * unit_ball_volume(n) / (n + 2.0) * ball.T ** (1.0 + n / 2.0) * ball.theta ** (-n / 2.0)


def pb_contains(ball, p):
    p = _point(p)
    if p.n != ball.n:
        raise DomainError("dimension mismatch")
    return bool(ball.contains(p.xa[None, :], [p.t])[0])


def hat(ball):
    """The dilated ball ``PB^{theta/(sqrt2+1)^2}_{4T}(x, t - 3T)`` of an up-ball."""
    if ball.orientation != "up":
        raise DomainError("hat is defined for up-balls only")
    v = ball.vertex
    return ParabolicBall(SpaceTimePoint(v.x, v.t - 3.0 * ball.T), 4.0 * ball.T, ball.theta / HAT_FACTOR, "up")


def min_opening(x, t):
    """Smallest ``theta`` with ``PB^{-theta}_{1+t}(x, t)`` inside the closed unit cylinder."""
    x = as_vector(x)
    nx = float(np.linalg.norm(x))
    if nx >= 1.0:
        raise DomainError(f"|x| must be < 1, got {nx}")
    if not -1.0 < t <= 0.0:
        raise DomainError(f"t must lie in (-1, 0], got {t}")
    return (1.0 + t) / (1.0 - nx) ** 2


def min_opening_ball(x, t):
    x = as_vector(x)
    return ParabolicBall(SpaceTimePoint(x, t), 1.0 + t, min_opening(x, t), "down")


def _inscribed_lens_ball(c0, r0, c1, r1):
    """Largest ball inside ``B_r0(c0) ∩ B_r1(c1)`` (center, radius)."""
    d = float(np.linalg.norm(c1 - c0))
    if d + r1 <= r0:
        return c1.copy(), r1
    if d + r0 <= r1:
        return c0.copy(), r0
    r2 = 0.5 * (r0 + r1 - d)
    if r2 <= 0:
        raise DomainError("slices do not intersect")
    return c0 + (r0 - r2) / d * (c1 - c0), r2


def intersection_cylinder(pb_down, p1, T):
    """Cylinder inside ``pb_down ∩ PB^theta_T(p1)`` with radius at least ``GAMMA sqrt(T/theta)``.

    The construction works in coordinates where the vertex gap ``t0 - t1``
    is one: it takes the two spatial slices at the midpoint time
    ``t1 + T/2`` (the up-ball slice evaluated a quarter of the way up, so the
    whole cylinder fits), and inscribes the largest ball in their overlap.
    """
    if pb_down.orientation != "down":
        raise DomainError("pb_down must be a down-ball")
    p1 = _point(p1)
    theta = pb_down.theta
    if theta < 0.75:
        raise DomainError(f"opening must be >= 3/4, got {theta}")
    if not pb_contains(pb_down, p1):
        raise DomainError("p1 must lie in pb_down")
    L = pb_down.vertex.t - p1.t
    if not 0 < T <= L:
        raise DomainError(f"need 0 < T <= t0 - t1 = {L}, got {T}")
    Ts = T / L
    x0 = pb_down.vertex.xa
    rel = (p1.xa - x0) / math.sqrt(L)
    r0 = math.sqrt((1.0 - Ts / 2.0) / theta)
    r1 = math.sqrt(Ts / (4.0 * theta))
    c2, r2 = _inscribed_lens_ball(np.zeros_like(rel), r0, rel, r1)
    r = min(r2, math.sqrt(Ts) / 2.0)
    return Cylinder(x0 + math.sqrt(L) * c2, p1.t + T / 2.0, math.sqrt(L) * r)


def cylinder_radius_bound(T, theta):
    """Guaranteed lower bound on the radius returned by :func:`intersection_cylinder`."""
    return GAMMA * math.sqrt(T / theta)


def vertex_localization_violations(cyl, samples, seed=None, opening=0.5):
    """Sampled test that vertex-ball-launched up-balls stay in ``cyl``.

    For ``(y0, s0)`` in ``Q_{r/4}`` of the cylinder, ``(y, s)`` in
    ``PB^{-opening}_{r^2/16}(y0, s0 - r^2/16)`` and ``(xi, tau)`` in
    ``PB^{opening}_{s0 - s}(y, s)``, check ``(xi, tau)`` in ``cyl``.

    Returns
    -------
    count : int
        Number of sampled triples whose last point leaves the cylinder.
    worst : float
        Largest ``|xi - center| / r`` observed (``<= 1`` means inside).
    """
    rng = rng_from(seed)
    n, r = cyl.n, cyl.radius
    inner = Cylinder(cyl.center, cyl.top_time, r / 4.0)
    y0, s0 = inner.sample(samples, rng)
    h = r * r / 16.0
    depth = h * rng.random(samples) ** (1.0 / (1.0 + n / 2.0))
    y = y0 + np.sqrt(depth / opening)[:, None] * _uniform_unit_ball(rng, samples, n)
    s = s0 - h - depth
    height = s0 - s
    up = height * rng.random(samples) ** (1.0 / (1.0 + n / 2.0))
    xi = y + np.sqrt(up / opening)[:, None] * _uniform_unit_ball(rng, samples, n)
    tau = s + up
    inside = cyl.contains(xi, tau, tol=1e-12)
    worst = float(np.max(np.linalg.norm(xi - np.array(cyl.center), axis=1)) / r)
    return int(np.count_nonzero(~inside)), worst


def common_slab(pb0, pb1):
    """Slab ``B_{r/2}(x2) x [-1, -1 + s]`` inside two minimal-opening down-balls.

    Returns
    -------
    slab : Slab
        ``slab.lens_radius`` is ``r`` and ``slab.height`` is ``s``.
    volume : float
    """
    balls = (pb0, pb1)
    radii = []
    for b in balls:
        x, t = b.vertex.xa, b.vertex.t
        if b.orientation != "down":
            raise DomainError("common_slab expects down-balls")
        if np.linalg.norm(x) > SLAB_VERTEX_RADIUS + 1e-12 or not -SLAB_VERTEX_RADIUS**2 - 1e-12 <= t <= 0:
            raise DomainError("vertices must lie in the closed cylinder of radius 11/24")
        theta = min_opening(x, t)
        if not (math.isclose(b.theta, theta, rel_tol=1e-12) and math.isclose(b.T, 1 + t, rel_tol=1e-12)):
            raise DomainError("balls must be minimal-opening balls")
        radii.append(1.0 - float(np.linalg.norm(x)))
    x0, x1 = pb0.vertex.xa, pb1.vertex.xa
    if np.linalg.norm(x1 - x0) < 1e-15:
        x2, r = x0.copy(), radii[0]
    else:
        x2, r = _inscribed_lens_ball(x0, radii[0], x1, radii[1])
    s = min(
        (1.0 + b.vertex.t) * (1.0 - ((np.linalg.norm(x2 - b.vertex.xa) + r / 2.0) / ri) ** 2)
        for b, ri in zip(balls, radii)
    )
    slab = Slab(tuple(x2), r / 2.0, -1.0, -1.0 + s, lens_radius=r, height=s)
    return slab, slab.volume


def _gap_at_top(b1, b2):
    lo = max(b1.vertex.t, b2.vertex.t)
    hi = min(b1.vertex.t + b1.T, b2.vertex.t + b2.T)
    d = float(np.linalg.norm(b1.vertex.xa - b2.vertex.xa))
    if hi < lo:
        return lo - hi, lo, hi, d
    reach = math.sqrt((hi - b1.vertex.t) / b1.theta) + math.sqrt((hi - b2.vertex.t) / b2.theta)
    return d - reach, lo, hi, d


def balls_intersect(b1, b2, tol=1e-9):
    """Exact intersection test for two closed up-balls.

    Slice radii grow with time, so the balls meet iff their slices meet at the
    latest common time.  Near-tangent cases (``|gap| <= tol``) are settled by
    sampling the common time window at resolution 1/256.
    """
    if b1.orientation != "up" or b2.orientation != "up":
        raise DomainError("intersection test expects up-balls")
    gap, lo, hi, d = _gap_at_top(b1, b2)
    if abs(gap) > tol:
        return gap < 0
    if hi < lo:
        return True
    ts = np.unique(np.r_[np.arange(lo, hi, 1.0 / 256.0), hi])
    reach = np.sqrt((ts - b1.vertex.t) / b1.theta) + np.sqrt((ts - b2.vertex.t) / b2.theta)
    return bool(np.any(d <= reach + tol))


def balls_disjoint(b1, b2, tol=1e-9):
    return not balls_intersect(b1, b2, tol)


def height_class(T, T0):
    """Dyadic class ``k`` with ``T`` in ``(2^-(k+1) T0, 2^-k T0]``."""
    k = int(math.floor(math.log2(T0 / T)))
    while T <= T0 * 2.0 ** (-(k + 1)):
        k += 1
    while k > 0 and T > T0 * 2.0 ** (-k):
        k -= 1
    return k


def vitali_cover(points, heights, theta):
    """Greedy disjoint sub-collection of up-balls whose hats cover ``points``.

    Parameters
    ----------
    points : sequence of SpaceTimePoint, or array of shape (m, n + 1)
        Rows are ``(x_1, ..., x_n, t)``.
    heights : array of shape (m,)
    theta : float

    Returns
    -------
    list of ParabolicBall
        Selected balls in selection order.
    """
    return VitaliCover(theta=theta).fit(points, heights).balls_


class VitaliCover(BaseEstimator):
    """Estimator wrapper of :func:`vitali_cover`.

    ``fit(X, heights)`` selects balls; ``predict(X)`` returns, for each
    point, the index of the first selected ball whose hat contains it
    (``-1`` when none does).
    """

    def __init__(self, theta=1.0):
        self.theta = theta

    @staticmethod
    def _as_rows(points):
        if len(points) and isinstance(points[0], SpaceTimePoint):
            return np.array([list(p.x) + [p.t] for p in points], dtype=float)
        arr = np.asarray(points, dtype=float)
        return arr.reshape(0, 2) if arr.size == 0 else np.atleast_2d(arr)

    def fit(self, X, heights):
        theta = check_positive(self.theta, "theta")
        rows = self._as_rows(X)
        heights = np.asarray(heights, dtype=float).reshape(-1)
        if rows.shape[0] != heights.shape[0]:
            raise DomainError("points and heights must have the same length")
        self.selected_indices_ = []
        self.balls_ = []
        if rows.shape[0] == 0:
            return self
        if np.any(~(heights > 0)) or not np.all(np.isfinite(heights)):
            raise DomainError("heights must be positive and finite")
        T0 = float(heights.max())
        classes = np.array([height_class(T, T0) for T in heights])
        for k in np.unique(classes):
            for i in np.flatnonzero(classes == k):
                ball = ParabolicBall(SpaceTimePoint(rows[i, :-1], rows[i, -1]), heights[i], theta, "up")
                if all(balls_disjoint(ball, b) for b in self.balls_):
                    self.balls_.append(ball)
                    self.selected_indices_.append(int(i))
        return self

    def predict(self, X):
        rows = self._as_rows(X)
        out = np.full(rows.shape[0], -1, dtype=int)
        for j, b in enumerate(self.balls_):
            hit = hat(b).contains(rows[:, :-1], rows[:, -1], tol=1e-12) & (out < 0)
            out[hit] = j
        return out


@dataclass(frozen=True)
class MeasureResult:
    measure: float
    error_bound: float
    resolution: float


def _check_bbox(bbox):
    lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in bbox)
    if lo.shape != hi.shape or lo.size < 2:
        raise DomainError("bounding box must be (lower, upper) of length n + 1")
    if np.any(~(hi > lo)) or not np.all(np.isfinite(np.r_[lo, hi])):
        raise DomainError("degenerate bounding box")
    return lo, hi


def region_measure(predicate, bbox, resolution=1.0 / 128.0):
    """Cell-counting measure of ``{(x, t) in bbox : predicate(X, T)}``.

    Cells tile the box exactly (``ceil(width / resolution)`` per axis) and are
    classified by their centers.  ``error_bound`` is the total volume of cells
    whose classification differs from an axis neighbour.

    Parameters
    ----------
    predicate : callable
        ``predicate(X, T) -> bool array`` with ``X`` of shape ``(m, n)``.
    bbox : (array, array)
        Lower and upper corners ``(x_1, ..., x_n, t)``.
    resolution : float
    """
    check_positive(resolution, "resolution")
    lo, hi = _check_bbox(bbox)
    counts = np.maximum(1, np.ceil((hi - lo) / resolution - 1e-9).astype(int))
    steps = (hi - lo) / counts
    cell = float(np.prod(steps))
    n = lo.size - 1
    axes = [lo[j] + (np.arange(counts[j]) + 0.5) * steps[j] for j in range(n)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    shape = tuple(counts[:n])
    total = 0
    boundary = np.zeros(shape, dtype=bool)
    nb = 0
    prev = None
    for k in range(counts[n]):
        t = lo[n] + (k + 0.5) * steps[n]
        cur = np.asarray(predicate(X, np.full(X.shape[0], t)), dtype=bool).reshape(shape)
        total += int(np.count_nonzero(cur))
        boundary[...] = False
        for ax in range(n):
            diff = np.diff(cur, axis=ax)
            lo_sl = [slice(None)] * n
            hi_sl = [slice(None)] * n
            lo_sl[ax], hi_sl[ax] = slice(0, -1), slice(1, None)
            boundary[tuple(lo_sl)] |= diff
            boundary[tuple(hi_sl)] |= diff
        if prev is not None:
            boundary |= cur != prev
        nb += int(np.count_nonzero(boundary))
        prev = cur
    return MeasureResult(total * cell, nb * cell, float(resolution))


def monte_carlo_measure(predicate, bbox, samples=10**6, seed=None, chunk=250_000):
    """Monte Carlo estimate ``(measure, standard_error)`` over a bounding box."""
    lo, hi = _check_bbox(bbox)
    rng = rng_from(seed)
    n = lo.size - 1
    hits = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        P = lo + (hi - lo) * rng.random((m, n + 1))
        hits += int(np.count_nonzero(predicate(P[:, :n], P[:, n])))
        done += m
    box = float(np.prod(hi - lo))
    p = hits / samples
    return box * p, box * math.sqrt(max(p * (1 - p), 0.0) / samples)
