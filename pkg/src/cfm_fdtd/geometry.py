"""Parametric embedded boundaries and point classification.

Every curve is closed and parametrized over ``param_range``.  The unit normal
returned by :meth:`BoundaryCurve.unit_normal` always points toward the Plus
region, whichever side that is.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss


class Orientation(enum.Enum):
    PLUS_INSIDE = "plus_inside"
    PLUS_OUTSIDE = "plus_outside"


class Region(enum.IntEnum):
    MINUS = 0
    PLUS = 1


class GeometryError(ValueError):
    pass


class BoundaryCurve:
    """Closed curve with a Plus side.

    Subclasses provide ``_point``, ``_tangent``, ``_contains`` (strict
    interior test), ``distance`` and ``breakpoints``.
    """

    orientation: Orientation
    param_range: tuple[float, float]

    # -- to be provided by subclasses -------------------------------------
    def _point(self, s):
        raise NotImplementedError

    def _tangent(self, s):
        raise NotImplementedError

    def _contains(self, x, y):
        raise NotImplementedError

    def distance(self, x, y):
        raise NotImplementedError

    @property
    def breakpoints(self) -> np.ndarray:
        """Parameters where the tangent may jump, including both ends."""
        return np.array(self.param_range, dtype=float)

    @property
    def diameter(self) -> float:
        raise NotImplementedError

    # -- public API --------------------------------------------------------
    def _check_param(self, s):
        s = np.asarray(s, dtype=float)
        sa, sb = self.param_range
        span = sb - sa
        if np.any(s < sa - 1e-14 * span) or np.any(s > sb + 1e-14 * span):
            raise GeometryError(f"parameter outside [{sa}, {sb}]")
        return np.clip(s, sa, sb)

    def eval_point(self, s) -> np.ndarray:
        """Point(s) on the curve, shape ``s.shape + (2,)``."""
        return self._point(self._check_param(s))

    def tangent(self, s) -> np.ndarray:
        """d(point)/ds (not normalized)."""
        return self._tangent(self._check_param(s))

    def speed(self, s) -> np.ndarray:
        return np.linalg.norm(self.tangent(s), axis=-1)

    def unit_normal(self, s) -> np.ndarray:
        # curves run counter-clockwise, so the left normal points inward
        t = self.tangent(s)
        n = np.stack([-t[..., 1], t[..., 0]], axis=-1)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        if self.orientation is Orientation.PLUS_OUTSIDE:
            n = -n
        return n

    def classify_xy(self, x, y) -> np.ndarray:
        """Boolean array, True where (x, y) is in the Plus region.

        Points on the curve (within 1e-12 of the diameter) count as Plus.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = self._contains(x, y)
        plus = inside if self.orientation is Orientation.PLUS_INSIDE else ~inside
        on_curve = self.distance(x, y) <= 1e-12 * self.diameter
        return plus | on_curve

    def classify(self, point) -> Region:
        p = np.asarray(point, dtype=float)
        return Region.PLUS if bool(self.classify_xy(p[0], p[1])) else Region.MINUS

    def arc_length(self, n_gauss: int = 20, pieces: int = 64) -> float:
        """Composite Gauss-Legendre quadrature of the curve speed."""
        xg, wg = leggauss(n_gauss)
        total = 0.0
        bp = self.breakpoints
        for a, b in zip(bp[:-1], bp[1:]):
            edges = np.linspace(a, b, pieces + 1)
            lo, hi = edges[:-1, None], edges[1:, None]
            s = 0.5 * (hi - lo) * xg + 0.5 * (hi + lo)
            total += float(np.sum(0.5 * (hi - lo) * wg * self.speed(s)))
        return total

    def boundary_segments_in_box(self, center, half_side: float,
                                 samples_per_half: int = 8) -> list[tuple[float, float]]:
        """Parameter subintervals whose points lie in the closed square box.

        Subintervals never straddle a breakpoint, so each one maps to a smooth
        piece of the curve.  Interval ends are located by bisection.
        """
        if half_side <= 0:
            raise GeometryError("box side must be positive")
        cx, cy = float(center[0]), float(center[1])
        sa, sb = self.param_range
        tol = 1e-12 * (sb - sa)

        def in_box(s):
            p = self._point(s)
            return (np.abs(p[..., 0] - cx) <= half_side) & (np.abs(p[..., 1] - cy) <= half_side)

        def bisect(lo, hi, lo_inside):
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if bool(in_box(np.array(mid))) == lo_inside:
                    lo = mid
                else:
                    hi = mid
            return lo if lo_inside else hi

        out = []
        bp = self.breakpoints
        for a, b in zip(bp[:-1], bp[1:]):
            piece_len = float(np.sum(self.speed(np.linspace(a, b, 9)))) / 9 * (b - a)
            n = max(16, int(math.ceil(samples_per_half * piece_len / half_side)) + 1)
            s = np.linspace(a, b, n)
            inside = in_box(s)
            if not inside.any():
                continue
            start = a if inside[0] else None
            for i in range(1, n):
                if inside[i] and not inside[i - 1]:
                    start = bisect(s[i - 1], s[i], False)
                elif not inside[i] and inside[i - 1]:
                    end = bisect(s[i - 1], s[i], True)
                    out.append((start, end))
                    start = None
            if start is not None:
                out.append((start, b))
        return [(lo, hi) for lo, hi in out if hi > lo]


@dataclass(frozen=True)
class Circle(BoundaryCurve):
    center: tuple[float, float]
    radius: float
    orientation: Orientation = Orientation.PLUS_INSIDE

    @property
    def param_range(self):
        return (0.0, 2.0 * math.pi)

    @property
    def diameter(self):
        return 2.0 * self.radius

    def _point(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([self.center[0] + self.radius * np.cos(s),
                         self.center[1] + self.radius * np.sin(s)], axis=-1)

    def _tangent(self, s):
        s = np.asarray(s, dtype=float)
        return np.stack([-self.radius * np.sin(s), self.radius * np.cos(s)], axis=-1)

    def _rho(self, x, y):
        return np.hypot(x - self.center[0], y - self.center[1])

    def _contains(self, x, y):
        return self._rho(x, y) < self.radius

    def distance(self, x, y):
        return np.abs(self._rho(x, y) - self.radius)


@dataclass(frozen=True, eq=False)
class Polygon(BoundaryCurve):
    """Counter-clockwise polygon, arc-length-proportional parameter in [0, 1]."""

    vertices: np.ndarray = field(repr=False)
    orientation: Orientation = Orientation.PLUS_INSIDE

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        # signed area must be positive for the inward-normal convention
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if area < 0:
            v = v[::-1].copy()
        object.__setattr__(self, "vertices", v)
        edges = np.roll(v, -1, axis=0) - v
        lengths = np.linalg.norm(edges, axis=1)
        object.__setattr__(self, "_edges", edges)
        object.__setattr__(self, "_lengths", lengths)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(lengths)]) / lengths.sum())

    @property
    def param_range(self):
        return (0.0, 1.0)

    @property
    def perimeter(self) -> float:
        return float(self._lengths.sum())

    @property
    def breakpoints(self):
        return self._cum.copy()

    @property
    def diameter(self):
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None, :] - v[None, :, :], axis=-1)))

    def _edge_index(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self._cum, s, side="right") - 1
        return np.clip(idx, 0, len(self._lengths) - 1)

    def _point(self, s):
        s = np.asarray(s, dtype=float)
        i = self._edge_index(s)
        frac = (s - self._cum[i]) / (self._cum[i + 1] - self._cum[i])
        return self.vertices[i] + frac[..., None] * self._edges[i]

    def _tangent(self, s):
        i = self._edge_index(s)
        return self._edges[i] * self.perimeter / self._lengths[i][..., None]

    def _contains(self, x, y):
        # crossing-number test
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for (x0, y0), (x1, y1) in zip(v, w):
            cond = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= cond & (x < xint)
        return inside

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        best = np.full(np.broadcast(x, y).shape, np.inf)
        for p, e, L in zip(self.vertices, self._edges, self._lengths):
            t = np.clip(((x - p[0]) * e[0] + (y - p[1]) * e[1]) / L**2, 0.0, 1.0)
            d = np.hypot(x - p[0] - t * e[0], y - p[1] - t * e[1])
            best = np.minimum(best, d)
        return best


def square(center=(0.0, 0.0), side=1.0, orientation=Orientation.PLUS_INSIDE) -> Polygon:
    """Axis-aligned square; s=0 is the midpoint of the right edge, corners at s=1/8+m/4."""
    cx, cy = center
    a = 0.5 * side
    v = np.array([[cx + a, cy], [cx + a, cy + a], [cx - a, cy + a],
                  [cx - a, cy - a], [cx + a, cy - a]])
    return Polygon(v, orientation)


def star(center=(0.0, 0.0), n_points=5, r_outer=1.0, r_inner=0.5, phase=0.0,
         orientation=Orientation.PLUS_OUTSIDE) -> Polygon:
    """Star polygon with alternating outer/inner vertices; s=0 is the first tip."""
    if n_points < 2 or not 0 < r_inner < r_outer:
        raise GeometryError("star needs n_points >= 2 and 0 < r_inner < r_outer")
    ang = phase + np.arange(2 * n_points) * math.pi / n_points
    r = np.where(np.arange(2 * n_points) % 2 == 0, r_outer, r_inner)
    v = np.stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)], axis=1)
    return Polygon(v, orientation)


def annulus(center=(0.0, 0.0), r_inner=1.0 / 3.0, r_outer=1.0) -> list[BoundaryCurve]:
    """Plus region between two concentric circles, as two independent curves."""
    return [Circle(center, r_inner, Orientation.PLUS_OUTSIDE),
            Circle(center, r_outer, Orientation.PLUS_INSIDE)]


def classify_points(curves, x, y) -> np.ndarray:
    """Plus iff every curve puts the point on its Plus side."""
    plus = np.ones(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)
    for c in curves:
        plus &= c.classify_xy(x, y)
    return plus
