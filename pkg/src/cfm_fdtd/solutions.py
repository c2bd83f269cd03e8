"""Problem catalog: analytic, manufactured and pulsed-wave TM_z fields."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.optimize
import scipy.special

from .geometry import BoundaryCurve, Circle, Orientation, annulus, square, star


class InitMode(enum.Enum):
    ANALYTIC_HISTORY = "analytic"
    PULSE_HISTORY = "pulse"
    QUIESCENT_NEAR_GAMMA = "quiescent"


class ProblemError(ValueError):
    pass


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def bessel(kind: str, order: int, x):
    """Bessel function of the first (``"J"``) or second (``"Y"``) kind."""
    x = np.asarray(x, dtype=float)
    if kind == "J":
        return scipy.special.jv(order, x)
    if kind == "Y":
        if np.any(x <= 0):
            raise ProblemError("Y_n is only defined for x > 0")
        return scipy.special.yv(order, x)
    raise ProblemError(f"unknown Bessel kind {kind!r}")


@lru_cache(maxsize=None)
def bessel_root(order: int, index: int) -> float:
    """``index``-th positive root of J_order, by sign-change scan and Brent."""
    if order < 0 or index < 1:
        raise ProblemError("need order >= 0 and index >= 1")
    f = lambda x: scipy.special.jv(order, x)
    # roots are spaced by roughly pi; scan finely enough to never skip one
    step = 0.1
    a = 1e-6 if order == 0 else float(order)
    # J_n has no positive root below n for n >= 1
    fa, found = f(a), 0
    while True:
        b = a + step
        fb = f(b)
        if fa == 0.0:
            found += 1
            if found == index:
                return a
        elif fa * fb < 0:
            found += 1
            if found == index:
                return scipy.optimize.brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        a, fa = b, fb


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

FieldFn = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass
class ProblemSpec:
    """A TM_z test problem.

    ``fields`` maps ``"hx"``, ``"hy"``, ``"ez"`` to ``f(x, y, t)``; they give
    the exact Plus-side solution when ``exact`` is True, otherwise only the
    free-space data used to start the run (pulsed waves).  ``gamma_data`` is
    ``g(points, normals, t) -> (n, 2)`` array of (E_z, n.H) targets on the
    boundary, or None for a homogeneous PEC.
    """

    name: str
    domain: tuple
    curves: list
    eps: float = 1.0
    mu: float = 1.0
    t_final: float = 0.5
    dt_ratio: float = 0.5
    beta: float = 7.0
    init_mode: InitMode = InitMode.ANALYTIC_HISTORY
    fields: dict = field(default_factory=dict)
    exact: bool = True
    gamma_data: Callable | None = None
    period: float | None = None
    params: dict = field(default_factory=dict)

    def field(self, family, x, y, t):
        if family not in self.fields:
            raise ProblemError(f"{self.name}: no data for {family}")
        return np.asarray(self.fields[family](x, y, t), dtype=float) * np.ones(np.shape(x))

    def has_history(self):
        return bool(self.fields)


def _polar(x, y, center=(0.0, 0.0)):
    dx, dy = np.asarray(x) - center[0], np.asarray(y) - center[1]
    return np.hypot(dx, dy), np.arctan2(dy, dx)


def _safe_rho(rho):
    return np.where(rho > 0, rho, 1e-300)


def circular_cavity(i: int = 6, j: int = 2, radius: float = 1.0) -> ProblemSpec:
    if i < 1 or j < 1:
        raise ProblemError("circular cavity needs i >= 1 and j >= 1")
    a = bessel_root(i, j) / radius

    def h_polar(x, y, t):
        rho, phi = _polar(x, y)
        r = a * rho
        h_rho = i / (a * _safe_rho(rho)) * scipy.special.jv(i, r) * np.sin(i * phi) * np.sin(a * t)
        h_phi = 0.5 * (scipy.special.jv(i - 1, r) - scipy.special.jv(i + 1, r)) * np.cos(i * phi) * np.sin(a * t)
        return h_rho, h_phi, phi

    def hx(x, y, t):
        h_rho, h_phi, phi = h_polar(x, y, t)
        return h_rho * np.cos(phi) - h_phi * np.sin(phi)

    def hy(x, y, t):
        h_rho, h_phi, phi = h_polar(x, y, t)
        return h_rho * np.sin(phi) + h_phi * np.cos(phi)

    def ez(x, y, t):
        rho, phi = _polar(x, y)
        return scipy.special.jv(i, a * rho) * np.cos(i * phi) * np.cos(a * t)

    return ProblemSpec("circular_cavity", (-1.25, 1.25, -1.25, 1.25),
                       [Circle((0.0, 0.0), radius, Orientation.PLUS_INSIDE)],
                       t_final=0.5, dt_ratio=0.5, beta=7.0,
                       fields={"hx": hx, "hy": hy, "ez": ez},
                       period=2 * math.pi / a, params={"i": i, "j": j, "alpha_ij": a})


def square_cavity(m: int = 4, n: int = 4) -> ProblemSpec:
    # E_z must vanish on x, y = +-1/2, so it carries sin in both directions
    if m < 1 or n < 1:
        raise ProblemError("square cavity needs m, n >= 1")
    w = math.pi * math.sqrt(m * m + n * n)
    p = math.pi

    def hx(x, y, t):
        return -(p * n / w) * np.sin(m * p * x) * np.cos(n * p * y) * np.sin(w * t)

    def hy(x, y, t):
        return (p * m / w) * np.cos(m * p * x) * np.sin(n * p * y) * np.sin(w * t)

    def ez(x, y, t):
        return np.sin(m * p * x) * np.sin(n * p * y) * np.cos(w * t)

    return ProblemSpec("square_cavity", (-0.75, 0.75, -0.75, 0.75),
                       [square((0.0, 0.0), 1.0, Orientation.PLUS_INSIDE)],
                       t_final=0.5, dt_ratio=0.5, beta=7.0,
                       fields={"hx": hx, "hy": hy, "ez": ez},
                       period=2 * math.pi / w, params={"m": m, "n": n, "omega": w})


CONCENTRIC_ALPHA = 1.76368380110927
CONCENTRIC_OMEGA = 9.813695999428405


def concentric_cylinders() -> ProblemSpec:
    a, w = CONCENTRIC_ALPHA, CONCENTRIC_OMEGA
    jv, yv = scipy.special.jv, scipy.special.yv

    def parts(x, y, t):
        rho, phi = _polar(x, y)
        r = _safe_rho(rho)
        z = 0.5 * w * r
        rad1 = jv(1, z) + a * yv(1, z)
        rad02 = jv(0, z) - jv(2, z) + a * yv(0, z) - a * yv(2, z)
        return r, phi, rad1, rad02

    def hx(x, y, t):
        r, phi, rad1, rad02 = parts(x, y, t)
        return (-0.5 * np.sin(w * t + phi) * np.sin(phi) * rad02
                - 2 * np.cos(phi) / (w * r) * np.cos(w * t + phi) * rad1)

    def hy(x, y, t):
        r, phi, rad1, rad02 = parts(x, y, t)
        return (0.5 * np.sin(w * t + phi) * np.cos(phi) * rad02
                - 2 * np.sin(phi) / (w * r) * np.cos(w * t + phi) * rad1)

    def ez(x, y, t):
        r, phi, rad1, _ = parts(x, y, t)
        return np.cos(w * t + phi) * rad1

    return ProblemSpec("concentric_cylinders", (-1.25, 1.25, -1.25, 1.25), annulus(),
                       eps=0.5, mu=0.5, t_final=0.75, dt_ratio=0.25, beta=7.0,
                       fields={"hx": hx, "hy": hy, "ez": ez},
                       period=2 * math.pi / w, params={"alpha": a, "omega": w})


def default_star(n_points: int) -> BoundaryCurve:
    if n_points == 5:
        return star((0.0, 0.0), 5, 0.6, 0.3, phase=math.pi / 2)
    if n_points == 3:
        return star((0.0, 0.0), 3, 0.6, 0.25, phase=math.pi / 2)
    raise ProblemError("default stars exist for 3 and 5 points")


def manufactured(curve: BoundaryCurve | None = None, n_points: int = 5) -> ProblemSpec:
    """Smooth periodic fields with nonzero boundary data on an embedded star."""
    curve = curve if curve is not None else default_star(n_points)
    mu = 2.0
    tp = 2 * math.pi

    def hx(x, y, t):
        return 0.5 * np.sin(tp * x) * np.sin(tp * y) * np.sin(tp * t)

    def hy(x, y, t):
        return 0.5 * np.cos(tp * x) * np.cos(tp * y) * np.sin(tp * t)

    def ez(x, y, t):
        return np.sin(tp * x) * np.cos(tp * y) * np.cos(tp * t)

    def gamma_data(points, normals, t):
        x, y = points[:, 0], points[:, 1]
        # n x E = (n_y Ez, -n_x Ez) gives back Ez; n.(mu H)/mu is n.H
        a = np.column_stack([normals[:, 1], -normals[:, 0]]) * ez(x, y, t)[:, None]
        tang = normals[:, 1] * a[:, 0] - normals[:, 0] * a[:, 1]
        b = mu * (normals[:, 0] * hx(x, y, t) + normals[:, 1] * hy(x, y, t))
        return np.column_stack([tang, b / mu])

    return ProblemSpec(f"manufactured_{len(curve.vertices) // 2}star"
                       if hasattr(curve, "vertices") else "manufactured",
                       (-1.0, 1.0, -1.0, 1.0), [curve], eps=1.0, mu=mu,
                       t_final=1.0, dt_ratio=0.5, beta=7.0,
                       fields={"hx": hx, "hy": hy, "ez": ez}, gamma_data=gamma_data,
                       period=1.0)


PULSE_SIGMA = 0.1
PULSE_GAMMA = -0.3


def pulse_fields(sigma: float = PULSE_SIGMA, gamma: float = PULSE_GAMMA):
    def g(x, t):
        u = np.asarray(x) - gamma - t
        return (2.0 / sigma ** 2) * u * np.exp(-(u / sigma) ** 2)

    return {"hx": lambda x, y, t: np.zeros(np.shape(x)),
            "hy": lambda x, y, t: -g(x, t) + 0.0 * np.asarray(y),
            "ez": lambda x, y, t: g(x, t) + 0.0 * np.asarray(y)}


def pulsed_wave_scattering(shape: str = "circle", center=(0.25, 0.5), size: float = 0.25) -> ProblemSpec:
    """Pulse hitting a PEC obstacle; no exact solution (compare to a reference run)."""
    if shape == "circle":
        curves, beta = [Circle(tuple(center), size, Orientation.PLUS_OUTSIDE)], 6.0
    elif shape in ("5star", "3star"):
        n = int(shape[0])
        r_in = 0.5 * size if n == 5 else 0.42 * size
        curves, beta = [star(tuple(center), n, size, r_in, phase=math.pi / 2)], 7.0
    else:
        raise ProblemError(f"unknown scattering shape {shape!r}")
    return ProblemSpec(f"scattering_{shape}", (-1.0, 1.5, -0.75, 1.75), curves,
                       t_final=1.5, dt_ratio=0.5, beta=beta,
                       init_mode=InitMode.PULSE_HISTORY, fields=pulse_fields(),
                       exact=False, params={"shape": shape, "center": tuple(center), "size": size})


PROBLEMS = {
    "circular_cavity": circular_cavity,
    "square_cavity": square_cavity,
    "concentric_cylinders": concentric_cylinders,
    "manufactured_5star": lambda: manufactured(n_points=5),
    "manufactured_3star": lambda: manufactured(n_points=3),
    "scattering_circle": lambda: pulsed_wave_scattering("circle"),
    "scattering_5star": lambda: pulsed_wave_scattering("5star", size=0.3),
    "scattering_3star": lambda: pulsed_wave_scattering("3star", size=0.3),
}


def get_problem(name: str) -> ProblemSpec:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ProblemError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


def pde_residual(problem: ProblemSpec, x, y, t, d: float = 1e-4):
    """TM_z residuals of the problem fields by 4th-order central differences."""
    def D(fam, var):
        def shift(s):
            args = [x, y, t]
            args[var] = args[var] + s
            return problem.field(fam, *args)
        return (-shift(2 * d) + 8 * shift(d) - 8 * shift(-d) + shift(-2 * d)) / (12 * d)

    eps, mu = problem.eps, problem.mu
    r1 = mu * D("hx", 2) + D("ez", 1)
    r2 = mu * D("hy", 2) - D("ez", 0)
    r3 = eps * D("ez", 2) - D("hy", 0) + D("hx", 1)
    return r1, r2, r3
