"""Local correction functions: bases, quadrature, assembly and SPD solves.

A correction on a patch is a pair ``(D_H, D_E)``: ``D_H = (D_Hx, D_Hy)`` is a
divergence-free polynomial field in space-time and ``D_E = D_Ez`` a scalar
polynomial.  Both are written in scaled coordinates
``(xi, eta, tau) in [-1, 1]^3`` of the patch box and its time interval.

The unknown vector stacks the ``D_H`` coefficients first, then ``D_E``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss

log = logging.getLogger(__name__)


class PatchIllPosedError(RuntimeError):
    """Normal-equation matrix of a patch is not (numerically) SPD."""

    def __init__(self, patch_id, detail=""):
        super().__init__(f"patch {patch_id}: correction problem is ill-posed {detail}".strip())
        self.patch_id = patch_id


class AssemblyError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# monomials and bases
# ---------------------------------------------------------------------------

class MonomialSpace:
    """Monomials ``xi^a eta^b tau^c`` with ``a + b + c <= degree``."""

    def __init__(self, degree: int):
        self.degree = degree
        self.exponents = [e for total in range(degree + 1)
                          for e in _exponents_of_total(total)]
        self.index = {e: i for i, e in enumerate(self.exponents)}

    def __len__(self):
        return len(self.exponents)

    def evaluate(self, pts) -> np.ndarray:
        """Matrix of monomial values, shape (n_points, n_monomials)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = self.degree
        powers = [np.ones((pts.shape[0], d + 1)) for _ in range(3)]
        for v in range(3):
            for p in range(1, d + 1):
                powers[v][:, p] = powers[v][:, p - 1] * pts[:, v]
        E = np.array(self.exponents)
        return powers[0][:, E[:, 0]] * powers[1][:, E[:, 1]] * powers[2][:, E[:, 2]]

    def diff(self, var: int) -> np.ndarray:
        """Matrix D with coef(d/d var p) = D @ coef(p)."""
        D = np.zeros((len(self), len(self)))
        for j, e in enumerate(self.exponents):
            if e[var] == 0:
                continue
            f = list(e)
            f[var] -= 1
            D[self.index[tuple(f)], j] = e[var]
        return D


def _exponents_of_total(total):
    for a in range(total, -1, -1):
        for b in range(total - a, -1, -1):
            yield (a, b, total - a - b)


@dataclass(frozen=True)
class DivFreeBasis:
    """Divergence-free vector fields ``(d psi/d eta, -d psi/d xi)``.

    ``psi`` ranges over monomials of degree <= k+1 that are not functions of
    ``tau`` alone.  ``cx``/``cy`` hold the component coefficients in a
    degree-(k+1) monomial space, one column per basis element.
    """

    degree: int
    space: MonomialSpace = field(repr=False)
    stream: tuple = field(repr=False)
    cx: np.ndarray = field(repr=False)
    cy: np.ndarray = field(repr=False)

    def __len__(self):
        return self.cx.shape[1]


@dataclass(frozen=True)
class ScalarBasis:
    degree: int
    space: MonomialSpace = field(repr=False)
    coef: np.ndarray = field(repr=False)

    def __len__(self):
        return self.coef.shape[1]


@lru_cache(maxsize=None)
def build_bases(k: int) -> tuple[DivFreeBasis, ScalarBasis]:
    if k not in (1, 2, 3, 4):
        raise ValueError(f"polynomial degree must be in 1..4, got {k}")
    space = MonomialSpace(k + 1)
    d_xi, d_eta = space.diff(0), space.diff(1)
    stream = tuple(e for e in space.exponents if e[0] + e[1] > 0)
    cx = np.zeros((len(space), len(stream)))
    cy = np.zeros((len(space), len(stream)))
    for j, e in enumerate(stream):
        unit = np.zeros(len(space))
        unit[space.index[e]] = 1.0
        cx[:, j] = d_eta @ unit
        cy[:, j] = -(d_xi @ unit)
    cols = [space.index[e] for e in space.exponents if sum(e) <= k]
    scal = np.eye(len(space))[:, cols]
    return DivFreeBasis(k, space, stream, cx, cy), ScalarBasis(k, space, scal)


class FieldEvaluator:
    """Values and physical derivatives of the basis at scaled points.

    ``half_len`` and ``half_dt`` convert scaled derivatives to physical ones.
    Each accessor returns an (n_points, n_coef) matrix over the full unknown
    vector, so a residual row is a plain linear combination.
    """

    def __init__(self, k: int, pts, half_len: float, half_dt: float):
        vec, sca = build_bases(k)
        self.n_h, self.n_e = len(vec), len(sca)
        sp = vec.space
        P = sp.evaluate(pts)
        self._P = P
        self._sp = sp
        self._vec, self._sca = vec, sca
        self._scale = (1.0 / half_len, 1.0 / half_len, 1.0 / half_dt)

    def _block(self, which, deriv):
        sp = self._sp
        if which == "hx":
            coef = self._vec.cx
        elif which == "hy":
            coef = self._vec.cy
        else:
            coef = self._sca.coef
        if deriv is not None:
            coef = sp.diff(deriv) @ coef * self._scale[deriv]
        vals = self._P @ coef
        out = np.zeros((vals.shape[0], self.n_h + self.n_e))
        if which == "ez":
            out[:, self.n_h:] = vals
        else:
            out[:, :self.n_h] = vals
        return out

    def hx(self, deriv=None):
        return self._block("hx", deriv)

    def hy(self, deriv=None):
        return self._block("hy", deriv)

    def ez(self, deriv=None):
        return self._block("ez", deriv)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre point counts for volume and line (space-time) integrals."""

    n_volume: int
    n_line: int
    n_time: int

    @classmethod
    def for_degree(cls, k: int, extra: int = 0) -> "QuadratureRule":
        return cls(k + 2 + extra, k + 2 + extra, k + 2 + extra)


@lru_cache(maxsize=None)
def _leggauss(n):
    return leggauss(n)


def gauss(n, a=-1.0, b=1.0):
    x, w = _leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


# ---------------------------------------------------------------------------
# patch geometry handed to the assembler
# ---------------------------------------------------------------------------

@dataclass
class BoundaryPiece:
    """Smooth piece of the embedded boundary inside a patch.

    ``points``/``normals``/``weights`` are the spatial quadrature record
    (weights include the curve speed).
    """

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray


@dataclass
class FictitiousTerm:
    """One grid-aligned fictitious segment with its data map.

    ``component`` is ``"hx"``, ``"hy"`` or ``"ez"``.  ``points``/``weights``
    give the spatial Gauss rule along the segment; ``node_weights`` maps
    nodal FD values to values at those points (least-squares fit).
    ``window`` is the integration time window (physical, relative to the
    patch reference time).  ``time_basis(t)`` returns the weights of each
    time condition at times ``t``; ``n_conditions`` is their number.
    """

    component: str
    points: np.ndarray
    weights: np.ndarray
    node_weights: np.ndarray
    nodes: np.ndarray
    window: tuple
    time_basis: object
    n_conditions: int
    normal: tuple = (1.0, 0.0)


@dataclass
class PatchProblem:
    """Everything the assembler needs for one patch and one time case.

    Times are relative to the patch reference time ``t_ref``; the interval is
    ``[t0, t1]``.
    """

    patch_id: int
    center: np.ndarray
    side: float
    t0: float
    t1: float
    boundary: list
    fictitious: list
    eps: float = 1.0
    mu: float = 1.0


@dataclass
class AssembledSystem:
    patch_id: int
    matrix: np.ndarray
    rhs: np.ndarray
    c_p: float
    c_f: float
    b_f_map: np.ndarray
    b_gamma_map: np.ndarray
    gamma_points: np.ndarray = None
    gamma_normals: np.ndarray = None
    gamma_times: np.ndarray = None


@dataclass
class CorrectionSolution:
    patch_id: int
    k: int
    coef_h: np.ndarray
    coef_e: np.ndarray
    center: np.ndarray
    side: float
    t0: float
    t1: float
    residual: float = 0.0


def scaled_points(center, side, t0, t1, x, y, t):
    half = 0.5 * side
    tm, half_dt = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    x, y, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(t, float))
    return np.column_stack([(x.ravel() - center[0]) / half,
                            (y.ravel() - center[1]) / half,
                            (t.ravel() - tm) / half_dt])


def _evaluator(prob: PatchProblem, k, x, y, t):
    pts = scaled_points(prob.center, prob.side, prob.t0, prob.t1, x, y, t)
    return FieldEvaluator(k, pts, 0.5 * prob.side, 0.5 * (prob.t1 - prob.t0)), pts


def assemble_system(prob: PatchProblem, k: int, c_p: float, c_f: float,
                    quad: QuadratureRule | None = None,
                    data=None, gamma_data=None) -> AssembledSystem:
    """Normal equations of the penalized functional on one patch.

    ``data`` is the flat fictitious-data vector, ordered per term as (condition, node);
    ``gamma_data`` holds the boundary data at the Gamma quadrature points as an
    (n, 2) array of (tangential E value, normal H value), where the tangential
    value is ``n_y a_x - n_x a_y`` and the normal one ``b / mu``.  Both default
    to zero (homogeneous PEC).
    """
    quad = quad or QuadratureRule.for_degree(k)
    side, dt_patch = prob.side, prob.t1 - prob.t0
    if dt_patch <= 0:
        raise AssemblyError(f"patch {prob.patch_id}: empty time interval")
    if not prob.boundary:
        raise AssemblyError(f"patch {prob.patch_id}: no boundary inside the patch")
    eps, mu = prob.eps, prob.mu
    half, half_dt = 0.5 * side, 0.5 * dt_patch

    # volume residuals of the TM_z system, scaled by the patch length
    g, w = gauss(quad.n_volume)
    gt, wt = gauss(quad.n_time)
    XI, ETA, TAU = np.meshgrid(g, g, gt, indexing="ij")
    W = (w[:, None, None] * w[None, :, None] * wt[None, None, :]).ravel()
    W = W * half * half * half_dt
    pts = np.column_stack([XI.ravel(), ETA.ravel(), TAU.ravel()])
    ev = FieldEvaluator(k, pts, half, half_dt)
    r1 = mu * ev.hx(2) + ev.ez(1)
    r2 = mu * ev.hy(2) - ev.ez(0)
    r3 = eps * ev.ez(2) - ev.hy(0) + ev.hx(1)
    M = side * sum((r * W[:, None]).T @ r for r in (r1, r2, r3))

    # embedded boundary penalties
    gpts, gnrm, gw, gtime = [], [], [], []
    tq, twq = gauss(quad.n_time, prob.t0, prob.t1)
    for piece in prob.boundary:
        for ti, tw in zip(tq, twq):
            gpts.append(piece.points)
            gnrm.append(piece.normals)
            gw.append(piece.weights * tw)
            gtime.append(np.full(len(piece.weights), ti))
    gpts = np.concatenate(gpts)
    gnrm = np.concatenate(gnrm)
    gw = np.concatenate(gw)
    gtime = np.concatenate(gtime)
    ev, _ = _evaluator(prob, k, gpts[:, 0], gpts[:, 1], gtime)
    row_e = ev.ez()
    row_n = gnrm[:, :1] * ev.hx() + gnrm[:, 1:] * ev.hy()
    M += c_p * ((row_e * gw[:, None]).T @ row_e + (row_n * gw[:, None]).T @ row_n)
    b_gamma_map = np.concatenate([(row_e * gw[:, None]).T, (row_n * gw[:, None]).T], axis=1)

    # fictitious interfaces, averaged per field
    n_e = sum(1 for f in prob.fictitious if f.component == "ez")
    n_h = len(prob.fictitious) - n_e
    cols = []
    for term in prob.fictitious:
        norm = n_e if term.component == "ez" else n_h
        ta, tb = term.window
        tq, twq = gauss(quad.n_time, ta, tb)
        ns = len(term.weights)
        x = np.repeat(term.points[:, 0], len(tq))
        y = np.repeat(term.points[:, 1], len(tq))
        t = np.tile(tq, ns)
        wq = np.repeat(term.weights, len(tq)) * np.tile(twq, ns) / norm
        ev, _ = _evaluator(prob, k, x, y, t)
        row = getattr(ev, term.component)()
        M += c_f * (row * wq[:, None]).T @ row
        # data value at (s_q, t_q) = sum_c phi_c(t_q) sum_n L_n(s_q) d[c, n]
        phi = term.time_basis(tq)                          # (n_t, n_cond)
        L = term.node_weights                              # (n_s, n_nodes)
        kern = np.einsum("tc,sn->stcn", phi, L).reshape(ns * len(tq), -1)
        cols.append((row * wq[:, None]).T @ kern)
    b_f_map = np.concatenate(cols, axis=1) if cols else np.zeros((M.shape[0], 0))

    M = 0.5 * (M + M.T)
    rhs = np.zeros(M.shape[0])
    if data is not None and b_f_map.shape[1]:
        rhs += c_f * (b_f_map @ np.asarray(data, dtype=float))
    if gamma_data is not None:
        gd = np.asarray(gamma_data, dtype=float)
        rhs += c_p * (b_gamma_map @ np.concatenate([gd[:, 0], gd[:, 1]]))
    return AssembledSystem(prob.patch_id, M, rhs, c_p, c_f, b_f_map, b_gamma_map,
                           gpts, gnrm, gtime)


def factor_spd(matrix: np.ndarray, patch_id=None, rcond_min: float = 1e-15):
    """Cholesky factor, raising :class:`PatchIllPosedError` if not SPD."""
    try:
        fac = scipy.linalg.cho_factor(matrix, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise PatchIllPosedError(patch_id, "(Cholesky failed)") from exc
    d = np.abs(np.diag(fac[0]))
    if d.min() ** 2 < rcond_min * d.max() ** 2:
        raise PatchIllPosedError(patch_id, f"(pivot ratio {(d.min() / d.max()) ** 2:.3e})")
    return fac


def condition_number(matrix: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(matrix)
    return float(ev[-1] / ev[0]) if ev[0] > 0 else np.inf


def solve(system: AssembledSystem, prob: PatchProblem, k: int) -> CorrectionSolution:
    fac = factor_spd(system.matrix, system.patch_id)
    c = scipy.linalg.cho_solve(fac, system.rhs)
    r = system.matrix @ c - system.rhs
    nb = np.linalg.norm(system.rhs)
    if nb > 0 and np.linalg.norm(r) > 1e-10 * nb:
        c += scipy.linalg.cho_solve(fac, -r)
        r = system.matrix @ c - system.rhs
    vec, _ = build_bases(k)
    n_h = len(vec)
    return CorrectionSolution(system.patch_id, k, c[:n_h].copy(), c[n_h:].copy(),
                              np.asarray(prob.center, float), prob.side, prob.t0, prob.t1,
                              float(np.linalg.norm(r) / nb) if nb > 0 else 0.0)


def evaluation_rows(center, side, t0, t1, k, component, x, y, t, warn_id=None):
    """Rows mapping the coefficient vector to ``component`` values at (x, y, t)."""
    pts = scaled_points(center, side, t0, t1, x, y, t)
    if warn_id is not None and np.any(np.abs(pts) > 1.5):
        log.warning("patch %s: evaluation %.2fx outside the reference cube",
                    warn_id, float(np.abs(pts).max()))
    ev = FieldEvaluator(k, pts, 0.5 * side, 0.5 * (t1 - t0))
    return getattr(ev, component)()


def evaluate(sol: CorrectionSolution, component: str, x, y, t):
    """Value of ``component`` ('hx', 'hy' or 'ez') of a correction at (x, y, t)."""
    rows = evaluation_rows(sol.center, sol.side, sol.t0, sol.t1, sol.k, component, x, y, t,
                           warn_id=sol.patch_id)
    return rows @ np.concatenate([sol.coef_h, sol.coef_e])


def lagrange_time_basis(conditions):
    """Time weights for a polynomial fixed by value/derivative conditions.

    ``conditions`` is a list of ``(kind, time)`` with kind ``"value"`` or
    ``"deriv"``.  Returns ``phi(t) -> (len(t), n_cond)`` such that the
    interpolant is ``sum_c phi_c(t) * datum_c``.
    """
    n = len(conditions)
    scale = max(1.0, max(abs(t) for _, t in conditions))
    A = np.zeros((n, n))
    for r, (kind, tc) in enumerate(conditions):
        u = tc / scale
        for p in range(n):
            if kind == "value":
                A[r, p] = u ** p
            elif kind == "deriv":
                A[r, p] = p * u ** (p - 1) / scale if p > 0 else 0.0
            else:
                raise ValueError(kind)
    Ainv = np.linalg.inv(A)

    def phi(t):
        u = np.asarray(t, dtype=float) / scale
        V = np.vander(u, n, increasing=True)
        return V @ Ainv
    return phi


__all__ = [
    "AssembledSystem", "AssemblyError", "BoundaryPiece", "CorrectionSolution",
    "DivFreeBasis", "FictitiousTerm", "FieldEvaluator", "MonomialSpace",
    "PatchIllPosedError", "PatchProblem", "QuadratureRule", "ScalarBasis",
    "assemble_system", "build_bases", "condition_number", "evaluate",
    "evaluation_rows", "factor_spd", "gauss", "lagrange_time_basis", "solve",
]
