"""CFM-Yee and CFM-4th time stepping.

Corrections are applied by value substitution: before a curl is taken, every
Minus node read by the stencil of a Plus update gets the value of the
correction function there (the Minus fields are zero, so ``D`` equals the
Plus-side extension).

For a fixed geometry and time case, the patch normal matrices never change,
and the correction values depend linearly on the fictitious-interface data.
Each case is therefore precomputed once as a sparse operator
``values = sum_slot A_slot @ data_slot`` (plus a boundary-data term when the
problem has nonhomogeneous boundary conditions).  This is algebraically the
same as assembling and solving every patch at every step.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import cfm_core
from .cfm_core import PatchProblem, QuadratureRule, assemble_system, factor_spd, lagrange_time_basis
from .geometry import classify_points
from .grid import STENCILS, StaggeredGrid, curl_ez_at_h, curl_h_at_ez, sync_periodic
from .patches import (LocalPatch, associate_nodes, boundary_pieces, build_patch_centers,
                      generate_fictitious_interfaces, locate_boundary, segment_term)
from .solutions import InitMode, ProblemSpec

log = logging.getLogger(__name__)

COND_WARN = 1e8     # patch matrices above this are logged, not rejected

YEE, FOURTH = "yee", "fourth"


class SchemeError(RuntimeError):
    pass


class PlanningError(SchemeError):
    pass


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration and multistep coefficients
# ---------------------------------------------------------------------------

@dataclass
class SchemeConfig:
    kind: str = YEE
    dt_ratio: float = 0.5
    c_p: float = 1.0
    c_f: float | None = None      # absolute value; overrides cf_scale
    cf_scale: float | None = None # c_f = cf_scale * dt; None: 1 for Yee, 1/4 for the fourth-order scheme
    k: int | None = None          # None: 2 for Yee, 3 for the fourth-order scheme
    beta: float = 7.0
    alpha: float = 2.0
    s: float = -1.0
    t: float = 1.045

    def __post_init__(self):
        if self.kind not in (YEE, FOURTH):
            raise ConfigError(f"scheme must be 'yee' or 'fourth', got {self.kind!r}")
        if not self.dt_ratio > 0:
            raise ConfigError("dt_ratio must be positive")
        if self.c_p <= 0 or self.beta <= 0 or self.alpha <= 0:
            raise ConfigError("c_p, beta and alpha must be positive")
        if (self.c_f is not None and self.c_f < 0) or (self.cf_scale is not None and self.cf_scale < 0):
            raise ConfigError("c_f must be non-negative")

    @property
    def order(self):
        return 2 if self.kind == YEE else 4

    @property
    def degree(self):
        return self.k if self.k is not None else (2 if self.kind == YEE else 3)

    def dt(self, h):
        return self.dt_ratio * h

    def penalty_f(self, h):
        if self.c_f is not None:
            return self.c_f
        if self.cf_scale is not None:
            return self.cf_scale * self.dt(h)
        return self.dt(h) if self.kind == YEE else self.dt(h) / 4


@dataclass(frozen=True)
class MultistepCoefficients:
    alpha: tuple   # alpha_0 .. alpha_3
    beta: tuple    # beta_1 .. beta_3


def multistep_coefficients(s: float = -1.0, t: float = 1.045) -> MultistepCoefficients:
    a0 = -1 / 22 - s / 528 + t / 24
    a1 = 5 / 22 + 9 * s / 176 - 9 * t / 8
    a2 = -9 / 22 - 201 * s / 176 + 9 * t / 8
    a3 = -17 / 22 + 577 * s / 528 - t / 24
    return MultistepCoefficients((a0, a1, a2, a3), (t, s, s / 22 + 12 / 11))


# ---------------------------------------------------------------------------
# time cases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseSpec:
    """Patch time interval and data conditions, in units of dt relative to t_n.

    ``target`` is ``"e"`` (D_E for an H update) or ``"h"`` (D_H for an E
    update).  ``restricted`` lists the groups whose data include a curl-based
    time derivative, which is only valid where the curl stencil is all Plus.
    """

    name: str
    interval: tuple
    eval_time: float
    target: str
    h_conds: tuple
    h_window: tuple
    e_conds: tuple
    e_window: tuple
    restricted: frozenset = frozenset()


def _values(*ts):
    return tuple(("value", t) for t in ts)


CASES = {
    "yee_h": CaseSpec("yee_h", (-1.5, 0.0), 0.0, "e",
                      _values(-1.5, -0.5), (-1.5, -0.5), _values(-1.0, 0.0), (-1.0, 0.0)),
    "yee_e": CaseSpec("yee_e", (-1.0, 0.5), 0.5, "h",
                      _values(-0.5, 0.5), (-0.5, 0.5), _values(-1.0, 0.0), (-1.0, 0.0)),
    "yee_h_init": CaseSpec("yee_h_init", (-0.5, 0.0), 0.0, "e",
                           (("value", -0.5), ("deriv", 0.0)), (-0.5, 0.0),
                           (("value", 0.0), ("deriv", -0.5)), (-0.5, 0.0),
                           frozenset({"h", "e"})),
    "yee_e_init": CaseSpec("yee_e_init", (-0.5, 0.5), 0.5, "h",
                           _values(-0.5, 0.5), (-0.5, 0.5),
                           (("value", 0.0), ("deriv", -0.5)), (-0.5, 0.0),
                           frozenset({"e"})),
    "fourth_h": CaseSpec("fourth_h", (-3.5, 0.0), 0.0, "e",
                         _values(-3.5, -2.5, -1.5, -0.5), (-3.5, -0.5),
                         _values(-3.0, -2.0, -1.0, 0.0), (-3.0, 0.0)),
    "fourth_e": CaseSpec("fourth_e", (-3.0, 0.5), 0.5, "h",
                         _values(-2.5, -1.5, -0.5, 0.5), (-2.5, 0.5),
                         _values(-3.0, -2.0, -1.0, 0.0), (-3.0, 0.0)),
}


# ---------------------------------------------------------------------------
# region masks and correction plan
# ---------------------------------------------------------------------------

def region_masks(grid: StaggeredGrid, curves) -> dict:
    out = {}
    for fam in ("hx", "hy", "ez"):
        X, Y = grid.coords(fam)
        out[fam] = classify_points(curves, X, Y) if curves else np.ones(X.shape, bool)
    return out


def _unique(fam, a):
    return a[:, :-1] if fam == "hx" else a[:-1, :] if fam == "hy" else a


def _to_full(fam, a):
    if fam == "ez":
        return a
    out = np.empty((a.shape[0], a.shape[1] + 1) if fam == "hx" else (a.shape[0] + 1, a.shape[1]), a.dtype)
    if fam == "hx":
        out[:, :-1] = a
        out[:, -1] = a[:, 0]
    else:
        out[:-1, :] = a
        out[-1, :] = a[0, :]
    return out


def needed_minus_nodes(masks: dict, order: int) -> dict:
    """Minus nodes read by the stencil of some Plus update, per family."""
    offsets, _ = STENCILS[order]
    pe = masks["ez"]
    phx, phy = _unique("hx", masks["hx"]), _unique("hy", masks["hy"])
    need_ez = np.zeros_like(pe)
    need_hx = np.zeros_like(phx)
    need_hy = np.zeros_like(phy)
    for o in offsets:
        # Hx[j] reads Ez[j - 1 + o] along y, Hy[i] reads Ez[i - 1 + o] along x
        need_ez |= np.roll(phx, o - 1, axis=1) | np.roll(phy, o - 1, axis=0)
        # Ez[i] reads Hy[i + o] along x and Hx[j + o] along y
        need_hy |= np.roll(pe, o, axis=0)
        need_hx |= np.roll(pe, o, axis=1)
    return {"ez": need_ez & ~pe, "hx": need_hx & ~phx, "hy": need_hy & ~phy}


def _plus_derivative(u, plus, axis, h, shift):
    """First derivative between u[p + shift - 1] and u[p + shift] from Plus nodes only.

    Uses the centered two-point difference when both nodes are Plus, else a
    second-order one-sided three-point formula on whichever side is all Plus.
    Returns ``(values, valid)``.
    """
    def at(k):
        return np.roll(u, -(shift + k), axis=axis), np.roll(plus, -(shift + k), axis=axis)
    (r0, mr0), (r1, mr1), (r2, mr2) = at(0), at(1), at(2)
    (l0, ml0), (l1, ml1), (l2, ml2) = at(-1), at(-2), at(-3)
    center = mr0 & ml0
    fwd = mr0 & mr1 & mr2
    bwd = ml0 & ml1 & ml2
    d = np.where(center, r0 - l0,
                 np.where(fwd, -2 * r0 + 3 * r1 - r2, np.where(bwd, 2 * l0 - 3 * l1 + l2, 0.0)))
    return d / h, center | fwd | bwd


def plus_curls(masks: dict, h: float, ez=None, hx=None, hy=None):
    """Curls built from Plus data only, for initial time derivatives.

    Returns ``({family: values}, {family: valid})`` with ``hx``/``hy`` holding
    (-dEz/dy, dEz/dx) and ``ez`` holding dHy/dx - dHx/dy.  Missing fields are
    taken as zero (useful to get the masks alone).
    """
    pe = masks["ez"]
    phx, phy = _unique("hx", masks["hx"]), _unique("hy", masks["hy"])
    ez = np.zeros(pe.shape) if ez is None else ez
    ux = np.zeros(phx.shape) if hx is None else _unique("hx", hx)
    uy = np.zeros(phy.shape) if hy is None else _unique("hy", hy)
    dy_e, ok_hx = _plus_derivative(ez, pe, 1, h, 0)
    dx_e, ok_hy = _plus_derivative(ez, pe, 0, h, 0)
    dx_hy, ok1 = _plus_derivative(uy, phy, 0, h, 1)
    dy_hx, ok2 = _plus_derivative(ux, phx, 1, h, 1)
    vals = {"hx": _to_full("hx", -dy_e), "hy": _to_full("hy", dx_e), "ez": dx_hy - dy_hx}
    ok = {"hx": _to_full("hx", ok_hx & phx), "hy": _to_full("hy", ok_hy & phy), "ez": ok1 & ok2 & pe}
    return vals, ok


def derivative_valid_masks(masks: dict) -> dict:
    """Plus nodes where :func:`plus_curls` yields a usable derivative."""
    return plus_curls(masks, 1.0)[1]


@dataclass
class PlanEntry:
    family: str
    flat: np.ndarray        # flat indices into the full family array
    xy: np.ndarray
    patch: np.ndarray


@dataclass
class CorrectionPlan:
    """Minus nodes to correct for each field update, and their patches.

    ``entries["ez"]`` serves H updates, ``entries["hx"]``/``["hy"]`` serve
    E updates.  Every node is listed once and belongs to exactly one patch.
    """

    entries: dict
    centers: np.ndarray
    half: float

    def patches_for(self, target):
        fams = ("ez",) if target == "e" else ("hx", "hy")
        ids = np.concatenate([self.entries[f].patch for f in fams]) if fams else np.array([], int)
        return np.unique(ids)

    def size(self):
        return sum(len(e.flat) for e in self.entries.values())


def plan_corrections(grid: StaggeredGrid, masks: dict, centers, half: float, order: int) -> CorrectionPlan:
    need = needed_minus_nodes(masks, order)
    entries = {}
    centers = np.asarray(centers, float).reshape(-1, 2)
    for fam, m in need.items():
        ii, jj = np.nonzero(m)
        xa, ya = grid.axes(fam)
        xy = np.column_stack([xa[ii], ya[jj]])
        flat = np.ravel_multi_index((ii, jj), grid.shape(fam))
        if len(flat) and len(centers) == 0:
            raise PlanningError("correction nodes exist but there are no patches")
        pid = associate_nodes(xy, centers) if len(flat) else np.zeros(0, int)
        if len(flat):
            off = np.abs(xy - centers[pid]).max(axis=1)
            bad = off > 1.5 * half * (1 + 1e-12)
            if bad.any():
                b = int(np.argmax(bad))
                raise PlanningError(f"{fam} node at {xy[b]} lies outside 1.5x the box of "
                                    f"patch {pid[b]}; increase beta")
        entries[fam] = PlanEntry(fam, flat, xy, pid)
    return CorrectionPlan(entries, centers, half)


# ---------------------------------------------------------------------------
# case operators
# ---------------------------------------------------------------------------

@dataclass
class CaseOperator:
    """Sparse map from fictitious data (and boundary data) to correction values.

    ``gamma`` maps a target family to ``(K, points, normals, times)``: the
    boundary quadrature nodes of all patches stacked, and ``K`` acting on the
    stacked (E_z target, n.H target) boundary values.
    """

    case: CaseSpec
    targets: dict                      # family -> flat indices
    mats: dict                         # family -> {(data family, cond): csr}
    gamma: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def apply(self, data: dict, t_ref: float = 0.0, gamma_fn=None) -> dict:
        out = {}
        for fam, idx in self.targets.items():
            v = np.zeros(len(idx))
            for (dfam, c), A in self.mats[fam].items():
                v += A @ data[dfam][c].ravel()
            if gamma_fn is not None and fam in self.gamma:
                K, pts, nrm, times = self.gamma[fam]
                g = np.asarray(gamma_fn(pts, nrm, t_ref + times), dtype=float)
                v += K @ np.concatenate([g[:, 0], g[:, 1]])
            out[fam] = v
        return out


def _case_masks(case: CaseSpec, masks: dict, deriv_ok: dict) -> dict:
    use = dict(masks)
    if "h" in case.restricted:
        use["hx"] = deriv_ok["hx"]
        use["hy"] = deriv_ok["hy"]
    if "e" in case.restricted:
        use["ez"] = deriv_ok["ez"]
    return use


def build_case_operator(case: CaseSpec, grid: StaggeredGrid, masks: dict, plan: CorrectionPlan,
                        patches: dict, curves, dt: float, k: int, c_p: float, c_f: float,
                        eps: float = 1.0, mu: float = 1.0, with_gamma: bool = False,
                        quad: QuadratureRule | None = None) -> CaseOperator:
    quad = quad or QuadratureRule.for_degree(k)
    fams = ("ez",) if case.target == "e" else ("hx", "hy")
    use = _case_masks(case, masks, derivative_valid_masks(masks)) if case.restricted else masks
    t0, t1 = case.interval[0] * dt, case.interval[1] * dt
    h_basis = lagrange_time_basis([(kd, t * dt) for kd, t in case.h_conds])
    e_basis = lagrange_time_basis([(kd, t * dt) for kd, t in case.e_conds])
    h_window = (case.h_window[0] * dt, case.h_window[1] * dt)
    e_window = (case.e_window[0] * dt, case.e_window[1] * dt)

    coo = {f: {} for f in fams}
    gamma = {f: ([], [], [], [], [], [], []) for f in fams}
    diags = []
    for pid in plan.patches_for(case.target):
        patch = patches[int(pid)]
        segs = generate_fictitious_interfaces(patch, grid, use)
        terms = []
        for fam_segs in segs.values():
            for seg in fam_segs:
                is_e = seg.family == "ez"
                terms.append(segment_term(seg, k, quad.n_line,
                                          e_window if is_e else h_window,
                                          e_basis if is_e else h_basis,
                                          len(case.e_conds if is_e else case.h_conds),
                                          grid.shape(seg.family)))
        prob = PatchProblem(int(pid), patch.center, patch.side, t0, t1,
                            boundary_pieces(patch, curves, quad.n_line), terms, eps, mu)
        system = assemble_system(prob, k, c_p, c_f, quad)
        fac = factor_spd(system.matrix, int(pid))
        sol_f = scipy.linalg.cho_solve(fac, c_f * system.b_f_map)
        sol_g = scipy.linalg.cho_solve(fac, c_p * system.b_gamma_map) if with_gamma else None
        cond = cfm_core.condition_number(system.matrix)
        diags.append((int(pid), patch.center,
                      {f: (sum(s.orientation == "v" for s in v), sum(s.orientation == "h" for s in v))
                       for f, v in segs.items()}, cond))
        # column layout of b_f_map: term by term, then (condition, node)
        col_slot, col_node = [], []
        for term in terms:
            nn = len(term.nodes)
            for c in range(term.n_conditions):
                col_slot.extend([(term.component, c)] * nn)
                col_node.append(term.nodes)
        col_node = np.concatenate(col_node)
        slots = sorted(set(col_slot))
        slot_id = np.array([slots.index(s) for s in col_slot])
        for fam in fams:
            entry = plan.entries[fam]
            rows = np.nonzero(entry.patch == pid)[0]
            if not len(rows):
                continue
            E = cfm_core.evaluation_rows(patch.center, patch.side, t0, t1, k, fam,
                                         entry.xy[rows, 0], entry.xy[rows, 1],
                                         np.full(len(rows), case.eval_time * dt), warn_id=int(pid))
            W = E @ sol_f
            for si, slot in enumerate(slots):
                cols = slot_id == si
                r, c = np.meshgrid(rows, col_node[cols], indexing="ij")
                lst = coo[fam].setdefault(slot, ([], [], []))
                lst[0].append(r.ravel())
                lst[1].append(c.ravel())
                lst[2].append(W[:, cols].ravel())
            if with_gamma:
                g = gamma[fam]
                ng = len(system.gamma_times)
                Kp = E @ sol_g
                r, c = np.meshgrid(rows, np.arange(2 * ng), indexing="ij")
                g[0].append(r.ravel())
                g[1].append(c.ravel())            # local column, shifted below
                g[2].append(Kp.ravel())
                g[3].append(system.gamma_points)
                g[4].append(system.gamma_normals)
                g[5].append(system.gamma_times)
                g[6].append(ng)

    mats = {}
    targets = {}
    for fam in fams:
        n_rows = len(plan.entries[fam].flat)
        targets[fam] = plan.entries[fam].flat
        mats[fam] = {}
        for slot, (r, c, v) in coo[fam].items():
            n_cols = int(np.prod(grid.shape(slot[0])))
            mats[fam][slot] = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                            shape=(n_rows, n_cols))
    gam = {}
    for fam in fams:
        r, c, v, pts, nrm, times, sizes = gamma[fam]
        if not sizes:
            continue
        total = sum(sizes)
        off = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        cols = []
        for cl, o, ng in zip(c, off, sizes):
            # local layout [tangential (ng) | normal (ng)] -> global [all tangential | all normal]
            cols.append(np.where(cl < ng, cl + o, cl - ng + total + o))
        K = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(cols))),
                          shape=(len(targets[fam]), 2 * total))
        gam[fam] = (K, np.concatenate(pts), np.concatenate(nrm), np.concatenate(times))
    bad = [d[3] for d in diags if d[3] > COND_WARN]
    if bad:
        log.warning("%s: %d of %d patches have condition number above %.0e (max %.3e)",
                    case.name, len(bad), len(diags), COND_WARN, max(bad))
    return CaseOperator(case, targets, mats, gam, diags)


def write_patch_diagnostics(path, op: CaseOperator):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch", "cx", "cy", "hx_v", "hx_h", "hy_v", "hy_h", "ez_v", "ez_h", "cond"])
        for pid, c, counts, cond in op.diagnostics:
            w.writerow([pid, repr(float(c[0])), repr(float(c[1]))]
                       + [n for f in ("hx", "hy", "ez") for n in counts.get(f, (0, 0))] + ["%.6e" % cond])


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def build_patches(curves, grid: StaggeredGrid, beta: float, alpha: float):
    centers = [build_patch_centers(c, grid.h, alpha)[0] for c in curves]
    if not centers:
        return np.zeros((0, 2)), {}
    centers = np.concatenate(centers)
    side = beta * grid.h
    return centers, {i: LocalPatch(i, centers[i], side) for i in range(len(centers))}


class Solver:
    """Time stepper for one problem, grid spacing and scheme.

    Fields live in ``self.H`` (level -> (hx, hy), levels n - 1/2) and
    ``self.E`` (level -> ez).  ``self.n`` is the index of the latest E level.
    """

    def __init__(self, problem: ProblemSpec, config: SchemeConfig, h: float):
        self.problem = problem
        self.config = config
        self.grid = StaggeredGrid.from_spacing(problem.domain, h)
        self.h = self.grid.h
        self.dt = config.dt(self.h)
        self.k = config.degree
        self.c_f = config.penalty_f(self.h)
        self.order = config.order
        self.masks = region_masks(self.grid, problem.curves)
        self.centers, self.patches = build_patches(problem.curves, self.grid, config.beta, config.alpha)
        for p in self.patches.values():
            locate_boundary(p, problem.curves)
        self.plan = plan_corrections(self.grid, self.masks, self.centers,
                                     0.5 * config.beta * self.h, self.order)
        self._ops = {}
        self.coef = multistep_coefficients(config.s, config.t)
        self.H, self.E = {}, {}
        self.fH, self.fE = {}, {}
        self.n = None

    # -- operators ------------------------------------------------------------
    def operator(self, name) -> CaseOperator:
        if name not in self._ops:
            self._ops[name] = build_case_operator(
                CASES[name], self.grid, self.masks, self.plan, self.patches, self.problem.curves,
                self.dt, self.k, self.config.c_p, self.c_f, self.problem.eps, self.problem.mu,
                with_gamma=self.problem.gamma_data is not None)
        return self._ops[name]

    def corrections(self, name, data, n):
        if self.plan.size() == 0:
            return {}
        return self.operator(name).apply(data, n * self.dt, self.problem.gamma_data)

    def _corrected(self, fam, arr, values):
        out = arr.copy()
        if fam in values:
            out.ravel()[self.plan.entries[fam].flat] = values[fam]
        return out

    def corrected_e(self, ez, vals):
        return self._corrected("ez", ez, vals)

    def corrected_h(self, hx, hy, vals):
        hx_c = self._corrected("hx", hx, vals)
        hy_c = self._corrected("hy", hy, vals)
        sync_periodic(hx_c, hy_c)
        return hx_c, hy_c

    # -- data -----------------------------------------------------------------
    def sample(self, fam, t):
        X, Y = self.grid.coords(fam)
        return np.where(self.masks[fam], self.problem.field(fam, X, Y, t), 0.0)

    def set_level_e(self, n, ez):
        self.E[n] = ez

    def mask(self, ez=None, hx=None, hy=None):
        if ez is not None:
            ez[~self.masks["ez"]] = 0.0
        if hx is not None:
            hx[~self.masks["hx"]] = 0.0
        if hy is not None:
            hy[~self.masks["hy"]] = 0.0

    def f_h(self, ez_c):
        cx, cy = curl_ez_at_h(ez_c, self.h, self.order)
        return cx / self.problem.mu, cy / self.problem.mu

    def f_e(self, hx_c, hy_c):
        return curl_h_at_ez(hx_c, hy_c, self.h, self.order) / self.problem.eps

    # -- initialization -----------------------------------------------------------
    def initialize(self, ez0=None, hx_m=None, hy_m=None):
        """Set E^0 and H^{-1/2} (from the problem unless given) and prime history."""
        if self.config.kind == YEE:
            self._yee_initialize(ez0, hx_m, hy_m)
        else:
            self._fourth_initialize()
        return self

    def _yee_initialize(self, ez0, hx_m, hy_m):
        if ez0 is None:
            if not self.problem.has_history():
                raise ConfigError(f"{self.problem.name}: no initial data")
            ez0 = self.sample("ez", 0.0)
            hx_m = self.sample("hx", -0.5 * self.dt)
            hy_m = self.sample("hy", -0.5 * self.dt)
        ez0, hx_m, hy_m = ez0.copy(), hx_m.copy(), hy_m.copy()
        self.mask(ez0, hx_m, hy_m)
        self.E = {0: ez0}
        self.H = {-0.5: (hx_m, hy_m)}
        if self.problem.init_mode is InitMode.QUIESCENT_NEAR_GAMMA:
            self.E[-1] = ez0
            self.H[-1.5] = (hx_m, hy_m)
        self.n = 0

    def _fourth_initialize(self):
        if not self.problem.has_history():
            raise ConfigError(f"{self.problem.name}: the fourth-order scheme needs past data")
        dt = self.dt
        for n in range(-5, 1):
            self.E[n] = self.sample("ez", n * dt)
        for n in range(-5, 1):
            self.H[n - 0.5] = (self.sample("hx", (n - 0.5) * dt), self.sample("hy", (n - 0.5) * dt))
        self.n = 0
        for m in (0, -1, -2):
            self.fH[m] = self._fresh_f_h(m)
        for m in (-1, -2):
            self.fE[m + 0.5] = self._fresh_f_e(m)

    # -- fourth-order pieces ------------------------------------------------------
    def _fourth_data(self, n, h_levels, e_levels):
        return {"hx": [self.H[l][0] for l in h_levels], "hy": [self.H[l][1] for l in h_levels],
                "ez": [self.E[l] for l in e_levels]}

    def _fresh_f_h(self, n):
        data = self._fourth_data(n, [n - 3.5, n - 2.5, n - 1.5, n - 0.5], [n - 3, n - 2, n - 1, n])
        vals = self.corrections("fourth_h", data, n)
        return self.f_h(self.corrected_e(self.E[n], vals))

    def _fresh_f_e(self, n):
        data = self._fourth_data(n, [n - 2.5, n - 1.5, n - 0.5, n + 0.5], [n - 3, n - 2, n - 1, n])
        vals = self.corrections("fourth_e", data, n)
        hx, hy = self.H[n + 0.5]
        return self.f_e(*self.corrected_h(hx, hy, vals))

    # -- stepping ------------------------------------------------------------------
    def step(self):
        if self.n is None:
            raise SchemeError("initialize() must be called before step()")
        if self.config.kind == YEE:
            self._yee_step()
        else:
            self._fourth_step()
        self.n += 1
        self._prune()

    def _yee_step(self):
        n, dt = self.n, self.dt
        eps, mu = self.problem.eps, self.problem.mu
        hx, hy = self.H[n - 0.5]
        ez = self.E[n]
        init = n == 0 and self.problem.init_mode is not InitMode.QUIESCENT_NEAR_GAMMA
        if init:
            curls, _ = plus_curls(self.masks, self.h, ez, hx, hy)
            dhx, dhy, de = curls["hx"], curls["hy"], curls["ez"] / eps
            data = {"hx": [hx, dhx / mu], "hy": [hy, dhy / mu], "ez": [ez, de]}
            vals = self.corrections("yee_h_init", data, n)
        else:
            hxo, hyo = self.H[n - 1.5]
            data = {"hx": [hxo, hx], "hy": [hyo, hy], "ez": [self.E[n - 1], ez]}
            vals = self.corrections("yee_h", data, n)
        cx, cy = curl_ez_at_h(self.corrected_e(ez, vals), self.h, 2)
        hx_new = hx + (dt / mu) * cx
        hy_new = hy + (dt / mu) * cy
        self.mask(hx=hx_new, hy=hy_new)
        self.H[n + 0.5] = (hx_new, hy_new)

        if init:
            data = {"hx": [hx, hx_new], "hy": [hy, hy_new], "ez": [ez, de]}
            vals = self.corrections("yee_e_init", data, n)
        else:
            data = {"hx": [hx, hx_new], "hy": [hy, hy_new], "ez": [self.E[n - 1], ez]}
            vals = self.corrections("yee_e", data, n)
        curl = curl_h_at_ez(*self.corrected_h(hx_new, hy_new, vals), self.h, 2)
        ez_new = ez + (dt / eps) * curl
        self.mask(ez=ez_new)
        self.E[n + 1] = ez_new

    def _fourth_step(self):
        n, dt = self.n, self.dt
        (a0, a1, a2, a3), (b1, b2, b3) = self.coef.alpha, self.coef.beta
        if n not in self.fH:
            self.fH[n] = self._fresh_f_h(n)
        Hl = [self.H[n - 0.5 - i] for i in range(4)]     # n-1/2, n-3/2, n-5/2, n-7/2
        f0, f1, f2 = self.fH[n], self.fH[n - 1], self.fH[n - 2]
        new = []
        for c in range(2):
            v = (-a3 * Hl[0][c] - a2 * Hl[1][c] - a1 * Hl[2][c] - a0 * Hl[3][c]
                 + dt * (b3 * f0[c] + b2 * f1[c] + b1 * f2[c]))
            new.append(v)
        self.mask(hx=new[0], hy=new[1])
        self.H[n + 0.5] = tuple(new)

        self.fE[n + 0.5] = self._fresh_f_e(n)
        El = [self.E[n - i] for i in range(4)]
        ez_new = (-a3 * El[0] - a2 * El[1] - a1 * El[2] - a0 * El[3]
                  + dt * (b3 * self.fE[n + 0.5] + b2 * self.fE[n - 0.5] + b1 * self.fE[n - 1.5]))
        self.mask(ez=ez_new)
        self.E[n + 1] = ez_new

    def _prune(self):
        n = self.n
        keep = 4 if self.config.kind == FOURTH else 2
        self.E = {l: v for l, v in self.E.items() if l > n - keep}
        self.H = {l: v for l, v in self.H.items() if l > n - keep - 0.5}
        self.fH = {l: v for l, v in self.fH.items() if l > n - 3}
        self.fE = {l: v for l, v in self.fE.items() if l > n - 3}

    # -- convenience --------------------------------------------------------------
    @property
    def t(self):
        return self.n * self.dt

    def fields(self):
        """Latest (hx, hy) at t - dt/2 and ez at t."""
        hx, hy = self.H[self.n - 0.5]
        return hx, hy, self.E[self.n]

    def run(self, t_final=None, callback=None):
        t_final = self.problem.t_final if t_final is None else t_final
        n_steps = int(round(t_final / self.dt))
        if abs(n_steps * self.dt - t_final) > 1e-9 * self.dt:
            raise ConfigError(f"t_final={t_final} is not a multiple of dt={self.dt}")
        if self.n is None:
            self.initialize()
        while self.n < n_steps:
            self.step()
            if callback is not None:
                callback(self)
        return self


def yee_initialize(problem, config, h):
    return Solver(problem, config, h).initialize()


def fourth_initialize(problem, config, h):
    if config.kind != FOURTH:
        raise ConfigError("fourth_initialize needs kind='fourth'")
    return Solver(problem, config, h).initialize()


def yee_step(solver: Solver):
    solver.step()
    return solver


def fourth_step(solver: Solver):
    solver.step()
    return solver
