"""Local patches along the embedded boundary and their fictitious interfaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cfm_core import BoundaryPiece, FictitiousTerm, gauss
from .geometry import BoundaryCurve
from .grid import StaggeredGrid

FAMILIES = ("hx", "hy", "ez")


class PatchConfigError(ValueError):
    pass


class PatchDegeneracyError(RuntimeError):
    def __init__(self, patch_id, detail):
        super().__init__(f"patch {patch_id}: {detail}")
        self.patch_id = patch_id


def n_patches(length: float, h: float, alpha: float = 2.0) -> int:
    if alpha <= 0 or h <= 0:
        raise PatchConfigError("alpha and h must be positive")
    # round half up
    return int(np.floor(length / (alpha * h) + 0.5)) + 1


def build_patch_centers(curve: BoundaryCurve, h: float, alpha: float = 2.0):
    """Centers equally spaced in the curve parameter.

    Returns ``(points, params)``.  On a closed curve the first and last centers
    coincide; ties in :func:`associate_nodes` go to the lower index, so the
    last one never serves a node.
    """
    ns = n_patches(curve.arc_length(), h, alpha)
    if ns < 2:
        raise PatchConfigError(f"boundary too short for h={h}, alpha={alpha} (N_s={ns})")
    sa, sb = curve.param_range
    s = sa + np.arange(ns) * (sb - sa) / (ns - 1)
    return curve.eval_point(s), s


def associate_nodes(points, centers, chunk: int = 4096) -> np.ndarray:
    """Index of the closest center for each point (lowest index on ties)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    centers = np.asarray(centers, dtype=float)
    if len(centers) == 0:
        raise PatchConfigError("no patch centers")
    out = np.empty(len(points), dtype=int)
    for a in range(0, len(points), chunk):
        p = points[a:a + chunk]
        d2 = ((p[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        out[a:a + chunk] = np.argmin(d2, axis=1)
    return out


def associate_node(x_d, centers) -> int:
    return int(associate_nodes(np.asarray(x_d, float)[None, :], centers)[0])


@dataclass
class Segment:
    """Run of consecutive Plus nodes of one family along one grid line.

    ``orientation`` is ``"v"`` (along y, normal (1, 0)) or ``"h"`` (along x,
    normal (0, 1)).  ``nodes`` are (i, j) index pairs in order.
    """

    family: str
    orientation: str
    nodes: np.ndarray
    coords: np.ndarray

    @property
    def normal(self):
        return (1.0, 0.0) if self.orientation == "v" else (0.0, 1.0)

    @property
    def kind(self):
        # Hx on a horizontal line is -n2 x H, Hy on a vertical one n1 x H
        if self.family == "ez":
            return "tangential_e"
        if (self.family, self.orientation) in (("hx", "h"), ("hy", "v")):
            return "tangential_h"
        return "normal_h"


@dataclass
class LocalPatch:
    patch_id: int
    center: np.ndarray
    side: float
    boundary_params: list = field(default_factory=list)  # (curve_index, s0, s1)
    served: dict = field(default_factory=dict)            # family -> flat node indices

    @property
    def half(self):
        return 0.5 * self.side


def boundary_pieces(patch: LocalPatch, curves, n_line: int) -> list[BoundaryPiece]:
    pieces = []
    for ci, s0, s1 in patch.boundary_params:
        c = curves[ci]
        s, w = gauss(n_line, s0, s1)
        pieces.append(BoundaryPiece(c.eval_point(s), c.unit_normal(s), w * c.speed(s)))
    return pieces


def locate_boundary(patch: LocalPatch, curves):
    patch.boundary_params = [(ci, s0, s1) for ci, c in enumerate(curves)
                             for s0, s1 in c.boundary_segments_in_box(patch.center, patch.half)]
    return patch.boundary_params


def _index_range(axis_vals, lo, hi):
    tol = 1e-9 * (axis_vals[1] - axis_vals[0])
    return np.nonzero((axis_vals >= lo - tol) & (axis_vals <= hi + tol))[0]


def _runs(flags, min_len):
    """(start, stop) of maximal True runs with length >= min_len."""
    out = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            if i - start >= min_len:
                out.append((start, i))
            start = None
    if start is not None and len(flags) - start >= min_len:
        out.append((start, len(flags)))
    return out


def generate_fictitious_interfaces(patch: LocalPatch, grid: StaggeredGrid, masks: dict,
                                   min_nodes: int = 3, check: bool = True) -> dict:
    """Maximal grid-aligned Plus runs of each node family inside the patch.

    ``masks`` maps family name to a boolean array of usable nodes (Plus, and
    possibly further restricted).  Returns ``{family: [Segment, ...]}``.
    Raises :class:`PatchDegeneracyError` if ``check`` and some family lacks
    a segment of either orientation.
    """
    cx, cy = patch.center
    out = {}
    for fam in FAMILIES:
        xa, ya = grid.axes(fam)
        ii = _index_range(xa, cx - patch.half, cx + patch.half)
        jj = _index_range(ya, cy - patch.half, cy + patch.half)
        segs = []
        if len(ii) and len(jj):
            sub = masks[fam][np.ix_(ii, jj)]
            for a, i in enumerate(ii):                 # vertical lines
                for r0, r1 in _runs(sub[a, :], min_nodes):
                    jn = jj[r0:r1]
                    nodes = np.column_stack([np.full(len(jn), i), jn])
                    segs.append(Segment(fam, "v", nodes, np.column_stack([np.full(len(jn), xa[i]), ya[jn]])))
            for b, j in enumerate(jj):                 # horizontal lines
                for r0, r1 in _runs(sub[:, b], min_nodes):
                    im = ii[r0:r1]
                    nodes = np.column_stack([im, np.full(len(im), j)])
                    segs.append(Segment(fam, "h", nodes, np.column_stack([xa[im], np.full(len(im), ya[j])])))
        out[fam] = segs
        if check:
            for o in ("v", "h"):
                if not any(s.orientation == o for s in segs):
                    name = "vertical" if o == "v" else "horizontal"
                    raise PatchDegeneracyError(
                        patch.patch_id, f"no {name} fictitious interface for {fam} "
                        f"(needs >= {min_nodes} usable nodes in a grid line)")
    return out


def fit_weights(node_pos, eval_pos, degree: int) -> np.ndarray:
    """Least-squares polynomial fit as a linear map from nodal to evaluated values."""
    node_pos = np.asarray(node_pos, float)
    if len(node_pos) < 3:
        raise PatchDegeneracyError(None, "fewer than 3 nodes for a spatial interpolant")
    degree = min(degree, len(node_pos) - 1)
    c = 0.5 * (node_pos[0] + node_pos[-1])
    s = max(0.5 * abs(node_pos[-1] - node_pos[0]), 1e-300)
    V = np.vander((node_pos - c) / s, degree + 1, increasing=True)
    Ve = np.vander((np.asarray(eval_pos, float) - c) / s, degree + 1, increasing=True)
    return Ve @ np.linalg.pinv(V)


def segment_term(seg: Segment, space_degree: int, n_line: int, window, time_basis,
                 n_conditions: int, shape) -> FictitiousTerm:
    """Quadrature/data record of one fictitious segment for the assembler."""
    axis = 1 if seg.orientation == "v" else 0
    pos = seg.coords[:, axis]
    q, w = gauss(n_line, pos[0], pos[-1])
    pts = np.repeat(seg.coords[:1], n_line, axis=0).astype(float)
    pts[:, axis] = q
    L = fit_weights(pos, q, space_degree)
    flat = np.ravel_multi_index((seg.nodes[:, 0], seg.nodes[:, 1]), shape)
    return FictitiousTerm(seg.family, pts, w, L, flat, tuple(window), time_basis,
                          n_conditions, seg.normal)


class SpaceTimeInterpolant:
    """Interpolant of FD data on a segment: least squares in space, exact in time.

    ``snapshots`` is a list of nodal value arrays, one per time condition,
    combined with ``time_basis`` (see :func:`cfm_core.lagrange_time_basis`).
    """

    def __init__(self, segment: Segment, snapshots, time_basis, space_degree: int = 2):
        self.segment = segment
        self.axis = 1 if segment.orientation == "v" else 0
        self.pos = segment.coords[:, self.axis]
        self.snapshots = [np.asarray(s, float) for s in snapshots]
        self.time_basis = time_basis
        self.degree = space_degree
        if len(self.pos) < 3:
            raise PatchDegeneracyError(None, "fewer than 3 usable spatial nodes")

    def __call__(self, s, t):
        s = np.atleast_1d(np.asarray(s, float))
        t = np.atleast_1d(np.asarray(t, float))
        L = fit_weights(self.pos, s, self.degree)
        phi = self.time_basis(t)
        vals = np.stack([L @ snap for snap in self.snapshots], axis=1)   # (n_s, n_cond)
        return np.einsum("sc,tc->st", vals, phi)

    def node_residual(self, t):
        return self(self.pos, t) - np.stack([sum(p * snap for p, snap in zip(self.time_basis([tt])[0], self.snapshots))
                                             for tt in np.atleast_1d(t)], axis=1)


def build_interpolant(segment: Segment, snapshots, time_basis, space_degree: int = 2):
    return SpaceTimeInterpolant(segment, snapshots, time_basis, space_degree)
