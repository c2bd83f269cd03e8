"""Staggered TM_z grid and centered difference operators.

Layout (0-based indices, periodic in both directions):

* ``Ez[i, j]`` at ``(x_lo + (i + 1/2) h, y_lo + (j + 1/2) h)``, shape ``(nx, ny)``
* ``Hx[i, j]`` at ``(x_lo + (i + 1/2) h, y_lo + j h)``,        shape ``(nx, ny + 1)``
* ``Hy[i, j]`` at ``(x_lo + i h, y_lo + (j + 1/2) h)``,        shape ``(nx + 1, ny)``

The last column of ``Hx`` and the last row of ``Hy`` duplicate the first
one under the periodic identification; operators read only the unique part
and write both copies.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# (offsets, weights) of the staggered first-derivative stencils, applied as
# sum_k w_k f[i + o_k] / h where f[i] sits half a cell left of the output node
STENCILS = {
    2: ((0, 1), (-1.0, 1.0)),
    4: ((-1, 0, 1, 2), (1.0 / 24.0, -27.0 / 24.0, 27.0 / 24.0, -1.0 / 24.0)),
}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class StaggeredGrid:
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    nx: int
    ny: int

    def __post_init__(self):
        hx = (self.x_hi - self.x_lo) / self.nx
        hy = (self.y_hi - self.y_lo) / self.ny
        if abs(hx - hy) > 1e-12 * max(hx, hy):
            raise GridError(f"cells must be square (dx={hx}, dy={hy})")

    @classmethod
    def from_spacing(cls, domain, h: float) -> "StaggeredGrid":
        x_lo, x_hi, y_lo, y_hi = domain
        nx = round((x_hi - x_lo) / h)
        ny = round((y_hi - y_lo) / h)
        if abs(nx * h - (x_hi - x_lo)) > 1e-9 * h or abs(ny * h - (y_hi - y_lo)) > 1e-9 * h:
            raise GridError(f"h={h} does not divide the domain {domain}")
        return cls(x_lo, x_hi, y_lo, y_hi, nx, ny)

    @property
    def h(self) -> float:
        return (self.x_hi - self.x_lo) / self.nx

    def _axes(self, family):
        h = self.h
        xc = self.x_lo + (np.arange(self.nx) + 0.5) * h
        yc = self.y_lo + (np.arange(self.ny) + 0.5) * h
        xe = self.x_lo + np.arange(self.nx + 1) * h
        ye = self.y_lo + np.arange(self.ny + 1) * h
        return {"ez": (xc, yc), "hx": (xc, ye), "hy": (xe, yc)}[family]

    def coords(self, family: str):
        """Meshgrid (``indexing='ij'``) of node coordinates for ``ez``, ``hx`` or ``hy``."""
        xa, ya = self._axes(family)
        return np.meshgrid(xa, ya, indexing="ij")

    def axes(self, family: str):
        return self._axes(family)

    def shape(self, family: str) -> tuple[int, int]:
        return {"ez": (self.nx, self.ny), "hx": (self.nx, self.ny + 1),
                "hy": (self.nx + 1, self.ny)}[family]


@dataclass
class FieldState:
    """TM_z fields on a staggered grid plus static Plus-region masks."""

    grid: StaggeredGrid
    ez: np.ndarray
    hx: np.ndarray
    hy: np.ndarray
    plus_ez: np.ndarray
    plus_hx: np.ndarray
    plus_hy: np.ndarray
    t_e: float = 0.0
    t_h: float = 0.0
    extra: dict = field(default_factory=dict)

    @classmethod
    def zeros(cls, grid: StaggeredGrid, plus_ez=None, plus_hx=None, plus_hy=None):
        def ones(fam):
            return np.ones(grid.shape(fam), dtype=bool)
        return cls(grid,
                   np.zeros(grid.shape("ez")), np.zeros(grid.shape("hx")), np.zeros(grid.shape("hy")),
                   ones("ez") if plus_ez is None else plus_ez,
                   ones("hx") if plus_hx is None else plus_hx,
                   ones("hy") if plus_hy is None else plus_hy)

    def apply_mask(self):
        self.ez[~self.plus_ez] = 0.0
        self.hx[~self.plus_hx] = 0.0
        self.hy[~self.plus_hy] = 0.0


def _diff(u, axis, h, order):
    """Staggered derivative of a periodic array ``u`` (unique nodes only).

    Output node ``i`` lies half a cell right of ``u[i]``.
    """
    offsets, weights = STENCILS[order]
    lo, hi = -min(offsets), max(offsets)
    n = u.shape[axis]
    idx = np.arange(-lo, n + hi) % n
    up = np.take(u, idx, axis=axis)
    out = np.zeros_like(u)
    for o, w in zip(offsets, weights):
        sl = [slice(None)] * u.ndim
        sl[axis] = slice(o + lo, o + lo + n)
        out += w * up[tuple(sl)]
    return out / h


def sync_periodic(hx, hy):
    hx[:, -1] = hx[:, 0]
    hy[-1, :] = hy[0, :]


def curl_h_at_ez(hx, hy, h, order=2):
    """dHy/dx - dHx/dy at Ez nodes."""
    if order not in STENCILS:
        raise GridError(f"order must be 2 or 4, got {order}")
    return _diff(hy[:-1, :], 0, h, order) - _diff(hx[:, :-1], 1, h, order)


def curl_ez_at_h(ez, h, order=2):
    """(-dEz/dy at Hx nodes, dEz/dx at Hy nodes)."""
    if order not in STENCILS:
        raise GridError(f"order must be 2 or 4, got {order}")
    # Hx node j sits half a cell right of Ez[j-1]
    dy = _diff(np.roll(ez, 1, axis=1), 1, h, order)
    dx = _diff(np.roll(ez, 1, axis=0), 0, h, order)
    cx = np.empty((ez.shape[0], ez.shape[1] + 1))
    cy = np.empty((ez.shape[0] + 1, ez.shape[1]))
    cx[:, :-1] = -dy
    cy[:-1, :] = dx
    sync_periodic(cx, cy)
    return cx, cy


def discrete_divergence_h(hx, hy, h, order=2):
    """dHx/dx + dHy/dy at cell corners ``(x_lo + i h, y_lo + j h)``, shape (nx, ny)."""
    if order not in STENCILS:
        raise GridError(f"order must be 2 or 4, got {order}")
    ux = hx[:, :-1]
    uy = hy[:-1, :]
    return (_diff(np.roll(ux, 1, axis=0), 0, h, order)
            + _diff(np.roll(uy, 1, axis=1), 1, h, order))


def curl_h_state(state: FieldState, order=2):
    return curl_h_at_ez(state.hx, state.hy, state.grid.h, order)


def curl_ez_state(state: FieldState, order=2):
    return curl_ez_at_h(state.ez, state.grid.h, order)


def write_field_csv(path, grid: StaggeredGrid, family: str, values):
    """One row per node: x, y, value with 17 significant digits."""
    X, Y = grid.coords(family)
    data = np.column_stack([X.ravel(), Y.ravel(), np.asarray(values).ravel()])
    np.savetxt(path, data, delimiter=",", header="x,y,value", comments="", fmt="%.17g")


def read_field_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1)
