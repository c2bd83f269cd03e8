import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfm_fdtd.grid import (STENCILS, GridError, StaggeredGrid, curl_ez_at_h, curl_h_at_ez,
                           discrete_divergence_h, read_field_csv, sync_periodic, write_field_csv)


def _grid(n, L=1.0):
    return StaggeredGrid.from_spacing((0.0, L, 0.0, L), L / n)


def test_layout_shapes_and_coords():
    g = _grid(8)
    assert g.shape("ez") == (8, 8) and g.shape("hx") == (8, 9) and g.shape("hy") == (9, 8)
    X, Y = g.coords("hx")
    assert X[0, 0] == pytest.approx(g.h / 2) and Y[0, 0] == 0.0
    X, Y = g.coords("hy")
    assert X[0, 0] == 0.0 and Y[0, 0] == pytest.approx(g.h / 2)


def test_grid_guards():
    with pytest.raises(GridError):
        StaggeredGrid.from_spacing((0.0, 1.0, 0.0, 1.0), 0.3)
    with pytest.raises(GridError):
        StaggeredGrid(0.0, 1.0, 0.0, 2.0, 10, 10)
    with pytest.raises(GridError):
        curl_h_at_ez(np.zeros((4, 5)), np.zeros((5, 4)), 0.1, 3)


@pytest.mark.parametrize("order,deg", [(2, 2), (4, 4)])
def test_stencil_exactness(order, deg):
    # f[i] sampled half a cell left of the output node at x = 0
    offsets, weights = STENCILS[order]
    for h in (0.1, 0.013):
        for p in range(deg + 1):
            for x0 in (0.0, 0.37):
                vals = [(x0 + (o - 0.5) * h) ** p for o in offsets]
                got = np.dot(weights, vals) / h
                want = p * x0 ** (p - 1) if p else 0.0
                assert abs(got - want) <= 1e-12 * max(1.0, abs(want)) * (1 / h if p == 0 else 1) + 1e-12 * abs(want), (p, h)
    # one degree too many breaks the identity for order 4 (degree 5 at x0 = 0 still vanishes by symmetry)
    if order == 4:
        h, x0 = 0.1, 0.3
        vals = [(x0 + (o - 0.5) * h) ** 5 for o in offsets]
        assert abs(np.dot(weights, vals) / h - 5 * x0 ** 4) > 1e-8


def _periodic_field(g, fam, f):
    X, Y = g.coords(fam)
    return f(X, Y)


def test_linear_and_cubic_derivatives_interior():
    g = _grid(20)
    hy = _periodic_field(g, "hy", lambda x, y: x + 0 * y)
    hx = np.zeros(g.shape("hx"))
    c = curl_h_at_ez(hx, hy, g.h, 2)
    np.testing.assert_allclose(c[1:-1, :], 1.0, atol=1e-12)   # away from the periodic wrap
    hy = _periodic_field(g, "hy", lambda x, y: x ** 3 + 0 * y)
    X, _ = g.coords("ez")
    c4 = curl_h_at_ez(hx, hy, g.h, 4)
    np.testing.assert_allclose(c4[2:-2, :], 3 * X[2:-2, :] ** 2, atol=1e-12)


def test_order2_cubic_richardson_ratio():
    errs = []
    for n in (20, 40):
        g = _grid(n)
        hy = _periodic_field(g, "hy", lambda x, y: x ** 3 + 0 * y)
        X, _ = g.coords("ez")
        c = curl_h_at_ez(np.zeros(g.shape("hx")), hy, g.h, 2)
        errs.append(np.abs(c[3:-3] - 3 * X[3:-3] ** 2).max())
    assert abs(errs[0] / errs[1] - 4.0) < 1e-6


def test_constant_and_linear_ez():
    g = _grid(16)
    cx, cy = curl_ez_at_h(np.full(g.shape("ez"), 3.0), g.h, 4)
    assert np.all(cx == 0.0) and np.all(cy == 0.0)
    ez = _periodic_field(g, "ez", lambda x, y: y + 0 * x)
    cx, _ = curl_ez_at_h(ez, g.h, 2)
    np.testing.assert_allclose(cx[:, 1:-1], -1.0, atol=1e-12)


def test_sine_order_four():
    errs = []
    hs = []
    for n in (20, 40, 80):
        g = _grid(n)
        ez = _periodic_field(g, "ez", lambda x, y: np.sin(2 * math.pi * x) + 0 * y)
        _, cy = curl_ez_at_h(ez, g.h, 4)
        X, _ = g.coords("hy")
        errs.append(np.abs(cy - 2 * math.pi * np.cos(2 * math.pi * X)).max())
        hs.append(g.h)
    orders = np.log(np.array(errs[:-1]) / errs[1:]) / np.log(2)
    assert orders.min() >= 3.9


@pytest.mark.parametrize("order", [2, 4])
def test_divergence(order):
    g = _grid(10)
    assert np.all(discrete_divergence_h(np.zeros(g.shape("hx")), np.zeros(g.shape("hy")), g.h, order) == 0)
    d = discrete_divergence_h(np.full(g.shape("hx"), 1.5), np.full(g.shape("hy"), -0.5), g.h, order)
    assert np.abs(d).max() < 1e-12
    # psi = sin(2 pi x) sin(4 pi y); equal wavenumbers would cancel the stencil errors exactly
    tp = 2 * math.pi
    errs = []
    for n in (20, 40):
        g = _grid(n)
        hx = _periodic_field(g, "hx", lambda x, y: 2 * tp * np.sin(tp * x) * np.cos(2 * tp * y))
        hy = _periodic_field(g, "hy", lambda x, y: -tp * np.cos(tp * x) * np.sin(2 * tp * y))
        errs.append(np.abs(discrete_divergence_h(hx, hy, g.h, order)).max())
    assert errs[0] > 0
    assert abs(math.log2(errs[0] / errs[1]) - order) < 0.2


@given(st.integers(4, 12), st.integers(4, 12), st.integers(0, 1000))
def test_discrete_div_curl_is_zero(nx, ny, seed):
    # curl of any Ez is discretely divergence free (periodic)
    rng = np.random.default_rng(seed)
    ez = rng.normal(size=(nx, ny))
    for order in (2, 4):
        cx, cy = curl_ez_at_h(ez, 0.1, order)
        assert np.abs(discrete_divergence_h(cx, cy, 0.1, order)).max() < 1e-10


@given(st.integers(0, 1000))
def test_periodic_copies_in_sync(seed):
    rng = np.random.default_rng(seed)
    cx, cy = curl_ez_at_h(rng.normal(size=(6, 7)), 0.2, 4)
    assert np.array_equal(cx[:, -1], cx[:, 0]) and np.array_equal(cy[-1, :], cy[0, :])
    hx, hy = rng.normal(size=(6, 8)), rng.normal(size=(7, 7))
    sync_periodic(hx, hy)
    assert np.array_equal(hx[:, -1], hx[:, 0])


def test_field_csv_round_trip(tmp_path):
    g = _grid(5)
    a = np.random.default_rng(0).normal(size=g.shape("hy"))
    path = tmp_path / "hy.csv"
    write_field_csv(path, g, "hy", a)
    assert path.read_text().splitlines()[0] == "x,y,value"
    back = read_field_csv(path)
    assert np.array_equal(back[:, 2], a.ravel())
    X, Y = g.coords("hy")
    assert np.array_equal(back[:, 0], X.ravel())
