import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cfm_fdtd import cfm_core
from cfm_fdtd.geometry import Orientation, Polygon
from cfm_fdtd.grid import StaggeredGrid, curl_ez_at_h, curl_h_at_ez
from cfm_fdtd.harness import solver_error
from cfm_fdtd.patches import boundary_pieces, generate_fictitious_interfaces, segment_term
from cfm_fdtd.schemes import (CASES, COND_WARN, ConfigError, PlanningError, SchemeConfig, SchemeError, Solver,
                              derivative_valid_masks, fourth_initialize, multistep_coefficients,
                              needed_minus_nodes, plan_corrections, plus_curls, region_masks,
                              write_patch_diagnostics)
from cfm_fdtd.solutions import (InitMode, ProblemSpec, circular_cavity, pulsed_wave_scattering)

# ---------------------------------------------------------------------------
# multistep coefficients
# ---------------------------------------------------------------------------


def test_coefficients_default():
    c = multistep_coefficients(-1.0, 1.045)
    assert c.beta[0] == 1.045 and c.beta[1] == -1.0
    assert abs(c.beta[2] - 23 / 22) < 1e-15
    assert abs(c.alpha[0] - (-1.894e-5)) < 1e-8
    assert abs(sum(c.alpha) + 1.0) < 1e-12


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_coefficients_consistency(s, t):
    c = multistep_coefficients(s, t)
    a0, a1, a2, a3 = c.alpha
    b1, b2, b3 = c.beta
    assert abs(sum(c.alpha) + 1.0) < 1e-12
    # exact on y' = 1 with y at levels n+1 .. n-3 and f at half levels
    lhs = 1.0 + a3 * 0.0 + a2 * -1.0 + a1 * -2.0 + a0 * -3.0
    assert abs(lhs - (b1 + b2 + b3)) < 1e-12


def _surrogate_error(n_steps, T=1.0, w=2 * math.pi):
    """u' = w v, v' = -w u on staggered levels with the four-level scheme."""
    (a0, a1, a2, a3), (b1, b2, b3) = multistep_coefficients().alpha, multistep_coefficients().beta
    dt = T / n_steps
    u = {n: math.cos(w * n * dt) for n in range(-3, 1)}
    v = {n + 0.5: -math.sin(w * (n + 0.5) * dt) for n in range(-4, 0)}
    for n in range(n_steps):
        v[n + 0.5] = (-a3 * v[n - 0.5] - a2 * v[n - 1.5] - a1 * v[n - 2.5] - a0 * v[n - 3.5]
                      - dt * w * (b3 * u[n] + b2 * u[n - 1] + b1 * u[n - 2]))
        u[n + 1] = (-a3 * u[n] - a2 * u[n - 1] - a1 * u[n - 2] - a0 * u[n - 3]
                    + dt * w * (b3 * v[n + 0.5] + b2 * v[n - 0.5] + b1 * v[n - 1.5]))
    return abs(u[n_steps] - math.cos(w * T)) + abs(v[n_steps - 0.5] + math.sin(w * (T - 0.5 * dt)))


def test_scalar_ode_temporal_order():
    e = [_surrogate_error(n) for n in (40, 80, 160, 320)]
    orders = [math.log2(e[i] / e[i + 1]) for i in range(3)]
    assert min(orders) >= 3.9


def test_config_guards():
    with pytest.raises(ConfigError):
        SchemeConfig("leapfrog")
    with pytest.raises(ConfigError):
        SchemeConfig("yee", dt_ratio=0.0)
    with pytest.raises(ConfigError):
        SchemeConfig("yee", c_f=-1.0)
    assert SchemeConfig("yee").penalty_f(0.1) == pytest.approx(0.05)
    assert SchemeConfig("fourth").penalty_f(0.1) == pytest.approx(0.0125)
    assert SchemeConfig("fourth", cf_scale=1.0).penalty_f(0.1) == pytest.approx(0.05)
    assert SchemeConfig("yee", c_f=0.3).penalty_f(0.1) == 0.3
    assert SchemeConfig("yee").degree == 2 and SchemeConfig("fourth").degree == 3


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

def _band(h=0.05):
    # Plus is the band -0.5 <= x <= 0; both edges fall between Ez columns
    poly = Polygon(np.array([[-0.5, -5.0], [0.0, -5.0], [0.0, 5.0], [-0.5, 5.0]]), Orientation.PLUS_INSIDE)
    grid = StaggeredGrid.from_spacing((-1.0, 1.0, -1.0, 1.0), h)
    return poly, grid, region_masks(grid, [poly])


def test_vertical_boundary_plan_order2():
    poly, grid, masks = _band()
    need = needed_minus_nodes(masks, 2)
    assert not need["hx"].any() and not need["hy"].any()
    X, _ = grid.coords("ez")
    cols = sorted({round(x, 9) for x in X[need["ez"]]})
    assert cols == [round(-0.5 - grid.h / 2, 9), round(grid.h / 2, 9)]
    assert need["ez"].sum() == 2 * grid.ny


def test_vertical_boundary_plan_order4():
    poly, grid, masks = _band()
    need = needed_minus_nodes(masks, 4)
    X, _ = grid.coords("ez")
    cols = sorted({round(x, 9) for x in X[need["ez"]]})
    h = grid.h
    assert cols == [round(v, 9) for v in (-0.5 - 1.5 * h, -0.5 - 0.5 * h, 0.5 * h, 1.5 * h)]
    # Ez just inside reads Hy two edges outside
    assert need["hy"].sum() == 2 * grid.ny and not need["hx"].any()


def test_far_nodes_not_planned():
    p = circular_cavity()
    s = Solver(p, SchemeConfig("yee"), 1 / 20)
    for fam, e in s.plan.entries.items():
        r = np.hypot(e.xy[:, 0], e.xy[:, 1])
        assert np.all(np.abs(r - 1.0) <= 2 * s.h + 1e-12), fam


def test_small_patches_fail_planning():
    p = circular_cavity()
    with pytest.raises(PlanningError):
        Solver(p, SchemeConfig("fourth", beta=1.0), 1 / 20)


# ---------------------------------------------------------------------------
# Plus-only curls used at initialization
# ---------------------------------------------------------------------------

def test_plus_curls_exact_on_quadratics():
    poly, grid, masks = _band(0.05)
    X, Y = grid.coords("ez")
    ez = np.where(masks["ez"], X ** 2 + 0.5 * X, 0.0)
    vals, ok = plus_curls(masks, grid.h, ez=ez)
    Xh, _ = grid.coords("hy")
    sel = ok["hy"]
    assert sel.sum() > 0
    np.testing.assert_allclose(vals["hy"][sel], (2 * Xh + 0.5)[sel], atol=1e-11)
    # one-sided formulas are in use next to both edges
    assert ok["hy"][np.isclose(Xh, 0.0)].all()
    assert not (ok["hy"] & ~masks["hy"]).any()
    assert np.array_equal(derivative_valid_masks(masks)["hy"], ok["hy"])


# ---------------------------------------------------------------------------
# solver behaviour
# ---------------------------------------------------------------------------

def _free_problem(fields, domain=(0.0, 1.0, 0.0, 1.0), t_final=0.5, init=InitMode.ANALYTIC_HISTORY):
    return ProblemSpec("free", domain, [], fields=fields, t_final=t_final, init_mode=init)


def _plane_wave():
    tp = 2 * math.pi
    return {"hx": lambda x, y, t: 0.0 * x, "hy": lambda x, y, t: -np.sin(tp * (x - t)) + 0 * y,
            "ez": lambda x, y, t: np.sin(tp * (x - t)) + 0 * y}


def _plain_yee(ez, hx, hy, h, dt, n):
    ez, hx, hy = ez.copy(), hx.copy(), hy.copy()
    for _ in range(n):
        cx, cy = curl_ez_at_h(ez, h, 2)
        hx = hx + dt * cx
        hy = hy + dt * cy
        ez = ez + dt * curl_h_at_ez(hx, hy, h, 2)
    return ez, hx, hy


def test_no_boundary_yee_is_plain_fdtd_bitwise():
    p = _free_problem(_plane_wave())
    s = Solver(p, SchemeConfig("yee"), 1 / 16)
    s.initialize()
    ez0, (hx0, hy0) = s.E[0].copy(), tuple(a.copy() for a in s.H[-0.5])
    for _ in range(24):
        s.step()
    ez, hx, hy = _plain_yee(ez0, hx0, hy0, s.h, s.dt, 24)
    assert s.plan.size() == 0
    assert np.array_equal(s.E[24], ez)
    assert np.array_equal(s.H[23.5][0], hx) and np.array_equal(s.H[23.5][1], hy)


def test_no_boundary_fourth_is_plain_multistep_bitwise():
    p = _free_problem(_plane_wave())
    s = Solver(p, SchemeConfig("fourth"), 1 / 16).initialize()
    E = {n: s.E[n].copy() for n in range(-3, 1)}
    H = {l: tuple(a.copy() for a in s.H[l]) for l in (-3.5, -2.5, -1.5, -0.5)}
    for _ in range(12):
        s.step()
    (a0, a1, a2, a3), (b1, b2, b3) = s.coef.alpha, s.coef.beta
    h, dt = s.h, s.dt
    fh = lambda n: curl_ez_at_h(E[n], h, 4)
    fe = lambda l: curl_h_at_ez(*H[l], h, 4)
    for n in range(12):
        fs = [fh(n), fh(n - 1), fh(n - 2)]
        H[n + 0.5] = tuple(-a3 * H[n - 0.5][c] - a2 * H[n - 1.5][c] - a1 * H[n - 2.5][c] - a0 * H[n - 3.5][c]
                           + dt * (b3 * fs[0][c] + b2 * fs[1][c] + b1 * fs[2][c]) for c in range(2))
        E[n + 1] = (-a3 * E[n] - a2 * E[n - 1] - a1 * E[n - 2] - a0 * E[n - 3]
                    + dt * (b3 * fe(n + 0.5) + b2 * fe(n - 0.5) + b1 * fe(n - 1.5)))
    assert np.array_equal(s.E[12], E[12])
    assert np.array_equal(s.H[11.5][0], H[11.5][0]) and np.array_equal(s.H[11.5][1], H[11.5][1])


@pytest.mark.parametrize("kind", ["yee", "fourth"])
def test_uniform_fields_unchanged(kind):
    p = _free_problem({"hx": lambda x, y, t: 0 * x, "hy": lambda x, y, t: 0 * x,
                       "ez": lambda x, y, t: 1 + 0 * x})
    s = Solver(p, SchemeConfig(kind), 1 / 10).initialize()
    for _ in range(10):
        s.step()
    hx, hy, ez = s.fields()
    # order-4 weights sum to zero only up to roundoff
    assert np.abs(ez - 1).max() < 1e-13 and np.abs(hx).max() < 1e-13 and np.abs(hy).max() < 1e-13


def test_free_space_yee_second_order():
    p = _free_problem(_plane_wave())
    errs = []
    for n in (20, 40, 80):
        s = Solver(p, SchemeConfig("yee"), 1 / n).run(0.5)
        errs.append(solver_error(s).err_U_L2)
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(abs(o - 2.0) <= 0.1 for o in orders), orders


@pytest.mark.parametrize("kind", ["yee", "fourth"])
def test_mask_invariance(kind):
    p = circular_cavity()
    s = Solver(p, SchemeConfig(kind), 1 / 20).initialize()
    for _ in range(100):
        s.step()
        hx, hy, ez = s.fields()
        assert not ez[~s.masks["ez"]].any()
        assert not hx[~s.masks["hx"]].any() and not hy[~s.masks["hy"]].any()
    assert np.isfinite(ez).all()


def test_zero_data_stays_zero():
    p = circular_cavity()
    p.fields = {f: (lambda x, y, t: 0.0 * x) for f in ("hx", "hy", "ez")}
    for kind in ("yee", "fourth"):
        s = Solver(p, SchemeConfig(kind), 1 / 20).initialize()
        for _ in range(6):
            s.step()
        assert all(not a.any() for a in s.fields())


def test_operator_matches_direct_patch_solve():
    p = circular_cavity()
    s = Solver(p, SchemeConfig("yee"), 1 / 20)
    rng = np.random.default_rng(3)
    case = CASES["yee_h"]
    data = {"hx": [rng.normal(size=s.grid.shape("hx")) for _ in range(2)],
            "hy": [rng.normal(size=s.grid.shape("hy")) for _ in range(2)],
            "ez": [rng.normal(size=s.grid.shape("ez")) for _ in range(2)]}
    got = s.operator("yee_h").apply(data)["ez"]
    entry = s.plan.entries["ez"]
    dt, k = s.dt, s.k
    hb = cfm_core.lagrange_time_basis([(kd, t * dt) for kd, t in case.h_conds])
    eb = cfm_core.lagrange_time_basis([(kd, t * dt) for kd, t in case.e_conds])
    for pid in np.unique(entry.patch)[:6]:
        patch = s.patches[int(pid)]
        segs = generate_fictitious_interfaces(patch, s.grid, s.masks)
        terms, flat = [], []
        for fam_segs in segs.values():
            for seg in fam_segs:
                e = seg.family == "ez"
                t = segment_term(seg, k, k + 2, (-dt, 0.0) if e else (-1.5 * dt, -0.5 * dt),
                                 eb if e else hb, 2, s.grid.shape(seg.family))
                terms.append(t)
                flat.extend(data[seg.family][c].ravel()[t.nodes] for c in range(2))
        prob = cfm_core.PatchProblem(int(pid), patch.center, patch.side, -1.5 * dt, 0.0,
                                     boundary_pieces(patch, p.curves, k + 2), terms)
        sol = cfm_core.solve(cfm_core.assemble_system(prob, k, 1.0, s.c_f, data=np.concatenate(flat)), prob, k)
        rows = np.nonzero(entry.patch == pid)[0]
        want = cfm_core.evaluate(sol, "ez", entry.xy[rows, 0], entry.xy[rows, 1], np.zeros(len(rows)))
        np.testing.assert_allclose(got[rows], want, rtol=1e-9, atol=1e-9 * np.abs(want).max())


def test_first_steps_within_envelope():
    p = circular_cavity()
    s = Solver(p, SchemeConfig("yee"), 1 / 20).initialize()
    s.step()
    s.step()
    assert solver_error(s).err_U_L2 < 0.05          # full-run error at T=0.5 is about 0.050


def test_fourth_needs_history_and_initialize_before_step():
    p = circular_cavity()
    s = Solver(p, SchemeConfig("yee"), 1 / 20)
    with pytest.raises(SchemeError):
        s.step()
    p.fields = {}
    with pytest.raises(ConfigError):
        fourth_initialize(p, SchemeConfig("fourth"), 1 / 20)


def test_scattering_init_corrections_small():
    p = pulsed_wave_scattering("circle")
    s = Solver(p, SchemeConfig("yee", beta=p.beta), 1 / 40).initialize()
    hx, hy = s.H[-0.5]
    ez = s.E[0]
    curls, _ = plus_curls(s.masks, s.h, ez, hx, hy)
    v = s.corrections("yee_h_init", {"hx": [hx, curls["hx"]], "hy": [hy, curls["hy"]],
                                     "ez": [ez, curls["ez"]]}, 0)
    assert np.abs(v["ez"]).max() <= 2e-3 * np.abs(ez).max()


def test_run_rejects_off_grid_time():
    s = Solver(circular_cavity(), SchemeConfig("yee"), 1 / 20)
    with pytest.raises(ConfigError):
        s.run(0.5 + 0.3 * s.dt)


@pytest.mark.parametrize("kind,case", [("yee", "yee_h"), ("fourth", "fourth_h")])
def test_circle_patches_well_conditioned(kind, case, tmp_path):
    p = circular_cavity()
    s = Solver(p, SchemeConfig(kind, p.dt_ratio, beta=p.beta), 1 / 40)
    op = s.operator(case)
    conds = [d[3] for d in op.diagnostics]
    assert max(conds) < COND_WARN
    path = tmp_path / "patches.csv"
    write_patch_diagnostics(path, op)
    rows = list(csv.reader(open(path)))
    assert rows[0][-1] == "cond" and len(rows) == len(conds) + 1
    np.testing.assert_allclose([float(r[-1]) for r in rows[1:]], conds, rtol=1e-6)


@pytest.mark.parametrize("kind,case,lo", [("yee", "yee_h", 2.5), ("fourth", "fourth_h", 3.3)])
def test_corrections_converge_with_exact_data(kind, case, lo):
    # local error of the corrected values is O(h^(k+1)) when fed exact data
    p = circular_cavity()
    c = CASES[case]
    errs = []
    for n in (20, 40, 80):
        s = Solver(p, SchemeConfig(kind, p.dt_ratio, beta=p.beta), 1 / n)
        t = 0.3
        data = {f: [s.sample(f, t + lvl * s.dt) for _, lvl in (c.e_conds if f == "ez" else c.h_conds)]
                for f in ("hx", "hy", "ez")}
        got = s.operator(case).apply(data, t, p.gamma_data)["ez"]
        xy = s.plan.entries["ez"].xy
        errs.append(np.abs(got - p.field("ez", xy[:, 0], xy[:, 1], t)).max())
    assert math.log2(errs[-2] / errs[-1]) >= lo, errs
