"""Experiment driver: error norms, convergence tables, long runs and reference grids."""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .cfm_core import PatchIllPosedError
from .grid import write_field_csv
from .patches import PatchDegeneracyError
from .schemes import ConfigError, SchemeConfig, SchemeError, Solver
from .solutions import ProblemError, ProblemSpec, get_problem

log = logging.getLogger(__name__)

FAMILIES = ("hx", "hy", "ez")


class NumericalFailure(RuntimeError):
    """Run aborted by an ill-posed patch, a degenerate patch or blow-up."""


# ---------------------------------------------------------------------------
# error reports
# ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    h: float
    err_l2: dict = field(default_factory=dict)
    err_linf: dict = field(default_factory=dict)
    err_U_L2: float = math.nan
    err_U_Linf: float = math.nan
    n_nodes: dict = field(default_factory=dict)
    wall_time: float = 0.0
    t_final: float = 0.0
    fields: dict | None = None


def unique_view(family, a):
    """Drop the periodic duplicate row/column of the H arrays."""
    if family == "hx":
        return a[:, :-1]
    if family == "hy":
        return a[:-1, :]
    return a


def error_from_differences(h, diffs: dict, masks: dict) -> ErrorReport:
    rep = ErrorReport(h)
    total = 0.0
    linf = 0.0
    for fam in FAMILIES:
        d = unique_view(fam, diffs[fam])[unique_view(fam, masks[fam])]
        s = float(np.sum(d * d))
        rep.err_l2[fam] = math.sqrt(h * h * s)
        rep.err_linf[fam] = float(np.max(np.abs(d))) if d.size else 0.0
        rep.n_nodes[fam] = int(d.size)
        total += s
        linf = max(linf, rep.err_linf[fam])
    rep.err_U_L2 = math.sqrt(h * h * total)
    rep.err_U_Linf = linf
    return rep


def solver_error(solver: Solver) -> ErrorReport:
    """Error against the exact fields: H at t - dt/2, E at t, Plus nodes only."""
    if not solver.problem.exact:
        raise ProblemError(f"{solver.problem.name} has no exact solution")
    hx, hy, ez = solver.fields()
    t, dt = solver.t, solver.dt
    diffs = {"hx": hx - solver.sample("hx", t - 0.5 * dt),
             "hy": hy - solver.sample("hy", t - 0.5 * dt),
             "ez": ez - solver.sample("ez", t)}
    rep = error_from_differences(solver.h, diffs, solver.masks)
    rep.t_final = t
    return rep


def _guard(fn):
    try:
        return fn()
    except (PatchIllPosedError, PatchDegeneracyError, SchemeError, FloatingPointError) as exc:
        raise NumericalFailure(str(exc)) from exc


def run(problem: ProblemSpec, config: SchemeConfig, h: float, t_final=None,
        keep_fields: bool = False, dump_dir=None, callback=None) -> ErrorReport:
    """Initialize, step to the final time and report errors (or fields)."""
    t_final = problem.t_final if t_final is None else t_final
    t0 = time.perf_counter()

    def go():
        s = Solver(problem, config, h)
        s.run(t_final, callback=callback)
        return s

    solver = _guard(go)
    hx, hy, ez = solver.fields()
    if not all(np.isfinite(a).all() for a in (hx, hy, ez)):
        raise NumericalFailure(f"{problem.name}: non-finite fields at t={solver.t}")
    if problem.exact:
        rep = solver_error(solver)
    else:
        rep = ErrorReport(solver.h, t_final=solver.t)
    rep.wall_time = time.perf_counter() - t0
    if keep_fields or not problem.exact:
        rep.fields = {"hx": hx, "hy": hy, "ez": ez, "masks": solver.masks, "grid": solver.grid,
                      "dt": solver.dt, "n": solver.n}
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
        for fam, a in zip(FAMILIES, (hx, hy, ez)):
            write_field_csv(os.path.join(dump_dir, f"{fam}_h{round(1 / solver.h)}.csv"), solver.grid, fam, a)
    log.info("%s %s h=%g: err_U=%.3e (%.1fs)", problem.name, config.kind, h, rep.err_U_L2, rep.wall_time)
    return rep


# ---------------------------------------------------------------------------
# convergence tables
# ---------------------------------------------------------------------------

def observed_orders(hs, errs):
    hs, errs = np.asarray(hs, float), np.asarray(errs, float)
    return np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])


@dataclass
class ConvergenceTable:
    reports: list = field(default_factory=list)
    failed: tuple | None = None     # (h, message) of an aborted run

    @property
    def hs(self):
        return [r.h for r in self.reports]

    @property
    def errors(self):
        return [r.err_U_L2 for r in self.reports]

    @property
    def orders(self):
        return observed_orders(self.hs, self.errors) if len(self.reports) > 1 else np.array([])

    @property
    def final_order(self):
        o = self.orders
        return float(o[-1]) if len(o) else math.nan

    def rows(self):
        orders = [math.nan] + list(self.orders)
        for r, p in zip(self.reports, orders):
            yield [r.h, r.err_l2.get("hx", math.nan), r.err_l2.get("hy", math.nan),
                   r.err_l2.get("ez", math.nan), r.err_U_L2, r.err_U_Linf, p]

    def write_csv(self, path):
        write_errors_csv(path, list(self.rows()), self.failed)


ERRORS_HEADER = ["h", "err_Hx", "err_Hy", "err_Ez", "err_U_L2", "err_U_Linf", "order_U"]


def _fmt(v):
    return "%.17g" % v


def write_errors_csv(path, rows, failed=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ERRORS_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
        if failed is not None:
            w.writerow([_fmt(failed[0])] + ["nan"] * 5 + ["FAILED: " + str(failed[1])])


def read_errors_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ERRORS_HEADER:
            raise ValueError(f"unexpected header {header}")
        rows = []
        for r in rd:
            if r[-1].startswith("FAILED"):
                continue
            rows.append([float(v) for v in r])
    return rows


def convergence_study(problem: ProblemSpec, config: SchemeConfig, h_list, out_dir=None,
                      t_final=None) -> ConvergenceTable:
    h_list = sorted(h_list, reverse=True)
    if len(h_list) < 3:
        raise ConfigError("a convergence study needs at least 3 grid sizes")
    table = ConvergenceTable()
    for h in h_list:
        try:
            table.reports.append(run(problem, config, h, t_final))
        except NumericalFailure as exc:
            table.failed = (h, str(exc))
            log.error("study aborted at h=%g: %s", h, exc)
            break
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        table.write_csv(os.path.join(out_dir, "errors.csv"))
    return table


# ---------------------------------------------------------------------------
# long runs
# ---------------------------------------------------------------------------

@dataclass
class LongRunSeries:
    c_f: float          # multiple of dt
    periods: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    blew_up: bool = False

    @property
    def growth(self):
        """Final over initial (first period) error."""
        return self.errors[-1] / self.errors[0] if len(self.errors) > 1 else math.nan


def long_run_monitor(problem: ProblemSpec, config: SchemeConfig, h: float, n_periods: int,
                     cf_list, out_dir=None, blowup_factor: float = 1e6) -> list:
    """Error of U sampled once per period for each penalty coefficient.

    ``cf_list`` holds c_f as multiples of the time step (1, 1/2, 1/4, ...).
    """
    if problem.period is None or not problem.exact:
        raise ConfigError(f"{problem.name}: long runs need an exact periodic solution")
    out = []
    for cf in cf_list:
        series = LongRunSeries(cf)
        s = Solver(problem, replace(config, c_f=None, cf_scale=cf), h)
        dt = s.dt
        marks = {int(round(p * problem.period / dt)): p for p in range(1, n_periods + 1)}
        last = max(marks)

        def cb(sv):
            if sv.n in marks:
                e = solver_error(sv).err_U_L2
                series.periods.append(marks[sv.n])
                series.errors.append(e)
                if not math.isfinite(e) or (series.errors[0] > 0 and e > blowup_factor * series.errors[0]):
                    raise _BlowUp()

        try:
            _guard(lambda: s.run(last * dt, callback=cb))
        except _BlowUp:
            series.blew_up = True
        out.append(series)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_longrun_csv(os.path.join(out_dir, "longrun.csv"), out)
    return out


class _BlowUp(Exception):
    pass


def write_longrun_csv(path, series_list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "cf", "err_U_L2"])
        for s in series_list:
            for p, e in zip(s.periods, s.errors):
                w.writerow([p, _fmt(s.c_f), _fmt(e)])
            if s.blew_up:
                w.writerow([s.periods[-1] if s.periods else 0, _fmt(s.c_f), "BLOWUP"])


def read_longrun_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        return [(int(r[0]), float(r[1]), r[2] if r[2] == "BLOWUP" else float(r[2])) for r in rd]


# ---------------------------------------------------------------------------
# reference-grid comparison
# ---------------------------------------------------------------------------

def nesting_indices(family, coarse_shape, ratio: int):
    """Fine-grid indices of every coarse node (odd refinement ratio)."""
    if ratio < 1 or ratio % 2 == 0:
        raise ConfigError(f"grids are not nested: refinement ratio {ratio} must be odd")
    half = (ratio - 1) // 2
    nx, ny = coarse_shape
    ix = np.arange(nx) * ratio + (half if family in ("ez", "hx") else 0)
    iy = np.arange(ny) * ratio + (half if family in ("ez", "hy") else 0)
    return ix, iy


def grid_ratio(h_coarse, h_fine):
    r = h_coarse / h_fine
    ratio = int(round(r))
    if abs(r - ratio) > 1e-9 * r or ratio % 2 == 0:
        raise ConfigError(f"h={h_coarse} is not an odd multiple of the reference h={h_fine}")
    return ratio


def compare_to_reference(coarse: dict, reference: dict) -> ErrorReport:
    """Errors of coarse fields against a nested fine reference, by restriction.

    Both dicts hold ``hx``, ``hy``, ``ez`` arrays plus ``grid`` and ``masks``;
    ``reference`` fields must be sampled at the coarse output times.
    """
    gc, gf = coarse["grid"], reference["grid"]
    if (gc.x_lo, gc.x_hi, gc.y_lo, gc.y_hi) != (gf.x_lo, gf.x_hi, gf.y_lo, gf.y_hi):
        raise ConfigError("coarse and reference domains differ")
    ratio = grid_ratio(gc.h, gf.h)
    diffs = {}
    for fam in FAMILIES:
        ix, iy = nesting_indices(fam, gc.shape(fam), ratio)
        diffs[fam] = coarse[fam] - reference[fam][np.ix_(ix, iy)]
    return error_from_differences(gc.h, diffs, coarse["masks"])


def reference_run(problem: ProblemSpec, config: SchemeConfig, h_ref: float, coarse_hs, t_final=None):
    """Fine run that keeps H at each coarse grid's output time ``T - dt_c/2``."""
    t_final = problem.t_final if t_final is None else t_final
    s = Solver(problem, config, h_ref)
    n_final = int(round(t_final / s.dt))
    wanted = {}
    for hc in coarse_hs:
        r = grid_ratio(hc, s.h)
        # H^{N - r/2} is stored at step N - (r - 1)/2 as level n - 1/2
        wanted[n_final - (r - 1) // 2] = hc
    snaps = {}

    def cb(sv):
        if sv.n in wanted:
            hx, hy = sv.H[sv.n - 0.5]
            snaps[wanted[sv.n]] = (hx.copy(), hy.copy())

    _guard(lambda: s.run(t_final, callback=cb))
    ez = s.E[s.n]
    refs = {}
    for hc in coarse_hs:
        hx, hy = snaps[hc]
        refs[hc] = {"hx": hx, "hy": hy, "ez": ez, "grid": s.grid, "masks": s.masks}
    return refs


def scattering_study(problem: ProblemSpec, config: SchemeConfig, coarse_hs, h_ref: float,
                     ref_config: SchemeConfig | None = None, out_dir=None, references=None):
    """Self-convergence against a nested reference run (computed unless given)."""
    coarse_hs = sorted(coarse_hs, reverse=True)
    if references is None:
        ref_config = ref_config or SchemeConfig("fourth", problem.dt_ratio, beta=problem.beta)
        references = reference_run(problem, ref_config, h_ref, coarse_hs)
    table = ConvergenceTable()
    for hc in coarse_hs:
        try:
            rep = run(problem, config, hc, keep_fields=True)
        except NumericalFailure as exc:
            table.failed = (hc, str(exc))
            break
        cmp = compare_to_reference(rep.fields, references[hc])
        cmp.wall_time = rep.wall_time
        table.reports.append(cmp)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        table.write_csv(os.path.join(out_dir, "errors.csv"))
    return table


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

CONFIG_KEYS = {"problem", "scheme", "h", "dt_ratio", "cf_rule", "cp", "k", "beta", "alpha",
               "t_final", "out_dir", "dump_times"}


def parse_config_text(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def read_config(path) -> dict:
    with open(path) as fh:
        return parse_config_text(fh.read())


def _number(cfg, key, cast=float):
    try:
        return cast(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} = {cfg[key]!r} is not a valid number") from None


def parse_cf_rule(rule: str) -> dict:
    """``dt`` or ``dt/N`` (relative to the time step) or a plain number (absolute)."""
    r = rule.replace(" ", "").lower()
    try:
        if r == "dt":
            return {"cf_scale": 1.0}
        if r.startswith("dt/"):
            return {"cf_scale": 1.0 / float(r[3:])}
        return {"c_f": float(r)}
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cf_rule {rule!r}: use dt, dt/N or a number") from None


def build_from_config(cfg: dict):
    """(problem, scheme config, h, t_final) from parsed config values."""
    problem = get_problem(cfg.get("problem", "circular_cavity"))
    kind = cfg.get("scheme", "yee")
    dt_ratio = _number(cfg, "dt_ratio") if "dt_ratio" in cfg else problem.dt_ratio
    if dt_ratio <= 0:
        raise ConfigError("dt_ratio must be positive")
    h = _number(cfg, "h") if "h" in cfg else 1 / 20
    if h <= 0:
        raise ConfigError("h must be positive")
    cf = parse_cf_rule(cfg["cf_rule"]) if "cf_rule" in cfg else {}
    sc = SchemeConfig(kind, dt_ratio,
                      c_p=_number(cfg, "cp") if "cp" in cfg else 1.0,
                      **cf,
                      k=_number(cfg, "k", int) if "k" in cfg else None,
                      beta=_number(cfg, "beta") if "beta" in cfg else problem.beta,
                      alpha=_number(cfg, "alpha") if "alpha" in cfg else 2.0)
    t_final = _number(cfg, "t_final") if "t_final" in cfg else problem.t_final
    return problem, sc, h, t_final
