"""Command line entry point: ``cfm-fdtd run|study|longrun``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import harness
from .schemes import ConfigError
from .solutions import ProblemError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

# CLI flag -> config-file key
_OVERRIDES = {"problem": "problem", "scheme": "scheme", "h": "h", "dt_ratio": "dt_ratio",
              "cf": "cf_rule", "cp": "cp", "k": "k", "beta": "beta", "alpha": "alpha",
              "t_final": "t_final", "out_dir": "out_dir"}


def _common(p):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--problem")
    p.add_argument("--scheme", choices=["yee", "fourth"])
    p.add_argument("--h", help="grid spacing, e.g. 0.025 or 1/40")
    p.add_argument("--dt-ratio", dest="dt_ratio")
    p.add_argument("--cf", help="penalty c_f: dt, dt/N or a number")
    p.add_argument("--cp")
    p.add_argument("--k")
    p.add_argument("--beta")
    p.add_argument("--alpha")
    p.add_argument("--t-final", dest="t_final")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="cfm-fdtd", description="TM_z FDTD with embedded PEC boundaries")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="single run, writes errors.csv and field dumps"))
    st = sub.add_parser("study", help="convergence study over several h")
    _common(st)
    st.add_argument("--h-list", dest="h_list", required=True, help="comma-separated, e.g. 1/20,1/40,1/80")
    st.add_argument("--h-ref", dest="h_ref", help="reference h for problems without exact solution")
    lr = sub.add_parser("longrun", help="error per period for several c_f")
    _common(lr)
    lr.add_argument("--periods", type=int, required=True)
    lr.add_argument("--cf-list", dest="cf_list", default="dt,dt/2,dt/4")
    return ap


def _h(text):
    text = text.strip()
    try:
        if "/" in text:
            a, b = text.split("/")
            return float(a) / float(b)
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"bad grid spacing {text!r}") from None


def _config(args):
    cfg = harness.read_config(args.config) if args.config else {}
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg[key] = str(v)
    if "h" in cfg:
        cfg["h"] = repr(_h(cfg["h"]))
    return cfg


def _cf_scale(text):
    spec = harness.parse_cf_rule(text)
    if "cf_scale" not in spec:
        raise ConfigError("--cf-list entries must be dt or dt/N")
    return spec["cf_scale"]


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        problem, scheme, h, t_final = harness.build_from_config(cfg)
        out_dir = cfg.get("out_dir", ".")
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "run":
            rep = harness.run(problem, scheme, h, t_final, dump_dir=out_dir)
            rows = [[rep.h, rep.err_l2.get("hx", float("nan")), rep.err_l2.get("hy", float("nan")),
                     rep.err_l2.get("ez", float("nan")), rep.err_U_L2, rep.err_U_Linf, float("nan")]]
            harness.write_errors_csv(os.path.join(out_dir, "errors.csv"), rows)
            print(f"{problem.name} {scheme.kind} h={h:g}: err_U_L2={rep.err_U_L2:.6e} ({rep.wall_time:.1f}s)")
        elif args.command == "study":
            hs = [_h(x) for x in args.h_list.split(",")]
            if problem.exact:
                table = harness.convergence_study(problem, scheme, hs, out_dir, t_final)
            else:
                if args.h_ref is None:
                    raise ConfigError(f"{problem.name} has no exact solution: pass --h-ref")
                table = harness.scattering_study(problem, scheme, hs, _h(args.h_ref), out_dir=out_dir)
            for row in table.rows():
                print("h=%-10.6g err_U_L2=%.6e order=%.3f" % (row[0], row[4], row[6]))
            if table.failed is not None:
                print(f"FAILED at h={table.failed[0]:g}: {table.failed[1]}", file=sys.stderr)
                return EXIT_NUMERICAL
        else:
            scales = [_cf_scale(x) for x in args.cf_list.split(",")]
            series = harness.long_run_monitor(problem, replace(scheme, c_f=None), h, args.periods,
                                              scales, out_dir)
            for s in series:
                tag = " BLOWUP" if s.blew_up else ""
                print(f"cf={s.c_f:g}*dt final/initial={s.growth:.3f}{tag}")
            if any(s.blew_up for s in series):
                return EXIT_NUMERICAL
    except (ConfigError, ProblemError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except harness.NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
