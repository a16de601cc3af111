"""Command-line entry point.

Exit codes: 0 success, 1 an experiment assertion failed, 2 numerical
divergence, 3 invalid configuration, 4 I/O error.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__, diagnostics, harness
from . import config as cfgmod
from .errors import ConfigurationError, DivergenceError

EXIT_OK, EXIT_ASSERT, EXIT_DIVERGED, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3, 4

log = logging.getLogger("csav")


# -- output management ---------------------------------------------------------


def output_root(args, cfg):
    return args.output_root or os.environ.get("CSAV_OUTPUT_ROOT") or cfg["output"]["dir"] or "csav-runs"


def make_run_dir(root, label):
    """Create a fresh directory ``root/label-YYYYmmdd-HHMMSS[-k]``; never reuses one."""
    os.makedirs(root, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(root, f"{label}-{stamp}")
    path, k = base, 0
    while True:
        try:
            os.makedirs(path)
            return path
        except FileExistsError:
            k += 1
            path = f"{base}-{k}"


def write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in columns})


def _cell(v):
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return v


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=diagnostics._jsonable)
        fh.write("\n")


def _jobs(args):
    if args.jobs is not None:
        return args.jobs
    return int(os.environ.get("CSAV_JOBS", "1"))


def _manifest(cfg, extra=None, references=None):
    seeds = [cfg["initial"]["seed"]] if cfg["initial"]["seed"] is not None else []
    return diagnostics.build_manifest(cfg, seeds=seeds, references=references, extra=extra)


def _assertions_exit(assertions):
    return EXIT_OK if all(a["passed"] for a in assertions) else EXIT_ASSERT


# -- subcommands ---------------------------------------------------------------


def cmd_run(cfg, args):
    grid, model, scheme, init = cfgmod.build_all(cfg)
    T = cfg["experiment"]["T_final"]
    out = make_run_dir(output_root(args, cfg), args.label or cfg.get("name", "run"))
    times = cfg["output"]["snapshot_times"]
    manifest = _manifest(cfg, extra={"command": "run", "bootstrap": scheme.bootstrap})
    try:
        res = harness.run_simulation(model, scheme, init, T, snapshot_times=times)
    except DivergenceError as exc:
        if getattr(exc, "trace", None) is not None:
            exc.trace.to_csv(os.path.join(out, "trace.csv"), cfg["output"]["decimation"])
        if exc.last_state is not None:
            grid.write_snapshot(os.path.join(out, "last_good.bin"), exc.last_state.phi)
        manifest["status"] = f"diverged: {exc}"
        diagnostics.write_manifest(os.path.join(out, "manifest.json"), manifest)
        raise
    res.trace.to_csv(os.path.join(out, "trace.csv"), cfg["output"]["decimation"])
    if res.snapshots:
        snapdir = os.path.join(out, "snapshots")
        os.makedirs(snapdir)
        for t, phi in sorted(res.snapshots.items()):
            stem = os.path.join(snapdir, f"phi_t{t:.6g}")
            grid.write_snapshot(stem + ".bin", phi)
            if cfg["output"]["snapshot_csv"]:
                grid.write_snapshot_csv(stem + ".csv", phi)
    manifest["status"] = "completed"
    manifest["n_steps"] = res.state.step
    manifest["snapshot_times"] = sorted(res.snapshots)
    diagnostics.write_manifest(os.path.join(out, "manifest.json"), manifest)
    print(out)
    return EXIT_OK


def cmd_converge(cfg, args):
    grid, model, scheme, init = cfgmod.build_all(cfg)
    exp = cfg["experiment"]
    if not exp.get("dt_list"):
        raise ConfigurationError("converge needs experiment.dt_list")
    alphas = exp.get("alpha_list") or [scheme.alpha]
    out = make_run_dir(output_root(args, cfg), args.label or cfg.get("name", "converge"))
    cache = harness.ReferenceCache(os.path.join(output_root(args, cfg), "reference-cache"))
    lo, hi = exp["order_range"]
    rows, assertions, refs = [], [], []
    for alpha in alphas:
        res = harness.convergence_study(
            model, scheme.scheme, exp["dt_list"], alpha, init, exp["T_final"],
            ref_dt=exp["ref_dt"], ref_alpha=exp["ref_alpha"], ref_scheme=exp["ref_scheme"],
            scheme_options={"C0": scheme.C0, "eta": scheme.eta, "bootstrap": scheme.bootstrap,
                            "extrapolation": scheme.extrapolation},
            cache=cache, jobs=_jobs(args),
        )
        refs.append(res.reference)
        for row in res.rows():
            rows.append(dict(row, alpha=alpha))
        assertions.append({
            "name": f"orders in [{lo}, {hi}] at alpha={alpha}",
            "passed": res.orders_within(lo, hi),
            "orders": res.orders,
        })
        # Flush partial results as they arrive.
        write_rows(os.path.join(out, "convergence.csv"), rows, ["alpha", "dt", "error", "order", "r_deviation"])
    summary = {"assertions": assertions, "references": refs}
    write_summary(os.path.join(out, "summary.json"), summary)
    diagnostics.write_manifest(os.path.join(out, "manifest.json"),
                               _manifest(cfg, {"command": "converge"}, refs))
    _report(assertions)
    print(out)
    return _assertions_exit(assertions)


def cmd_sweep(cfg, args):
    grid, model, scheme, init = cfgmod.build_all(cfg)
    exp = cfg["experiment"]
    out = make_run_dir(output_root(args, cfg), args.label or cfg.get("name", "sweep"))
    opts = {"C0": scheme.C0, "eta": scheme.eta, "bootstrap": scheme.bootstrap,
            "extrapolation": scheme.extrapolation}
    assertions = []
    alphas = exp.get("alpha_list") or []
    if alphas:
        sw = harness.alpha_sweep(model, scheme.scheme, scheme.dt, alphas, init, exp["T_final"],
                                 scheme_options=opts, jobs=_jobs(args))
        write_rows(os.path.join(out, "alpha_sweep.csv"), sw.rows(), ["alpha", "max_r_deviation"])
        lo, hi = exp["ratio_range"]
        for i, ratio in enumerate(sw.ratios):
            a0, a1 = sw.alphas[i], sw.alphas[i + 1]
            if abs(a0 / a1 - 2.0) < 1e-12:
                assertions.append({"name": f"halving alpha {a0} -> {a1} halves |r-1|",
                                   "passed": lo <= ratio <= hi, "ratio": ratio})
            else:
                assertions.append({"name": f"|r-1| decreases from alpha {a0} to {a1}",
                                   "passed": ratio > 1.0, "ratio": ratio})
    dts = exp.get("stability_dt_list") or []
    if dts:
        entries = harness.stability_sweep(model, scheme.scheme, dts, scheme.alpha, init, exp["T_final"],
                                          scheme_options=opts, jobs=_jobs(args))
        rows = [{"dt": e.dt, "passed": e.passed, "violations": len(e.violations),
                 "max_increase": e.max_increase, "n_steps": e.n_steps} for e in entries]
        write_rows(os.path.join(out, "stability.csv"), rows,
                   ["dt", "passed", "violations", "max_increase", "n_steps"])
        for e in entries:
            assertions.append({"name": f"discrete energy non-increasing at dt={e.dt}", "passed": e.passed,
                               "violating_steps": e.violations[:20]})
    if not alphas and not dts:
        raise ConfigurationError("sweep needs experiment.alpha_list or experiment.stability_dt_list")
    write_summary(os.path.join(out, "summary.json"), {"assertions": assertions})
    diagnostics.write_manifest(os.path.join(out, "manifest.json"), _manifest(cfg, {"command": "sweep"}))
    _report(assertions)
    print(out)
    return _assertions_exit(assertions)


def cmd_compare(cfg, args):
    grid, model, scheme, init = cfgmod.build_all(cfg)
    exp = cfg["experiment"]
    schemes = exp.get("schemes") or ["csav_cn", "sav_cn", "rsav_cn"]
    ref_dt = exp["ref_dt"] if exp["ref_dt"] is not None else 1e-5
    out = make_run_dir(output_root(args, cfg), args.label or cfg.get("name", "compare"))
    res = harness.scheme_comparison(model, scheme, schemes, init, exp["T_final"], ref_dt=ref_dt,
                                    jobs=_jobs(args))
    entries = res["entries"]
    cols = ["scheme", "final_error", "max_ratio_deviation", "max_energy_deviation",
            "max_original_energy_deviation", "diverged", "message"]
    write_rows(os.path.join(out, "comparison.csv"), [vars(e) for e in entries], cols)

    times = res["reference_times"]
    stride = max(1, int(round(scheme.dt / ref_dt)))
    curves = {"t": times, "E_reference": res["reference"].trace.column("E_original")[::stride]}
    for e in entries:
        if e.trace is not None:
            sub = cfgmod.build_scheme(cfg, scheme=e.scheme)
            curves[f"E_{e.scheme}"] = harness.modified_energy_curve(e.trace, sub)
            curves[f"ratio_{e.scheme}"] = e.trace.column("ratio")
    n = min(len(v) for v in curves.values())
    with open(os.path.join(out, "curves.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(curves))
        for i in range(n):
            w.writerow([_cell(float(v[i])) for v in curves.values()])

    assertions = []
    by = {e.scheme: e for e in entries if not e.diverged}
    if "csav_cn" in by:
        c = by["csav_cn"]
        for other in ("sav_cn", "rsav_cn"):
            if other in by:
                o = by[other]
                assertions.append({"name": f"consistency ratio closer to 1: csav_cn <= {other}",
                                   "passed": c.max_ratio_deviation <= o.max_ratio_deviation})
                assertions.append({"name": f"energy curve closer to reference: csav_cn <= {other}",
                                   "passed": c.max_energy_deviation <= o.max_energy_deviation})
    for e in entries:
        if e.diverged:
            assertions.append({"name": f"{e.scheme} completed", "passed": False, "message": e.message})
    write_summary(os.path.join(out, "summary.json"), {"assertions": assertions, "ref_dt": ref_dt})
    diagnostics.write_manifest(os.path.join(out, "manifest.json"),
                               _manifest(cfg, {"command": "compare", "ref_dt": ref_dt}))
    _report(assertions)
    print(out)
    return _assertions_exit(assertions)


def _report(assertions):
    for a in assertions:
        print(f"{'PASS' if a['passed'] else 'FAIL'}  {a['name']}")


COMMANDS = {"run": cmd_run, "converge": cmd_converge, "sweep": cmd_sweep, "compare": cmd_compare}


class _Parser(argparse.ArgumentParser):
    # Usage errors are validation errors; argparse's default 2 means divergence here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="csav", description="Auxiliary-variable phase-field solvers")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help="name of a bundled preset")
        src.add_argument("--config", help="path to a JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY.PATH=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--output-root", help="directory receiving run folders (env CSAV_OUTPUT_ROOT)")
        p.add_argument("--label", help="prefix of the run folder name")
        p.add_argument("--jobs", type=int, help="parallel jobs for sweeps (env CSAV_JOBS, default 1)")
        p.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("list-presets")
    return parser


def load_config(args):
    raw = cfgmod.load_preset(args.preset) if args.preset else cfgmod.load_file(args.config)
    raw = cfgmod.apply_overrides(raw, args.overrides)
    return cfgmod.validate(raw)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list-presets":
        for name in cfgmod.preset_names():
            desc = cfgmod.load_preset(name).get("description", "")
            print(f"{name:16s} {desc}")
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
