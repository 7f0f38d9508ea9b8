"""Command-line entry point: ``python -m sfsi <command>``."""
from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

from . import __version__
from .cli_io import RunManifest, emit_plot_data, parse_config, write_snapshot, write_timeseries
from .geometry import ConfigurationError
from .noise import validate_growth
from .orchestrator import EnsembleReport, SweepReport, loglog_slope, parameter_sweep, run_ensemble, run_path
from .params import SchemeParams


def _load_params(args) -> SchemeParams:
    return parse_config(args.config) if args.config else SchemeParams()


def _manifest(command, params, seeds, start, files, statuses=None) -> RunManifest:
    return RunManifest(command=command, params_digest=params.digest(), params=params.as_dict(), seeds=list(seeds),
                       statuses=statuses or {}, files=files, wall_clock=time.perf_counter() - start,
                       package_version=__version__)


def cmd_run(args) -> int:
    start = time.perf_counter()
    params = _load_params(args)
    seed = params.seed if args.seed is None else args.seed
    out = Path(args.out_dir)
    traj = run_path(params, seed, stride=args.stride)
    files = ["timeseries.csv"]
    write_timeseries(traj, out / "timeseries.csv")
    for i, snap in enumerate(traj.snapshots):
        name = f"snapshot_{i:04d}.bin"
        write_snapshot(snap.fluid, snap.structure, out / name)
        files.append(name)
    _manifest("run", params, [seed], start, files + ["manifest.json"], {str(seed): traj.status}).write(
        out / "manifest.json")
    print(f"seed {seed}: {traj.status}; {len(traj.times) - 1} steps in {traj.wall_clock:.1f} s -> {out}")
    return 0 if traj.completed else 1


def _ensemble_json(report: EnsembleReport) -> dict:
    return {"seeds": report.seeds, "statuses": {str(k): v for k, v in report.statuses.items()},
            "summaries": {str(k): v for k, v in report.summaries.items()}, "moments": report.moments,
            "reliable": report.reliable}


def cmd_ensemble(args) -> int:
    start = time.perf_counter()
    params = _load_params(args)
    first = params.seed if args.seed is None else args.seed
    seeds = range(first, first + args.paths)
    report = run_ensemble(params, seeds, stride=args.stride)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ensemble.json").write_text(json.dumps(_ensemble_json(report), indent=2, sort_keys=True) + "\n")
    _manifest("ensemble", params, seeds, start, ["ensemble.json", "manifest.json"],
              {str(k): v for k, v in report.statuses.items()}).write(out / "manifest.json")
    for q, m in report.moments.items():
        print(f"{q:22s} mean {m['mean']:.6e} ± {m['stderr']:.2e}")
    if not report.reliable:
        print("warning: fewer than two completed paths; moments are unreliable", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    start = time.perf_counter()
    params = _load_params(args)
    first = params.seed if args.seed is None else args.seed
    seeds = list(range(first, first + args.paths))
    report = parameter_sweep(params, args.param, args.values, seeds)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"param": report.param, "values": report.values,
               "ensembles": [_ensemble_json(e) for e in report.ensembles]}
    (out / "sweep.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    emit_plot_data(report, out / "plot_data.csv")
    _manifest("sweep", params, seeds, start, ["sweep.json", "plot_data.csv", "manifest.json"]).write(
        out / "manifest.json")
    shown = set()
    for value, q, mean, err, slope in report.rows:
        if q not in shown:
            shown.add(q)
            print(f"{q:22s} log-log slope {slope:+.3f}")
    return 0


def cmd_emit_plots(args) -> int:
    """Rebuild the sweep CSV from a saved ``sweep.json``."""
    src = Path(args.out_dir) / "sweep.json"
    payload = json.loads(src.read_text())
    ensembles = []
    for e in payload["ensembles"]:
        rep = EnsembleReport(e["seeds"], e["summaries"], e["statuses"], e["moments"], e["reliable"])
        ensembles.append(rep)
    rows = []
    report = SweepReport(payload["param"], payload["values"], ensembles, rows)
    for q in ensembles[0].moments:
        means = [e.moments[q]["mean"] for e in ensembles]
        slope = loglog_slope(report.values, means) if all(m > 0 for m in means) else float("nan")
        rows += [(v, q, e.moments[q]["mean"], e.moments[q]["stderr"], slope)
                 for v, e in zip(report.values, ensembles)]
    target = Path(args.out_dir) / "plot_data.csv"
    emit_plot_data(report, target)
    print(f"wrote {target}")
    return 0


def cmd_validate_noise(args) -> int:
    params = _load_params(args)
    report = validate_growth(params.noise_spec(), seed=0 if args.seed is None else args.seed,
                             raise_on_failure=False)
    print(f"growth bounds {'hold' if report.passed else 'FAIL'}; worst margin {report.worst:.3e}")
    for item in report.offending:
        print(f"  {item}")
    return 0 if report.passed else 1


def cmd_check(args) -> int:
    root = Path(__file__).resolve().parents[2]
    suite = root / "tests" / "test_acceptance.py"
    if not suite.exists():
        print(f"acceptance suite not found at {suite}", file=sys.stderr)
        return 2
    return subprocess.call([sys.executable, "-m", "pytest", "-v", "-s", str(suite)], cwd=root)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfsi", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, paths=False):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="seed (first seed for ensembles)")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--stride", type=int, default=0, help="snapshot every N steps (0: first and last)")
        if paths:
            p.add_argument("--paths", type=int, default=8, help="number of sample paths")

    common(sub.add_parser("run", help="single sample path"))
    common(sub.add_parser("ensemble", help="independent paths with aggregated moments"), paths=True)
    sweep = sub.add_parser("sweep", help="ensemble at each value of one parameter")
    common(sweep, paths=True)
    sweep.add_argument("--param", default="delta")
    sweep.add_argument("--values", type=float, nargs="+", required=True)
    common(sub.add_parser("validate-noise", help="sample the noise growth bounds"))
    sub.add_parser("check", help="run the acceptance suite")
    plots = sub.add_parser("emit-plots", help="rebuild plot CSV from a sweep directory")
    plots.add_argument("--out-dir", default="out")
    return parser


COMMANDS = {"run": cmd_run, "ensemble": cmd_ensemble, "sweep": cmd_sweep, "validate-noise": cmd_validate_noise,
            "check": cmd_check, "emit-plots": cmd_emit_plots}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
