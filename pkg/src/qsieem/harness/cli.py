"""Command-line entry point: run, benchmark, oracle, report, flatrun."""

import argparse
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .. import __version__
from ..flat import FlatSettings, MisclassificationMeter, run_flat
from ..testbed import PROBLEMS, OracleFailureError, build_reference_cloud, get_problem
from . import plotting
from .campaign import (MissingCloudError, collect_summaries, run_campaign, run_dir_name, run_single,
                       write_aggregate)
from .config import ConfigError, RunConfig, load_config
from .io import read_csv, write_csv

log = logging.getLogger("qsieem")


def _add_run_options(p):
    p.add_argument("--config", help="INI file with a [run] section")
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--out", default="results", help="output root directory")
    p.add_argument("--no-error", action="store_true", help="skip the relative-error evaluation")


def build_parser():
    parser = argparse.ArgumentParser(prog="qsieem", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one seeded run")
    _add_run_options(p)

    p = sub.add_parser("benchmark", help="independent repetitions and an aggregate table")
    _add_run_options(p)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("oracle", help="build or verify reference clouds")
    p.add_argument("--problem", choices=sorted(PROBLEMS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--particles", type=int, default=2000)
    p.add_argument("--no-verify", action="store_true", help="skip the plain Monte Carlo check")

    p = sub.add_parser("report", help="figures and CSV from a results directory")
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="figure directory (default: RESULTS/report)")

    p = sub.add_parser("flatrun", help="single-level acquisition on the moderate-size problems")
    p.add_argument("--problem", choices=sorted(PROBLEMS), default="branin")
    p.add_argument("--steps", type=int, default=80)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default="eem,random")
    p.add_argument("--eval-grid", type=int, default=FlatSettings.eval_grid, dest="eval_grid",
                   help="number of X points used to measure misclassification")
    p.add_argument("--out", default="results-flat")
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.replace(problem=args.problem, batch_size=args.batch_size, seed=args.seed,
                       budget=args.budget, n0=args.n0)


def cmd_run(args):
    cfg = _config(args)
    summary = run_single(cfg, args.out, compute_error=not args.no_error, reuse=False)
    print(f"{run_dir_name(cfg)}: {summary['batches']} batches, {summary['points']} points, "
          f"relative error {summary['relerr']:.4g} (se {summary['relerr_se']:.2g}), "
          f"complete={bool(summary['complete'])}")
    return 0 if not summary["failed"] else 3


def cmd_benchmark(args):
    cfg = _config(args)
    out = Path(args.out)
    summaries = run_campaign(cfg, args.reps, out, args.workers, compute_error=not args.no_error)
    rows = write_aggregate(out, summaries, cfg.replace(seed=cfg.seed).header() + [("reps", args.reps)])
    for r in rows:
        print(f"{r['problem']} r={r['r']} reps={r['reps']}")
        print(f"  No. of batches  {r['batches_mean']:.1f} ({r['batches_min']:.0f} - {r['batches_max']:.0f})")
        print(f"  No. of points   {r['points_mean']:.1f} ({r['points_min']:.0f} - {r['points_max']:.0f})")
        print(f"  Rel. error      {r['relerr_mean']:.3f} ({r['relerr_min']:.3f} - {r['relerr_max']:.3f})")
    return 0


def cmd_oracle(args):
    problem = get_problem(args.problem)
    cloud = build_reference_cloud(problem, seed=args.seed, n_particles=args.particles,
                                  verify=not args.no_verify)
    bad = int(np.sum(cloud.oracle_p > problem.alpha + 3 * cloud.oracle_se))
    print(f"{problem.name}: {cloud.size} cloud points, volume fraction {cloud.volume_fraction:.3e}, "
          f"{len(cloud.levels)} levels, {bad} points above alpha + 3 se, hash {cloud.content_hash[:16]}")
    return 0 if bad == 0 else 4


def _report_runs(results, tmp):
    summaries = collect_summaries(results)
    if not summaries:
        return False
    by_problem = {}
    for s in summaries:
        by_problem.setdefault(s["problem"], {}).setdefault(s["r"], ([], []))
        b, e = by_problem[s["problem"]][s["r"]]
        b.append(s["batches"])
        e.append(s["relerr"])
    for name, groups in sorted(by_problem.items()):
        plotting.error_scatter(groups, tmp / f"{name}-error-vs-batches.svg", title=name)
        rows = [[name, r, bi, ei] for r, (b, e) in sorted(groups.items()) for bi, ei in zip(b, e)]
        write_csv(tmp / f"{name}-error-vs-batches.csv", [("problem", name)], ["problem", "r", "batches", "relerr"], rows)
        pts = []
        for d in sorted(Path(results).glob(f"{name}-r*-s*/particles.csv")):
            _, cols, rows_ = read_csv(d)
            pts.extend([[float(r[c]) for c in cols] for r in rows_])
        if pts:
            plotting.particle_marginals(np.array(pts), get_problem(name).x_domain.names,
                                        tmp / f"{name}-particle-marginals.svg", title=name)
    return True


def _report_flat(results, tmp, copy=True):
    found = False
    for path in sorted(Path(results).glob("*-flat-curves.csv")):
        head, cols, rows = read_csv(path)
        curves = {}
        for r in rows:
            curves.setdefault(r["method"], {}).setdefault(int(r["seed"]), []).append(
                (int(r["step"]), float(r["misclass"])))
        data = {}
        for method, by_seed in curves.items():
            runs = [sorted(v) for _, v in sorted(by_seed.items())]
            steps = [s for s, _ in runs[0]]
            data[method] = (steps, np.array([[m for _, m in run] for run in runs]))
        name = head.get("problem", path.stem)
        plotting.misclass_curves(data, tmp / f"{name}-flat-misclass.svg", title=name)
        if copy:
            shutil.copy(path, tmp / path.name)
        found = True
    return found


def cmd_report(args):
    results = Path(args.results)
    out = Path(args.out) if args.out else results / "report"
    if not results.is_dir():
        print(f"error: {results} is not a directory", file=sys.stderr)
        return 2
    with tempfile.TemporaryDirectory() as td:
        tmp = Path(td)
        any_runs = _report_runs(results, tmp)
        any_flat = _report_flat(results, tmp)
        if not (any_runs or any_flat):
            print(f"error: no run summaries or flat curves under {results}", file=sys.stderr)
            return 2
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(tmp.iterdir()):
            shutil.move(str(f), out / f.name)
    print(f"report written to {out}")
    return 0


def cmd_flatrun(args):
    problem = get_problem(args.problem)
    cfg = FlatSettings(steps=args.steps, eval_grid=args.eval_grid)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    meter = MisclassificationMeter(problem, cfg)
    rows = []
    for method in methods:
        for i in range(args.reps):
            res = run_flat(problem, method, cfg, args.seed + i, meter=meter)
            rows += [[method, res.seed, s, m] for s, m in zip(res.steps, res.misclass)]
            print(f"{problem.name} {method} seed {res.seed}: final misclassified {res.final_misclass:.4g}")
    out = Path(args.out)
    header = [("version", __version__), ("problem", problem.name), ("steps", args.steps), ("reps", args.reps),
              ("seed", args.seed), ("eval_grid", args.eval_grid)]
    write_csv(out / f"{problem.name}-flat-curves.csv", header, ["method", "seed", "step", "misclass"], rows)
    _report_flat(out, out, copy=False)
    return 0


COMMANDS = dict(run=cmd_run, benchmark=cmd_benchmark, oracle=cmd_oracle, report=cmd_report, flatrun=cmd_flatrun)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MissingCloudError, OracleFailureError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
