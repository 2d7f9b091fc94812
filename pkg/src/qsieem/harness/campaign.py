"""Single runs, repeated campaigns and their aggregation."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..gp import save_snapshot
from ..rng import substream
from ..smc import run_qsi
from ..testbed import get_problem, load_reference_cloud, relative_error
from .config import RunConfig
from .io import read_csv, write_csv

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["problem", "r", "seed", "batches", "points", "relerr", "relerr_se", "fn", "fp",
                   "complete", "failed", "restarts", "stages", "wall_time"]
AGGREGATE_COLUMNS = ["problem", "r", "reps", "batches_mean", "batches_min", "batches_max",
                     "points_mean", "points_min", "points_max", "relerr_mean", "relerr_min", "relerr_max"]


class MissingCloudError(RuntimeError):
    pass


def run_dir_name(cfg):
    return f"{cfg.problem}-r{cfg.batch_size}-s{cfg.seed}"


def write_run_files(out, cfg, result):
    """Trace files of one run. Only deterministic content goes in here."""
    out = Path(out)
    header = cfg.header()
    problem = get_problem(cfg.problem)
    names = list(problem.u_domain.names)
    outs = [f"y{j + 1}" for j in range(result.data.q)]
    rows = [
        [i + 1, st, b] + list(u) + list(y)
        for i, (st, b, u, y) in enumerate(zip(result.eval_stage, result.eval_batch, result.data.points,
                                              result.data.observations))
    ]
    write_csv(out / "evaluations.csv", header, ["eval_index", "stage", "batch_index"] + names + outs, rows)
    cols = ["stage", "theta", "beta", "batches", "n", "xi", "relaxed_fraction", "terminal", "event"]
    write_csv(out / "stages.csv", header, cols, [[s[c] for c in cols] for s in result.stages])
    brows = []
    for b in result.batches:
        for j, u in enumerate(b["points"]):
            brows.append([b["stage"], b["batch"], j + 1, b["psi"], b["fallback"], b["xi"],
                          b["relaxed_fraction"], b["n"]] + list(u))
    write_csv(out / "batches.csv", header,
              ["stage", "batch", "point", "psi", "fallback", "xi", "relaxed_fraction", "n"] + names, brows)
    write_csv(out / "particles.csv", header, list(problem.x_domain.names), result.particles.tolist())
    save_snapshot(out / "model.txt", result.data, result.hypers)


def run_single(cfg, out_root, compute_error=True, reuse=True):
    """Run (or reload) one seeded configuration; returns its summary dict."""
    out = Path(out_root) / run_dir_name(cfg)
    summary_path = out / "summary.csv"
    if reuse and summary_path.exists():
        head, _, rows = read_csv(summary_path)
        if head.get("digest") == cfg.digest() and rows:
            return _parse_summary(rows[0])
    problem = get_problem(cfg.problem)
    cloud = None
    if compute_error:
        cloud = load_reference_cloud(problem, cfg.cloud_seed)
        if cloud is None:
            raise MissingCloudError(
                f"no cached reference cloud for {cfg.problem}; build it with 'qsieem oracle --problem {cfg.problem}'"
            )
    result = run_qsi(problem, cfg.to_settings(), cfg.seed)
    write_run_files(out, cfg, result)
    err = None
    if cloud is not None:
        err = relative_error(result.estimator(), cloud, problem, substream(cfg.seed, "oracle"),
                             anchors=result.particles, n_is=cfg.error_samples)
    summary = dict(
        problem=cfg.problem, r=cfg.batch_size, seed=cfg.seed, batches=result.n_batches,
        points=result.n_points, relerr=err.value if err else math.nan, relerr_se=err.se if err else math.nan,
        fn=err.false_negative if err else math.nan, fp=err.false_positive if err else math.nan,
        complete=int(result.complete), failed=int(result.failed), restarts=result.restarts,
        stages=len(result.stages), wall_time=result.wall_time,
    )
    write_csv(summary_path, cfg.header() + [("digest", cfg.digest())], SUMMARY_COLUMNS,
              [[summary[c] for c in SUMMARY_COLUMNS]])
    return summary


def _parse_summary(row):
    out = {}
    for k, v in row.items():
        if k == "problem":
            out[k] = v
        elif k in ("r", "seed", "batches", "points", "complete", "failed", "restarts", "stages"):
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def _job(args):
    cfg, out_root, compute_error = args
    logging.basicConfig(level=logging.WARNING)
    return run_single(cfg, out_root, compute_error)


def run_campaign(cfg, reps, out_root, workers=1, compute_error=True):
    """``reps`` runs with seeds cfg.seed, cfg.seed + 1, ..."""
    cfgs = [cfg.replace(seed=cfg.seed + i) for i in range(reps)]
    jobs = [(c, out_root, compute_error) for c in cfgs]
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def aggregate(summaries):
    """Rows of the aggregate table, one per (problem, r)."""
    groups = {}
    for s in summaries:
        groups.setdefault((s["problem"], int(s["r"])), []).append(s)
    rows = []
    for (problem, r), group in sorted(groups.items()):
        row = dict(problem=problem, r=r, reps=len(group))
        for key, col in (("batches", "batches"), ("points", "points"), ("relerr", "relerr")):
            vals = np.array([float(g[key]) for g in group])
            row[f"{col}_mean"] = float(np.mean(vals))
            row[f"{col}_min"] = float(np.min(vals))
            row[f"{col}_max"] = float(np.max(vals))
        rows.append(row)
    return rows


def summary_table(row):
    """'No. of batches' / 'No. of points' / 'Rel. error' rows with mean
    and (min - max) for one aggregate row."""
    return [
        ["No. of batches", row["batches_mean"], row["batches_min"], row["batches_max"]],
        ["No. of points", row["points_mean"], row["points_min"], row["points_max"]],
        ["Rel. error", row["relerr_mean"], row["relerr_min"], row["relerr_max"]],
    ]


def collect_summaries(root):
    """Summary dicts of every run directory below ``root``."""
    out = []
    for path in sorted(Path(root).glob("*/summary.csv")):
        _, _, rows = read_csv(path)
        out.extend(_parse_summary(r) for r in rows)
    return out


def write_aggregate(out_root, summaries, header):
    rows = aggregate(summaries)
    write_csv(Path(out_root) / "aggregate.csv", header, AGGREGATE_COLUMNS,
              [[r[c] for c in AGGREGATE_COLUMNS] for r in rows])
    table = []
    for r in rows:
        for line in summary_table(r):
            table.append([r["problem"], r["r"]] + line)
    write_csv(Path(out_root) / "table.csv", header, ["problem", "r", "quantity", "mean", "min", "max"], table)
    return rows
