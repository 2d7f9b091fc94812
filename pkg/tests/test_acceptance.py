"""End-to-end acceptance checks on the benchmark problems.

Campaign results are cached below ``QSI_CAMPAIGN_DIR`` (default
``<repo>/.campaigns``); a run is reused only when its configuration digest
matches, so the first pass is long (hours on one core) and later passes
only re-read the summaries. Each criterion prints one PASS/FAIL line.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from qsieem import __version__
from qsieem.flat import FlatSettings, MisclassificationMeter, run_flat
from qsieem.harness.campaign import run_campaign
from qsieem.harness.config import RunConfig
from qsieem.harness.io import read_csv, write_csv
from qsieem.testbed import OracleFailureError, build_reference_cloud, get_problem

ROOT = Path(__file__).resolve().parents[1]
CAMPAIGNS = Path(os.environ.get("QSI_CAMPAIGN_DIR", ROOT / ".campaigns"))

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line per criterion, bypassing output capture."""

    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok

    return emit


def campaign(problem, r, reps, compute_error=True):
    if compute_error:
        build_reference_cloud(get_problem(problem))  # loads the cached cloud, or builds it once
    cfg = RunConfig(problem=problem, batch_size=r, seed=0)
    return run_campaign(cfg, reps, CAMPAIGNS / problem, compute_error=compute_error)


def _stats(runs):
    b = np.array([s["batches"] for s in runs])
    e = np.array([s["relerr"] for s in runs])
    ok = np.array([bool(s["complete"]) and not s["failed"] for s in runs])
    return b, e, ok


def test_piston_single_point_batches(verdict):
    b, e, ok = _stats(campaign("piston", 1, 20))
    in_range = ok & (b >= 8) & (b <= 40)
    med = float(np.median(e))
    detail = (f"{in_range.sum()}/20 complete with batches in [8, 40] (need 18), median relative error "
              f"{med:.3f} (need <= 0.20); batches mean {b.mean():.1f} ({b.min()} - {b.max()}), "
              f"error mean {e.mean():.3f} ({e.min():.3f} - {e.max():.3f})")
    assert verdict("piston r=1", in_range.sum() >= 18 and med <= 0.20, detail)


def test_piston_three_point_batches(verdict):
    b, e, ok = _stats(campaign("piston", 3, 20))
    med = float(np.median(e))
    detail = (f"median relative error {med:.3f} (need <= 0.10); {ok.sum()}/20 complete, "
              f"batches mean {b.mean():.1f} ({b.min()} - {b.max()})")
    assert verdict("piston r=3", med <= 0.10, detail)


def test_trid_batches(verdict):
    b, _, ok = _stats(campaign("trid", 3, 10, compute_error=False))
    within = ok & (b <= 50)
    detail = f"{within.sum()}/10 complete within 50 batches (need 10); batches mean {b.mean():.1f} ({b.min()} - {b.max()})"
    assert verdict("trid r=3 batches", within.all(), detail)


@pytest.mark.xfail(strict=True, raises=OracleFailureError,
                   reason="with C = [4700, inf) and alpha = 0.10 the Trid quantile set is empty (the 0.9-quantile "
                          "of f over S stays near 4745 or more), so the relative error is undefined")
def test_trid_error(verdict):
    try:
        build_reference_cloud(get_problem("trid"))
    except OracleFailureError as exc:
        verdict("trid r=3 error", False, f"relative error undefined, no reference cloud: {exc}")
        raise
    _, e, _ = _stats(campaign("trid", 3, 10))
    med = float(np.median(e))
    assert verdict("trid r=3 error", med <= 0.15, f"median relative error {med:.3f} (need <= 0.15)")


def test_otl_error(verdict):
    b, e, ok = _stats(campaign("otl", 2, 10))
    med = float(np.median(e))
    detail = (f"median relative error {med:.3f} (need <= 0.15); {ok.sum()}/10 complete, "
              f"batches mean {b.mean():.1f} ({b.min()} - {b.max()})")
    assert verdict("otl r=2", med <= 0.15, detail)


@pytest.mark.xfail(strict=True, reason="the OTL quantile set reproduced here has volume fraction ~1e-6, "
                                       "outside the stated [1e-9, 1e-7]; see the decision ledger")
def test_otl_scale(verdict):
    vol = build_reference_cloud(get_problem("otl")).volume_fraction
    ok = 1e-9 <= vol <= 1e-7
    assert verdict("otl scale", ok, f"reference-cloud volume fraction {vol:.3e} (need within [1e-9, 1e-7])")


def _flat_finals(steps=80, reps=10):
    """Final misclassified proportion per (method, seed), cached on disk."""
    path = CAMPAIGNS / "flat" / "branin-final-misclass.csv"
    header = [("version", __version__), ("problem", "branin"), ("steps", steps), ("reps", reps)]
    if path.exists():
        head, _, rows = read_csv(path)
        if head == {k: str(v) for k, v in header}:
            return {(r["method"], int(r["seed"])): float(r["misclass"]) for r in rows}
    problem = get_problem("branin")
    settings = FlatSettings(steps=steps)
    meter = MisclassificationMeter(problem, settings)
    out = {}
    for method in ("eem", "random"):
        for seed in range(reps):
            out[method, seed] = run_flat(problem, method, settings, seed, meter=meter).final_misclass
    write_csv(path, header, ["method", "seed", "misclass"], [[m, s, v] for (m, s), v in sorted(out.items())])
    return out


def test_flat_mode_beats_random(verdict):
    finals = _flat_finals()
    eem = np.array([finals["eem", s] for s in range(10)])
    rnd = np.array([finals["random", s] for s in range(10)])
    wins = int(np.sum(eem <= 0.5 * rnd))
    detail = (f"{wins}/10 runs with EEM <= half of random (need 8); median EEM {np.median(eem):.4f}, "
              f"median random {np.median(rnd):.4f}")
    assert verdict("flat branin", wins >= 8, detail)


PROPERTY_TESTS = [
    "tests/test_gp.py::test_matheron_update_equals_refit_on_100_configurations",
    "tests/test_eem.py::test_single_z_matches_full_reconditioning",
    "tests/test_eem.py::test_gauss_hermite_rule_moments",
    "tests/test_smc.py::test_residual_resample_is_unbiased",
    "tests/test_smc.py::test_slab_target_is_sampled_uniformly",
    "tests/test_eem.py::test_symmetric_difference_gain_equals_uncertainty_reduction",
    "tests/test_quantile.py::test_plugin_nested_in_relaxed_over_1000_states",
    "tests/test_eem.py::test_psi_range_and_batch_invariances",
]


def test_property_suite_under_two_minutes(verdict):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                          cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - start
    last = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 120
    assert verdict("property suite", ok, f"{last} in {elapsed:.1f} s (need all passing in < 120 s)"), proc.stdout
