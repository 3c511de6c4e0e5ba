"""End-to-end acceptance criteria C1 to C8.

Each test records one PASS/FAIL line (shown inline and in the terminal
summary) and asserts the criterion at its stated tolerance. The experiment
criteria (C1, C5, C6, C7) train thousands of small networks and take most of
the suite's runtime; select them alone with ``pytest -m acceptance``.
"""
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest
import yaml
from scipy import stats

from styleaudit.cli import main as cli_main
from styleaudit.decision import ScoreSample, decide, decide_ttest
from styleaudit.extractor import Backbone, FeatureCache, StyleExtractor, extract, plan_taps, pool_stage
from styleaudit.harness import ExperimentConfig, run_ablation, run_experiment
from styleaudit.simulator import build_benchmark

from oracles import brute_pool, gradient_check, t_statistic_decimal

pytestmark = pytest.mark.acceptance

MECHS = ("threshold", "t_test")
SEEDS = (1, 2, 3, 4, 5)


@pytest.fixture
def record(acceptance_log, capsys):
    def _record(cid, ok, detail):
        acceptance_log[cid] = (bool(ok), detail)
        with capsys.disabled():
            print(f"\n{cid} {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"{cid}: {detail}"

    return _record


def fmt(rep, metric):
    stat = getattr(rep, metric)
    return f"{metric}={stat.mean:.3f}±{stat.std:.3f}"


# --- shared experiment runs -------------------------------------------------------

@pytest.fixture(scope="module")
def complete_run(weights_path):
    """Default benchmark, seeds 1-5, both mechanisms, timed from a cold start."""
    t0 = time.perf_counter()
    ex = StyleExtractor(Backbone.from_file(weights_path), cache=FeatureCache())
    bench = build_benchmark()
    res = run_experiment(bench, ExperimentConfig(seeds=SEEDS), ex)
    return res, time.perf_counter() - t0, ex, bench


# --- C1 --------------------------------------------------------------------------

def test_c1_end_to_end_synthetic_audit(complete_run, record):
    res, elapsed, _, _ = complete_run
    ok = elapsed < 15 * 60
    parts = []
    for m in MECHS:
        rep = res.reports[m]
        ok &= rep.auc.mean >= 0.90 and rep.fpr.mean <= 0.2
        parts.append(f"{m}: {fmt(rep, 'auc')} {fmt(rep, 'fpr')} {fmt(rep, 'accuracy')}")
    record("C1", ok, "; ".join(parts) + f"; runtime {elapsed / 60:.1f} min (limit 15)")


# --- C2 --------------------------------------------------------------------------

def test_c2_ttest_oracle_equivalence(record):
    rng = np.random.default_rng(2024)
    worst_q, t_mismatch = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(2, 51))
        loc = rng.uniform(-0.5, 0.5)
        xs = np.clip(rng.normal(loc, rng.uniform(0.05, 0.6), n), -1, 1).tolist()
        d = decide_ttest(ScoreSample(xs))
        if d.t_statistic != t_statistic_decimal(xs):
            t_mismatch += 1
        worst_q = max(worst_q, abs(d.critical_t - stats.t.ppf(0.95, n - 1)))
    worked = decide_ttest(ScoreSample([0.5, 0.7, 0.3, 0.9, 0.6]))
    ok = t_mismatch == 0 and worst_q <= 1e-6 and worked.t_statistic == 6.0
    record(
        "C2", ok,
        f"t mismatches {t_mismatch}/100, max |quantile - scipy| {worst_q:.2e} (limit 1e-6), "
        f"worked example t={worked.t_statistic!r}",
    )


# --- C3 --------------------------------------------------------------------------

def test_c3_gradient_check(record):
    rng = np.random.default_rng(3)
    worst = max(gradient_check(rng) for _ in range(50))
    record("C3", worst < 1e-4, f"max relative error over 50 random networks {worst:.2e} (limit 1e-4)")


# --- C4 --------------------------------------------------------------------------

def test_c4_pooling_and_concatenation(backbone, record):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(200):
        C, h, w = int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 17))
        fmap = rng.normal(scale=rng.uniform(0.1, 10), size=(C, h, w)).astype(np.float32)
        if not np.allclose(pool_stage(fmap), brute_pool(fmap), rtol=1e-6, atol=1e-6):
            bad += 1
    chans = {s.index: s.channels for s in backbone.adapter.stages}
    img = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
    from styleaudit.dataset import ArtworkRecord, Role

    rec = ArtworkRecord("c4/0", "c4", Role.TARGET, img)
    lengths = []
    for taps in [(0, 1, 3, 4), (0, 1, 2, 3), (1, 2, 3, 4)]:
        got = extract(backbone, plan_taps(backbone.adapter, taps), rec).vector.shape[0]
        lengths.append((taps, got, 2 * sum(chans[t] for t in taps)))
    ok = bad == 0 and all(g == e for _, g, e in lengths)
    record("C4", ok, f"pool mismatches {bad}/200; plan lengths " + ", ".join(f"{t}:{g}/{e}" for t, g, e in lengths))


# --- C5 --------------------------------------------------------------------------

def test_c5_ablation_direction(weights_path, record):
    ex = StyleExtractor(Backbone.from_file(weights_path), cache=FeatureCache())
    cfg = ExperimentConfig(seeds=SEEDS)
    bench = build_benchmark(distortion_sigma=0.3)
    base, no_dis = run_ablation(bench, replace(cfg, without_distortion=True), ex)
    bench10 = build_benchmark(distortion_sigma=0.3, per_artist=10)
    base10, no_aug = run_ablation(bench10, replace(cfg, without_augmentation=True), ex)
    ok, parts = True, []
    for m in MECHS:
        a, b = base.reports[m].accuracy.mean, no_dis.reports[m].accuracy.mean
        c, d = base10.reports[m].accuracy.mean, no_aug.reports[m].accuracy.mean
        ok &= a >= b and c >= d
        parts.append(f"{m}: baseline {a:.3f} vs without_distortion {b:.3f}; baseline(10) {c:.3f} vs without_augmentation {d:.3f}")
    record("C5", ok, "; ".join(parts))


# --- C6 --------------------------------------------------------------------------

def test_c6_transferability(complete_run, record):
    res, _, ex, bench = complete_run
    disjoint = run_experiment(bench, ExperimentConfig(seeds=SEEDS, overlap_mode="disjoint"), ex)
    ok, parts = True, []
    for m in MECHS:
        full, dis = res.reports[m].accuracy.mean, disjoint.reports[m].accuracy.mean
        ok &= full - dis <= 0.15
        parts.append(f"{m}: complete {full:.3f}, disjoint {dis:.3f}, drop {full - dis:+.3f}")
    record("C6", ok, "; ".join(parts) + " (limit 0.15)")


# --- C7 --------------------------------------------------------------------------

def test_c7_cli_experiment_determinism(tmp_path, weights_path, record):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(yaml.safe_dump({"paths": {"benchmark_dir": "bench", "out_dir": "out", "weights": str(weights_path)}}))
    assert cli_main(["benchmark", "--config", str(cfg)]) == 0
    digests = []
    for run in ("first", "second"):
        assert cli_main(["experiment", "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
        digests.append(json.loads((tmp_path / run / "run_manifest.json").read_text())["outputs"]["metrics.json"])
    same = (tmp_path / "first" / "metrics.json").read_bytes() == (tmp_path / "second" / "metrics.json").read_bytes()
    record("C7", same, f"metrics.json sha256 {digests[0][:16]} vs {digests[1][:16]}, default config, seeds 1-5")


# --- C8 --------------------------------------------------------------------------

def test_c8_decision_invariants(record):
    rng = np.random.default_rng(8)
    perm_fail = scale_fail = 0
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        xs = np.clip(rng.normal(rng.uniform(-0.4, 0.4), rng.uniform(0.01, 0.7), n), -1, 1)
        shuffled = rng.permutation(xs)
        k = math.exp(rng.uniform(math.log(1e-3), math.log(1.0 / max(np.abs(xs).max(), 1e-12))))
        scaled = np.clip(k * xs, -1, 1)
        for m in MECHS:
            base = decide(ScoreSample(xs.tolist()), m)
            p = decide(ScoreSample(shuffled.tolist()), m)
            s = decide(ScoreSample(scaled.tolist()), m)
            if (p.verdict, p.mean, p.t_statistic) != (base.verdict, base.mean, base.t_statistic):
                perm_fail += 1
            if s.verdict != base.verdict or (
                base.t_statistic is not None and not math.isclose(s.t_statistic, base.t_statistic, rel_tol=1e-9)
            ):
                scale_fail += 1
    ok = perm_fail == 0 and scale_fail == 0
    record("C8", ok, f"permutation failures {perm_fail}, scaling failures {scale_fail} over 1000 samples x 2 mechanisms")
