"""Command-line entry points.

    styleaudit init-weights --config run.yaml
    styleaudit benchmark    --config run.yaml
    styleaudit extract      --config run.yaml
    styleaudit train        --config run.yaml --artist artist-03
    styleaudit audit        --config run.yaml --artist artist-03 --mechanism t_test
    styleaudit experiment   --config run.yaml [--ablation without_distortion]
    styleaudit report       --config run.yaml

Exit status is 0 whenever the pipeline completes; a verdict is data, not an
error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__, kernels
from . import config as config_mod
from .decision import append_decisions_csv
from .discriminator import Discriminator
from .errors import AuditError, DimMismatch
from .extractor import Backbone, FeatureCache, StyleExtractor, init_weights, plan_taps
from .harness import _derive, _pool_for, apply_overlap_mode, run_ablation, run_audit, run_experiment
from .simulator import build_benchmark, load_benchmark, write_benchmark

logger = logging.getLogger("styleaudit")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _load_config(args):
    cfg = config_mod.load(args.config)
    exp = cfg.experiment
    if getattr(args, "seed", None) is not None:
        exp = replace(exp, seeds=(args.seed,))
    if getattr(args, "mechanism", None):
        exp = replace(exp, mechanism=args.mechanism)
    if getattr(args, "overlap", None):
        exp = replace(exp, overlap_mode=args.overlap)
    if getattr(args, "jobs", None):
        exp = replace(exp, jobs=args.jobs)
    cfg.experiment = exp.validate()
    if getattr(args, "out", None):
        cfg.paths.out_dir = str(Path(args.out).resolve())
    return cfg


def _extractor(cfg) -> StyleExtractor:
    backbone = Backbone.from_file(cfg.paths.weights, cfg.extractor.input_side)
    plan = plan_taps(backbone.adapter, cfg.extractor.taps)
    return StyleExtractor(backbone, plan, FeatureCache(cfg.cache_path))


def _benchmark(cfg):
    return load_benchmark(Path(cfg.paths.benchmark_dir) / "manifest.json")


# --- commands ---------------------------------------------------------------------

def cmd_init_weights(args) -> int:
    cfg = _load_config(args)
    digest = init_weights(cfg.paths.weights, cfg.extractor.width_divisor, cfg.extractor.weights_seed)
    print(cfg.paths.weights)
    logger.info("weights digest %s", digest)
    return 0


def cmd_benchmark(args) -> int:
    cfg = _load_config(args)
    s = cfg.simulator
    seed = args.seed if args.seed is not None else s.seed
    bench = build_benchmark(
        s.n_artists, s.n_pirated, s.per_artist, seed, s.fidelity, s.distortion_sigma,
        s.n_public, s.public_per_artist, cfg.extractor.input_side,
    )
    path = write_benchmark(bench, cfg.paths.benchmark_dir, cfg.experiment.queries_per_artist)
    print(path)
    return 0


def cmd_extract(args) -> int:
    cfg = _load_config(args)
    ex = _extractor(cfg)
    bench = _benchmark(cfg)
    n = 0
    for aset in [*bench.originals.values(), bench.public]:
        ex.matrix(aset.records)
        n += len(aset)
    path = ex.cache.save()
    print(f"{n} representations ({ex.dim} dims) -> {path}")
    return 0


def _disc_path(cfg, artist) -> Path:
    return Path(cfg.paths.out_dir) / "discriminators" / f"{artist}.npz"


def _audit_inputs(cfg, bench, artist):
    if artist not in bench.originals:
        raise AuditError(f"unknown artist {artist!r}; benchmark has {', '.join(sorted(bench.originals))}")
    seed = cfg.experiment.seeds[0]
    _, audit_set = apply_overlap_mode(bench.originals[artist], cfg.experiment.overlap_mode, _derive(seed, artist, "overlap"))
    return seed, audit_set, _pool_for(bench, artist)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    ex = _extractor(cfg)
    bench = _benchmark(cfg)
    exp = _apply_ablation(cfg.experiment, args.ablation)
    seed, audit_set, pool = _audit_inputs(cfg, bench, args.artist)
    outcome = run_audit(audit_set, pool, bench.model, exp, ex, seed, cfg.augmentation, cfg.train)
    path = outcome.discriminator.save(_disc_path(cfg, args.artist))
    ex.cache.save()
    print(path)
    return 0


def cmd_audit(args) -> int:
    cfg = _load_config(args)
    ex = _extractor(cfg)
    bench = _benchmark(cfg)
    exp = _apply_ablation(cfg.experiment, args.ablation)
    seed, audit_set, pool = _audit_inputs(cfg, bench, args.artist)
    disc = None
    dpath = _disc_path(cfg, args.artist)
    if dpath.is_file():
        disc = Discriminator.load(dpath)
        if disc.tap_plan_hash != ex.plan.hash:
            raise DimMismatch(f"{dpath} was trained on tap plan {disc.tap_plan_hash}, current plan is {ex.plan.hash}")
    outcome = run_audit(audit_set, pool, bench.model, exp, ex, seed, cfg.augmentation, cfg.train, discriminator=disc)
    ex.cache.save()
    if len(outcome.decisions) == 1:
        payload = outcome.decision.to_dict()
    else:
        payload = {m: d.to_dict() for m, d in outcome.decisions.items()}
    _write_json(Path(cfg.paths.out_dir) / "decisions" / f"{args.artist}.json", payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _apply_ablation(exp, ablation):
    if ablation == "without_augmentation":
        return replace(exp, without_augmentation=True)
    if ablation == "without_distortion":
        return replace(exp, without_distortion=True)
    return exp


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    ex = _extractor(cfg)
    bench = _benchmark(cfg)
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    exp = _apply_ablation(cfg.experiment, args.ablation)
    csv_path = out / "decisions.csv"
    csv_path.unlink(missing_ok=True)
    if args.ablation:
        base, abl = run_ablation(bench, exp, ex, cfg.augmentation, cfg.train)
        metrics = {"baseline": base.to_dict(), "ablation": abl.to_dict(), "ablation_flag": args.ablation}
        append_decisions_csv(base.decisions + abl.decisions, csv_path)
        results = {"baseline": base, args.ablation: abl}
    else:
        res = run_experiment(bench, exp, ex, cfg.augmentation, cfg.train)
        metrics = res.to_dict()
        append_decisions_csv(res.decisions, csv_path)
        results = {"": res}
    ex.cache.save()
    metrics_path = _write_json(out / "metrics.json", metrics)
    bench_manifest = Path(cfg.paths.benchmark_dir) / "manifest.json"
    _write_json(
        out / "run_manifest.json",
        {
            "styleaudit_version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config": cfg.to_dict(),
            "seeds": list(exp.seeds),
            "weights_digest": ex.backbone.weights_digest,
            "tap_plan": {"tap_indices": list(ex.plan.tap_indices), "hash": ex.plan.hash, "dim": ex.dim},
            "benchmark_manifest_sha256": _sha256(bench_manifest),
            "outputs": {"metrics.json": _sha256(metrics_path), "decisions.csv": _sha256(csv_path)},
        },
    )
    for label, res in results.items():
        if label:
            print(f"[{label}]")
        for rep in res.reports.values():
            print(rep.headline())
    print(metrics_path)
    return 0


def _print_report(reports: dict, label=""):
    if label:
        print(f"[{label}]")
    for mech, rep in reports.items():
        cells = [f"{m}={rep[m]['mean']:.3f}±{rep[m]['std']:.3f}" for m in ("accuracy", "auc", "f1", "fpr")]
        print(f"{mech:>9}: " + "  ".join(cells) + f"  (n_artists={rep['n_artists']}, seeds={rep['seeds']})")


def cmd_report(args) -> int:
    cfg = _load_config(args)
    path = Path(args.metrics) if args.metrics else Path(cfg.paths.out_dir) / "metrics.json"
    try:
        metrics = json.loads(path.read_text())
    except OSError as exc:
        raise AuditError(f"cannot read {path}: {exc}") from exc
    if "baseline" in metrics:
        _print_report(metrics["baseline"]["reports"], "baseline")
        _print_report(metrics["ablation"]["reports"], metrics.get("ablation_flag", "ablation"))
    else:
        _print_report(metrics["reports"])
    return 0


COMMANDS = {
    "init-weights": (cmd_init_weights, "write seeded backbone weights to paths.weights"),
    "benchmark": (cmd_benchmark, "render the synthetic benchmark to paths.benchmark_dir"),
    "extract": (cmd_extract, "extract and cache style representations for the benchmark"),
    "train": (cmd_train, "train one artist's discriminator"),
    "audit": (cmd_audit, "audit one artist and print the decision JSON"),
    "experiment": (cmd_experiment, "audit every artist over all seeds and write metrics"),
    "report": (cmd_report, "print metrics.json as a table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="styleaudit", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run config")
    common.add_argument("--seed", type=int, default=None, help="single seed overriding the config")
    common.add_argument("--mechanism", choices=["threshold", "t_test", "both"], default=None)
    common.add_argument("--overlap", choices=["complete", "partial", "disjoint"], default=None)
    common.add_argument("--ablation", choices=["without_augmentation", "without_distortion"], default=None)
    common.add_argument("--jobs", type=int, default=None, help="parallel per-artist audits")
    common.add_argument("--out", type=Path, default=None, help="output directory (overrides paths.out_dir)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
        if name in ("train", "audit"):
            p.add_argument("--artist", required=True)
        if name == "report":
            p.add_argument("--metrics", type=Path, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except AuditError as exc:
        print(f"styleaudit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
