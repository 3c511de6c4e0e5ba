"""End-to-end audit protocol: prepare data, train a discriminator, query, decide.

Per target artist:

1. dataset preparation: split the auditor's artworks 8:2, augment both parts,
   draw as many negatives from other artists, and query the suspicious model
   with public-artwork captions to obtain distortion pairs;
2. discriminator construction on the extracted style vectors;
3. auditing: query the suspicious model with captions naming the target
   artist, score the returned images and apply the decision mechanism(s).
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, roc_auc_score

from . import dataset as ds
from . import discriminator as disc
from .captions import TemplateCaptionProvider, query_captions
from .dataset import PUBLIC_ARTIST, ArtworkRecord, ArtworkSet, AugmentationConfig, Role
from .decision import AuditDecision, ScoreSample, decide
from .discriminator import TrainConfig
from .errors import AuditError, DegenerateGroundTruth, InvalidConfig, StageError, TooFewRecords
from .extractor import StyleExtractor

logger = logging.getLogger(__name__)

MECHANISMS = ("threshold", "t_test")
OVERLAP_MODES = ("complete", "partial", "disjoint")
METRICS = ("accuracy", "auc", "f1", "fpr")


@dataclass
class ExperimentConfig:
    mechanism: str = "both"
    seeds: tuple = (1, 2, 3, 4, 5)
    queries_per_artist: int = 20
    overlap_mode: str = "complete"
    without_augmentation: bool = False
    without_distortion: bool = False
    caption_provider: str = TemplateCaptionProvider.provider_id
    split_ratio: float = 0.8
    threshold: float = 0.0
    confidence: float = 0.95
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.mechanism not in (*MECHANISMS, "both"):
            raise InvalidConfig(f"unknown mechanism {self.mechanism!r}")
        if self.overlap_mode not in OVERLAP_MODES:
            raise InvalidConfig(f"unknown overlap mode {self.overlap_mode!r}")
        if self.queries_per_artist < 1:
            raise InvalidConfig("queries_per_artist must be >= 1")
        if not self.seeds:
            raise InvalidConfig("seeds must be nonempty")
        if self.jobs < 1:
            raise InvalidConfig("jobs must be >= 1")
        return self

    @property
    def mechanisms(self) -> tuple:
        return MECHANISMS if self.mechanism == "both" else (self.mechanism,)


CAPTION_PROVIDERS = {TemplateCaptionProvider.provider_id: TemplateCaptionProvider}


def get_caption_provider(provider_id: str):
    try:
        return CAPTION_PROVIDERS[provider_id]()
    except KeyError:
        raise InvalidConfig(f"unknown caption provider {provider_id!r}") from None


def _derive(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


class ReplayModel:
    """Suspicious-model stand-in backed by images already generated elsewhere.

    ``images`` maps an artist id to a list of H x W x 3 uint8 arrays; a
    caption naming that artist receives the next image in turn.
    """

    def __init__(self, images: dict):
        self.images = {k: list(v) for k, v in images.items()}
        self._cursor = {}

    def generate(self, captions) -> list:
        from .captions import artist_in_caption

        out = []
        for cap in captions:
            artist = artist_in_caption(cap)
            pool = self.images.get(artist)
            if not pool:
                raise KeyError(f"no generated images available for {artist!r}")
            i = self._cursor.get(artist, 0)
            out.append(pool[i % len(pool)])
            self._cursor[artist] = i + 1
        return out


def query_model(suspicious, captions, artist_id: str) -> list:
    images = suspicious.generate(captions)
    return [
        ArtworkRecord(
            id=f"gen:{hashlib.sha1(c.encode()).hexdigest()[:16]}",
            artist_id=artist_id,
            role=Role.GENERATED,
            pixels=img,
            caption=c,
        )
        for c, img in zip(captions, images)
    ]


# --- overlap modes ------------------------------------------------------------------

def apply_overlap_mode(target: ArtworkSet, mode: str, seed: int = 0):
    """Split an artist's artworks into (fine-tune set, audit set).

    complete: both are the full set. partial: with h = n/2 and a = h//2 the
    fine-tune set takes shuffled records [0, h+a) and the audit set [a, n),
    so they share exactly h records. disjoint: two halves of a shuffle.
    """
    n = len(target)
    if n < 4:
        raise TooFewRecords(f"overlap modes need at least 4 records, got {n}")
    if mode == "complete":
        return target, target
    perm = np.random.default_rng([seed, 0x0E1A]).permutation(n)
    recs = [target.records[i] for i in perm]
    if mode == "partial":
        if n % 2:
            raise TooFewRecords(f"partial overlap needs an even record count, got {n}")
        h = n // 2
        a = h // 2
        return target.subset(recs[: h + a]), target.subset(recs[a:])
    if mode == "disjoint":
        h = n // 2
        return target.subset(recs[:h]), target.subset(recs[h: 2 * h])
    raise InvalidConfig(f"unknown overlap mode {mode!r}")


# --- single audit ---------------------------------------------------------------------

@dataclass
class AuditOutcome:
    artist_id: str
    decisions: dict  # mechanism -> AuditDecision
    scores: list
    discriminator: disc.Discriminator
    provenance: dict = field(default_factory=dict)

    @property
    def decision(self) -> AuditDecision:
        return next(iter(self.decisions.values()))

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores))


class _Quota:
    """Size/artist stand-in for sample_negatives when matching augmented counts."""

    def __init__(self, artist_id, n):
        self.artist_id, self._n = artist_id, n

    def __len__(self):
        return self._n


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, AuditError):
            if not str(exc).startswith("["):
                exc.args = (f"[{self.name}] {exc}",) + tuple(exc.args[1:])
            return False
        raise StageError(self.name, exc) from exc


def run_audit(
    target: ArtworkSet,
    public_pool: ArtworkSet,
    suspicious,
    cfg: ExperimentConfig,
    extractor: StyleExtractor,
    seed: int = 1,
    aug_cfg: Optional[AugmentationConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    discriminator: Optional[disc.Discriminator] = None,
) -> AuditOutcome:
    """Audit one target artist against a suspicious model.

    ``target`` holds the auditor's own artworks of the artist; ``public_pool``
    holds other artists' artworks (role=public records also seed the
    distortion pairs). A pre-trained ``discriminator`` skips the first two
    stages.
    """
    cfg.validate()
    aug_cfg = aug_cfg or AugmentationConfig()
    train_cfg = train_cfg or TrainConfig()
    provider = get_caption_provider(cfg.caption_provider)
    artist = target.artist_id
    prov = {"artist_id": artist, "seed": seed, "extractor": extractor.provenance()}

    if discriminator is None:
        with _Stage("dataset"):
            train_o, valid_o = ds.split_train_valid(target, cfg.split_ratio, _derive(seed, artist, "split"))
            if cfg.without_augmentation:
                pos_train, pos_valid = train_o, valid_o
            else:
                a = replace(aug_cfg, seed=_derive(seed, artist, "augment"))
                pos_train, pos_valid = ds.augment(train_o, a), ds.augment(valid_o, replace(a, seed=a.seed + 1))
            # negatives match the positives actually trained on, 1:1, when the pool allows
            n_neg = min(len(pos_train) + len(pos_valid), sum(r.artist_id != artist for r in public_pool))
            n_neg = max(n_neg, len(target))
            negs = ds.sample_negatives(_Quota(artist, n_neg), public_pool, _derive(seed, artist, "negatives"))
            neg_train, neg_valid = ds.split_train_valid(negs, cfg.split_ratio, _derive(seed, artist, "negsplit"))
            use_dis = train_cfg.use_distortion_term and not cfg.without_distortion
            pairs_pub = [r for r in public_pool if r.role is Role.PUBLIC] if use_dis else []
            if use_dis and not pairs_pub:
                raise InvalidConfig("distortion calibration needs role=public artworks in the pool")
        with _Stage("query-public"):
            pairs_gen = []
            if pairs_pub:
                caps = [provider.generate(r) for r in pairs_pub]
                pairs_gen = query_model(suspicious, caps, PUBLIC_ARTIST)
        with _Stage("extract"):
            Xp, Xpv = extractor.matrix(pos_train), extractor.matrix(pos_valid)
            Xn, Xnv = extractor.matrix(neg_train), extractor.matrix(neg_valid)
            pairs = (extractor.matrix(pairs_pub), extractor.matrix(pairs_gen)) if pairs_pub else None
        with _Stage("train"):
            tc = replace(
                train_cfg,
                seed=_derive(seed, artist, "train", train_cfg.seed),
                use_distortion_term=use_dis,
                use_augmentation=not cfg.without_augmentation,
            )
            discriminator = disc.train(
                Xp, Xn, pairs, tc, valid=(Xpv, Xnv), artist_id=artist, tap_plan_hash=extractor.plan.hash
            )
        prov.update(
            n_positive_examples=len(pos_train) + len(pos_valid),
            n_train_positive=len(pos_train),
            n_negative_examples=len(neg_train) + len(neg_valid),
            n_distortion_pairs=len(pairs_pub),
            training=discriminator.history,
        )

    with _Stage("audit"):
        caps = query_captions(provider, target.records, cfg.queries_per_artist)
        generated = query_model(suspicious, caps, artist)
        reps = [extractor.extract(r) for r in generated]
        scores = [float(s) for s in disc.score_many(discriminator, reps)]
    with _Stage("decision"):
        sample = ScoreSample(scores, artist, "discriminator")
        decisions = {}
        for mech in cfg.mechanisms:
            d = decide(sample, mech, cfg.threshold, cfg.confidence)
            d.provenance = prov
            decisions[mech] = d
    return AuditOutcome(artist, decisions, scores, discriminator, prov)


# --- metrics ---------------------------------------------------------------------------

def verdict_metrics(truth, predicted) -> dict:
    """Accuracy, F1 (infringing = positive class) and FPR from boolean lists."""
    y = np.asarray(truth, dtype=int)
    p = np.asarray(predicted, dtype=int)
    tn, fp, fn, tp = confusion_matrix(y, p, labels=[0, 1]).ravel()
    return {
        "accuracy": float(accuracy_score(y, p)),
        "f1": float(f1_score(y, p, zero_division=0)),
        "fpr": float(fp / (fp + tn)) if fp + tn else 0.0,
    }


def artist_auc(truth, mean_scores) -> float:
    y = np.asarray(truth, dtype=int)
    if y.min() == y.max():
        raise DegenerateGroundTruth("AUC needs both positive and negative artists")
    return float(roc_auc_score(y, np.asarray(mean_scores, dtype=float)))


@dataclass
class MetricStat:
    per_seed: list
    mean: float
    std: float

    @classmethod
    def of(cls, values) -> "MetricStat":
        v = [float(x) for x in values]
        return cls(v, float(np.mean(v)), float(np.std(v)))


@dataclass
class MetricsReport:
    mechanism: str
    accuracy: MetricStat
    auc: MetricStat
    f1: MetricStat
    fpr: MetricStat
    n_artists: int
    seeds: list
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def headline(self) -> str:
        parts = [f"{m}={getattr(self, m).mean:.3f}±{getattr(self, m).std:.3f}" for m in METRICS]
        return f"{self.mechanism:>9}: " + "  ".join(parts)


@dataclass
class ExperimentResult:
    reports: dict  # mechanism -> MetricsReport
    decisions: list  # AuditDecision, ordered by seed then artist
    config: dict
    provenance: dict

    def report(self, mechanism: Optional[str] = None) -> MetricsReport:
        return self.reports[mechanism or next(iter(self.reports))]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "provenance": self.provenance,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
        }


def _pool_for(bench, artist: str) -> ArtworkSet:
    recs = list(bench.public.records)
    for other, aset in bench.originals.items():
        if other != artist:
            recs += aset.records
    return ArtworkSet(PUBLIC_ARTIST, recs)


def run_experiment(
    bench,
    cfg: ExperimentConfig,
    extractor: StyleExtractor,
    aug_cfg: Optional[AugmentationConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
) -> ExperimentResult:
    """Audit every benchmark artist under every seed and aggregate metrics.

    AUC ranks artists by their mean confidence score, one point per artist.
    """
    cfg.validate()
    truth = bench.ground_truth
    artists = sorted(truth)
    if len(artists) < 2 or len(set(truth.values())) < 2:
        raise DegenerateGroundTruth("need at least one positive and one negative artist")
    aug_cfg = aug_cfg or AugmentationConfig()
    train_cfg = train_cfg or TrainConfig()
    y = [truth[a] for a in artists]

    def audit(seed, artist):
        _, audit_set = apply_overlap_mode(bench.originals[artist], cfg.overlap_mode, _derive(seed, artist, "overlap"))
        return run_audit(
            audit_set, _pool_for(bench, artist), bench.model, cfg, extractor, seed, aug_cfg, train_cfg
        )

    per_mech = {m: {k: [] for k in METRICS} for m in cfg.mechanisms}
    decisions = []
    for seed in cfg.seeds:
        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                outcomes = list(pool.map(lambda a: audit(seed, a), artists))
        else:
            outcomes = [audit(seed, a) for a in artists]
        means = [o.mean_score for o in outcomes]
        auc = artist_auc(y, means)
        for m in cfg.mechanisms:
            pred = [o.decisions[m].infringing for o in outcomes]
            vm = verdict_metrics(y, pred)
            for k in ("accuracy", "f1", "fpr"):
                per_mech[m][k].append(vm[k])
            per_mech[m]["auc"].append(auc)
            decisions += [o.decisions[m] for o in outcomes]
        logger.info("seed %s done: auc=%.3f", seed, auc)

    meta = {
        "auc_aggregation": "per-artist mean confidence score",
        "f1_positive_class": "infringing",
        "std": "population standard deviation across seeds",
        "overlap_mode": cfg.overlap_mode,
        "ablations": {"without_augmentation": cfg.without_augmentation, "without_distortion": cfg.without_distortion},
    }
    reports = {
        m: MetricsReport(
            m, *(MetricStat.of(per_mech[m][k]) for k in METRICS), len(artists), list(cfg.seeds), meta
        )
        for m in cfg.mechanisms
    }
    config = {
        "experiment": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
        "augmentation": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(aug_cfg).items()},
        "train": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(train_cfg).items()},
        "benchmark": bench.config,
    }
    provenance = {"extractor": extractor.provenance(), "ground_truth": {a: truth[a] for a in artists}}
    return ExperimentResult(reports, decisions, config, provenance)


def run_ablation(bench, cfg: ExperimentConfig, extractor: StyleExtractor, aug_cfg=None, train_cfg=None):
    """Baseline and ablated runs on identical seeds and data: (baseline, ablation)."""
    base_cfg = replace(cfg, without_augmentation=False, without_distortion=False)
    baseline = run_experiment(bench, base_cfg, extractor, aug_cfg, train_cfg)
    if not (cfg.without_augmentation or cfg.without_distortion):
        return baseline, baseline
    return baseline, run_experiment(bench, cfg, extractor, aug_cfg, train_cfg)
