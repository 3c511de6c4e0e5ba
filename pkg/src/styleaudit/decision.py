"""Turn per-image confidence scores into an audit verdict.

Two mechanisms: the mean score against a threshold (default 0), and a
one-sided one-sample t-test of H0: mu <= 0 against H1: mu > 0.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .errors import TooFewScores

DEGENERATE_ZERO_STD = "zero_std"
CSV_COLUMNS = ("artist_id", "mechanism", "n", "mean", "stddev", "t", "critical_t", "verdict")


class Verdict(str, Enum):
    INFRINGING = "infringing"
    NOT_INFRINGING = "not_infringing"


@dataclass
class ScoreSample:
    scores: list
    artist_id: str = ""
    source: str = "discriminator"  # or "adapted_binary"

    def __post_init__(self):
        self.scores = [float(c) for c in self.scores]
        if not self.scores:
            raise TooFewScores("a score sample needs at least one score")
        for c in self.scores:
            if not math.isfinite(c) or not -1.0 <= c <= 1.0:
                raise ValueError(f"score {c} outside [-1, 1]")
        if self.source not in ("discriminator", "adapted_binary"):
            raise ValueError(f"unknown score source {self.source!r}")

    @property
    def n(self) -> int:
        return len(self.scores)


@dataclass
class AuditDecision:
    verdict: Verdict
    mechanism: str
    mean: float
    stddev: float
    n: int
    artist_id: str = ""
    t_statistic: Optional[float] = None
    critical_t: Optional[float] = None
    p_value: Optional[float] = None
    degenerate: Optional[str] = None
    confidence_level: float = 0.95
    threshold: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def infringing(self) -> bool:
        return self.verdict is Verdict.INFRINGING

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        if self.mechanism == "threshold":
            for k in ("t_statistic", "critical_t", "p_value", "degenerate"):
                d.pop(k)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        return {
            "artist_id": self.artist_id,
            "mechanism": self.mechanism,
            "n": self.n,
            "mean": repr(self.mean),
            "stddev": repr(self.stddev),
            "t": "" if self.t_statistic is None else repr(self.t_statistic),
            "critical_t": "" if self.critical_t is None else repr(self.critical_t),
            "verdict": self.verdict.value,
        }


def _mean_std(scores):
    n = len(scores)
    if all(c == scores[0] for c in scores):
        # exact for constant samples; fsum(3 * [0.1]) / 3 is not 0.1
        return scores[0], 0.0
    mean = math.fsum(scores) / n
    if n < 2:
        return mean, 0.0
    return mean, math.sqrt(math.fsum((c - mean) ** 2 for c in scores) / (n - 1))


def _sqrt_rounded(x: Fraction) -> float:
    """Square root of a non-negative rational, correctly rounded to float64."""
    if x == 0:
        return 0.0
    # ~120 significant bits of floor(sqrt(x)) land within an ulp of the answer
    k = max(0, 120 - (x.numerator.bit_length() - x.denominator.bit_length()) // 2)
    f = float(Fraction(math.isqrt((x.numerator << (2 * k)) // x.denominator), 1 << k))
    while True:
        lo = (Fraction(f) + Fraction(math.nextafter(f, 0.0))) / 2
        hi = (Fraction(f) + Fraction(math.nextafter(f, math.inf))) / 2
        if lo * lo > x:
            f = math.nextafter(f, 0.0)
        elif hi * hi < x:
            f = math.nextafter(f, math.inf)
        else:
            return f


def t_statistic(scores) -> Optional[float]:
    """mean / (s / sqrt(n)) evaluated exactly on the given floats, rounded once.

    Returns None when the sample standard deviation is zero.
    """
    q = [Fraction(c) for c in scores]
    n = len(q)
    mean = sum(q, Fraction(0)) / n
    ss = sum(((c - mean) ** 2 for c in q), Fraction(0))
    if ss == 0:
        return None
    # t^2 = mean^2 * n / s^2 with s^2 = ss / (n - 1)
    return math.copysign(_sqrt_rounded(mean * mean * n * (n - 1) / ss), mean) if mean else 0.0


def decide_threshold(sample: ScoreSample, threshold: float = 0.0) -> AuditDecision:
    """Infringing iff the mean score is strictly above ``threshold``."""
    mean, s = _mean_std(sample.scores)
    verdict = Verdict.INFRINGING if mean > threshold else Verdict.NOT_INFRINGING
    return AuditDecision(verdict, "threshold", mean, s, sample.n, sample.artist_id, threshold=threshold)


def decide_ttest(sample: ScoreSample, confidence: float = 0.95) -> AuditDecision:
    """One-sided t-test; a zero-variance sample is decided by the sign of its mean."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must be in (0, 1)")
    n = sample.n
    mean, s = _mean_std(sample.scores)
    if n < 2:
        raise TooFewScores(f"the t-test needs at least 2 scores, got {n}")
    if s == 0.0:
        verdict = Verdict.INFRINGING if mean > 0 else Verdict.NOT_INFRINGING
        return AuditDecision(
            verdict, "t_test", mean, s, n, sample.artist_id,
            degenerate=DEGENERATE_ZERO_STD, confidence_level=confidence,
        )
    t = t_statistic(sample.scores)
    crit = t_ppf(confidence, n - 1)
    verdict = Verdict.INFRINGING if t > crit else Verdict.NOT_INFRINGING
    return AuditDecision(
        verdict, "t_test", mean, s, n, sample.artist_id,
        t_statistic=t, critical_t=crit, p_value=t_sf(t, n - 1), confidence_level=confidence,
    )


def decide(sample: ScoreSample, mechanism: str, threshold: float = 0.0, confidence: float = 0.95) -> AuditDecision:
    if mechanism == "threshold":
        return decide_threshold(sample, threshold)
    if mechanism == "t_test":
        return decide_ttest(sample, confidence)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def adapt_binary(predictions: Sequence) -> ScoreSample:
    """Map external positive/negative verdicts onto +1.0 / -1.0 scores."""
    if not predictions:
        raise TooFewScores("no predictions to adapt")
    out = []
    for p in predictions:
        key = p.lower() if isinstance(p, str) else p
        if key in ("positive", True, 1):
            out.append(1.0)
        elif key in ("negative", False, 0):
            out.append(-1.0)
        else:
            raise ValueError(f"not a binary prediction: {p!r}")
    return ScoreSample(out, source="adapted_binary")


# --- Student t distribution ------------------------------------------------------

def _betacf(a, b, x, max_iter=500, eps=1e-16):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbt = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(lbt)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t with ``df`` degrees of freedom."""
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df)


def t_ppf(p: float, df: float) -> float:
    """Quantile of Student's t: the ``t`` with ``P(T <= t) = p``."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if df <= 0:
        raise ValueError("df must be positive")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_ppf(1.0 - p, df)
    # solve I_x(df/2, 1/2) = 2(1 - p) for x = df / (df + t^2); I_x is increasing in x
    target = 2.0 * (1.0 - p)
    a = df / 2.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if betainc(a, 0.5, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17 * max(mid, 1e-300):
            break
    x = 0.5 * (lo + hi)
    t = math.sqrt(df * (1.0 - x) / x)
    # polish in t-space with Newton steps on the tail probability
    lg = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    for _ in range(3):
        pdf = math.exp(lg - (df + 1) / 2 * math.log1p(t * t / df))
        if pdf <= 0:
            break
        step = (t_sf(t, df) - (1.0 - p)) / pdf
        t += step
        if abs(step) <= 1e-15 * abs(t):
            break
    return t


# --- persistence -------------------------------------------------------------------

def append_decisions_csv(decisions, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        if new:
            w.writeheader()
        for dec in decisions:
            w.writerow(dec.csv_row())
    return path
