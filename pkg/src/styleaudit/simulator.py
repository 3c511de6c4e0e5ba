"""Procedural artist styles and a simulated style-pirating text-to-image model.

Each synthetic artist is a :class:`StyleFamily`: a palette, a stroke
vocabulary and a paper texture. Originals are strokes composited in that
style. The simulated model answers captions of the form ``"artwork by
<artist>, ..."``; for artists it was fine-tuned on (and for the public
families it saw in pre-training) it paints in a jittered copy of the
artist's style, for everyone else in a fixed gray generic style.
"""
from __future__ import annotations

import colorsys
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import kernels
from .captions import TemplateCaptionProvider, artist_in_caption, query_captions
from .dataset import PUBLIC_ARTIST, ArtworkRecord, ArtworkSet, Role, ingest_directory
from .errors import InvalidConfig, InvalidCounts

logger = logging.getLogger(__name__)

SIDE = 224
GENERIC_ID = "generic"


def _stable_int(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


@dataclass(frozen=True)
class StyleFamily:
    family_id: str
    palette: tuple  # K RGB triples in [0, 1]
    orientation_mean: float  # radians
    concentration: float  # von Mises kappa; 0 = isotropic
    length_mean: float
    length_std: float
    width_mean: float
    width_std: float
    texture_seed: int
    background_tone: tuple
    stroke_count: int = 260
    texture_amplitude: float = 0.06

    def __post_init__(self):
        if len(self.palette) < 3:
            raise InvalidConfig(f"{self.family_id}: palette needs at least 3 colours")
        if self.length_mean <= 0 or self.width_mean <= 0:
            raise InvalidConfig(f"{self.family_id}: stroke means must be positive")
        if self.concentration < 0:
            raise InvalidConfig(f"{self.family_id}: concentration must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["palette"] = [list(c) for c in self.palette]
        d["background_tone"] = list(self.background_tone)
        return d

    @classmethod
    def from_dict(cls, d) -> "StyleFamily":
        d = dict(d)
        d["palette"] = tuple(tuple(float(v) for v in c) for c in d["palette"])
        d["background_tone"] = tuple(float(v) for v in d["background_tone"])
        return cls(**d)


GENERIC_STYLE = StyleFamily(
    family_id=GENERIC_ID,
    palette=tuple((g, g, g) for g in (0.25, 0.4, 0.55, 0.7, 0.85)),
    orientation_mean=0.0,
    concentration=0.0,
    length_mean=20.0,
    length_std=6.0,
    width_mean=3.0,
    width_std=1.0,
    texture_seed=0,
    background_tone=(0.5, 0.5, 0.5),
)


def random_family(
    family_id: str, hue: float, rng: np.random.Generator, saturation=(0.45, 0.95)
) -> StyleFamily:
    palette = []
    for _ in range(5):
        h = (hue + rng.normal(0.0, 0.035)) % 1.0
        s = rng.uniform(*saturation)
        v = rng.uniform(0.3, 0.95)
        palette.append(tuple(round(c, 6) for c in colorsys.hsv_to_rgb(h, s, v)))
    bg_h = (hue + rng.uniform(-0.1, 0.1)) % 1.0
    bg_v = rng.choice([0.15, 0.5, 0.85]) + rng.uniform(-0.08, 0.08)
    bg = colorsys.hsv_to_rgb(bg_h, min(saturation[1], rng.uniform(0.05, 0.35)), bg_v)
    length = rng.uniform(8.0, 40.0)
    width = rng.uniform(1.5, 6.0)
    return StyleFamily(
        family_id=family_id,
        palette=tuple(palette),
        orientation_mean=round(float(rng.uniform(0.0, np.pi)), 6),
        concentration=round(float(rng.uniform(0.5, 8.0)), 6),
        length_mean=round(float(length), 6),
        length_std=round(float(0.3 * length), 6),
        width_mean=round(float(width), 6),
        width_std=round(float(0.3 * width), 6),
        texture_seed=int(rng.integers(0, 2**31 - 1)),
        background_tone=tuple(round(float(c), 6) for c in bg),
        stroke_count=int(rng.integers(150, 400)),
    )


# --- rendering ----------------------------------------------------------------

def _texture(family: StyleFamily, side: int) -> np.ndarray:
    rng = np.random.default_rng(family.texture_seed)
    coarse = rng.normal(0.0, 1.0, size=(max(2, side // 8), max(2, side // 8))).astype(np.float32)
    img = Image.fromarray(coarse, mode="F").resize((side, side), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) * family.texture_amplitude


def render_image(family: StyleFamily, content_rng: np.random.Generator, side: int = SIDE) -> np.ndarray:
    """Composite strokes in ``family``'s style; placement comes from ``content_rng``."""
    canvas = np.empty((side, side, 3), dtype=np.float64)
    canvas[:] = np.asarray(family.background_tone, dtype=np.float64)
    canvas += _texture(family, side)[..., None]
    np.clip(canvas, 0.0, 1.0, out=canvas)

    n = family.stroke_count
    palette = np.asarray(family.palette, dtype=np.float64)
    cx = content_rng.uniform(0, side, n)
    cy = content_rng.uniform(0, side, n)
    if family.concentration > 0:
        theta = content_rng.vonmises(2 * family.orientation_mean, family.concentration, n) / 2
    else:
        theta = content_rng.uniform(0, np.pi, n)
    length = np.maximum(2.0, content_rng.normal(family.length_mean, family.length_std, n))
    width = np.maximum(1.0, content_rng.normal(family.width_mean, family.width_std, n))
    idx = content_rng.integers(0, len(palette), n)
    color = np.clip(palette[idx] + content_rng.normal(0.0, 0.03, (n, 3)), 0.0, 1.0)
    opacity = content_rng.uniform(0.6, 1.0, n)

    dx, dy = np.cos(theta) * length / 2, np.sin(theta) * length / 2
    strokes = np.column_stack([cx - dx, cy - dy, cx + dx, cy + dy, width / 2, color, opacity])
    kernels.paint_strokes(canvas, np.ascontiguousarray(strokes))
    return np.rint(np.clip(canvas, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_original(family: StyleFamily, count: int, seed: int, side: int = SIDE) -> ArtworkSet:
    if count < 1:
        raise InvalidConfig("count must be >= 1")
    records = []
    for i in range(count):
        rng = np.random.default_rng([seed, _stable_int(family.family_id), 0, i])
        records.append(
            ArtworkRecord(
                id=f"{family.family_id}/{i:03d}",
                artist_id=family.family_id,
                role=Role.TARGET,
                pixels=render_image(family, rng, side),
            )
        )
    return ArtworkSet(family.family_id, records, seed)


@dataclass
class PiracyConfig:
    fidelity: float = 0.9
    distortion_sigma: float = 0.1
    content_seed: int = 0
    fine_tuned_on: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        self.fine_tuned_on = frozenset(self.fine_tuned_on)
        if not 0 <= self.fidelity <= 1:
            raise InvalidConfig("fidelity must be in [0, 1]")
        if self.distortion_sigma < 0:
            raise InvalidConfig("distortion_sigma must be >= 0")


def mimicked_style(family: StyleFamily, cfg: PiracyConfig) -> StyleFamily:
    """Style the simulated model actually paints with when asked for ``family``.

    The jitter is drawn from the family's own texture seed, never from the
    content seed, so it is a fixed drift of the model rather than per-image
    noise.
    """
    if family.family_id not in cfg.fine_tuned_on:
        return GENERIC_STYLE
    scale = cfg.distortion_sigma * (1.0 - cfg.fidelity)
    if scale == 0.0:
        return family
    rng = np.random.default_rng([family.texture_seed, 0xD157])
    pal = np.clip(np.asarray(family.palette) + rng.normal(0.0, scale, (len(family.palette), 3)), 0.0, 1.0)
    bg = np.clip(np.asarray(family.background_tone) + rng.normal(0.0, scale, 3), 0.0, 1.0)
    return replace(
        family,
        palette=tuple(tuple(float(v) for v in c) for c in pal),
        background_tone=tuple(float(v) for v in bg),
        orientation_mean=float(family.orientation_mean + rng.normal(0.0, scale * np.pi)),
        concentration=float(family.concentration * np.exp(rng.normal(0.0, scale))),
        length_mean=float(family.length_mean * np.exp(rng.normal(0.0, scale))),
        width_mean=float(family.width_mean * np.exp(rng.normal(0.0, scale))),
    )


class SimulatedModel:
    """Black-box query interface of the suspicious model.

    ``generate(captions)`` returns one 8-bit RGB image per caption. The
    artist named in the caption selects the style; the caption text itself
    (with ``content_seed``) selects the stroke placement.
    """

    def __init__(self, families, cfg: PiracyConfig, side: int = SIDE):
        self.families = {f.family_id: f for f in families}
        self.cfg = cfg
        self.side = side
        self.calls = 0

    def style_for(self, artist_id: Optional[str]) -> StyleFamily:
        fam = self.families.get(artist_id)
        return mimicked_style(fam, self.cfg) if fam is not None else GENERIC_STYLE

    def generate(self, captions) -> list:
        out = []
        for cap in captions:
            self.calls += 1
            style = self.style_for(artist_in_caption(cap))
            rng = np.random.default_rng([self.cfg.content_seed, _stable_int(cap), 1])
            out.append(render_image(style, rng, self.side))
        return out

    def query(self, captions, artist_id: str) -> ArtworkSet:
        """``generate`` wrapped into role=generated records."""
        images = self.generate(captions)
        recs = [
            ArtworkRecord(
                id=f"gen:{hashlib.sha1(c.encode()).hexdigest()[:16]}",
                artist_id=artist_id,
                role=Role.GENERATED,
                pixels=img,
                caption=c,
            )
            for c, img in zip(captions, images)
        ]
        return ArtworkSet(PUBLIC_ARTIST, recs)


def render_mimic(family: StyleFamily, cfg: PiracyConfig, count: int, side: int = SIDE) -> ArtworkSet:
    if count < 1:
        raise InvalidConfig("count must be >= 1")
    model = SimulatedModel([family], cfg, side)
    caps = [f"artwork by {family.family_id}, mimic {k}" for k in range(count)]
    gen = model.query(caps, PUBLIC_ARTIST)
    return ArtworkSet(
        family.family_id,
        [replace(r, artist_id=family.family_id) for r in gen.records],
    )


# --- benchmark ------------------------------------------------------------------

@dataclass
class Benchmark:
    config: dict
    families: list
    public_families: list
    pirated: list
    originals: dict  # artist id -> ArtworkSet
    public: ArtworkSet
    model: SimulatedModel

    @property
    def artists(self) -> list:
        return [f.family_id for f in self.families]

    @property
    def ground_truth(self) -> dict:
        return {a: a in self.pirated for a in self.artists}

    def manifest(self) -> dict:
        return {
            "format": "styleaudit-benchmark/1",
            "config": self.config,
            "families": [f.to_dict() for f in self.families],
            "public_families": [f.to_dict() for f in self.public_families],
            "ground_truth": {a: ("positive" if v else "negative") for a, v in self.ground_truth.items()},
            "piracy": {
                "fidelity": self.model.cfg.fidelity,
                "distortion_sigma": self.model.cfg.distortion_sigma,
                "content_seed": self.model.cfg.content_seed,
                "fine_tuned_on": sorted(self.model.cfg.fine_tuned_on),
            },
        }


def build_benchmark(
    n_artists: int = 10,
    n_pirated: int = 5,
    per_artist: int = 20,
    seed: int = 0,
    fidelity: float = 0.9,
    distortion_sigma: float = 0.1,
    n_public: int = 5,
    public_per_artist: int = 10,
    side: int = SIDE,
) -> Benchmark:
    """Create artist families, pick the pirated group D+ and render originals."""
    if not 1 <= n_pirated <= n_artists:
        raise InvalidCounts(f"need 1 <= n_pirated <= n_artists, got n_pirated={n_pirated}, n_artists={n_artists}")
    if per_artist < 10:
        raise InvalidCounts(f"per_artist must be >= 10, got {per_artist}")
    if n_public < 1 or public_per_artist < 1:
        raise InvalidCounts("need at least one public artist with one artwork")
    rng = np.random.default_rng([seed, 0xBE4C])
    total = n_artists + n_public
    hues = (np.arange(total) + rng.uniform(-0.2, 0.2, total)) / total
    hues = hues[rng.permutation(total)]
    families = [random_family(f"artist-{i:02d}", hues[i], rng) for i in range(n_artists)]
    # the public canon mixes colourful painters with near-monochrome draughtsmen
    public_families = [
        random_family(
            f"public-{j:02d}", hues[n_artists + j], rng, saturation=(0.0, 0.12) if j % 2 else (0.45, 0.95)
        )
        for j in range(n_public)
    ]
    pick = sorted(int(i) for i in rng.choice(n_artists, size=n_pirated, replace=False))
    pirated = [families[i].family_id for i in pick]

    cfg = PiracyConfig(
        fidelity=fidelity,
        distortion_sigma=distortion_sigma,
        content_seed=seed,
        # public families stand for artists already known from pre-training
        fine_tuned_on=frozenset(pirated) | {f.family_id for f in public_families},
    )
    originals = {f.family_id: render_original(f, per_artist, seed, side) for f in families}
    pub_records = []
    for f in public_families:
        pub_records += [replace(r, role=Role.PUBLIC) for r in render_original(f, public_per_artist, seed, side)]
    config = {
        "n_artists": n_artists,
        "n_pirated": n_pirated,
        "per_artist": per_artist,
        "seed": seed,
        "fidelity": fidelity,
        "distortion_sigma": distortion_sigma,
        "n_public": n_public,
        "public_per_artist": public_per_artist,
        "side": side,
    }
    return Benchmark(
        config=config,
        families=families,
        public_families=public_families,
        pirated=pirated,
        originals=originals,
        public=ArtworkSet(PUBLIC_ARTIST, pub_records, seed),
        model=SimulatedModel(families + public_families, cfg, side),
    )


def _save_png(pixels, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG", optimize=False)


def write_benchmark(bench: Benchmark, out_dir, queries_per_artist: int = 20) -> Path:
    """Materialise originals/, public/, mimics/ and manifest.json under ``out_dir``."""
    out = Path(out_dir)
    files = {}
    for artist, aset in bench.originals.items():
        for rec in aset:
            rel = f"originals/{artist}/{rec.id.split('/')[-1]}.png"
            _save_png(rec.pixels, out / rel)
            files[rec.id] = rel
    for rec in bench.public:
        rel = f"public/{rec.artist_id}/{rec.id.split('/')[-1]}.png"
        _save_png(rec.pixels, out / rel)
        files[rec.id] = rel
    provider = TemplateCaptionProvider()
    mimics = {}
    for artist, aset in bench.originals.items():
        caps = query_captions(provider, aset.records, queries_per_artist)
        for q, img in enumerate(bench.model.generate(caps)):
            rel = f"mimics/{artist}/q{q:03d}.png"
            _save_png(img, out / rel)
            mimics.setdefault(artist, []).append({"path": rel, "caption": caps[q]})
    manifest = bench.manifest()
    manifest["files"] = dict(sorted(files.items()))
    manifest["mimics"] = mimics
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_benchmark(manifest_path) -> Benchmark:
    """Rebuild a benchmark from ``manifest.json`` and the images beside it."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    m = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    cfgd = m["config"]
    side = cfgd.get("side", SIDE)
    families = [StyleFamily.from_dict(d) for d in m["families"]]
    public_families = [StyleFamily.from_dict(d) for d in m["public_families"]]
    originals = {}
    for f in families:
        aset = ingest_directory(root / "originals" / f.family_id, f.family_id, Role.TARGET, side)
        originals[f.family_id] = aset
    pub = []
    for f in public_families:
        pub += ingest_directory(root / "public" / f.family_id, f.family_id, Role.PUBLIC, side).records
    p = m["piracy"]
    cfg = PiracyConfig(p["fidelity"], p["distortion_sigma"], p["content_seed"], frozenset(p["fine_tuned_on"]))
    pirated = sorted(a for a, v in m["ground_truth"].items() if v == "positive")
    return Benchmark(
        config=cfgd,
        families=families,
        public_families=public_families,
        pirated=pirated,
        originals=originals,
        public=ArtworkSet(PUBLIC_ARTIST, pub, cfgd.get("seed", 0)),
        model=SimulatedModel(families + public_families, cfg, side),
    )
