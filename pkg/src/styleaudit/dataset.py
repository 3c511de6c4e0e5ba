"""Artwork ingestion, role tagging, augmentation and split/negative sampling."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import DecodeFailure, EmptyDirectory, InsufficientPool, InvalidConfig, TooFewRecords

logger = logging.getLogger(__name__)

DEFAULT_SIDE = 224
PUBLIC_ARTIST = "public"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


class Role(str, Enum):
    PUBLIC = "public"
    TARGET = "target"
    GENERATED = "generated"
    AUGMENTED = "augmented"


@dataclass(eq=False)
class ArtworkRecord:
    id: str
    artist_id: str
    role: Role
    pixels: np.ndarray  # H x W x 3 uint8
    source_path: Optional[str] = None
    caption: Optional[str] = None
    parent_id: Optional[str] = None
    resize: Optional[str] = None

    def __post_init__(self):
        self.role = Role(self.role)
        if self.pixels.dtype != np.uint8 or self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"{self.id}: pixels must be an H x W x 3 uint8 array")
        if self.role is Role.AUGMENTED and not self.parent_id:
            raise ValueError(f"{self.id}: augmented records need a parent id")

    def manifest_entry(self) -> dict:
        return {
            "id": self.id,
            "artist_id": self.artist_id,
            "role": self.role.value,
            "parent_id": self.parent_id,
            "source_path": self.source_path,
            "resize": self.resize,
            "caption": self.caption,
        }


@dataclass
class ArtworkSet:
    artist_id: str
    records: list = field(default_factory=list)
    split_seed: int = 0

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate record ids in set {self.artist_id!r}")
        if self.artist_id != PUBLIC_ARTIST:
            bad = [r.id for r in self.records if r.artist_id != self.artist_id]
            if bad:
                raise ValueError(f"records {bad[:3]} do not belong to artist {self.artist_id!r}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    def subset(self, records: Iterable[ArtworkRecord]) -> "ArtworkSet":
        return ArtworkSet(self.artist_id, list(records), self.split_seed)

    def manifest(self) -> dict:
        return {
            "artist_id": self.artist_id,
            "split_seed": self.split_seed,
            "records": [r.manifest_entry() for r in self.records],
        }

    def write_manifest(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))
        return path


@dataclass
class AugmentationConfig:
    crop_scale: tuple = (0.6, 1.0)
    flip_probability: float = 0.5
    cutout_count: int = 2
    cutout_size_fraction: float = 0.2
    gaussian_sigma: float = 0.05
    impulse_fraction: float = 0.02
    jitter_ranges: tuple = (0.2, 0.2, 0.2, 0.05)
    multiplicity: int = 10
    seed: int = 0
    # chance that each optional transform (cutout, noise, impulse, jitter) fires
    apply_probability: float = 0.5

    def validate(self) -> "AugmentationConfig":
        lo, hi = self.crop_scale
        if not (0 < lo <= hi <= 1):
            raise InvalidConfig(f"crop_scale must lie in (0, 1] with lo <= hi, got {self.crop_scale}")
        if not 0 <= self.flip_probability <= 1:
            raise InvalidConfig("flip_probability must be in [0, 1]")
        if int(self.cutout_count) != self.cutout_count or self.cutout_count < 0:
            raise InvalidConfig("cutout_count must be a non-negative integer")
        if not 0 < self.cutout_size_fraction < 1:
            raise InvalidConfig("cutout_size_fraction must be in (0, 1)")
        if self.gaussian_sigma < 0:
            raise InvalidConfig("gaussian_sigma must be >= 0")
        if not 0 <= self.impulse_fraction <= 1:
            raise InvalidConfig("impulse_fraction must be in [0, 1]")
        if len(self.jitter_ranges) != 4 or any(v < 0 for v in self.jitter_ranges):
            raise InvalidConfig("jitter_ranges must be four non-negative reals")
        if self.jitter_ranges[3] > 0.5:
            raise InvalidConfig("hue jitter must be <= 0.5")
        if int(self.multiplicity) != self.multiplicity or self.multiplicity < 1:
            raise InvalidConfig("multiplicity must be an integer >= 1")
        if not 0 <= self.apply_probability <= 1:
            raise InvalidConfig("apply_probability must be in [0, 1]")
        return self


def _decode(path: Path, side: Optional[int]):
    with Image.open(path) as im:
        im.load()
        im = im.convert("RGB")
        resize = None
        if side is not None and im.size != (side, side):
            resize = f"bilinear {im.size[0]}x{im.size[1]}->{side}x{side}"
            im = im.resize((side, side), Image.BILINEAR)
        return np.asarray(im, dtype=np.uint8).copy(), resize


def ingest_directory(path, artist_id: str, role: Role, side: Optional[int] = DEFAULT_SIDE) -> ArtworkSet:
    """Load every PNG/JPEG in ``path`` as a record, in filename order.

    Files that fail to decode are logged and skipped as long as at least one
    other image loads.
    """
    path = Path(path)
    if not path.is_dir():
        raise EmptyDirectory(f"{path} is not a directory")
    files = sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise EmptyDirectory(f"no PNG/JPEG files in {path}")
    records, failures = [], []
    for f in files:
        try:
            pixels, resize = _decode(f, side)
        except (OSError, ValueError, SyntaxError) as exc:
            logger.warning("skipping undecodable image %s: %s", f, exc)
            failures.append((f, exc))
            continue
        records.append(
            ArtworkRecord(
                id=f"{artist_id}/{f.stem}",
                artist_id=artist_id,
                role=role,
                pixels=pixels,
                source_path=str(f),
                resize=resize,
            )
        )
    if not records:
        f, exc = failures[0]
        raise DecodeFailure(f, str(exc))
    set_id = PUBLIC_ARTIST if Role(role) is Role.PUBLIC else artist_id
    return ArtworkSet(set_id, records)


# --- augmentation ---------------------------------------------------------

def _resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    if img.shape[:2] == (h, w):
        return img
    out = Image.fromarray(img).resize((w, h), Image.BILINEAR)
    return np.asarray(out, dtype=np.uint8)


def _random_crop(img, rng, scale):
    H, W = img.shape[:2]
    s = rng.uniform(scale[0], scale[1])
    ch = min(H, max(1, int(round(np.sqrt(s) * H))))
    cw = min(W, max(1, int(round(np.sqrt(s) * W))))
    top = int(rng.integers(0, H - ch + 1))
    left = int(rng.integers(0, W - cw + 1))
    return _resize(np.ascontiguousarray(img[top:top + ch, left:left + cw]), H, W)


def _cutout(x, rng, count, frac):
    H, W = x.shape[:2]
    n = int(rng.integers(1, count + 1))
    sh, sw = max(1, int(round(frac * H))), max(1, int(round(frac * W)))
    for _ in range(n):
        top = int(rng.integers(0, H - sh + 1))
        left = int(rng.integers(0, W - sw + 1))
        x[top:top + sh, left:left + sw] = 0.0
    return x


def _impulse(x, rng, fraction):
    H, W = x.shape[:2]
    hit = rng.random((H, W)) < fraction
    salt = rng.random((H, W)) < 0.5
    x[hit & salt] = 1.0
    x[hit & ~salt] = 0.0
    return x


def _luma(x):
    return x[..., 0] * 0.299 + x[..., 1] * 0.587 + x[..., 2] * 0.114


def _shift_hue(x, shift):
    hsv = np.asarray(Image.fromarray(_to_uint8(x)).convert("HSV"), dtype=np.int16)
    hsv[..., 0] = (hsv[..., 0] + int(round(shift * 255))) % 256
    rgb = Image.fromarray(hsv.astype(np.uint8), mode="HSV").convert("RGB")
    return np.asarray(rgb, dtype=np.float64) / 255.0


def _color_jitter(x, rng, ranges):
    b, c, s, h = ranges
    if b > 0:
        x = np.clip(x * rng.uniform(1 - b, 1 + b), 0, 1)
    if c > 0:
        m = _luma(x).mean()
        x = np.clip((x - m) * rng.uniform(1 - c, 1 + c) + m, 0, 1)
    if s > 0:
        g = _luma(x)[..., None]
        x = np.clip((x - g) * rng.uniform(1 - s, 1 + s) + g, 0, 1)
    if h > 0:
        x = _shift_hue(x, rng.uniform(-h, h))
    return x


def _to_uint8(x):
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def augment_image(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """One draw of the augmentation pipeline: crop + flip, then optional extras."""
    H, W = img.shape[:2]
    out = _random_crop(img, rng, cfg.crop_scale)
    if rng.random() < cfg.flip_probability:
        out = out[:, ::-1]
    x = out.astype(np.float64) / 255.0
    p = cfg.apply_probability
    # every coin is drawn even for disabled transforms so streams stay aligned
    do_cut, do_gauss, do_imp, do_jit = (rng.random() < p for _ in range(4))
    if do_cut and cfg.cutout_count > 0:
        x = _cutout(x, rng, cfg.cutout_count, cfg.cutout_size_fraction)
    if do_gauss and cfg.gaussian_sigma > 0:
        x = np.clip(x + rng.normal(0.0, cfg.gaussian_sigma, size=x.shape), 0, 1)
    if do_imp and cfg.impulse_fraction > 0:
        x = _impulse(x, rng, cfg.impulse_fraction)
    if do_jit and any(v > 0 for v in cfg.jitter_ranges):
        x = _color_jitter(x, rng, cfg.jitter_ranges)
    return _resize(_to_uint8(x), H, W)


def augment(aset: ArtworkSet, cfg: AugmentationConfig) -> ArtworkSet:
    """Expand ``aset`` into ``multiplicity`` augmented copies per record."""
    cfg.validate()
    if not len(aset):
        raise InvalidConfig("cannot augment an empty set")
    out = []
    for idx, rec in enumerate(aset.records):
        rng = np.random.default_rng([cfg.seed, idx])
        for k in range(cfg.multiplicity):
            out.append(
                ArtworkRecord(
                    id=f"{rec.id}#aug{cfg.seed}.{k}",
                    artist_id=rec.artist_id,
                    role=Role.AUGMENTED,
                    pixels=augment_image(rec.pixels, cfg, rng),
                    source_path=rec.source_path,
                    caption=rec.caption,
                    parent_id=rec.id,
                )
            )
    return ArtworkSet(aset.artist_id, out, aset.split_seed)


# --- splits -----------------------------------------------------------------

def split_train_valid(aset: ArtworkSet, ratio: float = 0.8, seed: int = 0):
    if len(aset) < 5:
        raise TooFewRecords(f"need at least 5 records to split, got {len(aset)}")
    if not 0 < ratio < 1:
        raise InvalidConfig("ratio must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(aset))
    k = int(np.floor(ratio * len(aset)))
    first = [aset.records[i] for i in sorted(perm[:k])]
    second = [aset.records[i] for i in sorted(perm[k:])]
    return (replace(aset, records=first, split_seed=seed), replace(aset, records=second, split_seed=seed))


def sample_negatives(target: ArtworkSet, pool: ArtworkSet, seed: int = 0) -> ArtworkSet:
    """Draw ``len(target)`` records uniformly without replacement from other artists."""
    eligible = [r for r in pool.records if r.artist_id != target.artist_id]
    if len(eligible) < len(target):
        raise InsufficientPool(
            f"pool has {len(eligible)} eligible records, need {len(target)} for artist {target.artist_id!r}"
        )
    pick = np.random.default_rng(seed).choice(len(eligible), size=len(target), replace=False)
    return ArtworkSet(PUBLIC_ARTIST, [eligible[i] for i in pick], seed)
