"""Multi-granularity style representations from a frozen convolutional backbone.

Four evenly spaced stages of a VGG-16-topology network are tapped; every
filter's feature map is reduced to its maximum and its mean, giving
``[max_1..max_C, mean_1..mean_C]`` per stage, and the per-stage vectors are
concatenated shallow to deep.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import torch
from torch import nn

from . import kernels
from .dataset import ArtworkRecord, ArtworkSet
from .errors import AuditError, DimMismatch, TooFewStages, WeightsUnavailable

logger = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

# torchvision's vgg16 "features" layout; ints are conv widths, "M" is max-pool
VGG16_LAYOUT = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M", 512, 512, 512, "M", 512, 512, 512, "M"]


@dataclass(frozen=True)
class Stage:
    index: int
    channels: int


@dataclass(frozen=True)
class BackboneAdapter:
    name: str
    input_side: int
    normalization: tuple  # ((mean_r, mean_g, mean_b), (std_r, std_g, std_b))
    stages: tuple

    def __post_init__(self):
        if not self.stages:
            raise TooFewStages("adapter declares no stages")
        idx = [s.index for s in self.stages]
        if idx != sorted(idx) or len(set(idx)) != len(idx):
            raise ValueError("stages must be ordered shallow to deep")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "input_side": self.input_side,
            "normalization": [list(self.normalization[0]), list(self.normalization[1])],
            "stages": [[s.index, s.channels] for s in self.stages],
        }


def vgg16_adapter(width_divisor: int = 8, input_side: int = 224) -> BackboneAdapter:
    widths = [v for v in VGG16_LAYOUT if v != "M"]
    block_ends = [1, 3, 6, 9, 12]  # last conv of each block, in conv order
    stages = tuple(Stage(i, widths[c] // width_divisor) for i, c in enumerate(block_ends))
    name = "vgg16" if width_divisor == 1 else f"vgg16/w{width_divisor}"
    return BackboneAdapter(name, input_side, (IMAGENET_MEAN, IMAGENET_STD), stages)


@dataclass(frozen=True)
class TapPlan:
    tap_indices: tuple
    expected_dim: int
    adapter_name: str = ""

    @property
    def hash(self) -> str:
        payload = json.dumps(
            {"adapter": self.adapter_name, "taps": list(self.tap_indices), "dim": self.expected_dim}
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def validate(self, adapter: BackboneAdapter) -> "TapPlan":
        if len(self.tap_indices) != 4:
            raise ValueError("a tap plan selects exactly 4 stages")
        if any(b <= a for a, b in zip(self.tap_indices, self.tap_indices[1:])):
            raise ValueError("tap indices must be strictly increasing")
        valid = {s.index: s.channels for s in adapter.stages}
        if any(t not in valid for t in self.tap_indices):
            raise ValueError(f"tap indices {self.tap_indices} not valid for {adapter.name}")
        dim = 2 * sum(valid[t] for t in self.tap_indices)
        if dim != self.expected_dim:
            raise DimMismatch(f"plan expects {self.expected_dim} dims, adapter gives {dim}")
        return self


@dataclass
class StyleRepresentation:
    vector: np.ndarray
    artwork_id: str
    tap_plan_hash: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"non-finite features for {self.artwork_id}")


def plan_taps(adapter: BackboneAdapter, taps: Optional[Iterable[int]] = None) -> TapPlan:
    """Pick four evenly spaced stages (or validate an explicit choice)."""
    S = len(adapter.stages)
    if S < 4:
        raise TooFewStages(f"{adapter.name} has {S} stages, need at least 4")
    if taps is None:
        pos = []
        for k in range(4):
            p = int(np.floor(k * (S - 1) / 3 + 0.5))
            if pos and p <= pos[-1]:
                p = pos[-1] + 1
            pos.append(min(p, S - 1))
        taps = [adapter.stages[p].index for p in pos]
    taps = tuple(int(t) for t in taps)
    chans = {s.index: s.channels for s in adapter.stages}
    plan = TapPlan(taps, 2 * sum(chans[t] for t in taps), adapter.name)
    return plan.validate(adapter)


def pool_stage(feature_map) -> np.ndarray:
    """Per-filter ``[max..., mean...]`` of a C x h x w feature map."""
    fmap = np.ascontiguousarray(feature_map, dtype=np.float32)
    if fmap.ndim != 3:
        raise ValueError("feature map must be C x h x w")
    return kernels.pool_stage(fmap)


# --- backbone -----------------------------------------------------------------

def _vgg_features(width_divisor: int) -> nn.Sequential:
    layers, c = [], 3
    for v in VGG16_LAYOUT:
        if v == "M":
            layers.append(nn.MaxPool2d(kernel_size=2, stride=2))
        else:
            w = v // width_divisor
            layers += [nn.Conv2d(c, w, kernel_size=3, padding=1), nn.ReLU(inplace=True)]
            c = w
    return nn.Sequential(*layers)


# index of the ReLU closing each conv block in the features Sequential
_STAGE_OUTPUTS = (3, 8, 15, 22, 29)


def state_digest(state_dict) -> str:
    h = hashlib.sha256()
    for k in sorted(state_dict):
        t = state_dict[k].detach().cpu().contiguous()
        h.update(k.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def init_weights(path, width_divisor: int = 8, seed: int = 0) -> str:
    """Write a seeded, He-initialised backbone weights file; returns its digest.

    Used when no pretrained checkpoint is available locally.
    """
    gen = torch.Generator().manual_seed(seed)
    feats = _vgg_features(width_divisor)
    with torch.no_grad():
        for m in feats:
            if isinstance(m, nn.Conv2d):
                fan_out = m.out_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * np.sqrt(2.0 / fan_out))
                m.bias.zero_()
    sd = {f"features.{k}": v for k, v in feats.state_dict().items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format": "styleaudit-vgg16", "width_divisor": width_divisor, "seed": seed, "state_dict": sd}, path)
    return state_digest(sd)


class Backbone:
    """Frozen backbone; read-only after construction."""

    def __init__(self, adapter: BackboneAdapter, features: nn.Sequential, digest: str):
        self.adapter = adapter
        self.features = features.eval()
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.weights_digest = digest
        self.invocations = 0
        mean, std = adapter.normalization
        self._mean = torch.tensor(mean, dtype=torch.float32).view(1, 3, 1, 1)
        self._std = torch.tensor(std, dtype=torch.float32).view(1, 3, 1, 1)

    @classmethod
    def from_file(cls, path, input_side: int = 224) -> "Backbone":
        """Load a weights file written by :func:`init_weights` or a torchvision
        ``vgg16`` state dict (full width)."""
        if path is None or not Path(path).is_file():
            raise WeightsUnavailable(f"backbone weights not found at {path!r}")
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:  # torch raises a zoo of types for bad files
            raise WeightsUnavailable(f"cannot read weights {path}: {exc}") from exc
        if isinstance(blob, dict) and "state_dict" in blob:
            sd, div = blob["state_dict"], int(blob.get("width_divisor", 1))
        else:
            sd, div = blob, 1
        sd = {k: v for k, v in sd.items() if k.startswith("features.")}
        feats = _vgg_features(div)
        try:
            feats.load_state_dict({k[len("features."):]: v for k, v in sd.items()})
        except RuntimeError as exc:
            raise WeightsUnavailable(f"weights at {path} do not fit a VGG-16 layout: {exc}") from exc
        return cls(vgg16_adapter(div, input_side), feats, state_digest(sd))

    def stage_maps(self, pixels: np.ndarray, stage_indices) -> dict:
        """Forward one H x W x 3 uint8 image; return {stage index: C x h x w float32}."""
        side = self.adapter.input_side
        if pixels.shape != (side, side, 3):
            raise DimMismatch(f"image is {pixels.shape}, backbone expects {side}x{side}x3")
        wanted = {_STAGE_OUTPUTS[i]: i for i in stage_indices}
        last = max(wanted)
        x = torch.from_numpy(np.ascontiguousarray(pixels)).permute(2, 0, 1)[None].float() / 255.0
        x = (x - self._mean) / self._std
        out = {}
        self.invocations += 1
        with torch.inference_mode():
            for j, layer in enumerate(self.features):
                x = layer(x)
                if j in wanted:
                    out[wanted[j]] = x[0].numpy().astype(np.float32, copy=True)
                if j == last:
                    break
        return out


def extract(backbone: Backbone, plan: TapPlan, record: ArtworkRecord) -> StyleRepresentation:
    maps = backbone.stage_maps(record.pixels, plan.tap_indices)
    vec = np.concatenate([pool_stage(maps[t]) for t in plan.tap_indices])
    if vec.shape[0] != plan.expected_dim:
        raise DimMismatch(f"{record.id}: got {vec.shape[0]} dims, plan expects {plan.expected_dim}")
    return StyleRepresentation(vec, record.id, plan.hash)


# --- caching / batches --------------------------------------------------------

class FeatureCache:
    """Representation cache keyed by artwork id, tap plan, weights and pixel digest.

    Inserts take a lock, so one cache can be shared by worker threads.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._data = {}
        self._lock = threading.Lock()
        if self.path and self.path.is_file():
            self.load(self.path)

    @staticmethod
    def key(record: ArtworkRecord, plan: TapPlan, weights_digest: str) -> str:
        pix = hashlib.sha1(record.pixels.tobytes()).hexdigest()[:16]
        return f"{record.id}|{plan.hash}|{weights_digest[:16]}|{pix}"

    def get(self, key):
        return self._data.get(key)

    def put(self, key, vector):
        with self._lock:
            self._data.setdefault(key, vector)

    def __len__(self):
        return len(self._data)

    def load(self, path):
        with np.load(path, allow_pickle=False) as z:
            keys = [str(k) for k in z["keys"]]
            vecs = z["vectors"]
        with self._lock:
            for k, row in zip(keys, vecs):
                self._data.setdefault(k, row)

    def save(self, path=None):
        path = Path(path or self.path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._lock:
            keys = sorted(self._data)
            if not keys:
                return path
            dims = {self._data[k].shape[0] for k in keys}
            if len(dims) > 1:
                raise DimMismatch("cache holds vectors of mixed length; cannot persist")
            vecs = np.stack([self._data[k] for k in keys])
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
        os.close(fd)
        np.savez(tmp, keys=np.array(keys), vectors=vecs)
        os.replace(tmp, path)
        return path


class StyleExtractor:
    def __init__(self, backbone: Backbone, plan: Optional[TapPlan] = None, cache: Optional[FeatureCache] = None):
        self.backbone = backbone
        self.plan = (plan or plan_taps(backbone.adapter)).validate(backbone.adapter)
        self.cache = cache if cache is not None else FeatureCache()

    @property
    def dim(self) -> int:
        return self.plan.expected_dim

    def provenance(self) -> dict:
        return {
            "backbone": self.backbone.adapter.describe(),
            "weights_digest": self.backbone.weights_digest,
            "tap_indices": list(self.plan.tap_indices),
            "tap_plan_hash": self.plan.hash,
            "expected_dim": self.plan.expected_dim,
        }

    def extract(self, record: ArtworkRecord) -> StyleRepresentation:
        key = FeatureCache.key(record, self.plan, self.backbone.weights_digest)
        vec = self.cache.get(key)
        if vec is None:
            vec = extract(self.backbone, self.plan, record).vector
            self.cache.put(key, vec)
        return StyleRepresentation(vec, record.id, self.plan.hash)

    def matrix(self, records) -> np.ndarray:
        records = list(records)
        if not records:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.extract(r).vector for r in records])


def extract_batch(extractor: StyleExtractor, sets) -> dict:
    """Map artwork id -> representation over every record in ``sets``."""
    out = {}
    for aset in sets:
        records = aset.records if isinstance(aset, ArtworkSet) else aset
        for rec in records:
            try:
                out[rec.id] = extractor.extract(rec)
            except AuditError as exc:
                exc.args = (f"{rec.id}: {exc}",)
                exc.artwork_id = rec.id
                raise
    return out
