"""Per-artist regression discriminator over style representations.

A small MLP (ReLU hidden layers, tanh output) trained with Adam on

    mean_i (y_i - f(x_i))^2  +  mean_j (f(g_j) - f(p_j))^2

where ``x_i`` are labelled style vectors (+1 target artist, -1 others) and
``(p_j, g_j)`` pair a public artwork with the suspicious model's rendition
of its caption. Forward and backward passes are written out by hand in
float64.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import Degenerate, DimMismatch, InvalidConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32
    seed: int = 0
    use_distortion_term: bool = True
    use_augmentation: bool = True
    hidden: tuple = (512, 128)

    def validate(self) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.max_epochs < 1 or not 0 <= self.patience < self.max_epochs:
            raise InvalidConfig("need 0 <= patience < max_epochs")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1")
        return self


@dataclass
class LabeledExample:
    representation: object  # StyleRepresentation or 1-D array
    y: float

    def __post_init__(self):
        if self.y not in (-1.0, 1.0):
            raise ValueError("targets are +1.0 or -1.0")


@dataclass
class DistortionPair:
    public_rep: object
    generated_rep: object


def _vec(rep) -> np.ndarray:
    return np.asarray(getattr(rep, "vector", rep), dtype=np.float64)


def _mat(reps) -> np.ndarray:
    if isinstance(reps, np.ndarray):
        return reps.astype(np.float64, copy=False).reshape(len(reps), -1)
    reps = list(reps)
    if not reps:
        return np.zeros((0, 0))
    return np.stack([_vec(r) for r in reps])


def _pair_mats(pairs):
    """Accept a list of DistortionPair or a (public, generated) matrix tuple."""
    if pairs is None:
        return None, None
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        P, G = (np.asarray(a, dtype=np.float64) for a in pairs)
    else:
        pairs = list(pairs)
        if not pairs:
            return None, None
        P = _mat([p.public_rep for p in pairs])
        G = _mat([p.generated_rep for p in pairs])
    if P.shape != G.shape:
        raise DimMismatch("public and generated pair matrices differ in shape")
    return (P, G) if len(P) else (None, None)


@dataclass
class Discriminator:
    layer_sizes: tuple
    weights: list
    biases: list
    input_mean: np.ndarray
    input_scale: np.ndarray
    artist_id: str = ""
    tap_plan_hash: str = ""
    train_config: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    output_activation = "tanh"

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, **kw) -> "Discriminator":
        Ws, bs = [], []
        for i, (a, b) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            last = i == len(layer_sizes) - 2
            bound = np.sqrt(6.0 / (a + b)) if last else np.sqrt(6.0 / a)
            Ws.append(rng.uniform(-bound, bound, size=(a, b)))
            bs.append(np.zeros(b))
        d = layer_sizes[0]
        return cls(tuple(layer_sizes), Ws, bs, np.zeros(d), np.ones(d), **kw)

    @classmethod
    def zeros(cls, layer_sizes, **kw) -> "Discriminator":
        Ws = [np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
        bs = [np.zeros(b) for b in layer_sizes[1:]]
        d = layer_sizes[0]
        return cls(tuple(layer_sizes), Ws, bs, np.zeros(d), np.ones(d), **kw)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def params(self) -> list:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def set_params(self, params):
        self.weights = [np.array(p) for p in params[0::2]]
        self.biases = [np.array(p) for p in params[1::2]]

    def _check(self, X):
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise DimMismatch(f"expected {self.input_dim}-dim representations, got shape {X.shape}")

    def _forward(self, X):
        acts = [(X - self.input_mean) / self.input_scale]
        pre = None
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            pre = acts[-1] @ W + b
            if i < len(self.weights) - 1:
                acts.append(np.maximum(pre, 0.0))
        out = np.tanh(pre[:, 0])
        return out, acts

    def predict(self, X) -> np.ndarray:
        X = _mat(X)
        self._check(X)
        # tanh rounds to exactly +-1 in float64 once |pre-activation| > ~19
        return np.clip(self._forward(X)[0], -_BELOW_ONE, _BELOW_ONE)

    def _backward(self, acts, out, g_out):
        """Parameter gradients given dL/d(output) per row."""
        delta = (g_out * (1.0 - out * out))[:, None]
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append((acts[i].T @ delta, delta.sum(axis=0)))
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0.0)
        grads.reverse()
        return [g for wb in grads for g in wb]

    def loss_and_grad(self, X, y, P=None, G=None, use_distortion_term=True):
        """Loss and its gradient w.r.t. ``params()`` (same order)."""
        n = len(X)
        parts = [X]
        use_pairs = use_distortion_term and P is not None and len(P) > 0
        if use_pairs:
            parts += [P, G]
        Z = np.concatenate(parts) if len(parts) > 1 else X
        self._check(Z)
        out, acts = self._forward(Z)
        r = y - out[:n]
        loss = float(np.mean(r * r))
        g_out = np.zeros_like(out)
        g_out[:n] = -2.0 * r / n
        if use_pairs:
            m = len(P)
            fp, fg = out[n:n + m], out[n + m:]
            dd = fg - fp
            loss += float(np.mean(dd * dd))
            g_out[n + m:] = 2.0 * dd / m
            g_out[n:n + m] = -2.0 * dd / m
        return loss, self._backward(acts, out, g_out)

    # --- persistence ---------------------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "output_activation": self.output_activation,
            "artist_id": self.artist_id,
            "tap_plan_hash": self.tap_plan_hash,
            "train_config": self.train_config,
            "history": self.history,
        }
        arrays = {"input_mean": self.input_mean, "input_scale": self.input_scale}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"W{i}"] = W
            arrays[f"b{i}"] = b
        with open(path, "wb") as fh:
            np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        return path

    @classmethod
    def load(cls, path) -> "Discriminator":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported discriminator format {meta.get('format_version')}")
            k = len(meta["layer_sizes"]) - 1
            Ws = [z[f"W{i}"] for i in range(k)]
            bs = [z[f"b{i}"] for i in range(k)]
            mean, scale = z["input_mean"], z["input_scale"]
        return cls(
            tuple(meta["layer_sizes"]), Ws, bs, mean, scale,
            artist_id=meta["artist_id"], tap_plan_hash=meta["tap_plan_hash"],
            train_config=meta["train_config"], history=meta.get("history", {}),
        )


def loss(d: Discriminator, batch: Sequence[LabeledExample], pairs=(), use_distortion_term=True) -> float:
    if not batch:
        raise ValueError("batch must be nonempty")
    X = _mat([ex.representation for ex in batch])
    y = np.array([ex.y for ex in batch], dtype=np.float64)
    P, G = _pair_mats(list(pairs) if not isinstance(pairs, tuple) else pairs)
    return d.loss_and_grad(X, y, P, G, use_distortion_term)[0]


def score(d: Discriminator, rep) -> float:
    """Confidence in (-1, 1) that ``rep`` carries the discriminator's artist style."""
    plan = getattr(rep, "tap_plan_hash", None)
    if plan and d.tap_plan_hash and plan != d.tap_plan_hash:
        raise DimMismatch(f"representation from tap plan {plan}, discriminator trained on {d.tap_plan_hash}")
    return float(d.predict(_vec(rep)[None, :])[0])


def score_many(d: Discriminator, reps) -> np.ndarray:
    plans = {getattr(r, "tap_plan_hash", None) for r in reps} if not isinstance(reps, np.ndarray) else set()
    plans.discard(None)
    if d.tap_plan_hash and plans - {d.tap_plan_hash}:
        raise DimMismatch(f"representations from tap plans {sorted(plans)}, discriminator trained on {d.tap_plan_hash}")
    return d.predict(reps)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            kernels.adam_step(
                p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1),
                m.reshape(-1), v.reshape(-1), self.lr, self.b1, self.b2, self.eps, c1, c2,
            )


class EarlyStopping:
    """Track the best validation loss; ties keep the earlier epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_state = None

    def update(self, epoch: int, val_loss: float, state=None) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_state = state
        return epoch - self.best_epoch >= self.patience


def train(
    reps_pos,
    reps_neg,
    pairs=None,
    cfg: Optional[TrainConfig] = None,
    valid=None,
    artist_id: str = "",
    tap_plan_hash: str = "",
) -> Discriminator:
    """Fit a discriminator; returns the parameters of the best validation epoch.

    ``valid`` is an optional ``(pos, neg)`` tuple; without it 20% of each class
    is held out.
    """
    cfg = (cfg or TrainConfig()).validate()
    Xp, Xn = _mat(reps_pos), _mat(reps_neg)
    if len(Xp) < 4 or len(Xn) < 1:
        raise InvalidConfig("need at least 4 positive and 1 negative representation")
    both = np.concatenate([Xp, Xn])
    if np.all(both == both[0]):
        raise Degenerate("all positive and negative representations are identical")
    rng = np.random.default_rng(cfg.seed)
    if valid is None:
        kp, kn = int(0.8 * len(Xp)), max(1, int(0.8 * len(Xn)))
        pp, pn = rng.permutation(len(Xp)), rng.permutation(len(Xn))
        Vp, Vn = Xp[pp[kp:]], Xn[pn[kn:]]
        Xp, Xn = Xp[pp[:kp]], Xn[pn[:kn]]
    else:
        Vp, Vn = _mat(valid[0]), _mat(valid[1])
    X = np.concatenate([Xp, Xn])
    y = np.concatenate([np.ones(len(Xp)), -np.ones(len(Xn))])
    Xv = np.concatenate([m for m in (Vp, Vn) if len(m)]) if len(Vp) + len(Vn) else X
    yv = np.concatenate([np.ones(len(Vp)), -np.ones(len(Vn))]) if len(Vp) + len(Vn) else y
    P, G = _pair_mats(pairs)
    use_pairs = cfg.use_distortion_term and P is not None
    if cfg.use_distortion_term and P is None:
        raise InvalidConfig("distortion term enabled but no distortion pairs given")

    dim = X.shape[1]
    d = Discriminator.init((dim, *cfg.hidden, 1), rng, artist_id=artist_id, tap_plan_hash=tap_plan_hash)
    d.input_mean = X.mean(axis=0)
    scale = X.std(axis=0)
    d.input_scale = np.where(scale > 1e-8, scale, 1.0)
    d.train_config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()}

    params = d.params()
    opt = Adam(params, cfg.learning_rate)
    stopper = EarlyStopping(cfg.patience)
    val_hist = []
    n, bs = len(X), cfg.batch_size
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        porder = rng.permutation(len(P)) if use_pairs else None
        for s, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            Pb = Gb = None
            if use_pairs:
                k = min(bs, len(P))
                pidx = np.take(porder, range(s * k, s * k + k), mode="wrap")
                Pb, Gb = P[pidx], G[pidx]
            _, grads = d.loss_and_grad(X[idx], y[idx], Pb, Gb, use_pairs)
            opt.step(params, grads)
        vloss = float(np.mean((yv - d._forward(Xv)[0]) ** 2))
        val_hist.append(vloss)
        if stopper.update(epoch, vloss, [p.copy() for p in params]):
            break
    d.set_params(stopper.best_state)
    d.history = {
        "val_loss": val_hist,
        "best_epoch": stopper.best_epoch,
        "best_val_loss": stopper.best_loss,
        "epochs_run": epoch,
        "n_train": int(n),
        "n_train_pos": int(len(Xp)),
        "n_train_neg": int(len(Xn)),
        "n_valid": int(len(yv)),
        "n_pairs": int(len(P)) if use_pairs else 0,
    }
    logger.debug("trained %s: best epoch %d, val %.4f", artist_id, stopper.best_epoch, stopper.best_loss)
    return d
