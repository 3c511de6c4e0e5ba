"""Pure numpy implementations of the compiled kernels."""
import math

import numpy as np


def pool_stage(fmap):
    fmap = np.ascontiguousarray(fmap, dtype=np.float32)
    if fmap.ndim != 3 or fmap.shape[1] < 1 or fmap.shape[2] < 1:
        raise ValueError("feature map must have h >= 1 and w >= 1")
    flat = fmap.reshape(fmap.shape[0], -1)
    maxes = flat.max(axis=1)
    # sequential float64 accumulation, same order as the compiled loop
    acc = np.zeros(flat.shape[0], dtype=np.float64)
    for col in flat.T.astype(np.float64):
        acc += col
    means = (acc / float(flat.shape[1])).astype(np.float32)
    return np.concatenate([maxes, means]).astype(np.float32)


def paint_strokes(canvas, strokes):
    """Alpha-composite capsule strokes onto ``canvas`` (H, W, 3 float64) in place."""
    strokes = np.asarray(strokes, dtype=np.float64)
    if strokes.ndim != 2 or strokes.shape[1] != 9:
        raise ValueError("strokes must have 9 columns")
    H, W = canvas.shape[:2]
    for x0, y0, x1, y1, r, cr, cg, cb, op in strokes:
        j0 = max(int(math.floor(min(x0, x1) - r - 1.0)), 0)
        j1 = min(int(math.ceil(max(x0, x1) + r + 1.0)), W)
        i0 = max(int(math.floor(min(y0, y1) - r - 1.0)), 0)
        i1 = min(int(math.ceil(max(y0, y1) + r + 1.0)), H)
        if i1 <= i0 or j1 <= j0:
            continue
        py = np.arange(i0, i1, dtype=np.float64)[:, None] + 0.5
        px = np.arange(j0, j1, dtype=np.float64)[None, :] + 0.5
        vx = x1 - x0
        vy = y1 - y0
        l2 = vx * vx + vy * vy
        if l2 > 0.0:
            t = np.clip(((px - x0) * vx + (py - y0) * vy) / l2, 0.0, 1.0)
        else:
            t = np.zeros((i1 - i0, j1 - j0))
        dx = px - (x0 + t * vx)
        dy = py - (y0 + t * vy)
        d = np.sqrt(dx * dx + dy * dy)
        cov = np.minimum(r + 0.5 - d, 1.0)
        a = np.where(cov > 0.0, op * cov, 0.0)[..., None]
        mask = cov > 0.0
        patch = canvas[i0:i1, j0:j1]
        blended = patch * (1.0 - a) + np.array([cr, cg, cb]) * a
        patch[mask] = blended[mask]


def adam_step(p, g, m, v, lr, beta1, beta2, eps, c1, c2):
    """Fused in-place Adam update over flat float64 buffers."""
    if not (p.shape == g.shape == m.shape == v.shape):
        raise ValueError("adam buffers differ in length")
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
