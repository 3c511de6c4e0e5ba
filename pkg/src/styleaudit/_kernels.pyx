# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: feature-map pooling and stroke rasterization.

Arithmetic mirrors ``_kernels_py`` operation by operation so both backends
produce the same floating-point results.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, ceil

cnp.import_array()


def pool_stage(const float[:, :, ::1] fmap):
    cdef Py_ssize_t C = fmap.shape[0], h = fmap.shape[1], w = fmap.shape[2]
    cdef Py_ssize_t c, i, j
    cdef float mx, v
    cdef double acc
    out = np.empty(2 * C, dtype=np.float32)
    cdef float[::1] o = out
    if h < 1 or w < 1:
        raise ValueError("feature map must have h >= 1 and w >= 1")
    with nogil:
        for c in range(C):
            mx = fmap[c, 0, 0]
            acc = 0.0
            for i in range(h):
                for j in range(w):
                    v = fmap[c, i, j]
                    if v > mx:
                        mx = v
                    acc = acc + v
            o[c] = mx
            o[C + c] = <float>(acc / <double>(h * w))
    return out


def paint_strokes(double[:, :, ::1] canvas, const double[:, ::1] strokes):
    """Alpha-composite capsule strokes onto ``canvas`` in place.

    ``strokes`` rows are (x0, y0, x1, y1, half_width, r, g, b, opacity).
    """
    cdef Py_ssize_t H = canvas.shape[0], W = canvas.shape[1]
    cdef Py_ssize_t n = strokes.shape[0]
    cdef Py_ssize_t s, i, j, k, i0, i1, j0, j1
    cdef double x0, y0, x1, y1, r, op, vx, vy, l2, px, py, t, dx, dy, d, cov, a
    cdef double col[3]
    if strokes.shape[1] != 9:
        raise ValueError("strokes must have 9 columns")
    with nogil:
        for s in range(n):
            x0 = strokes[s, 0]; y0 = strokes[s, 1]
            x1 = strokes[s, 2]; y1 = strokes[s, 3]
            r = strokes[s, 4]
            col[0] = strokes[s, 5]; col[1] = strokes[s, 6]; col[2] = strokes[s, 7]
            op = strokes[s, 8]
            j0 = <Py_ssize_t>floor(min(x0, x1) - r - 1.0)
            j1 = <Py_ssize_t>ceil(max(x0, x1) + r + 1.0)
            i0 = <Py_ssize_t>floor(min(y0, y1) - r - 1.0)
            i1 = <Py_ssize_t>ceil(max(y0, y1) + r + 1.0)
            if j0 < 0: j0 = 0
            if i0 < 0: i0 = 0
            if j1 > W: j1 = W
            if i1 > H: i1 = H
            vx = x1 - x0
            vy = y1 - y0
            l2 = vx * vx + vy * vy
            for i in range(i0, i1):
                py = i + 0.5
                for j in range(j0, j1):
                    px = j + 0.5
                    if l2 > 0.0:
                        t = ((px - x0) * vx + (py - y0) * vy) / l2
                        if t < 0.0:
                            t = 0.0
                        elif t > 1.0:
                            t = 1.0
                    else:
                        t = 0.0
                    dx = px - (x0 + t * vx)
                    dy = py - (y0 + t * vy)
                    d = sqrt(dx * dx + dy * dy)
                    cov = r + 0.5 - d
                    if cov <= 0.0:
                        continue
                    if cov > 1.0:
                        cov = 1.0
                    a = op * cov
                    for k in range(3):
                        canvas[i, j, k] = canvas[i, j, k] * (1.0 - a) + col[k] * a


def adam_step(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps, double c1, double c2):
    """Fused in-place Adam update over flat float64 buffers.

    ``c1``/``c2`` are the bias corrections ``1 - beta**t``.
    """
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi
    if g.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam buffers differ in length")
    with nogil:
        for i in range(n):
            gi = g[i]
            mi = beta1 * m[i] + (1.0 - beta1) * gi
            vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
            m[i] = mi
            v[i] = vi
            p[i] = p[i] - lr * (mi / c1) / (sqrt(vi / c2) + eps)
