"""Compiled kernels must agree with the numpy fallback and with brute-force scans."""
import os
import subprocess
import sys

import numpy as np
import pytest

from styleaudit import kernels

compiled = kernels.compiled_impl
python = kernels.python_impl
needs_ext = pytest.mark.skipif(compiled is None, reason="Cython extension not built")


def brute_pool(fmap):
    C, h, w = fmap.shape
    out = []
    for c in range(C):
        best = -np.inf
        for i in range(h):
            for j in range(w):
                best = max(best, float(fmap[c, i, j]))
        out.append(best)
    for c in range(C):
        total = 0.0
        for i in range(h):
            for j in range(w):
                total += float(fmap[c, i, j])
        out.append(total / (h * w))
    return np.array(out)


@pytest.mark.parametrize("impl", [python, pytest.param(compiled, marks=needs_ext)], ids=["python", "cython"])
def test_pool_matches_brute_force(impl, rng):
    for _ in range(20):
        C, h, w = rng.integers(1, 6, size=3)
        fmap = rng.normal(size=(C, h, w)).astype(np.float32)
        np.testing.assert_allclose(impl.pool_stage(fmap), brute_pool(fmap), rtol=1e-6, atol=1e-6)


@needs_ext
def test_pool_backends_bit_identical(rng):
    for _ in range(20):
        fmap = rng.normal(size=tuple(rng.integers(1, 20, size=3))).astype(np.float32)
        assert np.array_equal(compiled.pool_stage(fmap), python.pool_stage(fmap))


@pytest.mark.parametrize("impl", [python, pytest.param(compiled, marks=needs_ext)], ids=["python", "cython"])
def test_pool_rejects_empty_map(impl):
    with pytest.raises(ValueError):
        impl.pool_stage(np.zeros((2, 0, 3), dtype=np.float32))


def random_strokes(rng, n, side):
    s = np.empty((n, 9))
    s[:, 0:4] = rng.uniform(-5, side + 5, size=(n, 4))
    s[:, 4] = rng.uniform(0.3, 4.0, size=n)
    s[:, 5:8] = rng.uniform(0, 1, size=(n, 3))
    s[:, 8] = rng.uniform(0.2, 1.0, size=n)
    s[0, 2:4] = s[0, 0:2]  # a zero-length stroke (a dot)
    return s


@needs_ext
def test_paint_backends_agree(rng):
    side = 40
    strokes = random_strokes(rng, 60, side)
    base = rng.uniform(size=(side, side, 3))
    a, b = base.copy(), base.copy()
    compiled.paint_strokes(a, strokes)
    python.paint_strokes(b, strokes)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    assert not np.array_equal(a, base)


def test_paint_single_pixel_coverage():
    # a dot of radius 0.5 centred on pixel (2, 3) fully covers that pixel only
    canvas = np.zeros((5, 6, 3))
    kernels.paint_strokes(canvas, np.array([[3.5, 2.5, 3.5, 2.5, 0.5, 1.0, 0.5, 0.25, 1.0]]))
    np.testing.assert_allclose(canvas[2, 3], [1.0, 0.5, 0.25])
    canvas[2, 3] = 0
    assert np.count_nonzero(canvas) == 0


@needs_ext
def test_adam_backends_agree(rng):
    n = 257
    p0 = rng.normal(size=n)
    ps = [p0.copy(), p0.copy()]
    ms = [np.zeros(n) for _ in range(2)]
    vs = [np.zeros(n) for _ in range(2)]
    for t in range(1, 6):
        g = rng.normal(size=n)
        c1, c2 = 1 - 0.9 ** t, 1 - 0.999 ** t
        for impl, p, m, v in zip((compiled, python), ps, ms, vs):
            impl.adam_step(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, c1, c2)
    np.testing.assert_allclose(ps[0], ps[1], rtol=1e-14, atol=1e-15)


def test_adam_first_step_is_signed_lr():
    # with bias correction the first step moves each weight by lr * sign(g)
    p = np.array([1.0, -2.0, 0.5])
    g = np.array([3.0, -0.1, 1e-3])
    kernels.adam_step(p, g, np.zeros(3), np.zeros(3), 0.01, 0.9, 0.999, 1e-12, 0.1, 0.001)
    np.testing.assert_allclose(p, [0.99, -1.99, 0.49], rtol=1e-9)


def test_fallback_selected_by_environment():
    code = "import styleaudit.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, STYLEAUDIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
