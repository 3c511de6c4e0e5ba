"""Time the compiled kernels against the numpy fallback on realistic workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Workloads mirror the hot paths: pooling one VGG stage map (64 x 56 x 56),
painting one 224 px simulator canvas (260 strokes), and one Adam step over a
304 -> 512 -> 128 -> 1 discriminator's parameters.
"""
import argparse
import timeit

import numpy as np

from styleaudit import kernels


def workloads(rng):
    fmap = rng.normal(size=(64, 56, 56)).astype(np.float32)

    side = 224
    n = 260
    strokes = np.column_stack([
        rng.uniform(0, side, (n, 4)), rng.uniform(0.5, 3.0, n), rng.uniform(0, 1, (n, 3)), rng.uniform(0.6, 1.0, n),
    ])
    canvas = rng.uniform(size=(side, side, 3))

    sizes = [304 * 512, 512, 512 * 128, 128, 128, 1]
    params = [rng.normal(size=k) for k in sizes]
    grads = [rng.normal(size=k) for k in sizes]
    moments = [(np.zeros(k), np.zeros(k)) for k in sizes]

    def adam(impl):
        for p, g, (m, v) in zip(params, grads, moments):
            impl.adam_step(p, g, m, v, 5e-5, 0.9, 0.999, 1e-8, 0.1, 0.001)

    return {
        "pool_stage 64x56x56": lambda impl: impl.pool_stage(fmap),
        "paint_strokes 224px x 260": lambda impl: impl.paint_strokes(canvas.copy(), strokes),
        "adam_step 222k params": adam,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    impls = {"python": kernels.python_impl}
    if kernels.compiled_impl is not None:
        impls["cython"] = kernels.compiled_impl
    else:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for label, fn in workloads(rng).items():
        times = {}
        for name, impl in impls.items():
            t = timeit.repeat(lambda: fn(impl), repeat=args.repeat, number=args.number)
            times[name] = min(t) / args.number
        row = f"{label:<28}" + "".join(f"{times[n] * 1e3:>11.3f} ms" for n in impls)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
