"""Compare the compiled scan kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--length 32768] [--width 16] [--repeat 5]

Prints best-of-N wall time per kernel and the speed-up, after checking that
both backends agree. Half the columns scan forward, half backward, as in one
scan-seg orientation of a 32^3 window.
"""
import argparse
import timeit

import numpy as np

from voladv import _kernels_py as py

try:
    from voladv import _kernels as ext
except ImportError:
    ext = None


def inputs(length, width, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 2.0, (length, width))
    sz = 1.0 / (1.0 + np.exp(-z))
    a = rng.uniform(0.0, 1.0, (length, width))
    grad = rng.standard_normal((length, width))
    return z, sz, a, grad


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def timings(mod, z, sz, a, grad, n_fwd, repeat):
    h = mod.gated_scan(z, sz, a, n_fwd)
    return (best(lambda: mod.gated_scan(z, sz, a, n_fwd), repeat),
            best(lambda: mod.gated_scan_backward(z, sz, a, h, grad, n_fwd), repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=32 ** 3)
    ap.add_argument("--width", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    z, sz, a, grad = inputs(args.length, args.width)
    n_fwd = args.width // 2
    results = {"python": timings(py, z, sz, a, grad, n_fwd, args.repeat)}
    if ext is None:
        print("compiled extension not built; showing the fallback only")
    else:
        h = py.gated_scan(z, sz, a, n_fwd)
        h_ext = ext.gated_scan(z, sz, a, n_fwd)
        grads = zip(ext.gated_scan_backward(z, sz, a, h_ext, grad, n_fwd),
                    py.gated_scan_backward(z, sz, a, h, grad, n_fwd))
        err = max([np.abs(h_ext - h).max()] + [np.abs(u - v).max() for u, v in grads])
        print(f"max |cython - python| = {err:.2e}")
        results["cython"] = timings(ext, z, sz, a, grad, n_fwd, args.repeat)

    print(f"scan over {args.length} steps x {args.width} channels, best of {args.repeat}")
    for backend, (fwd, bwd) in results.items():
        print(f"  {backend:7s} forward  {fwd * 1e3:9.2f} ms")
        print(f"  {backend:7s} backward {bwd * 1e3:9.2f} ms")
    if ext is not None:
        for i, op in enumerate(("forward", "backward")):
            print(f"  speed-up {op}: {results['python'][i] / results['cython'][i]:.1f}x")


if __name__ == "__main__":
    main()
