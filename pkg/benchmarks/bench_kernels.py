"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--rays 4096] [--samples 64]

Each row reports the best-of-``repeat`` wall time per call for both
implementations and the speed-up.  Outputs are compared as well, so a row
marked ``MISMATCH`` means the two backends disagree.
"""

import argparse
import timeit

import numpy as np

from dareplane._kernels import fallback

try:
    from dareplane._kernels import _core
except ImportError:
    _core = None


def cases(rng, rays, samples):
    R, m, n, B = 8, 64, 64, rays * samples // 4
    planes = rng.normal(size=(R, m, n))
    u, v = rng.uniform(0, m - 1, B), rng.uniform(0, n - 1, B)
    grad = rng.normal(size=(R, B))

    sigma = rng.uniform(0, 5, (rays, samples))
    rgb = rng.uniform(size=(rays, samples, 3))
    delta = np.full((rays, samples), 0.02)
    tvals = np.cumsum(delta, axis=1)
    bg = np.zeros(3)
    gc, ga, gd = rng.normal(size=(rays, 3)), rng.normal(size=rays), rng.normal(size=rays)

    bits = np.zeros(1 << 18, np.uint8)
    for start in rng.integers(0, bits.size - 64, 400):
        bits[start:start + 64] = 1
    symbols = rng.integers(0, 16, 1 << 18).astype(np.uint8)
    lengths = np.zeros(256, np.int64)
    lengths[:16] = 4

    def comp_fwd(k):
        return k.composite_forward(sigma, rgb, delta, tvals, bg)

    def comp_bwd(k):
        _, _, _, w, t = k.composite_forward(sigma, rgb, delta, tvals, bg)
        return k.composite_backward(sigma, rgb, delta, tvals, bg, w, t, gc, ga, gd)

    def huff(k):
        codes = np.arange(256, dtype=np.int64) % 16
        return k.huffman_encode(symbols, codes, lengths)

    return [
        ("plane_gather", lambda k: k.plane_gather(planes, u, v)),
        ("plane_scatter", lambda k: k.plane_scatter(grad, u, v, m, n)),
        ("composite_forward", comp_fwd),
        ("composite_fwd+bwd", comp_bwd),
        ("rle_encode", lambda k: k.rle_encode(bits)),
        ("huffman_encode", huff),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == np.shape(b) and np.allclose(a, b, rtol=1e-12, atol=1e-12)
    return a == b


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--rays", type=int, default=4096)
    p.add_argument("--samples", type=int, default=64)
    args = p.parse_args()
    if _core is None:
        print("compiled core not built; run `python3 setup.py build_ext --inplace` first")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'cython ms':>12}{'numpy ms':>12}{'speed-up':>10}")
    for name, fn in cases(rng, args.rays, args.samples):
        times = {}
        for label, mod in (("core", _core), ("fallback", fallback)):
            times[label] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        flag = "" if same(fn(_core), fn(fallback)) else "  MISMATCH"
        print(f"{name:<20}{1e3 * times['core']:>12.2f}{1e3 * times['fallback']:>12.2f}"
              f"{times['fallback'] / times['core']:>9.1f}x{flag}")


if __name__ == "__main__":
    main()
