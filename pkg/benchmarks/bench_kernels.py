"""Time the numba and numpy conv / max-pool kernels on frontend-shaped inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes follow the per-time-step ConvNet: a batch of B*(T-1) rows, each a
short 1-D signal of length n. Results are checked to agree before timing.
"""

import argparse
import time

import numpy as np

from hrhn import _kernels as kern

CASES = {
    # name: (rows, c_in, c_out, length, q, pool)
    "tiny": (4 * 4, 1, 3, 4, 2, 1),
    "quickstart": (32 * 7, 1, 8, 4, 2, 1),
    "nasdaq-l1": (128 * 10, 1, 16, 81, 3, 3),
    "nasdaq-l2": (128 * 10, 16, 32, 27, 3, 3),
    "nasdaq-l3": (128 * 10, 32, 64, 9, 3, 3),
}


def _best(fn, repeat):
    fn()  # warm up (and compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(repeat: int):
    rng = np.random.default_rng(0)
    rows = []
    for name, (n, c_in, c_out, length, q, s) in CASES.items():
        x = rng.standard_normal((n, c_in, length)).astype(np.float32)
        w = rng.standard_normal((c_out, c_in, q)).astype(np.float32)
        conv = kern.conv1d_forward_np(x, w)
        g = rng.standard_normal(conv.shape).astype(np.float32)
        pooled, idx = kern.maxpool_forward_np(conv, s)
        gp = rng.standard_normal(pooled.shape).astype(np.float32)

        np.testing.assert_allclose(kern.conv1d_forward_nb(x, w), conv, rtol=1e-4, atol=1e-4)
        assert np.array_equal(kern.maxpool_forward_nb(conv, s)[1], idx)

        pairs = {
            "conv fwd": (lambda: kern.conv1d_forward_np(x, w), lambda: kern.conv1d_forward_nb(x, w)),
            "conv bwd": (lambda: kern.conv1d_backward_np(x, w, g), lambda: kern.conv1d_backward_nb(x, w, g)),
            "pool fwd": (lambda: kern.maxpool_forward_np(conv, s), lambda: kern.maxpool_forward_nb(conv, s)),
            "pool bwd": (lambda: kern.maxpool_backward_np(gp, idx, conv.shape[2]),
                         lambda: kern.maxpool_backward_nb(gp, idx, conv.shape[2])),
        }
        for op, (f_np, f_nb) in pairs.items():
            t_np, t_nb = _best(f_np, repeat), _best(f_nb, repeat)
            rows.append((name, op, t_np, t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not kern.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':12s} {'kernel':9s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, op, t_np, t_nb in bench(args.repeat):
        print(f"{name:12s} {op:9s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
