"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from ghostconv.kernels import available_backends

# (name, batch, channels, height, width, kernel, stride, padding)
CASES = [
    ("stem 3x224", 1, 3, 224, 224, 3, 2, 1),
    ("mid 40x28", 4, 40, 28, 28, 3, 1, 1),
    ("late 160x7", 8, 160, 7, 7, 5, 1, 2),
]


def _bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the python backend is available")
    rng = np.random.default_rng(0)
    names = list(backends)
    print(f"{'kernel':<12} {'case':<12} " + " ".join(f"{n + ' ms':>12}" for n in names) + f" {'speedup':>8}")
    for label, b, c, h, w, k, s, p in CASES:
        x = rng.standard_normal((b, c, h, w))
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        dw = rng.standard_normal((c, k, k))
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        gout = rng.standard_normal((b, c, ho, wo))
        cols = backends["python"].im2col(xp, k, s, ho, wo)
        jobs = {
            "im2col": lambda m: m.im2col(xp, k, s, ho, wo),
            "col2im": lambda m: m.col2im(cols, c, xp.shape[2], xp.shape[3], k, s, ho, wo),
            "dw fwd": lambda m: m.depthwise_forward(xp, dw, s, ho, wo),
            "dw bwd": lambda m: m.depthwise_backward(xp, dw, gout, s),
        }
        for kernel, job in jobs.items():
            times = [_bench(lambda m=backends[n]: job(m), args.repeat) for n in names]
            speedup = f"{times[0] / times[-1]:>7.1f}x" if len(times) > 1 else ""
            print(f"{kernel:<12} {label:<12} " + " ".join(f"{t:>12.3f}" for t in times) + f" {speedup:>8}")


if __name__ == "__main__":
    main()
