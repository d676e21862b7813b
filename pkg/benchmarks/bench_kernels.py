"""Timing comparison of the compiled kernels against the pure-numpy path.

Run with numba available (the default install):

    python3 benchmarks/bench_kernels.py [--n 200000] [--d 20] [--m 2000]

Setting HMCECS_NO_NUMBA=1 would remove the compiled path, so this script
requires the default environment.
"""

import argparse
import time

import numpy as np

from hmcecs import _kernels as K


def bench(fn, args, repeats=20):
    fn(*args)  # warm-up (and JIT compile for the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=200_000)
    parser.add_argument("--d", type=int, default=20)
    parser.add_argument("--m", type=int, default=2_000)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if not K.NUMBA_ENABLED:
        raise SystemExit("HMCECS_NO_NUMBA is set; nothing to compare against")

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.n, args.d))
    y = (rng.random(args.n) < 0.5).astype(np.float64)
    theta = 0.1 * rng.standard_normal(args.d)
    theta_star = theta + 0.01 * rng.standard_normal(args.d)
    u = rng.integers(0, args.n, size=args.m)

    pairs = [
        ("point_loglik", K._nb_point_loglik, K._np_point_loglik,
         (x, y, u, theta)),
        ("loglik_grad_sum", K._nb_loglik_grad_sum, K._np_loglik_grad_sum,
         (x, y, theta)),
        ("center_summaries", K._nb_center_summaries, K._np_center_summaries,
         (x, y, theta_star)),
        ("proxies", K._nb_proxies, K._np_proxies,
         (x, y, u, theta, theta_star)),
        ("residuals", K._nb_residuals, K._np_residuals,
         (x, y, u, theta, theta_star)),
        ("residual_grad_sum", K._nb_residual_grad_sum, K._np_residual_grad_sum,
         (x, y, u, theta, theta_star)),
        ("residual_grads", K._nb_residual_grads, K._np_residual_grads,
         (x, y, u, theta, theta_star)),
    ]

    print(f"n={args.n} d={args.d} m={args.m} (best of {args.repeats})")
    print(f"{'kernel':<20} {'numba (ms)':>12} {'numpy (ms)':>12} {'speedup':>9}")
    for name, nb, np_, call_args in pairs:
        t_nb = bench(nb, call_args, args.repeats)
        t_np = bench(np_, call_args, args.repeats)
        print(f"{name:<20} {1e3 * t_nb:>12.3f} {1e3 * t_np:>12.3f} "
              f"{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
