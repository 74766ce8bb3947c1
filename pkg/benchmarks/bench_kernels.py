"""Wall-time comparison of the compiled and pure-numpy kernels.

Run ``python benchmarks/bench_kernels.py`` (add ``--quick`` for a short pass).
Both variants are imported side by side, so the environment flag does not
need to change between runs.  Compilation is excluded by a warm-up call.
"""
import argparse
import time

import numpy as np

from l96rbm import kernels
from l96rbm.closure import onelayer_table
from l96rbm.rbm import OneLayerSampler
from l96rbm.spectral import full_plan, to_full


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(quick):
    rng = np.random.default_rng(0)
    M = 2000 if quick else 20000
    steps = 10 if quick else 50
    U = 4 + rng.standard_normal((M, 40))
    yield (f"one-layer RK4 M={M} J=40 x{steps} steps",
           lambda f: f(U.copy(), 8.0, 5e-4, steps), kernels.onelayer_advance_nb, kernels.onelayer_advance_np)

    M2 = M // 10
    U2 = 4 + rng.standard_normal((M2, 8))
    V2 = 0.1 * rng.standard_normal((M2, 256))
    yield (f"two-layer RK4 M={M2} J=8 L=32 x{steps} steps",
           lambda f: f(U2.copy(), V2.copy(), 20.0, 10.0, 10.0, 1.0, 5e-4, steps),
           kernels.twolayer_advance_nb, kernels.twolayer_advance_np)

    table = onelayer_table(40)
    Zf = np.ascontiguousarray(to_full(np.fft.rfft(rng.standard_normal((500, 40)), axis=1)))
    full = full_plan(table.gamma_u, 21, 1 / 40)
    yield ("full triad sum M1=500 J=40",
           lambda f: f(Zf, np.zeros(500, np.int64), full.a, full.b, full.w),
           kernels.quad_sum_nb, kernels.quad_sum_np)

    for p in (2, 5, 10):
        plan = OneLayerSampler(40, p)(rng).u
        yield (f"batched triad sum M1=500 J=40 p={p}",
               lambda f, plan=plan: f(Zf, np.zeros(500, np.int64), plan.a, plan.b, plan.w),
               kernels.quad_sum_nb, kernels.quad_sum_np)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.onelayer_advance_nb is None:
        raise SystemExit("numba is not installed; nothing to compare")
    print(f"{'case':48s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, call, nb, np_ in cases(args.quick):
        call(nb)  # compile
        a = np.asarray(call(nb))
        b = np.asarray(call(np_))
        if a.dtype.kind == "c":
            assert np.allclose(a, b, rtol=1e-10, atol=1e-10 * np.abs(b).max()), name
        t_nb, t_np = best_of(lambda: call(nb), args.repeats), best_of(lambda: call(np_), args.repeats)
        print(f"{name:48s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
