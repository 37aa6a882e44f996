"""Timing of the compiled kernels against the numpy fallback, and of the
recursive monitor against direct recomputation.

    python3 benchmarks/bench_kernels.py [--n 100] [--p 50] [--repeat 5]

Prints one table per comparison. The compiled rows are skipped when the
extension is not built.
"""

import argparse
import timeit

import numpy as np

from hdmonitor import kernels, l2stat, lqstat
from hdmonitor.adaptive import compute_paths
from hdmonitor.sigma_norm import estimate_norms, sample_tuples
from hdmonitor.streamcore import CusumState, Observation


def best(fn, repeat, number=1):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def use_backend(mod):
    for name in ("l2_scan", "extend_windows", "lq_contract", "tuple_kernels"):
        setattr(kernels, name, getattr(mod, name))


def kernel_cases(n, p, rng):
    K = 2 * n
    X = rng.standard_normal((K, p))
    cs = CusumState(p, K).extend(X)
    out = np.empty(K - n - 2)
    tb = lqstat.ProductSumTables(6, p, K, n=n).extend(X)
    m_lo, m_hi, k = n + 1, K - 6, K
    Bsel = tb.B[:, m_lo:m_hi + 1]
    Msel = tb.M[:, m_lo + 1:m_hi + 2]
    coef = lqstat._coef_block(6, m_lo, m_hi, k)
    out6 = np.empty(m_hi - m_lo + 1)
    M = np.array(tb.M)
    idx = sample_tuples(n, 6, 4096, rng)
    return {
        "l2_scan": lambda: kernels.l2_scan(cs.B, cs.C, K, n + 1, K - 2, out),
        "extend_windows (q=6)": lambda: kernels.extend_windows(M, X[0], n, K),
        "lq_contract (q=6)": lambda: kernels.lq_contract(Bsel, Msel, coef, out6),
        "tuple_kernels (q=6, 4096)": lambda: kernels.tuple_kernels(X[:n], idx, 6),
    }


def monitor_case(n, p, rng, q_set):
    X = rng.standard_normal((2 * n, p))
    est = estimate_norms(X[:n], q_set)
    return lambda: compute_paths(X, n, q_set, est)


def recursive_vs_direct(n, p, rng, repeat):
    X = rng.standard_normal((2 * n, p))
    Y = X - X[:n].mean(axis=0)

    def recursive():
        s = CusumState(p, 2 * n)
        for i in range(2 * n):
            s.push(Observation(i + 1, Y[i]))
            if i + 1 >= n + 3:
                l2stat.t2_stat(s, i + 1, 1.0, n)

    def direct():
        for k in range(n + 3, 2 * n + 1):
            l2stat.t2_stat_direct(Y, k, 1.0, n)

    return best(recursive, repeat), best(direct, max(1, repeat // 2))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--p", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    saved = {name: getattr(kernels, name) for name in ("l2_scan", "extend_windows", "lq_contract", "tuple_kernels")}

    print(f"kernels, n={args.n} p={args.p} (seconds per call)")
    print(f"{'case':28s}" + "".join(f"{b:>12s}" for b in sorted(backends)) + f"{'ratio':>10s}")
    rows = {}
    for b in sorted(backends):
        use_backend(backends[b])
        cases = kernel_cases(args.n, args.p, np.random.default_rng(0))
        cases["monitor q={2}"] = monitor_case(args.n, args.p, np.random.default_rng(1), (2,))
        cases["monitor q={2,6}"] = monitor_case(args.n, args.p, np.random.default_rng(1), (2, 6))
        for name, fn in cases.items():
            rows.setdefault(name, {})[b] = best(fn, args.repeat, number=1 if name.startswith("monitor") else 20)
    for name, r in rows.items():
        ratio = r["numpy"] / r["cython"] if "cython" in r else float("nan")
        print(f"{name:28s}" + "".join(f"{r[b]:12.2e}" for b in sorted(backends)) + f"{ratio:10.1f}")
    for name, fn in saved.items():
        setattr(kernels, name, fn)

    t_rec, t_dir = recursive_vs_direct(args.n, args.p, np.random.default_rng(2), args.repeat)
    print()
    print(f"L2 full horizon, backend {kernels.BACKEND}")
    print(f"{'recursive':28s}{t_rec:12.2e}")
    print(f"{'direct recomputation':28s}{t_dir:12.2e}")
    print(f"{'speedup':28s}{t_dir / t_rec:12.1f}")


if __name__ == "__main__":
    main()
