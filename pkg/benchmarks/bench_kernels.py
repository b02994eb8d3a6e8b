"""Compare the numba and numpy likelihood backends on a synthetic system.

    python benchmarks/bench_kernels.py --rows 20000 --repeat 3
"""
import argparse
import time

import numpy as np

from carryfault import _kernels
from carryfault.solver import init_priors


def synthetic(rows, psi, seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(-4, 5, (rows, psi)).astype(np.int8)
    offset = rng.normal(0, 40, rows)
    ge = rng.random(rows) < 0.9
    st = init_priors(3, psi)
    st.probs = rng.dirichlet(np.full(7, 5.0), psi)
    mean, var = st.moments()
    return A, offset, ge, mean, var, st.support


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--unknowns", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    A, offset, ge, mean, var, vals = synthetic(args.rows, args.unknowns, args.seed)
    floor = np.log(1e-4)
    t_np, (L_np, _) = best_of(lambda: _kernels.loglik_numpy(A, offset, ge, mean, var, vals, 1e-9, floor),
                              args.repeat)
    print(f"numpy  {args.rows} x {args.unknowns}: {t_np:.3f} s")
    if _kernels.numba is None:
        print("numba not installed")
        return
    AT = np.ascontiguousarray(A.T)
    _kernels.loglik_numba(AT[:, :10], offset[:10], ge[:10], mean, var, vals, 1e-9, floor)  # compile
    t_nb, (L_nb, _) = best_of(lambda: _kernels.loglik_numba(AT, offset, ge, mean, var, vals, 1e-9, floor, A=A),
                              args.repeat)
    print(f"numba  {args.rows} x {args.unknowns}: {t_nb:.3f} s  ({t_np / t_nb:.1f}x, "
          f"{_kernels.numba.get_num_threads()} threads)")
    print(f"max |L_numpy - L_numba| = {np.max(np.abs(L_np - L_nb)):.2e}")


if __name__ == "__main__":
    main()
