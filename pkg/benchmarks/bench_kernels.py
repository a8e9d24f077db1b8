"""Benchmark the numba kernels against the pure-numpy fallback.

Run with:  python benchmarks/bench_kernels.py [--blocks T] [--nodes N]

Times every dual-backend kernel on representative block sizes and prints a
table with the speedup. The same backends are selected at import time by the
package via the SECAR_DISABLE_NUMBA environment flag; here both are driven
explicitly so a single process can compare them.
"""

import argparse
import time

import numpy as np

from secar import kernels


def _time(fn, *args, repeat=5, number=20):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def make_inputs(n_nodes, n_blocks, seed=0):
    rng = np.random.default_rng(seed)
    cells = n_nodes * n_blocks
    mu = rng.normal(0.0, 1.0, cells)
    z = rng.poisson(2.0, cells).astype(np.float64)
    c = np.where(rng.uniform(size=cells) < 0.5, 0.0, rng.uniform(0.1, 3.0, cells))
    g3 = rng.normal(1.0, 0.3, n_nodes)
    a = rng.normal(0.0, 0.3, (n_nodes, n_nodes))
    ginv = np.linalg.inv(a @ a.T + n_nodes * np.eye(n_nodes))
    return mu, z, c, g3, ginv


def make_sweep_inputs(n_nodes, n_blocks, seed=1):
    rng = np.random.default_rng(seed)
    Y = rng.normal(0.0, 0.5, (n_blocks, n_nodes))
    alpha = np.zeros((n_blocks, n_nodes))
    q = np.eye(n_nodes) * 2.0
    for i in range(n_nodes - 1):
        q[i, i + 1] = q[i + 1, i] = -0.4
    chols = np.repeat(np.linalg.cholesky(q)[None, :, :], n_blocks, axis=0)
    z = rng.poisson(2.0, (n_blocks, n_nodes)).astype(np.float64)
    c = rng.uniform(0.0, 1.0, (n_blocks, n_nodes))
    normals = rng.standard_normal((n_blocks, n_nodes))
    unifs = rng.uniform(size=n_blocks)
    return Y, np.exp(Y), alpha, q, chols, z, c, 0.3, normals, unifs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--nodes", type=int, default=100, help="locations per block")
    parser.add_argument("--blocks", type=int, default=100, help="time blocks")
    args = parser.parse_args()

    if kernels.NUMBA_BACKEND is None:
        raise SystemExit("numba backend unavailable (SECAR_DISABLE_NUMBA set, "
                         "or numba not importable); nothing to compare")

    mu, z, c, g3, ginv = make_inputs(args.nodes, args.blocks)
    sweep_args = make_sweep_inputs(args.nodes, min(args.blocks, 50))

    cases = {
        "data_nll": (mu, z, c),
        "data_nll_grad": (mu, z, c),
        "fk_values": (mu, z, c),
        "g_derivs": (mu, z, c),
        "pair_term": (g3, ginv),
        "mala_sweep": sweep_args,
    }

    print(f"kernel benchmark: {args.nodes} nodes x {args.blocks} blocks "
          f"({args.nodes * args.blocks} cells)")
    print(f"{'kernel':<16} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for name, fn_args in cases.items():
        nb = kernels.NUMBA_BACKEND[name]
        np_ = kernels.NUMPY_BACKEND[name]
        if name == "mala_sweep":
            # state-mutating kernel: give each backend its own copies
            def run(fn, base=fn_args):
                a = [x.copy() if isinstance(x, np.ndarray) else x for x in base]
                return fn(*a)

            nb(*[x.copy() if isinstance(x, np.ndarray) else x for x in fn_args])  # compile
            t_np = _time(run, np_, repeat=3, number=3)
            t_nb = _time(run, nb, repeat=3, number=3)
        else:
            nb(*fn_args)  # compile outside the timer
            t_np = _time(np_, *fn_args)
            t_nb = _time(nb, *fn_args)
        print(f"{name:<16} {t_np * 1e3:>10.3f}ms {t_nb * 1e3:>10.3f}ms {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
