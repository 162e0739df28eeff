"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is run on identical inputs under both backends; results are
checked for agreement before timings are printed.
"""

import argparse
import timeit

import numpy as np

from bridgenet import kernels
from bridgenet.graph import CommunityLayout, build_company_customer_graph


def family_adjacency(n_vertices: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = max(1, n_vertices // 3)
    layout = CommunityLayout(m, n_vertices - m - 1)
    return build_company_customer_graph(layout, rng.uniform(0.01, 1.0, m)).adjacency()


def hmm_inputs(n_states: int, length: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    trans = rng.random((length - 1, n_states, n_states))
    trans /= trans.sum(axis=2, keepdims=True)
    emis = rng.random((length, n_states))
    init = np.full(n_states, 1.0 / n_states)
    return trans, emis, init


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"  {label:<8} {best * 1e3:10.3f} ms")
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--vertices", type=int, nargs="+", default=[16, 20, 22])
    args = ap.parse_args()

    backends = sorted(kernels.BACKENDS)
    print(f"backends available: {backends} (active: {kernels.BACKEND})")
    if len(backends) < 2:
        print("compiled extension not built; nothing to compare")

    for n in args.vertices:
        adj = family_adjacency(n)
        print(f"min_conductance_bruteforce, {n} vertices")
        out = {b: kernels.min_conductance_bruteforce(adj, backend=b) for b in backends}
        assert len({(round(v, 12), int(m)) for v, m in out.values()}) == 1, out
        times = {b: bench(b, lambda b=b: kernels.min_conductance_bruteforce(adj, backend=b), args.repeat)
                 for b in backends}
        if len(times) == 2:
            print(f"  speedup  {times['python'] / times['cython']:10.1f}x")

    for n_states, length in [(6, 39), (10, 39), (10, 1000)]:
        trans, emis, init = hmm_inputs(n_states, length)
        print(f"forward_scaled, {n_states} states x {length} steps")
        ref = kernels.forward_scaled(trans, emis, init, backend="python")
        for b in backends:
            got = kernels.forward_scaled(trans, emis, init, backend=b)
            assert np.allclose(got[0], ref[0]) and np.allclose(got[1], ref[1])
        times = {b: bench(b, lambda b=b: kernels.forward_scaled(trans, emis, init, backend=b), args.repeat)
                 for b in backends}
        if len(times) == 2:
            print(f"  speedup  {times['python'] / times['cython']:10.1f}x")


if __name__ == "__main__":
    main()
