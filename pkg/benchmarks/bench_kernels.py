"""Compiled vs numpy kernels on representative problem sizes.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from coopbound import _pykernels
from coopbound.eoc import _agent_part, transition_operator
from coopbound.spectral import NeighborStencil, polar_grid
from coopbound.topology import AnchorScheme, RadioParams, build_lattice_disk, connect_by_link_budget, place_anchors

try:
    from coopbound import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat):
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return min(t)


def cases():
    radio = RadioParams(antennas_per_node=3)
    topo = place_anchors(connect_by_link_budget(build_lattice_disk(20.0, 500.0), radio), AnchorScheme.single_center())
    A = _agent_part(transition_operator(topo, radio))
    csr = (A.indptr.astype(np.int32), A.indices.astype(np.int32), A.data.astype(float))
    st = NeighborStencil.from_radio(20.0, radio)
    g = polar_grid(128, 256)
    x = np.column_stack([np.arange(5, 21), np.zeros(16)]).astype(float)
    yield "diag_series (489-node lattice, 2000 terms)", lambda m: m.diag_series(*csr, 40, 0.0, 2000)
    yield "characteristic_grid (32k frequencies)", lambda m: m.characteristic_grid(st.offsets, st.blocks, g.thetas)
    yield ("potential_quadrature (32k nodes, 16 displacements)",
           lambda m: m.potential_quadrature(st.offsets, st.blocks, g.thetas, g.weights, x))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; only the numpy fallback is timed")
    print(f"{'kernel':<52} {'numpy [s]':>10} {'cython [s]':>11} {'speedup':>8}")
    for name, fn in cases():
        tp = best_of(lambda: fn(_pykernels), args.repeat)
        if _ckernels is None:
            print(f"{name:<52} {tp:>10.4f} {'-':>11} {'-':>8}")
            continue
        tc = best_of(lambda: fn(_ckernels), args.repeat)
        print(f"{name:<52} {tp:>10.4f} {tc:>11.4f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
