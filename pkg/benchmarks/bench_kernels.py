"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--h 1/16] [--radius 2] [--repeat 5]

Prints one line per kernel with the best time for each backend and the ratio.
"""

import argparse
import timeit

import numpy as np

from monge2bvp import _kernels
from monge2bvp.cli import eval_fraction
from monge2bvp.geometry import Density, Polygon
from monge2bvp.lattice import build_grid, build_stencil
from monge2bvp.ma_operator import Discretization, build_problem
from monge2bvp.solver import SolverConfig, _Sweeper, smooth_guess


def cases(h, radius):
    square = Polygon.box(0, 0, 1, 1)
    data = build_problem(build_grid(h), Density.affine(0, 1, 1, square), Density.constant(1.0), square)
    disc = Discretization.for_problem(data, build_stencil(radius, square))
    U = disc.padded(smooth_guess(data, data.grid, SolverConfig()).values)
    lay = disc.layout
    skip = data.grid.slot[data.grid.nearest_site(square.centroid)]
    mid = tuple(int(c) for c in lay.sites[len(lay.sites) // 2])

    def masses(be):
        return lambda: be.cell_masses(U, lay.sites, lay.dirs, disc.h, disc.coeffs, disc.qpts, disc.qw,
                                      disc.clip_n, disc.clip_c)

    def fill(be):
        return lambda: be.fill_exterior(U.copy(), disc.bsites, lay.exterior, disc.kverts, disc.h)

    def vertices(be):
        return lambda: be.cell_vertices(U, mid[0], mid[1], lay.dirs, disc.h)

    def sweep(be):
        def run():
            disc.backend = be
            _Sweeper(disc, data, skip, 60)(U.copy())
        return run

    return {"cell_masses": masses, "fill_exterior": fill, "cell_vertices": vertices, "monotone_sweep": sweep}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--h", type=eval_fraction, default=1 / 16)
    p.add_argument("--radius", type=int, default=2)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    backends = _kernels.backends()
    print(f"h={args.h:g} radius={args.radius} backends={','.join(backends)}")
    print(f"{'kernel':16s}" + "".join(f"{name:>14s}" for name in backends) + f"{'ratio':>10s}")
    for name, make in cases(args.h, args.radius).items():
        best = {}
        for be_name, be in backends.items():
            fn = make(be)
            number = 1 if name == "monotone_sweep" else 10
            best[be_name] = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
        ratio = best["python"] / best["cython"] if "cython" in best else np.nan
        print(f"{name:16s}" + "".join(f"{t * 1e3:12.3f}ms" for t in best.values()) + f"{ratio:10.1f}")


if __name__ == "__main__":
    main()
