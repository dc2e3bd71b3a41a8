#!/usr/bin/env python3
"""Bandwidth sweep toward the memoryless limit.

Propagates the exact solution for increasing coupling bandwidths at fixed
decay rates and reports the trace distance to the constant-rate equation,
which should fall monotonically.
"""

import argparse

import veeqsd as vq


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--gammas", type=float, nargs="+",
                        default=[2.0, 5.0, 20.0, 50.0, 200.0, 1000.0])
    parser.add_argument("--duration", type=float, default=3.0)
    parser.add_argument("--dt", type=float, default=0.002)
    args = parser.parse_args()

    system = vq.build_system(2, [1.0, 1.0])
    kappas = [1.0, 1.0]
    grid = vq.grid_for_duration(args.dt, args.duration)
    rho0 = vq.level_state(system, 1).density()
    wideband = vq.markov_master(system, [1.0, 1.0], kappas, rho0, grid)

    print("gamma    max trace distance to the constant-rate equation")
    for gamma in args.gammas:
        kern = vq.ou_kernel(vq.OUChannel(1.0, gamma, 1.0), vq.OUChannel(1.0, gamma, 1.0))
        exact = vq.solve_master(system, kern, rho0, grid)
        td = max(
            vq.trace_distance(a, b)
            for a, b in zip(exact.rho[::25], wideband.rho[::25])
        )
        print(f"{gamma:7.1f}  {td:.5f}")


if __name__ == "__main__":
    main()
