#!/usr/bin/env python3
"""Run every bundled figure-study scenario and write one CSV per config.

Usage: python scripts/run_figures.py [--outdir OUT] [--method METHOD]
"""

import argparse
import time
from pathlib import Path

from veeqsd import bundled_scenario_names, emit_csv, load_bundled, run_scenario


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--outdir", default="figure_data")
    parser.add_argument("--method", default=None,
                        help="override the configured method (e.g. master-ode)")
    args = parser.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name in bundled_scenario_names():
        config = load_bundled(name)
        if args.method:
            from dataclasses import replace
            config = replace(config, method=args.method)
        t0 = time.perf_counter()
        dataset = run_scenario(config)
        out = outdir / f"{name}.csv"
        emit_csv(dataset, out)
        print(f"{name}: {dataset.n_rows} rows -> {out}  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
