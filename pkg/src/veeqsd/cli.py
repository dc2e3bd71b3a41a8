"""Command-line interface.

Subcommands:
    run CONFIG [CONFIG ...]   run scenarios and write CSV datasets
    validate CONFIG [...]     parse and validate configs, report problems
    list-scenarios            list the bundled figure-study configs
    noise-audit CONFIG        dump a reproducibility batch of noise paths

Exit codes: 0 success, 2 config error, 3 numerical error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, VeeQSDError
from .noise import build_covariance, dump_noise_batch, sample_noise
from .scenarios import (
    ScenarioConfig,
    bundled_scenario_names,
    emit_csv,
    load_bundled,
    load_config,
    run_scenario,
)
from .system import TimeGrid

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def _load(path_or_name: str) -> ScenarioConfig:
    if Path(path_or_name).exists():
        return load_config(path_or_name)
    if path_or_name in bundled_scenario_names():
        return load_bundled(path_or_name)
    raise ConfigError(f"no such config file or bundled scenario: {path_or_name}")


def _with_overrides(config: ScenarioConfig, method: str | None, seed: int | None) -> ScenarioConfig:
    from dataclasses import replace

    out = config
    if method is not None:
        out = replace(out, method=method)
        if method.startswith("qsd") and (out.count is None or out.seed is None):
            raise ConfigError(f"method override to {method} needs run.count and run.seed in the config")
    if seed is not None:
        out = replace(out, seed=seed)
    return out


def _derived_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence(entropy=master, spawn_key=(index,)).generate_state(1)[0])


def _cmd_run(args) -> int:
    if args.out and len(args.config) > 1:
        raise ConfigError("--out is only valid with a single config")
    for i, name in enumerate(args.config):
        config = _load(name)
        seed = args.seed
        if args.sweep and args.seed is not None:
            seed = _derived_seed(args.seed, i)
        config = _with_overrides(config, args.method, seed)
        dataset = run_scenario(config)
        out = args.out or config.output or (Path(name).stem + ".csv")
        emit_csv(dataset, out)
        print(f"wrote {out} ({dataset.n_rows} rows, method {config.method})")
    return EXIT_OK


def _cmd_validate(args) -> int:
    for name in args.config:
        config = _load(name)
        channels = ", ".join(
            f"(Gamma={c.Gamma:g}, gamma={c.gamma:g}, Omega={c.Omega:g})"
            for c in config.kernel.channels
        )
        print(
            f"{name}: ok; method {config.method}, initial {config.initial_name}, "
            f"dt={config.grid.dt:g}, T={config.grid.t_final:g}, channels {channels}"
        )
    return EXIT_OK


def _cmd_list(_args) -> int:
    for name in bundled_scenario_names():
        config = load_bundled(name)
        print(f"{name}: method {config.method}, initial {config.initial_name}")
    return EXIT_OK


def _cmd_noise_audit(args) -> int:
    config = _load(args.config)
    grid = config.grid
    if args.dt is not None or args.duration is not None:
        dt = args.dt if args.dt is not None else grid.dt
        duration = args.duration if args.duration is not None else grid.t_final
        grid = TimeGrid(dt=dt, n_steps=max(1, int(round(duration / dt))))
    seed = args.seed if args.seed is not None else config.seed
    if seed is None:
        raise ConfigError("noise-audit needs a seed (run.seed in the config or --seed)")
    count = args.count if args.count is not None else (config.count or 1)
    factor = build_covariance(config.kernel, grid)
    batch = sample_noise(factor, seed, count)
    dump_noise_batch(batch, args.out)
    print(
        f"wrote {args.out}: {count} paths x {config.kernel.n_channels} channels "
        f"x {grid.n_points} points (seed {seed}, jitter {factor.jitter:.3e})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="veeqsd", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run scenarios and write CSV datasets")
    p_run.add_argument("config", nargs="+", help="config path or bundled scenario name")
    p_run.add_argument("--out", help="output CSV path (single config only)")
    p_run.add_argument("--method", choices=("analytic", "master-ode", "qsd-linear", "qsd-nonlinear"))
    p_run.add_argument("--seed", type=int, help="override the ensemble seed")
    p_run.add_argument("--sweep", action="store_true",
                       help="treat configs as a sweep; per-run seeds derive from --seed")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="parse and validate configs")
    p_val.add_argument("config", nargs="+")
    p_val.set_defaults(fn=_cmd_validate)

    p_list = sub.add_parser("list-scenarios", help="list bundled figure-study configs")
    p_list.set_defaults(fn=_cmd_list)

    p_noise = sub.add_parser("noise-audit", help="dump a batch of sampled noise paths")
    p_noise.add_argument("config")
    p_noise.add_argument("--out", required=True)
    p_noise.add_argument("--count", type=int)
    p_noise.add_argument("--seed", type=int)
    p_noise.add_argument("--dt", type=float, help="override the grid step for the audit")
    p_noise.add_argument("--duration", type=float, help="override the grid span for the audit")
    p_noise.set_defaults(fn=_cmd_noise_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VeeQSDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
