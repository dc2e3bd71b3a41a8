"""Config-driven scenario runner emitting plot-ready time series.

Scenario files use a small INI-style grammar (documented in the README):
`[section]` headers, `key = value` pairs, blank lines, and `#` comments.
Sections: [system], [channel.N] per coupling channel, [initial], [grid],
and [run]. Values are scalars or comma-separated lists. Unknown sections
or keys are rejected with their line numbers.

The runner dispatches on the configured method (analytic | master-ode |
qsd-linear | qsd-nonlinear) and produces a TimeSeriesDataset holding a
fixed set of named observable columns plus, for ensemble methods, their
standard errors. `emit_csv` writes a deterministic UTF-8 CSV with a
provenance header; `read_csv` round-trips it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import __version__
from .coefficients import solve_F_ou
from .correlations import CorrelationKernel, OUChannel
from .errors import ConfigError, ConfigParseError, VeeQSDError
from .master import integrate_master_direct, solve_master
from .system import SystemSpec, TimeGrid, build_system, level_state, superposition_states
from .trajectories import run_ensemble

METHODS = ("analytic", "master-ode", "qsd-linear", "qsd-nonlinear")

_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.\-]+)\]\s*$")
_KEY_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_\-]*)\s*=\s*(.*)$")
_CHANNEL_RE = re.compile(r"^channel\.([0-9]+)$")

_ALLOWED_KEYS = {
    "system": {"upper_count", "energies"},
    "channel": {"kappa", "Gamma", "gamma", "Omega", "delta"},
    "initial": {"state", "amplitudes"},
    "grid": {"dt", "T"},
    "run": {"method", "count", "seed", "output", "dump_rho", "shift_convention"},
}

_STATE_NAMES = ("level-1", "level-2", "level-3", "phi-plus", "phi-minus", "custom")


def _parse_sections(text: str, origin: str) -> dict[str, dict[str, tuple[str, int]]]:
    """Split config text into {section: {key: (raw value, line number)}}."""
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        m = _SECTION_RE.match(line.strip())
        if m:
            current = m.group(1)
            if current in sections:
                raise ConfigParseError(f"{origin}: duplicate section [{current}]", line=lineno)
            sections[current] = {}
            continue
        m = _KEY_RE.match(line.strip())
        if m:
            if current is None:
                raise ConfigParseError(f"{origin}: key outside any section", line=lineno, column=1)
            key, value = m.group(1), m.group(2).strip()
            if key in sections[current]:
                raise ConfigParseError(
                    f"{origin}: duplicate key {key!r} in [{current}]", line=lineno
                )
            sections[current][key] = (value, lineno)
            continue
        bad_col = len(line) - len(line.lstrip()) + 1
        raise ConfigParseError(
            f"{origin}: expected '[section]' or 'key = value', got {line.strip()!r}",
            line=lineno,
            column=bad_col,
        )
    return sections


def _want_float(section: str, key: str, entry: tuple[str, int]) -> float:
    raw, lineno = entry
    try:
        return float(raw)
    except ValueError:
        raise ConfigParseError(f"{section}.{key}: not a number: {raw!r}", line=lineno) from None


def _want_int(section: str, key: str, entry: tuple[str, int]) -> int:
    raw, lineno = entry
    try:
        return int(raw)
    except ValueError:
        raise ConfigParseError(f"{section}.{key}: not an integer: {raw!r}", line=lineno) from None


def _want_bool(section: str, key: str, entry: tuple[str, int]) -> bool:
    raw, lineno = entry
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigParseError(f"{section}.{key}: not a boolean: {raw!r}", line=lineno)


def _want_floats(section: str, key: str, entry: tuple[str, int]) -> list[float]:
    raw, lineno = entry
    try:
        return [float(x) for x in raw.split(",")]
    except ValueError:
        raise ConfigParseError(f"{section}.{key}: not a number list: {raw!r}", line=lineno) from None


def _want_complexes(section: str, key: str, entry: tuple[str, int]) -> list[complex]:
    raw, lineno = entry
    try:
        return [complex(x.strip()) for x in raw.split(",")]
    except ValueError:
        raise ConfigParseError(f"{section}.{key}: not a complex list: {raw!r}", line=lineno) from None


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: physical setup, initial state, grid, and method."""

    system: SystemSpec
    kernel: CorrelationKernel
    initial_name: str
    initial_amplitudes: tuple[complex, ...] | None
    grid: TimeGrid
    method: str
    count: int | None
    seed: int | None
    output: str | None
    dump_rho: bool
    shift_convention: str
    echo: tuple[str, ...]  # normalized config lines for provenance

    def initial_state_vector(self) -> np.ndarray:
        if self.initial_name == "custom":
            return np.asarray(self.initial_amplitudes, dtype=complex)
        if self.initial_name.startswith("level-"):
            return level_state(self.system, int(self.initial_name.split("-")[1])).vector
        kappas = [c.kappa for c in self.kernel.channels]
        plus, minus = superposition_states(self.system, kappas)
        return plus.vector if self.initial_name == "phi-plus" else minus.vector


def parse_config(text: str, origin: str = "<config>") -> ScenarioConfig:
    sections = _parse_sections(text, origin)

    channel_ids = []
    for name in sections:
        cm = _CHANNEL_RE.match(name)
        if cm:
            channel_ids.append(int(cm.group(1)))
        elif name not in _ALLOWED_KEYS:
            raise ConfigError(f"{origin}: unknown section [{name}]")
    for required in ("system", "initial", "grid", "run"):
        if required not in sections:
            raise ConfigError(f"{origin}: missing section [{required}]")

    for name, body in sections.items():
        kind = "channel" if _CHANNEL_RE.match(name) else name
        allowed = _ALLOWED_KEYS[kind]
        for key, (_, lineno) in body.items():
            if key not in allowed:
                raise ConfigParseError(f"{origin}: unknown key {name}.{key}", line=lineno)

    sys_sec = sections["system"]
    if "upper_count" not in sys_sec or "energies" not in sys_sec:
        raise ConfigError(f"{origin}: [system] needs upper_count and energies")
    upper_count = _want_int("system", "upper_count", sys_sec["upper_count"])
    energies = _want_floats("system", "energies", sys_sec["energies"])
    if upper_count != 2:
        raise ConfigError(
            f"{origin}: the scenario runner supports exactly 2 upper levels "
            "(use the library API for other sizes)"
        )
    try:
        system = build_system(upper_count, energies)
    except VeeQSDError as exc:
        raise ConfigError(f"{origin}: system: {exc}") from None

    if sorted(channel_ids) != list(range(1, upper_count + 1)):
        raise ConfigError(
            f"{origin}: need sections [channel.1]..[channel.{upper_count}], got {sorted(channel_ids)}"
        )
    channels = []
    for idx in range(1, upper_count + 1):
        body = sections[f"channel.{idx}"]
        where = f"channels[{idx - 1}]"
        if "gamma" not in body:
            raise ConfigError(f"{origin}: {where}.gamma is required")
        gamma = _want_float("channel", "gamma", body["gamma"])
        if gamma <= 0:
            raise ConfigError(f"{origin}: {where}.gamma must be positive, got {gamma}")
        if ("Omega" in body) == ("delta" in body):
            raise ConfigError(f"{origin}: {where}: give exactly one of Omega or delta")
        if "Omega" in body:
            Omega = _want_float("channel", "Omega", body["Omega"])
        else:
            Omega = system.energies[0] - _want_float("channel", "delta", body["delta"])
        if "kappa" not in body and "Gamma" not in body:
            raise ConfigError(f"{origin}: {where}: give kappa or Gamma")
        kappa = _want_float("channel", "kappa", body["kappa"]) if "kappa" in body else None
        Gamma = _want_float("channel", "Gamma", body["Gamma"]) if "Gamma" in body else None
        if Gamma is not None and Gamma < 0:
            raise ConfigError(f"{origin}: {where}.Gamma must be >= 0, got {Gamma}")
        if kappa is not None and Gamma is not None and abs(kappa**2 - Gamma) > 1e-12 * max(1.0, Gamma):
            raise ConfigError(
                f"{origin}: {where}: kappa and Gamma contradict (kappa^2 = {kappa**2!r}, Gamma = {Gamma!r})"
            )
        if kappa is None:
            kappa = float(np.sqrt(Gamma))
        channels.append(OUChannel(kappa=complex(kappa), gamma=gamma, Omega=Omega))
    kernel = CorrelationKernel(channels=tuple(channels))

    init_sec = sections["initial"]
    if "state" not in init_sec:
        raise ConfigError(f"{origin}: [initial] needs a state")
    state_name = init_sec["state"][0]
    if state_name not in _STATE_NAMES:
        raise ConfigError(f"{origin}: initial.state must be one of {_STATE_NAMES}, got {state_name!r}")
    amplitudes = None
    if state_name == "custom":
        if "amplitudes" not in init_sec:
            raise ConfigError(f"{origin}: initial.amplitudes required for custom state")
        amps = _want_complexes("initial", "amplitudes", init_sec["amplitudes"])
        if len(amps) != system.dim:
            raise ConfigError(f"{origin}: initial.amplitudes needs {system.dim} entries")
        norm = float(np.linalg.norm(amps))
        if abs(norm - 1.0) > 1e-9:
            raise ConfigError(f"{origin}: initial.amplitudes norm {norm!r} is not 1")
        amplitudes = tuple(amps)
    elif "amplitudes" in init_sec:
        raise ConfigError(f"{origin}: initial.amplitudes is only valid with state = custom")

    grid_sec = sections["grid"]
    if "dt" not in grid_sec or "T" not in grid_sec:
        raise ConfigError(f"{origin}: [grid] needs dt and T")
    dt = _want_float("grid", "dt", grid_sec["dt"])
    T = _want_float("grid", "T", grid_sec["T"])
    if dt <= 0 or T <= 0:
        raise ConfigError(f"{origin}: grid.dt and grid.T must be positive")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T or n_steps < 1:
        raise ConfigError(f"{origin}: grid.T must be a whole number of steps of grid.dt")
    grid = TimeGrid(dt=dt, n_steps=n_steps)

    run_sec = sections["run"]
    if "method" not in run_sec:
        raise ConfigError(f"{origin}: [run] needs a method")
    method = run_sec["method"][0]
    if method not in METHODS:
        raise ConfigError(f"{origin}: run.method must be one of {METHODS}, got {method!r}")
    count = _want_int("run", "count", run_sec["count"]) if "count" in run_sec else None
    seed = _want_int("run", "seed", run_sec["seed"]) if "seed" in run_sec else None
    if count is not None and count < 1:
        raise ConfigError(f"{origin}: run.count must be >= 1")
    if method.startswith("qsd"):
        if count is None or seed is None:
            raise ConfigError(f"{origin}: run.count and run.seed are required for {method}")
    output = run_sec["output"][0] if "output" in run_sec else None
    dump_rho = _want_bool("run", "dump_rho", run_sec["dump_rho"]) if "dump_rho" in run_sec else False
    shift_convention = run_sec["shift_convention"][0] if "shift_convention" in run_sec else "sum"
    if shift_convention not in ("sum", "literal"):
        raise ConfigError(f"{origin}: run.shift_convention must be 'sum' or 'literal'")

    echo = []
    for name in sorted(sections):
        for key in sorted(sections[name]):
            echo.append(f"{name}.{key} = {sections[name][key][0]}")

    return ScenarioConfig(
        system=system, kernel=kernel,
        initial_name=state_name, initial_amplitudes=amplitudes,
        grid=grid, method=method, count=count, seed=seed,
        output=output, dump_rho=dump_rho, shift_convention=shift_convention,
        echo=tuple(echo),
    )


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario file."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), origin=str(path))


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Named real columns over a common grid, with a provenance header."""

    columns: dict[str, np.ndarray]
    provenance: tuple[str, ...]

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]


def _dataset_from_rho(
    grid: TimeGrid,
    rho: np.ndarray,
    provenance: tuple[str, ...],
    stderr: np.ndarray | None = None,
    dump_rho: bool = False,
) -> TimeSeriesDataset:
    cols: dict[str, np.ndarray] = {"t": grid.times.copy()}
    cols["rho11"] = rho[:, 0, 0].real.copy()
    cols["rho22"] = rho[:, 1, 1].real.copy()
    cols["rho33"] = rho[:, 2, 2].real.copy()
    cols["abs_rho12"] = np.abs(rho[:, 0, 1])
    cols["re_rho12"] = rho[:, 0, 1].real.copy()
    cols["im_rho12"] = rho[:, 0, 1].imag.copy()
    cols["p"] = cols["rho11"] + cols["rho22"]
    if dump_rho:
        cols["re_rho13"] = rho[:, 0, 2].real.copy()
        cols["im_rho13"] = rho[:, 0, 2].imag.copy()
        cols["re_rho23"] = rho[:, 1, 2].real.copy()
        cols["im_rho23"] = rho[:, 1, 2].imag.copy()
    if stderr is not None:
        cols["se_rho11"] = stderr[:, 0, 0].copy()
        cols["se_rho22"] = stderr[:, 1, 1].copy()
        cols["se_rho33"] = stderr[:, 2, 2].copy()
        cols["se_rho12"] = stderr[:, 0, 1].copy()
    return TimeSeriesDataset(columns=cols, provenance=provenance)


def run_scenario(config: ScenarioConfig) -> TimeSeriesDataset:
    """Dispatch a scenario to its configured method."""
    prov = [f"veeqsd {__version__}", f"method = {config.method}"]
    if config.method.startswith("qsd"):
        prov.append(f"seed = {config.seed}")
    prov.extend(config.echo)
    provenance = tuple(prov)

    psi0 = config.initial_state_vector()
    rho0 = np.outer(psi0, psi0.conj())

    if config.method == "analytic":
        sol = solve_master(config.system, config.kernel, rho0, config.grid)
        return _dataset_from_rho(config.grid, sol.rho, provenance, dump_rho=config.dump_rho)

    if config.method == "master-ode":
        field = solve_F_ou(config.system, config.kernel, config.grid)
        sol = integrate_master_direct(config.system, field, rho0, config.grid)
        return _dataset_from_rho(config.grid, sol.rho, provenance, dump_rho=config.dump_rho)

    mode = "linear" if config.method == "qsd-linear" else "nonlinear"
    est = run_ensemble(
        config.system, config.kernel, psi0, config.grid,
        count=config.count, seed=config.seed, mode=mode,
        shift_convention=config.shift_convention,
    )
    if mode == "linear":
        mean = est.normalized_mean
        traces = np.real(np.einsum("kii->k", est.mean))
        stderr = est.stderr / traces[:, None, None]
    else:
        mean = est.mean
        stderr = est.stderr
    return _dataset_from_rho(config.grid, mean, provenance, stderr=stderr, dump_rho=config.dump_rho)


def emit_csv(dataset: TimeSeriesDataset, path) -> None:
    """Write a deterministic CSV: '#' provenance lines, header row, 17-digit floats."""
    if dataset.n_rows == 0:
        raise VeeQSDError("refusing to write an empty dataset")
    names = list(dataset.columns)
    lengths = {len(dataset.columns[n]) for n in names}
    if len(lengths) != 1:
        raise VeeQSDError("dataset columns have unequal lengths")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in dataset.provenance:
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        data = np.column_stack([dataset.columns[n] for n in names])
        for row in data:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def read_csv(path) -> TimeSeriesDataset:
    """Round-trip reader for emit_csv output."""
    provenance = []
    names: list[str] | None = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                provenance.append(line[1:].strip())
            elif names is None:
                names = line.split(",")
            elif line:
                rows.append([float(x) for x in line.split(",")])
    if names is None or not rows:
        raise VeeQSDError(f"{path}: not a dataset CSV")
    data = np.asarray(rows, dtype=float)
    columns = {n: data[:, i].copy() for i, n in enumerate(names)}
    return TimeSeriesDataset(columns=columns, provenance=tuple(provenance))


def bundled_scenario_names() -> list[str]:
    """Names of the packaged figure-study configs."""
    root = resources.files("veeqsd") / "configs"
    return sorted(p.name[: -len(".cfg")] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_bundled(name: str) -> ScenarioConfig:
    """Load a packaged config by its bare name (see bundled_scenario_names)."""
    res = resources.files("veeqsd") / "configs" / f"{name}.cfg"
    if not res.is_file():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return parse_config(res.read_text(encoding="utf-8"), origin=f"bundled:{name}")
