"""Vee-type level structure, operators, states, and density-matrix checks.

The model is M upper levels (labels 1..M) above a single ground level
(label M+1, energy 0), with hbar = 1 so all energies are angular
frequencies. Decay proceeds only from upper levels to the ground level,
through the lowering operators |ground><m|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VeeQSDError

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
EIGENVALUE_TOL = 1e-10


@dataclass(frozen=True)
class SystemSpec:
    """Immutable description of the level structure.

    Attributes:
        upper_count: number M of upper levels (M >= 1).
        energies: angular frequencies of the upper levels, length M.
            The ground level has index M+1 and energy 0.
    """

    upper_count: int
    energies: tuple[float, ...]

    @property
    def dim(self) -> int:
        return self.upper_count + 1

    @property
    def ground_index(self) -> int:
        """1-based label of the ground level."""
        return self.upper_count + 1

    def h_sys(self) -> np.ndarray:
        """Full (M+1)x(M+1) Hamiltonian: diag(energies, 0)."""
        return np.diag(np.concatenate([np.asarray(self.energies, float), [0.0]])).astype(complex)

    def h_excited(self) -> np.ndarray:
        """Hamiltonian restricted to the upper-level subspace (MxM)."""
        return np.diag(np.asarray(self.energies, float)).astype(complex)


def build_system(upper_count: int, energies) -> SystemSpec:
    """Validate and assemble a SystemSpec.

    Raises:
        VeeQSDError: on dimension mismatch or non-finite energy.
    """
    if upper_count < 1:
        raise VeeQSDError(f"upper_count must be >= 1, got {upper_count}")
    energies = tuple(float(e) for e in energies)
    if len(energies) != upper_count:
        raise VeeQSDError(
            f"expected {upper_count} energies, got {len(energies)}"
        )
    if not all(np.isfinite(e) for e in energies):
        raise VeeQSDError("energies must be finite")
    return SystemSpec(upper_count=upper_count, energies=energies)


def lowering_operator(spec: SystemSpec, m: int) -> np.ndarray:
    """Lowering operator |ground><m| as a dense matrix, m in 1..M."""
    if not 1 <= m <= spec.upper_count:
        raise VeeQSDError(f"level index {m} out of range 1..{spec.upper_count}")
    op = np.zeros((spec.dim, spec.dim), dtype=complex)
    op[spec.dim - 1, m - 1] = 1.0
    return op


@dataclass(frozen=True)
class PureState:
    """Normalized state vector over the M+1 levels."""

    amplitudes: tuple[complex, ...]

    def __post_init__(self):
        norm = np.linalg.norm(self.amplitudes)
        if abs(norm - 1.0) > 1e-12:
            raise VeeQSDError(f"state norm {norm!r} deviates from 1 beyond 1e-12")

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.amplitudes, dtype=complex)

    @property
    def in_excited_subspace(self) -> bool:
        """True iff the ground amplitude vanishes exactly."""
        return self.amplitudes[-1] == 0

    def density(self) -> np.ndarray:
        v = self.vector
        return np.outer(v, v.conj())


def pure_state(amplitudes) -> PureState:
    """Build a PureState, normalizing exactly-representable inputs is the caller's job."""
    return PureState(tuple(complex(a) for a in amplitudes))


def level_state(spec: SystemSpec, level: int) -> PureState:
    """Basis ket |level>, 1-based (ground is level M+1)."""
    if not 1 <= level <= spec.dim:
        raise VeeQSDError(f"level {level} out of range 1..{spec.dim}")
    amps = [0j] * spec.dim
    amps[level - 1] = 1.0 + 0j
    return PureState(tuple(amps))


def superposition_states(spec: SystemSpec, kappas) -> tuple[PureState, PureState]:
    """Bright/dark upper-level superpositions for two coupling amplitudes.

    Returns (phi_plus, phi_minus) with
        phi_plus  = (k1|1> + k2|2>) / k,
        phi_minus = (k2|1> - k1|2>) / k,
    k = sqrt(|k1|^2 + |k2|^2). phi_minus is annihilated by the coupled
    decay channel and is stationary under single-channel dissipation.
    """
    if spec.upper_count != 2:
        raise VeeQSDError("superposition states are defined for exactly 2 upper levels")
    k1, k2 = (complex(k) for k in kappas)
    k = np.sqrt(abs(k1) ** 2 + abs(k2) ** 2)
    if k == 0:
        raise VeeQSDError("coupling amplitudes must not both vanish")
    plus = PureState((k1 / k, k2 / k, 0j))
    minus = PureState((k2 / k, -k1 / k, 0j))
    return plus, minus


@dataclass(frozen=True)
class DensityCheck:
    """Result of validate_density."""

    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float

    @property
    def ok(self) -> bool:
        return (
            self.hermiticity_defect <= HERMITICITY_TOL
            and self.trace_defect <= TRACE_TOL
            and self.min_eigenvalue >= -EIGENVALUE_TOL
        )


def validate_density(rho: np.ndarray, dim: int | None = None) -> DensityCheck:
    """Report Hermiticity, trace, and positivity defects of a density matrix.

    Args:
        rho: square complex matrix.
        dim: expected dimension; mismatch raises.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise VeeQSDError(f"density matrix must be square, got shape {rho.shape}")
    if dim is not None and rho.shape[0] != dim:
        raise VeeQSDError(f"expected dimension {dim}, got {rho.shape[0]}")
    herm = float(np.abs(rho - rho.conj().T).max())
    trace = float(abs(rho.trace() - 1.0))
    # eigvalsh needs an exactly Hermitian input; symmetrize first
    sym = 0.5 * (rho + rho.conj().T)
    min_eig = float(np.linalg.eigvalsh(sym).min())
    return DensityCheck(hermiticity_defect=herm, trace_defect=trace, min_eigenvalue=min_eig)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*dt for k = 0..n_steps."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0 or not np.isfinite(self.dt):
            raise VeeQSDError(f"dt must be positive and finite, got {self.dt}")
        if self.n_steps < 0:
            raise VeeQSDError(f"n_steps must be >= 0, got {self.n_steps}")

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dt


def grid_for_duration(dt: float, duration: float) -> TimeGrid:
    """Grid covering [0, duration] with step dt (duration rounded up to a whole step)."""
    n = int(np.ceil(duration / dt - 1e-12))
    return TimeGrid(dt=dt, n_steps=max(n, 1))
