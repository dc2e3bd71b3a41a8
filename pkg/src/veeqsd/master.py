"""Exact reduced dynamics of the vee system.

Four routes to rho(t):

* `propagate_pair` integrates the linear pair

      dO/dt = (-i H_e - F(t)) O,        O(0) = identity,
      dY/dt = alpha(0) O - diag(gamma_m + i Omega_m) Y,   Y(0) = 0,

  where Y = F*O. Because the pair is linear with constant coefficients it
  is regular even where F itself blows up (poles of F are zeros of
  det O), and is advanced by a cached matrix-exponential step, exact to
  machine precision at any grid spacing.

* `assemble_state` turns the decay operator into the full density matrix:
  the excited block evolves by congruence with O, the ground population
  takes up the lost trace, and excited-ground coherences ride along as
  O applied to the initial coherence column (the ground level has zero
  energy, so no extra phase).

* `integrate_master_direct` integrates the time-local master equation

      drho/dt = -i[H, rho] - (F rho + rho F^dag)
                + Tr_e[F rho + rho F^dag] |g><g|

  with a supplied coefficient field, as an independent cross-check; it
  requires the field to be pole-free on the window.

* `markov_master` evolves the constant-rate equation of the wideband
  limit, with jump operator |g><phi_plus| at rate Gamma_1 + Gamma_2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .coefficients import CoefficientField
from .correlations import CorrelationKernel, kernel_at_zero
from .errors import VeeQSDError
from .system import SystemSpec, TimeGrid, superposition_states, validate_density

P_CLAMP_TOL = 1e-10


@dataclass(frozen=True)
class PropagatorPair:
    """Decay operator O_t and auxiliary Y_t = F(t) O_t on a grid."""

    grid: TimeGrid
    O: np.ndarray  # (n_points, M, M)
    Y: np.ndarray  # (n_points, M, M)
    generator: np.ndarray  # (2M, 2M) constant block matrix

    @property
    def n_levels(self) -> int:
        return self.O.shape[1]

    def evaluate(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """O and Y at an arbitrary time (exact continuation from the nearest grid point)."""
        M = self.n_levels
        k = int(np.clip(np.floor(t / self.grid.dt), 0, self.grid.n_steps))
        phi = np.concatenate([self.O[k], self.Y[k]], axis=0)
        phi = expm(self.generator * (t - self.grid.times[k])) @ phi
        return phi[:M], phi[M:]

    def coefficient_at(self, k: int) -> np.ndarray:
        """F(t_k) = Y O^{-1}, where O is invertible."""
        return self.Y[k] @ np.linalg.inv(self.O[k])


def _pair_generator(system: SystemSpec, kernel: CorrelationKernel) -> np.ndarray:
    M = system.upper_count
    if kernel.n_channels != M:
        raise VeeQSDError(f"kernel has {kernel.n_channels} channels for {M} upper levels")
    K = np.zeros((2 * M, 2 * M), dtype=complex)
    K[:M, :M] = -1j * system.h_excited()
    K[:M, M:] = -np.eye(M)
    K[M:, :M] = kernel_at_zero(kernel)
    K[M:, M:] = -np.diag([c.gamma + 1j * c.Omega for c in kernel.channels])
    return K


def propagate_pair(system: SystemSpec, kernel: CorrelationKernel, grid: TimeGrid) -> PropagatorPair:
    """Propagate (O, Y) over the grid.

    The pair solves a constant-coefficient linear system, so the grid
    sweep is exact: an eigendecomposition of the block generator covers
    all times in one vectorized evaluation, falling back to a cached
    matrix-exponential step wherever the generator is defective or the
    eigenbasis too ill-conditioned (checked against expm at the final
    time).
    """
    M = system.upper_count
    K = _pair_generator(system, kernel)
    phi0 = np.concatenate([np.eye(M, dtype=complex), np.zeros((M, M), dtype=complex)], axis=0)

    phi_all = None
    evals, vecs = np.linalg.eig(K)
    cond = np.linalg.cond(vecs)
    if np.isfinite(cond) and cond < 1e8:
        coeff = np.linalg.solve(vecs, phi0)
        growth = np.exp(np.outer(grid.times, evals))  # (n_points, 2M)
        phi_all = np.einsum("ab,kb,bc->kac", vecs, growth, coeff)
        ref = expm(K * grid.t_final) @ phi0
        scale = max(np.abs(ref).max(), 1.0)
        if np.abs(phi_all[-1] - ref).max() > 1e-9 * scale:
            phi_all = None

    if phi_all is None:
        E = expm(K * grid.dt)
        phi_all = np.empty((grid.n_points, 2 * M, M), dtype=complex)
        phi = phi0
        phi_all[0] = phi
        for k in range(grid.n_steps):
            phi = E @ phi
            phi_all[k + 1] = phi

    O, Y = phi_all[:, :M], phi_all[:, M:]
    if not (np.isfinite(O).all() and np.isfinite(Y).all()):
        raise VeeQSDError("non-finite propagator values; the linear pair should never diverge")
    return PropagatorPair(grid=grid, O=np.ascontiguousarray(O), Y=np.ascontiguousarray(Y), generator=K)


@dataclass(frozen=True)
class MasterSolution:
    """rho(t), survival probability p(t), and the normalized excited block."""

    grid: TimeGrid
    rho: np.ndarray    # (n_points, M+1, M+1)
    p: np.ndarray      # (n_points,)
    rho_e: np.ndarray  # (n_points, M, M); zero rows where p vanishes

    @property
    def dim(self) -> int:
        return self.rho.shape[1]

    def populations(self) -> np.ndarray:
        """Diagonal of rho over time, real part, shape (n_points, M+1)."""
        return np.real(np.einsum("kii->ki", self.rho))


def _split_rho0(rho0: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray, float]:
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (M + 1, M + 1):
        raise VeeQSDError(f"initial state must be {(M + 1, M + 1)}, got {rho0.shape}")
    check = validate_density(rho0)
    if not check.ok:
        raise VeeQSDError(
            "invalid initial density matrix: "
            f"hermiticity {check.hermiticity_defect:.2e}, trace {check.trace_defect:.2e}, "
            f"min eigenvalue {check.min_eigenvalue:.2e}"
        )
    return rho0[:M, :M], rho0[:M, M], float(rho0[M, M].real)


def _clamp_p(p: np.ndarray) -> np.ndarray:
    if (p < -P_CLAMP_TOL).any() or (p > 1.0 + P_CLAMP_TOL).any():
        raise VeeQSDError(
            f"survival probability outside [0,1] beyond tolerance: range [{p.min()}, {p.max()}]"
        )
    return np.clip(p, 0.0, 1.0)


def _assemble_from_blocks(grid: TimeGrid, X: np.ndarray, coh: np.ndarray) -> MasterSolution:
    """Build a MasterSolution from the excited blocks X(t) and coherence columns."""
    n, M = X.shape[0], X.shape[1]
    rho = np.zeros((n, M + 1, M + 1), dtype=complex)
    rho[:, :M, :M] = X
    rho[:, :M, M] = coh
    rho[:, M, :M] = coh.conj()
    p = _clamp_p(np.real(np.einsum("kii->k", X)))
    rho[:, M, M] = 1.0 - p
    rho_e = np.zeros_like(X)
    ok = p > 1e-300
    rho_e[ok] = X[ok] / p[ok, None, None]
    return MasterSolution(grid=grid, rho=rho, p=p, rho_e=rho_e)


def assemble_state(pair: PropagatorPair, rho0: np.ndarray) -> MasterSolution:
    """Assemble rho(t) = O rho0_ee O^dag + (1 - p(t)) |g><g| (+ riding coherences).

    p(t) = Tr[O^dag O rho0_ee] is the probability that the system is
    still excited; for a pure excited start the normalized excited block
    O rho0 O^dag / p stays pure.
    """
    M = pair.n_levels
    rho0_ee, rho0_eg, _ = _split_rho0(rho0, M)
    X = np.einsum("kab,bc,kdc->kad", pair.O, rho0_ee, pair.O.conj())
    coh = np.einsum("kab,b->ka", pair.O, rho0_eg)
    return _assemble_from_blocks(pair.grid, X, coh)


def solve_master(
    system: SystemSpec, kernel: CorrelationKernel, rho0: np.ndarray, grid: TimeGrid
) -> MasterSolution:
    """Convenience: propagate the pair and assemble the state."""
    return assemble_state(propagate_pair(system, kernel, grid), rho0)


def integrate_master_direct(
    system: SystemSpec, field: CoefficientField, rho0: np.ndarray, grid: TimeGrid
) -> MasterSolution:
    """Integrate the time-local master equation with a precomputed F field.

    The field must cover the grid pole-free (PoleError otherwise) and
    carry matching spacing; RK4 stages use the field's stored midpoint
    values, keeping the scheme fully fourth order.
    """
    M = system.upper_count
    if field.n_channels != M:
        raise VeeQSDError("coefficient field does not match the system size")
    if abs(field.grid.dt - grid.dt) > 1e-15 * grid.dt or field.grid.n_steps < grid.n_steps:
        raise VeeQSDError("coefficient field grid does not cover the requested grid")
    field.require_window(grid.n_points)

    rho0_ee, rho0_eg, rho0_gg = _split_rho0(rho0, M)
    minus_iHe = -1j * system.h_excited()

    # Pack the excited block and the excited-ground coherence column as
    # Z = [X | c]; with A(t) = -i H_e - F(t) both satisfy
    # dZ = A Z + [X A^dag | 0], which keeps the stepper to two matmuls
    # per stage.
    n = grid.n_points
    Z = np.concatenate([rho0_ee.astype(complex), rho0_eg.reshape(M, 1)], axis=1)
    out = np.empty((n, M, M + 1), dtype=complex)
    out[0] = Z
    dt = grid.dt

    k1, k2, k3, k4 = (np.empty((M, M + 1), dtype=complex) for _ in range(4))
    trial = np.empty((M, M + 1), dtype=complex)
    tmp = np.empty((M, M), dtype=complex)

    def rhs_into(A, A_dag, Zs, dest):
        np.matmul(A, Zs, out=dest)
        np.matmul(Zs[:, :M], A_dag, out=tmp)
        dest[:, :M] += tmp

    for k in range(grid.n_steps):
        A0 = minus_iHe - field.values[k]
        Am = minus_iHe - field.mid_values[k]
        A1 = minus_iHe - field.values[k + 1]
        A0d, Amd, A1d = A0.conj().T, Am.conj().T, A1.conj().T
        rhs_into(A0, A0d, Z, k1)
        np.multiply(k1, 0.5 * dt, out=trial); trial += Z
        rhs_into(Am, Amd, trial, k2)
        np.multiply(k2, 0.5 * dt, out=trial); trial += Z
        rhs_into(Am, Amd, trial, k3)
        np.multiply(k3, dt, out=trial); trial += Z
        rhs_into(A1, A1d, trial, k4)
        k2 += k3; k2 += k2; k2 += k1; k2 += k4; k2 *= dt / 6.0
        Z = Z + k2
        if not np.isfinite(Z).all():
            raise VeeQSDError(f"master integration lost finiteness at step {k + 1}")
        out[k + 1] = Z
    return _assemble_from_blocks(grid, out[:, :, :M], out[:, :, M])


def markov_master(
    system: SystemSpec,
    Gammas,
    kappas,
    rho0: np.ndarray,
    grid: TimeGrid,
) -> MasterSolution:
    """Constant-rate evolution of the wideband limit (two upper levels).

    The single jump operator is L = |g><phi_plus| with total rate
    Gamma_1 + Gamma_2, so the bright superposition decays at the sum of
    the individual rates and phi_minus is stationary.
    """
    if system.upper_count != 2:
        raise VeeQSDError("the wideband-limit equation is implemented for two upper levels")
    Gammas = [float(g) for g in Gammas]
    if len(Gammas) != 2:
        raise VeeQSDError("need exactly two decay rates")
    rate = sum(Gammas)
    plus, _ = superposition_states(system, kappas)
    v = plus.vector[:2]

    # rate/2 * ([L rho, L^dag] + [L, rho L^dag]) restricted to the blocks:
    # excited block decays through the |phi+><phi+| projector, ground
    # coherences through half of it, and the ground population absorbs
    # the excited-trace loss, exactly as in the time-dependent equation
    # with F replaced by (rate/2) * projector.
    proj = np.outer(v, v.conj())
    F_const = (rate / 2.0) * proj

    M = 2
    rho0_ee, rho0_eg, _ = _split_rho0(rho0, M)
    He = system.h_excited()

    # constant generator: advance the (X, c) blocks with a cached expm step
    A = -1j * He - F_const
    E_c = expm(A * grid.dt)

    # vectorized excited-block step: X -> E_X X E_X^dag with E_X = expm(A dt)
    Xs = np.empty((grid.n_points, M, M), dtype=complex)
    cs = np.empty((grid.n_points, M), dtype=complex)
    Xs[0], cs[0] = rho0_ee, rho0_eg
    for k in range(grid.n_steps):
        Xs[k + 1] = E_c @ Xs[k] @ E_c.conj().T
        cs[k + 1] = E_c @ cs[k]
    return _assemble_from_blocks(grid, Xs, cs)


def trace_distance(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """Trace distance 0.5 * ||rho_a - rho_b||_1 between two density matrices."""
    diff = 0.5 * (rho_a - rho_b)
    diff = 0.5 * (diff + diff.conj().T)
    return float(np.abs(np.linalg.eigvalsh(diff)).sum())
