"""Stochastic pure-state trajectories whose ensemble mean is rho(t).

Two unravelings share one stepping core:

* linear mode: d psi = [-i H + sum_m z*_m(t) L_m - F_hat(t)] psi dt with
  F_hat = sum_mp F_mp |m><p|; the norm drifts and the raw outer-product
  mean reproduces rho(t).

* nonlinear mode: the norm-preserving form driven by the recentered
  noise z~*_m(t) = z*_m(t) + sum_n int_0^t conj(alpha_mn(t,s)) <L_n^dag>_s ds
  (see ShiftAccumulator for the kernel conjugation), with all operators
  centered on their running expectations. States are renormalized after
  every step (the continuous equation preserves the norm identically;
  stepping error does not).

The colored noise enters the stepper through its linear-in-step
interpolant (grid samples at the ends, their average at the midpoint
stage), and the reservoir coefficients F come from a precomputed field
with stored midpoints, so a single deterministic fourth-order step per
path advances the batch. Expectation values in the nonlinear terms are
evaluated at the step start and corrected once at the midpoint; the
noise-recentering shift is held at its step-start value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField, solve_F_ou
from .correlations import CorrelationKernel
from .errors import VeeQSDError
from .noise import ShiftAccumulator, build_covariance, sample_noise
from .system import PureState, SystemSpec, TimeGrid


@dataclass(frozen=True)
class TrajectoryState:
    """One stochastic trajectory: amplitudes psi(t_k) over the grid."""

    grid: TimeGrid
    psi: np.ndarray  # (n_points, M+1)
    mode: str        # "linear" | "nonlinear"


@dataclass(frozen=True)
class EnsembleEstimate:
    """Running density-matrix estimate held as raw accumulator sums.

    sum1 accumulates outer products |psi><psi| (unnormalized for linear
    mode, unit-norm for nonlinear), sum2 their elementwise squared
    magnitudes; means and standard errors derive lazily, and merging two
    estimates adds counts and sums.
    """

    grid: TimeGrid
    mode: str
    count: int
    sum1: np.ndarray  # (n_points, d, d) complex
    sum2: np.ndarray  # (n_points, d, d) real

    @property
    def mean(self) -> np.ndarray:
        return self.sum1 / self.count

    @property
    def stderr(self) -> np.ndarray:
        """Per-entry standard error of the mean (combined real+imag scatter)."""
        if self.count < 2:
            return np.zeros_like(self.sum2)
        mean = self.mean
        var = (self.sum2 - self.count * np.abs(mean) ** 2) / (self.count - 1)
        return np.sqrt(np.clip(var, 0.0, None) / self.count)

    @property
    def normalized_mean(self) -> np.ndarray:
        """Mean rescaled to unit trace at each time (linear-mode readout)."""
        mean = self.mean
        traces = np.real(np.einsum("kii->k", mean))
        return mean / traces[:, None, None]

    def merge(self, other: "EnsembleEstimate") -> "EnsembleEstimate":
        """Pool two estimates by adding counts and sums."""
        if self.mode != other.mode:
            raise VeeQSDError("cannot merge estimates from different trajectory modes")
        if self.grid != other.grid:
            raise VeeQSDError("cannot merge estimates on different grids")
        return EnsembleEstimate(
            grid=self.grid,
            mode=self.mode,
            count=self.count + other.count,
            sum1=self.sum1 + other.sum1,
            sum2=self.sum2 + other.sum2,
        )


def _as_amplitudes(psi0, dim: int) -> np.ndarray:
    if isinstance(psi0, PureState):
        vec = psi0.vector
    else:
        vec = np.asarray(psi0, dtype=complex)
    if vec.shape != (dim,):
        raise VeeQSDError(f"initial state must have {dim} amplitudes, got shape {vec.shape}")
    norm = np.linalg.norm(vec)
    if abs(norm - 1.0) > 1e-9:
        raise VeeQSDError(f"initial state norm {norm!r} deviates from 1 beyond 1e-9")
    return vec


def _check_field(system: SystemSpec, field: CoefficientField, n_points: int) -> None:
    if field.n_channels != system.upper_count:
        raise VeeQSDError("coefficient field does not match the system size")
    field.require_window(n_points)


def _nl_scalars(psi: np.ndarray, F: np.ndarray, M: int):
    """Frozen expectation scalars of the centered equation for a batch of states."""
    e, g = psi[:, :M], psi[:, M]
    lm = g.conj()[:, None] * e                      # <L_m>
    q = e @ F.T                                     # (F psi_e)_m
    s = np.einsum("bm,bm->b", e.conj(), q)          # <psi_e, F psi_e>
    p3 = np.abs(g) ** 2
    return lm, s, p3


def _evolve_batch(
    system: SystemSpec,
    field: CoefficientField,
    z_paths: np.ndarray,
    psi0: np.ndarray,
    mode: str,
    kernel: CorrelationKernel | None = None,
    shift_convention: str = "sum",
    keep_history: bool = False,
):
    """March a batch of paths; return history or (sum1, sum2) accumulators."""
    if mode not in ("linear", "nonlinear"):
        raise VeeQSDError(f"unknown trajectory mode {mode!r}")
    B, M, n = z_paths.shape
    if M != system.upper_count:
        raise VeeQSDError("noise paths do not match the system's channel count")
    d = M + 1
    dt = field.grid.dt
    minus_iw = -1j * np.asarray(system.energies, dtype=float)

    psi = np.tile(psi0, (B, 1))
    if mode == "nonlinear":
        if kernel is None:
            raise VeeQSDError("nonlinear mode needs the correlation kernel for the noise shift")
        shift_acc = ShiftAccumulator(kernel, dt, batch_shape=(B,), convention=shift_convention)

    if keep_history:
        hist = np.empty((B, n, d), dtype=complex)
        hist[:, 0] = psi
    else:
        sum1 = np.zeros((n, d, d), dtype=complex)
        sum2 = np.zeros((n, d, d), dtype=float)
        sum1[0] = B * np.outer(psi0, psi0.conj())
        sum2[0] = B * np.abs(sum1[0] / B) ** 2

    def deriv_linear(state, F, z):
        e = state[:, :M]
        out = np.empty_like(state)
        out[:, :M] = e * minus_iw[None, :] - e @ F.T
        out[:, M] = np.einsum("bm,bm->b", z, e)
        return out

    def deriv_nonlinear(state, F, zt, lm, s, p3):
        e, g = state[:, :M], state[:, M]
        coef = -np.einsum("bm,bm->b", zt, lm) + s * (1.0 - p3)
        out = np.empty_like(state)
        out[:, :M] = e * minus_iw[None, :] - e @ F.T + coef[:, None] * e
        out[:, M] = np.einsum("bm,bm->b", zt, e) + (coef + s) * g
        return out

    def rk4(state, h, stages, f):
        (F0, z0), (Fm, zm), (F1, z1) = stages
        k1 = f(state, F0, z0)
        k2 = f(state + 0.5 * h * k1, Fm, zm)
        k3 = f(state + 0.5 * h * k2, Fm, zm)
        k4 = f(state + h * k3, F1, z1)
        return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    for k in range(n - 1):
        F0, Fm, F1 = field.values[k], field.mid_values[k], field.values[k + 1]
        # the colored noise is smooth on the step scale: stages see its
        # linear-in-step interpolant, keeping the weak error at O(dt^2)
        z0, z1 = z_paths[:, :, k], z_paths[:, :, k + 1]
        zm = 0.5 * (z0 + z1)

        if mode == "linear":
            psi = rk4(psi, dt, ((F0, z0), (Fm, zm), (F1, z1)),
                      lambda st, F, z: deriv_linear(st, F, z))
        else:
            h_old = psi[:, :M].conj() * psi[:, M][:, None]
            shift = shift_acc.shift()
            stages = ((F0, z0 + shift), (Fm, zm + shift), (F1, z1 + shift))
            # midpoint predictor with start-frozen expectations
            lm0, s0, p30 = _nl_scalars(psi, F0, M)
            mid = rk4(psi, dt / 2.0, ((F0, z0 + shift),) * 3,
                      lambda st, F, z: deriv_nonlinear(st, F, z, lm0, s0, p30))
            mid /= np.linalg.norm(mid, axis=1)[:, None]
            lmm, sm, p3m = _nl_scalars(mid, Fm, M)
            psi = rk4(psi, dt, stages,
                      lambda st, F, z: deriv_nonlinear(st, F, z, lmm, sm, p3m))
            psi /= np.linalg.norm(psi, axis=1)[:, None]
            h_new = psi[:, :M].conj() * psi[:, M][:, None]
            shift_acc.advance(h_old, h_new)

        if not np.isfinite(psi).all():
            raise VeeQSDError(f"trajectory lost finiteness at step {k + 1}")
        if keep_history:
            hist[:, k + 1] = psi
        else:
            sum1[k + 1] = np.einsum("bi,bj->ij", psi, psi.conj())
            mags = np.abs(psi) ** 2
            sum2[k + 1] = np.einsum("bi,bj->ij", mags, mags)

    if keep_history:
        return hist
    return sum1, sum2


def evolve_linear(
    system: SystemSpec, field: CoefficientField, path: np.ndarray, psi0
) -> TrajectoryState:
    """Evolve one unnormalized linear trajectory driven by a noise path z*_m(t)."""
    path = np.asarray(path, dtype=complex)
    if path.ndim != 2:
        raise VeeQSDError("path must be a (channels, n_points) array")
    n = path.shape[1]
    _check_field(system, field, n)
    psi0 = _as_amplitudes(psi0, system.dim)
    hist = _evolve_batch(system, field, path[None], psi0, "linear", keep_history=True)
    return TrajectoryState(grid=field.grid, psi=hist[0], mode="linear")


def evolve_nonlinear(
    system: SystemSpec,
    field: CoefficientField,
    path: np.ndarray,
    psi0,
    kernel: CorrelationKernel,
    shift_convention: str = "sum",
) -> TrajectoryState:
    """Evolve one norm-preserving trajectory; the noise shift is built on the fly
    from the trajectory's own raising-operator expectation history."""
    path = np.asarray(path, dtype=complex)
    if path.ndim != 2:
        raise VeeQSDError("path must be a (channels, n_points) array")
    n = path.shape[1]
    _check_field(system, field, n)
    psi0 = _as_amplitudes(psi0, system.dim)
    hist = _evolve_batch(
        system, field, path[None], psi0, "nonlinear",
        kernel=kernel, shift_convention=shift_convention, keep_history=True,
    )
    return TrajectoryState(grid=field.grid, psi=hist[0], mode="nonlinear")


def _estimate_from_history(grid: TimeGrid, mode: str, psi: np.ndarray) -> EnsembleEstimate:
    outer = np.einsum("ki,kj->kij", psi, psi.conj())
    return EnsembleEstimate(
        grid=grid, mode=mode, count=1, sum1=outer, sum2=np.abs(outer) ** 2
    )


def ensemble_density(trajectories) -> EnsembleEstimate:
    """Pool trajectories into a density estimate with per-entry standard errors.

    The reduction is a fixed half-split tree over the list, so pooling
    the two halves separately and merging reproduces the full estimate
    bit for bit.
    """
    trajectories = list(trajectories)
    if len(trajectories) < 2:
        raise VeeQSDError("ensemble_density needs at least 2 trajectories")
    mode = trajectories[0].mode
    grid = trajectories[0].grid
    for t in trajectories:
        if t.mode != mode:
            raise VeeQSDError("cannot mix linear and nonlinear trajectories in one estimate")
        if t.grid != grid:
            raise VeeQSDError("trajectories live on different grids")

    def reduce(items) -> EnsembleEstimate:
        if len(items) == 1:
            return _estimate_from_history(grid, mode, items[0].psi)
        mid = len(items) // 2
        return reduce(items[:mid]).merge(reduce(items[mid:]))

    return reduce(trajectories)


def run_ensemble(
    system: SystemSpec,
    kernel: CorrelationKernel,
    psi0,
    grid: TimeGrid,
    count: int,
    seed: int,
    mode: str,
    chunk_size: int = 2048,
    shift_convention: str = "sum",
    field: CoefficientField | None = None,
    start_index: int = 0,
    factor=None,
) -> EnsembleEstimate:
    """Full pipeline: coefficients, covariance, sampling, batched evolution.

    Paths are drawn from (seed, absolute-index) substreams and evolved in
    chunks whose accumulators merge in index order, so the result is
    bit-identical for a given (seed, count, start_index) no matter how
    the work is scheduled, and ensembles over disjoint index ranges are
    statistically independent. Precomputed coefficient fields and
    covariance factors may be passed to amortize sweeps.
    """
    if count < 1:
        raise VeeQSDError(f"count must be >= 1, got {count}")
    psi0 = _as_amplitudes(psi0, system.dim)
    if field is None:
        field = solve_F_ou(system, kernel, grid)
    _check_field(system, field, grid.n_points)
    if factor is None:
        factor = build_covariance(kernel, grid)

    total: EnsembleEstimate | None = None
    done = 0
    while done < count:
        this = min(chunk_size, count - done)
        batch = sample_noise(factor, seed, this, start_index=start_index + done)
        sum1, sum2 = _evolve_batch(
            system, field, batch.paths, psi0, mode,
            kernel=kernel, shift_convention=shift_convention,
        )
        est = EnsembleEstimate(grid=grid, mode=mode, count=this, sum1=sum1, sum2=sum2)
        total = est if total is None else total.merge(est)
        done += this
    return total
