"""Correlated complex Gaussian noise on a time grid.

The trajectory equations are driven by M complex processes whose
two-point function matches the reservoir kernel,
mean{z_m(t) conj(z_n(s))} = alpha_mn(t, s), with vanishing mean and
vanishing pseudo-correlations mean{z z}. The whole grid is sampled at
once: the stacked covariance C[(m,j),(n,k)] = alpha_mn(t_j, t_k) is
factorized densely (Cholesky with a diagonal-jitter fallback) and each
path is factor @ w for an independent standard circular complex w.

Paths are stored as the conjugated samples z*_m(t_j), which is what the
evolution equations consume. Per-path draws come from independent
substreams keyed by (seed, absolute path index), so any slice of an
ensemble can be regenerated bit-for-bit in isolation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .correlations import CorrelationKernel, kernel_at_zero, stacked_covariance
from .errors import NumericalError, VeeQSDError
from .system import TimeGrid

DEFAULT_MAX_DIM = 8192
_JITTER_BASE = 1e-12
_JITTER_ESCALATIONS = 3

_DUMP_MAGIC = b"VQSDNB01"
_DUMP_HEADER = struct.Struct("<IIdQII")  # M, n_points, dt, seed, count, start_index


@dataclass(frozen=True)
class CovarianceFactor:
    """Lower-triangular factor of the stacked noise covariance."""

    grid: TimeGrid
    n_channels: int
    factor: np.ndarray  # (D, D), D = n_channels * n_points
    jitter: float

    @property
    def dim(self) -> int:
        return self.factor.shape[0]


def build_covariance(
    kernel: CorrelationKernel, grid: TimeGrid, max_dim: int = DEFAULT_MAX_DIM
) -> CovarianceFactor:
    """Assemble and factorize the stacked covariance.

    Cholesky is attempted as-is, then with diagonal jitter
    1e-12 * max(diag) escalating tenfold at most three times; the
    applied jitter is recorded. Failure after that signals a non-PSD
    kernel or a pathologically coarse grid.
    """
    M = kernel.n_channels
    D = M * grid.n_points
    if D > max_dim:
        raise VeeQSDError(
            f"stacked noise dimension {D} exceeds the dense-factorization cap {max_dim}"
        )
    cov = stacked_covariance(kernel, grid.times)
    scale = float(np.abs(np.diagonal(cov)).max())
    if scale == 0.0:
        # decoupled kernel: the zero factor reproduces the zero covariance
        return CovarianceFactor(grid=grid, n_channels=M, factor=np.zeros((D, D), complex), jitter=0.0)
    jitter = 0.0
    attempt = _JITTER_BASE * scale
    for _ in range(_JITTER_ESCALATIONS + 1):
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(D) if jitter else cov)
            return CovarianceFactor(grid=grid, n_channels=M, factor=factor, jitter=jitter)
        except np.linalg.LinAlgError:
            jitter = attempt
            attempt *= 10.0
    raise NumericalError(
        f"covariance factorization failed even with jitter {jitter:.3e}; "
        "kernel is not positive semidefinite on this grid"
    )


@dataclass(frozen=True)
class NoisePathBatch:
    """Batch of conjugated noise paths z*_m(t_j).

    paths has shape (count, M, n_points); path i was drawn from the
    substream keyed by (seed, start_index + i).
    """

    grid: TimeGrid
    paths: np.ndarray
    seed: int
    start_index: int

    @property
    def count(self) -> int:
        return self.paths.shape[0]

    @property
    def n_channels(self) -> int:
        return self.paths.shape[1]

    def path(self, i: int) -> np.ndarray:
        return self.paths[i]


def _standard_complex(seed: int, index: int, dim: int) -> np.ndarray:
    """Standard circular complex normals from the (seed, index) substream.

    Real and imaginary parts are independent with variance 1/2 each,
    drawn as one length-2*dim standard-normal block (first the real
    parts, then the imaginary parts).
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    raw = np.random.Generator(np.random.PCG64(ss)).standard_normal(2 * dim)
    return (raw[:dim] + 1j * raw[dim:]) / np.sqrt(2.0)


_CANON_BLOCK = 256


def sample_noise(
    factor: CovarianceFactor, seed: int, count: int, start_index: int = 0
) -> NoisePathBatch:
    """Draw `count` paths for absolute indices start_index..start_index+count-1.

    The factor is applied to canonical blocks of 256 absolute indices at
    a time (computing a whole block and slicing out the requested
    columns), so a path's values depend only on (seed, absolute index),
    never on how a batch is partitioned: two half-batches concatenate
    bit-for-bit into the full batch.
    """
    if count < 1:
        raise VeeQSDError(f"count must be >= 1, got {count}")
    D = factor.dim
    M = factor.n_channels
    n = factor.grid.n_points
    out = np.empty((count, D), dtype=complex)
    first = start_index // _CANON_BLOCK
    last = (start_index + count - 1) // _CANON_BLOCK
    for b in range(first, last + 1):
        lo = b * _CANON_BLOCK
        w = np.empty((D, _CANON_BLOCK), dtype=complex)
        for i in range(_CANON_BLOCK):
            w[:, i] = _standard_complex(seed, lo + i, D)
        z_block = factor.factor @ w
        s = max(start_index, lo)
        e = min(start_index + count, lo + _CANON_BLOCK)
        out[s - start_index : e - start_index] = z_block[:, s - lo : e - lo].T
    paths = out.reshape(count, M, n)
    return NoisePathBatch(grid=factor.grid, paths=paths.conj(), seed=seed, start_index=start_index)


class ShiftAccumulator:
    """Running trapezoidal evaluation of the noise-recentering integral.

    The recentering that makes the norm-preserving unraveling reproduce
    the density matrix is the mean of the conjugated noise under the
    norm-squared-tilted measure; Gaussian integration by parts gives

        shift_m(t) = sum_n int_0^t conj(alpha_mn(t, s)) <L_n^dag>_s ds,

    i.e. the *conjugated* kernel weighs the raising-operator expectation
    history. (The unconjugated kernel produces a systematic ensemble
    bias for off-resonant channels; the ensemble-versus-master oracle
    pins the conjugated form.)

    The integrand's t-dependence factors as
    exp(-(gamma_m - i*Omega_m) * (t - s)), so the trapezoid sum over all
    past grid points updates in O(M^2) per step: advancing from t_k to
    t_{k+1} discounts the stored sum and upgrades the old endpoint from
    half to full weight. The accumulated shift at the current grid time
    is exactly the full trapezoid over the supplied history.

    With convention="sum" the integrand carries the summed-over
    expectation history h_n; convention="literal" pins it to h_m instead.
    Supports arbitrary leading batch dimensions on the histories.
    """

    def __init__(self, kernel: CorrelationKernel, dt: float, batch_shape=(), convention: str = "sum"):
        if convention not in ("sum", "literal"):
            raise VeeQSDError(f"unknown shift convention {convention!r}")
        self.convention = convention
        self.dt = dt
        M = kernel.n_channels
        self.pref = kernel_at_zero(kernel).conj()  # conj(C_mn)
        g = np.array([c.gamma - 1j * c.Omega for c in kernel.channels])
        self.discount = np.exp(-g * dt)  # per left index m
        if convention == "sum":
            self.J = np.zeros(batch_shape + (M, M), dtype=complex)
        else:
            self.J = np.zeros(batch_shape + (M,), dtype=complex)

    def advance(self, h_prev: np.ndarray, h_new: np.ndarray) -> None:
        """Push the step [t_k, t_k+1]; h_* are expectation values at the two ends, shape (..., M)."""
        half = 0.5 * self.dt
        if self.convention == "sum":
            self.J = self.discount[..., :, None] * (self.J + half * h_prev[..., None, :]) \
                + half * h_new[..., None, :]
        else:
            self.J = self.discount * (self.J + half * h_prev) + half * h_new

    def shift(self) -> np.ndarray:
        """Current shift values, shape (..., M)."""
        if self.convention == "sum":
            return np.einsum("mn,...mn->...m", self.pref, self.J)
        return self.pref.sum(axis=1) * self.J


def girsanov_shift(
    path: np.ndarray,
    kernel: CorrelationKernel,
    expectation_history: np.ndarray,
    grid: TimeGrid,
    convention: str = "sum",
) -> np.ndarray:
    """Shifted path z*_m(t) + sum_n integral_0^t conj(alpha_mn(t,s)) <L_n^dag>_s ds.

    The history holds the raising-operator expectations on the same grid,
    shape (M, n_points). The integral is the causal trapezoid over s <= t
    at every grid point; at t = 0 the shift vanishes. See
    ShiftAccumulator for why the kernel enters conjugated.
    """
    path = np.asarray(path, dtype=complex)
    hist = np.asarray(expectation_history, dtype=complex)
    M = kernel.n_channels
    n = grid.n_points
    if path.shape != (M, n) or hist.shape != (M, n):
        raise VeeQSDError(
            f"path and history must have shape {(M, n)}, got {path.shape} and {hist.shape}"
        )
    acc = ShiftAccumulator(kernel, grid.dt, convention=convention)
    shifts = np.zeros((n, M), dtype=complex)
    for k in range(n - 1):
        acc.advance(hist[:, k], hist[:, k + 1])
        shifts[k + 1] = acc.shift()
    return path + shifts.T


def dump_noise_batch(batch: NoisePathBatch, path) -> None:
    """Write a batch to the documented binary layout.

    Layout: 8-byte magic "VQSDNB01"; little-endian header
    (uint32 M, uint32 n_points, float64 dt, uint64 seed, uint32 count,
    uint32 start_index); then count*M*n_points complex128 values in C
    order (path-major, then channel, then time).
    """
    M = batch.n_channels
    with open(path, "wb") as fh:
        fh.write(_DUMP_MAGIC)
        fh.write(
            _DUMP_HEADER.pack(
                M, batch.grid.n_points, batch.grid.dt, batch.seed, batch.count, batch.start_index
            )
        )
        fh.write(np.ascontiguousarray(batch.paths, dtype="<c16").tobytes())


def load_noise_batch(path) -> NoisePathBatch:
    """Read a batch written by dump_noise_batch."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_DUMP_MAGIC))
        if magic != _DUMP_MAGIC:
            raise VeeQSDError(f"not a noise batch file (magic {magic!r})")
        M, n_points, dt, seed, count, start_index = _DUMP_HEADER.unpack(
            fh.read(_DUMP_HEADER.size)
        )
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != count * M * n_points:
        raise VeeQSDError("noise batch payload size does not match its header")
    grid = TimeGrid(dt=dt, n_steps=n_points - 1)
    return NoisePathBatch(
        grid=grid,
        paths=data.reshape(count, M, n_points).copy(),
        seed=seed,
        start_index=start_index,
    )
