"""Generalized Ornstein-Uhlenbeck reservoir correlation kernels.

Each decay channel m carries a complex coupling amplitude kappa_m, a
bandwidth gamma_m > 0, and a central frequency Omega_m. The two-time
cross-correlation between channels m and n is

    alpha_mn(t, s) = C_mn * exp(-(gamma_m + i*Omega_m) * tau),  tau = t - s >= 0,
    alpha_mn(t, s) = C_mn * exp(+(gamma_n - i*Omega_n) * tau),  tau < 0,

with the shared prefactor

    C_mn = conj(kappa_m) * kappa_n * gamma_m * gamma_n
           / (gamma_m + gamma_n + i*(Omega_m - Omega_n)).

For m = n this reduces to the standard OU kernel
Gamma_m * (gamma_m/2) * exp(-gamma_m*|tau|) * exp(-i*Omega_m*tau) with
Gamma_m = |kappa_m|^2, which tends to Gamma_m * delta(tau) as
gamma_m -> inf (the memoryless limit). The kernel family is generated by
quasi-Lorentzian coupling spectra; `coupling_spectrum` returns those, and
the test suite checks the kernel against direct frequency quadrature.

Channel indices in this module are 1-based, matching the level labels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import VeeQSDError


@dataclass(frozen=True)
class OUChannel:
    """One reservoir coupling channel.

    Attributes:
        kappa: complex coupling amplitude, units sqrt(rate).
        gamma: coupling bandwidth (> 0), units rate.
        Omega: central frequency of the coupling, units rate.
    """

    kappa: complex
    gamma: float
    Omega: float

    def __post_init__(self):
        if not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise VeeQSDError(f"channel bandwidth must be positive, got {self.gamma}")
        if not (np.isfinite(self.Omega) and np.isfinite(complex(self.kappa))):
            raise VeeQSDError("channel parameters must be finite")

    @property
    def Gamma(self) -> float:
        """Decay rate |kappa|^2 of the channel."""
        return abs(complex(self.kappa)) ** 2


@dataclass(frozen=True)
class CorrelationKernel:
    """Collection of M channels defining the full matrix kernel alpha_mn."""

    channels: tuple[OUChannel, ...]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def _check_index(self, m: int) -> OUChannel:
        if not 1 <= m <= self.n_channels:
            raise VeeQSDError(f"channel index {m} out of range 1..{self.n_channels}")
        return self.channels[m - 1]


def ou_kernel(*channels: OUChannel) -> CorrelationKernel:
    if not channels:
        raise VeeQSDError("a kernel needs at least one channel")
    return CorrelationKernel(channels=tuple(channels))


def _prefactor(cm: OUChannel, cn: OUChannel) -> complex:
    return (
        np.conj(cm.kappa)
        * cn.kappa
        * cm.gamma
        * cn.gamma
        / (cm.gamma + cn.gamma + 1j * (cm.Omega - cn.Omega))
    )


def alpha(kernel: CorrelationKernel, m: int, n: int, t, s) -> complex | np.ndarray:
    """Evaluate alpha_mn(t, s). Accepts scalar or array times.

    tau = 0 is evaluated on the tau >= 0 branch; both branches agree there.
    """
    cm = kernel._check_index(m)
    cn = kernel._check_index(n)
    tau = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    pref = _prefactor(cm, cn)
    pos = pref * np.exp(-(cm.gamma + 1j * cm.Omega) * np.where(tau >= 0, tau, 0.0))
    neg = pref * np.exp((cn.gamma - 1j * cn.Omega) * np.where(tau < 0, tau, 0.0))
    out = np.where(tau >= 0, pos, neg)
    if np.ndim(t) == 0 and np.ndim(s) == 0:
        return complex(out)
    return out


def alpha_matrix(kernel: CorrelationKernel, t: float, s: float) -> np.ndarray:
    """Full M x M kernel matrix at (t, s)."""
    M = kernel.n_channels
    out = np.empty((M, M), dtype=complex)
    for m in range(1, M + 1):
        for n in range(1, M + 1):
            out[m - 1, n - 1] = alpha(kernel, m, n, t, s)
    return out


def kernel_at_zero(kernel: CorrelationKernel) -> np.ndarray:
    """Equal-time kernel matrix alpha_mn(0): entry (m,n) = C_mn."""
    M = kernel.n_channels
    out = np.empty((M, M), dtype=complex)
    for m in range(M):
        for n in range(M):
            out[m, n] = _prefactor(kernel.channels[m], kernel.channels[n])
    return out


def coupling_spectrum(channel: OUChannel, omega) -> complex | np.ndarray:
    """Quasi-Lorentzian coupling amplitude g(omega) generating the channel.

    g(omega) = kappa / sqrt(2*pi) * gamma / (gamma + i*(omega - Omega)),
    with a flat reservoir mode density. |g|^2 peaks at omega = Omega and
    falls to half power at omega = Omega +/- gamma.
    """
    omega = np.asarray(omega, dtype=float)
    val = (
        channel.kappa
        / np.sqrt(2 * np.pi)
        * channel.gamma
        / (channel.gamma + 1j * (omega - channel.Omega))
    )
    if val.ndim == 0:
        return complex(val)
    return val


def stacked_covariance(kernel: CorrelationKernel, times: np.ndarray) -> np.ndarray:
    """Dense Hermitian covariance of the stacked noise vector.

    Index (m, j) flattens to m * len(times) + j; entry
    [(m, j), (n, k)] = alpha_mn(t_j, t_k). Used by the noise sampler and
    by positivity checks.
    """
    times = np.asarray(times, dtype=float)
    M = kernel.n_channels
    N = times.size
    cov = np.empty((M * N, M * N), dtype=complex)
    tj = times[:, None]
    tk = times[None, :]
    for m in range(1, M + 1):
        for n in range(1, M + 1):
            cov[(m - 1) * N : m * N, (n - 1) * N : n * N] = alpha(kernel, m, n, tj, tk)
    return cov
