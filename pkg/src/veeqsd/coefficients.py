"""Time-dependent coefficient fields carrying the reservoir memory.

The reduced dynamics of the vee system is governed by a matrix field
F(t) = [F_mn(t)]. Three routes compute it:

* `solve_F_ou` integrates the closed Riccati system the OU kernels induce,

      dF_mn/dt = alpha_mn(0) - (gamma_m + i*(Omega_m - omega_n)) F_mn
                 + sum_p F_mp F_pn,       F(0) = 0,

  which can blow up in finite time (genuine poles of F; the propagator
  route in `veeqsd.master` stays regular through them).

* `solve_F_general` works for arbitrary kernels: it advances the two-time
  family f_qp(t, s) (df/dt = f (i*diag(omega) + F(t)), f(s, s) = identity)
  jointly in t while building F(t) = integral_0^t alpha(t,s) f(t,s) ds by
  trapezoidal quadrature.

* For a single coupling channel with degenerate upper levels, F is the
  rank-one projector onto the bright superposition times a scalar decay
  function Q(t) available in closed form (`analytic_Q`,
  `exp_integral_Q`, `analytic_field`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .correlations import CorrelationKernel, kernel_at_zero
from .errors import NumericalError, PoleError, QuadratureInstabilityError, VeeQSDError
from .stepping import rk4_step
from .system import SystemSpec, TimeGrid

# |F| beyond this multiple of kappa^2 is treated as a pole of the Riccati flow
POLE_THRESHOLD_FACTOR = 1e6

_GENERAL_MAX_POINTS = 2049


# ---------------------------------------------------------------------------
# single-channel closed forms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SingleChannelParams:
    """Derived scalars of the degenerate single-channel reduction.

    delta    = omega0 - Omega
    beta     = -(gamma - i*delta) / 2
    eta      = principal sqrt(kappa_sq * gamma / 2 - beta^2)
    kappa_sq = sum of channel decay rates |kappa_m|^2
    """

    gamma: float
    kappa_sq: float
    delta: float

    @property
    def beta(self) -> complex:
        return -(self.gamma - 1j * self.delta) / 2.0

    @property
    def eta(self) -> complex:
        return np.sqrt(complex(self.kappa_sq * self.gamma / 2.0 - self.beta**2))


def single_channel_params(system: SystemSpec, kernel: CorrelationKernel) -> SingleChannelParams:
    """Extract SingleChannelParams, validating the single-channel degenerate setup."""
    gammas = {c.gamma for c in kernel.channels}
    Omegas = {c.Omega for c in kernel.channels}
    if len(gammas) != 1 or len(Omegas) != 1:
        raise VeeQSDError("single-channel reduction requires equal bandwidths and central frequencies")
    if len(set(system.energies)) != 1:
        raise VeeQSDError("single-channel reduction requires degenerate upper levels")
    gamma = kernel.channels[0].gamma
    Omega = kernel.channels[0].Omega
    omega0 = system.energies[0]
    kappa_sq = sum(c.Gamma for c in kernel.channels)
    return SingleChannelParams(gamma=gamma, kappa_sq=kappa_sq, delta=omega0 - Omega)


def _stable_eta(params: SingleChannelParams) -> complex:
    # Q and exp_integral_Q are invariant under eta -> -eta; pick the sign
    # with Im(eta) >= 0 so exp(2i*eta*t) never grows.
    eta = params.eta
    if eta.imag < 0 or (eta.imag == 0 and eta.real < 0):
        eta = -eta
    return eta


_SMALL_ETA_T = 1e-4


def _q_pieces(params: SingleChannelParams, t: np.ndarray):
    """Overflow-safe pieces of the closed forms.

    Returns (sin_part, bracket_part, expint, scale), where
    Q = (kappa^2 gamma / 2) * sin_part / bracket_part (the common
    exponential prefactor of the textbook sin/cos form cancels in the
    ratio and is never materialized), expint = exp(-int_0^t Q ds)
    evaluated with combined exponents so neither mode overflows, and
    scale bounds the cancellation inside bracket_part for pole checks.
    """
    beta = params.beta
    eta = _stable_eta(params)
    t = np.asarray(t, dtype=float)
    u = (eta * t) ** 2

    small = np.abs(eta * t) < _SMALL_ETA_T
    # series in u = (eta t)^2, truncation O(u^3)
    sin_s = t * (1.0 - u / 6.0 + u * u / 120.0)
    bracket_s = (1.0 - beta * t) - u * (0.5 - beta * t / 6.0) + u * u * (1.0 / 24.0 - beta * t / 120.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore", under="ignore"):
        expint_s = np.exp(beta * t) * bracket_s

        if eta != 0:
            # Im(eta) >= 0, so |r| <= 1; the two modes beta -/+ i*eta both
            # have non-positive real part for a passive system
            r = np.exp(2j * eta * t)
            sin_e = (r - 1.0) / (2j * eta)
            term_plus = (eta + 1j * beta) * r
            term_minus = eta - 1j * beta
            bracket_e = (term_plus + term_minus) / (2.0 * eta)
            scale_e = (np.abs(term_plus) + np.abs(term_minus)) / (2.0 * abs(eta))
            expint_e = (
                (eta + 1j * beta) * np.exp((beta + 1j * eta) * t)
                + (eta - 1j * beta) * np.exp((beta - 1j * eta) * t)
            ) / (2.0 * eta)
        else:
            shape = np.broadcast_shapes(t.shape)
            sin_e = np.full(shape, np.nan, dtype=complex)
            bracket_e = np.full(shape, np.nan, dtype=complex)
            expint_e = np.full(shape, np.nan, dtype=complex)
            scale_e = np.ones(shape)

    sin_part = np.where(small, sin_s, sin_e)
    bracket_part = np.where(small, bracket_s, bracket_e)
    expint = np.where(small, expint_s, expint_e)
    scale = np.where(small, np.maximum(1.0, np.abs(beta) * np.abs(t)), scale_e)
    return sin_part, bracket_part, expint, scale


def analytic_Q(params: SingleChannelParams, t):
    """Closed-form scalar decay function Q(t), with Q(0) = 0.

    Q solves dQ/dt = (Q + beta)^2 + eta^2. Raises PoleError when the
    denominator magnitude falls below 1e-12 of its cancellation scale
    (Q has genuine complex infinities there).
    """
    scalar = np.ndim(t) == 0
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    sin_part, bracket_part, _, scale = _q_pieces(params, t_arr)
    bad = np.abs(bracket_part) < 1e-12 * scale
    if bad.any():
        raise PoleError(
            f"Q has a pole at t = {t_arr[bad][0]!r}", pole_time=float(t_arr[bad][0])
        )
    q = params.kappa_sq * params.gamma / 2.0 * sin_part / bracket_part
    return complex(q[0]) if scalar else q


def exp_integral_Q(params: SingleChannelParams, t):
    """exp(-integral_0^t Q ds) = e^{beta t} (eta cos(eta t) - beta sin(eta t)) / eta.

    Finite for all t, including the pole times of Q, where it vanishes.
    """
    scalar = np.ndim(t) == 0
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    _, _, expint, _ = _q_pieces(params, t_arr)
    return complex(expint[0]) if scalar else expint


def pole_times(params: SingleChannelParams, t_max: float) -> list[float]:
    """Analytic pole times of Q in (0, t_max] for the real-eta regime.

    Poles solve tan(eta t) = eta / beta. Raises unless beta and eta are
    real to within 1e-12 of their magnitudes (elsewhere the zeros move
    off the real time axis).
    """
    beta = params.beta
    eta = _stable_eta(params)
    if abs(beta.imag) > 1e-12 * max(abs(beta), 1.0) or abs(eta.imag) > 1e-12 * max(abs(eta), 1.0):
        raise VeeQSDError("analytic pole times require real beta and eta")
    b, e = beta.real, eta.real
    if e == 0:
        # bracket = 1 - beta t: single pole at 1/beta, only for beta > 0
        return [1.0 / b] if b > 0 and 1.0 / b <= t_max else []
    base = math.atan2(e, b) / e  # first solution of tan(eta t) = eta/beta with t > 0
    period = math.pi / e
    out = []
    t = base
    while t <= t_max + 1e-15:
        if t > 1e-15:
            out.append(t)
        t += period
    return out


# ---------------------------------------------------------------------------
# coefficient field container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientField:
    """F(t) sampled on a grid, with midpoint values for staged integrators.

    values[k] = F(t_k) for k < n_valid; mid_values[k] = F(t_k + dt/2).
    Entries at and beyond a flagged pole are NaN.
    """

    grid: TimeGrid
    values: np.ndarray        # (n_points, M, M)
    mid_values: np.ndarray    # (n_steps, M, M)
    source: str
    n_valid: int
    pole_time: float | None = None
    error_estimate: float = 0.0

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def has_pole(self) -> bool:
        return self.pole_time is not None

    def require_window(self, n_points: int) -> None:
        """Raise PoleError unless the first n_points grid values are valid."""
        if n_points > self.n_valid:
            raise PoleError(
                f"coefficient field is only valid for {self.n_valid} of {n_points} points"
                + (f" (pole near t = {self.pole_time:.6g})" if self.pole_time is not None else ""),
                pole_time=self.pole_time,
            )


def analytic_field(system: SystemSpec, kernel: CorrelationKernel, grid: TimeGrid) -> CoefficientField:
    """Single-channel degenerate field F(t) = projector * Q(t) in closed form.

    In the oscillatory regime (real beta and eta) the field is truncated
    at the first analytic pole of Q inside the grid, mirroring the
    Riccati solver's halt-and-flag behavior.
    """
    params = single_channel_params(system, kernel)
    kap = np.array([c.kappa for c in kernel.channels], dtype=complex)
    proj = np.outer(kap.conj(), kap) / params.kappa_sq

    times = grid.times
    mids = times[:-1] + grid.dt / 2.0

    n_valid = grid.n_points
    pole_time = None
    try:
        poles = pole_times(params, grid.t_final)
    except VeeQSDError:
        poles = []
    if poles:
        pole_time = poles[0]
        n_valid = int(np.searchsorted(times, pole_time, side="left"))

    def q_values(ts):
        sin_part, bracket_part, _, scale = _q_pieces(params, ts)
        bad = np.abs(bracket_part) < 1e-12 * scale
        q = np.empty(ts.shape, dtype=complex)
        q[~bad] = params.kappa_sq * params.gamma / 2.0 * sin_part[~bad] / bracket_part[~bad]
        q[bad] = np.nan
        if pole_time is not None:
            q[ts >= pole_time - 1e-12] = np.nan
        return q

    values = q_values(times)[:, None, None] * proj[None, :, :]
    mid_values = q_values(mids)[:, None, None] * proj[None, :, :]
    return CoefficientField(
        grid=grid, values=values, mid_values=mid_values,
        source="analytic-single-channel", n_valid=n_valid, pole_time=pole_time,
    )


# ---------------------------------------------------------------------------
# OU Riccati solver
# ---------------------------------------------------------------------------

def _riccati_rhs(alpha0: np.ndarray, decay: np.ndarray, omega: np.ndarray):
    def rhs(_t, F):
        return alpha0 - decay[:, None] * F + 1j * F * omega[None, :] + F @ F
    return rhs


def _walk_to_pole(rhs, t0: float, F0: np.ndarray, h0: float, threshold: float) -> tuple[float, bool]:
    """Advance into a Riccati pole with shrinking steps until |F| crosses threshold.

    Near a pole |F| ~ 1/(t* - t); keeping h*|F| small both resolves the
    approach (the iterate tracks the true divergence, so the reported
    time sits within ~1/threshold of the true pole) and bounds the
    growth per step. Returns (time, crossed); crossed is False when |F|
    stalls below the threshold, which means the trigger was resolution
    trouble rather than a pole.
    """
    t, F = t0, F0.copy()
    h = h0
    for _ in range(800):
        fmax = float(np.abs(F).max())
        if fmax > 2.5 * threshold:
            return t, True
        h = min(h, 0.02 / max(fmax, 1.0 / h0))
        if h < 1e-15 * max(t, 1.0):
            return t, False
        F_try = rk4_step(rhs, t, F, h)
        # reject steps that jump across the pole (|F| must grow monotonically
        # on the approach) or lose finiteness
        ok = np.isfinite(F_try).all()
        if ok:
            fnew = float(np.abs(F_try).max())
            ok = fnew >= 0.8 * fmax and fnew <= 100.0 * max(fmax, 1.0)
        if not ok:
            h *= 0.5
            continue
        t, F = t + h, F_try
    return t, False


def solve_F_ou(
    system: SystemSpec,
    kernel: CorrelationKernel,
    grid: TimeGrid,
    pole_threshold_factor: float = POLE_THRESHOLD_FACTOR,
) -> CoefficientField:
    """Integrate the OU coefficient equations with F(0) = 0.

    Classical RK4 at internal step dt/2 (grid values and midpoints are
    both solver points); the reported error_estimate is the max grid
    deviation between this run and a comparison run at step dt, i.e. a
    step-halving check with the finer run the one returned. If the flow
    blows up, integration halts, the pole is localized by shrinking
    steps until |F_mn| exceeds pole_threshold_factor * kappa^2, and the
    field is flagged rather than failed.
    """
    M = system.upper_count
    if kernel.n_channels != M:
        raise VeeQSDError(f"kernel has {kernel.n_channels} channels for {M} upper levels")
    alpha0 = kernel_at_zero(kernel)
    decay = np.array([c.gamma + 1j * c.Omega for c in kernel.channels])
    omega = np.asarray(system.energies, dtype=float)
    kappa_sq = sum(c.Gamma for c in kernel.channels)
    threshold = pole_threshold_factor * max(kappa_sq, 1e-300)
    rhs = _riccati_rhs(alpha0, decay, omega)

    decay_col = decay[:, None]
    iw_row = 1j * omega[None, :]

    def sweep(h: float, n_sub: int, locate_pole: bool):
        """March n_sub RK4 steps of size h; return samples and pole info.

        The inner loop is allocation-free: stage slopes and the trial
        state reuse preallocated work arrays.
        """
        samples = np.full((n_sub + 1, M, M), np.nan, dtype=complex)
        samples[0] = 0.0
        F = np.zeros((M, M), dtype=complex)
        k1, k2, k3, k4 = (np.empty((M, M), dtype=complex) for _ in range(4))
        trial = np.empty((M, M), dtype=complex)
        tmp = np.empty((M, M), dtype=complex)

        def rhs_into(A, out):
            np.matmul(A, A, out=out)
            out += alpha0
            np.multiply(decay_col, A, out=tmp)
            out -= tmp
            np.multiply(A, iw_row, out=tmp)
            out += tmp

        for i in range(n_sub):
            rhs_into(F, k1)
            np.multiply(k1, 0.5 * h, out=trial); trial += F
            rhs_into(trial, k2)
            np.multiply(k2, 0.5 * h, out=trial); trial += F
            rhs_into(trial, k3)
            np.multiply(k3, h, out=trial); trial += F
            rhs_into(trial, k4)
            k2 += k3; k2 += k2; k2 += k1; k2 += k4; k2 *= h / 6.0
            F_new = F + k2
            fmax = float(np.abs(F_new).max()) if np.isfinite(F_new).all() else np.inf
            if (not np.isfinite(F_new).all()) or fmax > threshold or fmax * h > 0.25:
                if not locate_pole:
                    return samples, i, None
                pole_t, crossed = _walk_to_pole(rhs, i * h, F, h, threshold)
                if not crossed:
                    raise NumericalError(
                        f"|F| outgrew the step near t = {pole_t:.6g} without reaching the "
                        "pole threshold; refine dt"
                    )
                return samples, i, pole_t
            F = F_new
            samples[i + 1] = F
        return samples, n_sub, None

    n_steps = grid.n_steps
    h = grid.dt / 2.0
    samples, completed, pole_t = sweep(h, 2 * n_steps, locate_pole=True)
    # dt-vs-dt/2 comparison run for the reported error estimate; it may stop
    # early where the coarse step no longer resolves |F|
    coarse, coarse_completed, _ = sweep(grid.dt, n_steps, locate_pole=False)

    n_ok = min(completed // 2, coarse_completed)
    if n_ok > 0:
        err = float(np.abs(samples[: 2 * n_ok + 1 : 2] - coarse[: n_ok + 1]).max())
    else:
        err = 0.0

    values = samples[::2]
    mid_values = samples[1::2]
    n_valid = completed // 2 + 1
    return CoefficientField(
        grid=grid, values=values, mid_values=mid_values, source="ou-ode",
        n_valid=n_valid, pole_time=pole_t, error_estimate=err,
    )


# ---------------------------------------------------------------------------
# general two-time consistency solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoTimeField:
    """f_qp(t_k, s_j) on the triangular grid j <= k (NaN above the diagonal)."""

    grid: TimeGrid
    values: np.ndarray  # (n_points, n_points, M, M)

    def at(self, k: int, j: int) -> np.ndarray:
        if j > k:
            raise VeeQSDError("two-time field is defined for s <= t only")
        return self.values[k, j]


def _as_kernel_fn(kernel, M: int):
    """Adapt a CorrelationKernel or a callable (t, s) -> (M, M) matrix.

    The solver only needs s <= t, so the OU fast path evaluates the
    tau >= 0 branch vectorized over the whole s row.
    """
    if isinstance(kernel, CorrelationKernel):
        if kernel.n_channels != M:
            raise VeeQSDError(f"kernel has {kernel.n_channels} channels for {M} upper levels")
        pref = kernel_at_zero(kernel)
        g_left = np.array([c.gamma + 1j * c.Omega for c in kernel.channels])

        def fn(t: float, s: np.ndarray) -> np.ndarray:
            decay = np.exp(-g_left[None, :] * (t - s)[:, None])  # (len(s), M)
            return pref[None, :, :] * decay[:, :, None]

        return fn

    def fn(t: float, s: np.ndarray) -> np.ndarray:
        out = np.empty((len(s), M, M), dtype=complex)
        for j, sj in enumerate(s):
            out[j] = np.asarray(kernel(t, sj), dtype=complex).reshape(M, M)
        return out

    return fn


def _trapezoid_F(alpha_rows: np.ndarray, f_rows: np.ndarray, dt: float) -> np.ndarray:
    """F(t) = integral alpha(t,s) f(t,s) ds via trapezoid over the active rows."""
    k = len(f_rows) - 1
    if k == 0:
        return np.zeros_like(f_rows[0])
    prod = alpha_rows @ f_rows  # (k+1, M, M)
    w = np.full(k + 1, dt)
    w[0] = w[-1] = dt / 2.0
    return np.tensordot(w, prod, axes=(0, 0))


def solve_F_general(
    system: SystemSpec,
    kernel,
    grid: TimeGrid,
    check_tol: float | None = None,
) -> tuple[TwoTimeField, CoefficientField]:
    """Advance the two-time family and accumulate F(t) for an arbitrary kernel.

    `kernel` is a CorrelationKernel or a callable (t, s) -> M x M array.
    All rows f(., s_j) advance jointly in t with an RK4 step; F at the
    stage times is supplied by a predictor pass (F frozen at the step
    start) followed by one corrector pass with the midpoint average, the
    accuracy being trapezoid-limited either way.

    With check_tol set, the whole solve is repeated at dt/2 and a
    QuadratureInstabilityError is raised if grid values of F disagree
    by more than check_tol.
    """
    if grid.n_points > _GENERAL_MAX_POINTS:
        raise VeeQSDError(
            f"two-time solver is dense in (t, s); {grid.n_points} points exceeds "
            f"the {_GENERAL_MAX_POINTS}-point cap"
        )
    M = system.upper_count
    alpha_fn = _as_kernel_fn(kernel, M)
    omega = np.asarray(system.energies, dtype=float)
    iW = 1j * np.diag(omega)

    def solve_on(g: TimeGrid):
        n = g.n_points
        dt = g.dt
        times = g.times
        f_store = np.full((n, n, M, M), np.nan, dtype=complex)
        F_store = np.empty((n, M, M), dtype=complex)
        eye = np.eye(M, dtype=complex)

        rows = eye[None, :, :].copy()  # f(t_0, s_0)
        f_store[0, 0] = eye
        F_store[0] = 0.0

        for k in range(n - 1):
            t0, t1 = times[k], times[k + 1]
            F0 = F_store[k]

            def advance(Fa, Fb, Fc):
                # RK4 for df/dt = f @ (iW + F(t)) with stage matrices a, mid, c
                B0, Bm, B1 = iW + Fa, iW + Fb, iW + Fc
                k1 = rows @ B0
                k2 = (rows + 0.5 * dt * k1) @ Bm
                k3 = (rows + 0.5 * dt * k2) @ Bm
                k4 = (rows + dt * k3) @ B1
                return rows + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

            alpha_next = alpha_fn(t1, times[: k + 2])

            # predictor: freeze F over the step
            rows_pred = advance(F0, F0, F0)
            full_pred = np.concatenate([rows_pred, eye[None]], axis=0)
            F1_pred = _trapezoid_F(alpha_next, full_pred, dt)

            # corrector: midpoint average
            rows_new = advance(F0, 0.5 * (F0 + F1_pred), F1_pred)
            rows = np.concatenate([rows_new, eye[None]], axis=0)
            F_store[k + 1] = _trapezoid_F(alpha_next, rows, dt)
            f_store[k + 1, : k + 2] = rows
        return f_store, F_store

    f_store, F_store = solve_on(grid)

    if check_tol is not None:
        fine_grid = TimeGrid(dt=grid.dt / 2.0, n_steps=2 * grid.n_steps)
        _, F_fine = solve_on(fine_grid)
        dev = float(np.abs(F_store - F_fine[::2]).max())
        if dev > check_tol:
            raise QuadratureInstabilityError(
                f"two-time solve deviates by {dev:.3e} under step halving (tol {check_tol:.3e})"
            )

    mid_values = 0.5 * (F_store[:-1] + F_store[1:])
    field = CoefficientField(
        grid=grid, values=F_store, mid_values=mid_values, source="general",
        n_valid=grid.n_points,
    )
    return TwoTimeField(grid=grid, values=f_store), field
