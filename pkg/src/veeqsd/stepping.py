"""Fixed-step fourth-order integration helpers.

All solvers in this package march on uniform grids so that coefficient
fields, noise samples, and trajectories stay aligned. The classical RK4
step is used where the right-hand side is smooth; error control is by
comparison against a halved-step rerun rather than adaptive stepping.
"""

from __future__ import annotations


def rk4_step(f, t, y, h):
    """One classical fourth-order step of y' = f(t, y)."""
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
