"""Exponential-Euler stepping kernels shared by the SDE and SPDE integrators.

All kernels work on batches: rows are independent replicas, columns are time
nodes.  The noise increment over a step is weighted by ``phi1(z)``, the mean
of the exponential kernel over the step, which treats the driving path as
linear within each step.  That makes the stationary variance second order in
the step size.
"""

from __future__ import annotations

import numpy as np

from .errors import BlowUpError

#: Default magnitude guard for trajectories.
BLOWUP_GUARD = 1e6


def phi1(z) -> np.ndarray:
    """``(exp(z) - 1) / z`` with the removable singularity at 0 filled in."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    with np.errstate(over="ignore"):
        return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def linear_step_factors(log_growth: np.ndarray):
    """Propagator ``exp(z)`` and noise weight ``phi1(z)`` for step exponents ``z``."""
    z = np.asarray(log_growth, dtype=float)
    return np.exp(z), phi1(z)


def integrate_linear(E: np.ndarray, w: np.ndarray, scale: float, dW: np.ndarray,
                     x0=0.0, guard: float = BLOWUP_GUARD) -> np.ndarray:
    """Iterate ``x[n+1] = E[n] x[n] + scale * w[n] * dW[..., n]``.

    ``E`` and ``w`` broadcast against ``dW[..., n]`` (per-step scalars, or per-mode
    arrays for spectral systems).  Returns states with one extra trailing node.
    """
    steps = dW.shape[-1]
    # time-major working copies keep every step contiguous
    b = np.ascontiguousarray(np.moveaxis(scale * (w * dW), -1, 0))
    Et = np.ascontiguousarray(np.moveaxis(np.asarray(E, dtype=float), -1, 0))
    x = np.empty((steps + 1,) + dW.shape[:-1])
    x[0] = x0
    for n in range(steps):
        x[n + 1] = Et[n] * x[n] + b[n]
    if not np.isfinite(x).all() or np.abs(x).max(initial=0.0) > guard:
        raise BlowUpError(f"trajectory exceeded the guard {guard:g}")
    return np.moveaxis(x, 0, -1)


def integrate_nonlinear(f, df_dx, t: np.ndarray, eps: float, scale: float, dW: np.ndarray,
                        x0, guard: float = BLOWUP_GUARD) -> np.ndarray:
    """Exponential Euler for ``dx = f(t,x)/eps dt + scale dW`` with per-step linearisation.

    Each step freezes ``J = df_dx(t_n, x_n)`` and advances
    ``x + dt*phi1(J dt/eps) f/eps + scale*phi1(J dt/eps) dW``, which is exact
    for the deterministic part when ``f`` is linear in ``x``.
    """
    steps = dW.shape[-1]
    dWt = np.ascontiguousarray(np.moveaxis(dW, -1, 0))
    x = np.empty((steps + 1,) + dW.shape[:-1])
    x[0] = x0
    for n in range(steps):
        h = t[n + 1] - t[n]
        xn = x[n]
        p = phi1(df_dx(t[n], xn) * (h / eps))
        x[n + 1] = xn + p * (h / eps * f(t[n], xn) + scale * dWt[n])
        if not np.isfinite(x[n + 1]).all() or np.abs(x[n + 1]).max() > guard:
            raise BlowUpError(f"trajectory exceeded the guard {guard:g} at t={t[n + 1]:.6g}")
    return np.moveaxis(x, 0, -1)
