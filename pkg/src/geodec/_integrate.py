"""Fixed-step classical Runge-Kutta helpers.

Fixed-step RK4 is used everywhere (coefficient ODEs, trajectory pairs,
density matrices) so reruns are bitwise reproducible; accuracy is checked
in the tests by step halving rather than by adaptive control in production.
"""

from __future__ import annotations

import numpy as np


class BlowUpError(RuntimeError):
    """Numerical blow-up during fixed-step integration."""

    def __init__(self, t: float, magnitude: float):
        super().__init__(
            f"integration blow-up at t = {t:g} (|y| = {magnitude:.3g}); "
            "reduce dt or check parameters"
        )
        self.t = t
        self.magnitude = magnitude


def rk4_tabulate(f, y0, t0: float, h: float, n_steps: int, blowup: float = 1e6):
    """Integrate y' = f(t, y) with step h, returning y at all n_steps+1 nodes.

    y0 may be scalar or ndarray; the output stacks states along axis 0.
    """
    y = np.asarray(y0, dtype=complex)
    out = np.empty((n_steps + 1,) + y.shape, dtype=complex)
    out[0] = y
    for k in range(n_steps):
        t = t0 + k * h
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        mag = np.max(np.abs(y))
        if not np.isfinite(mag) or mag > blowup:
            raise BlowUpError(t + h, float(mag))
        out[k + 1] = y
    return out


def cumtrapz(y: np.ndarray, dx: float, axis: int = -1) -> np.ndarray:
    """Cumulative trapezoid with a leading zero, along ``axis``."""
    y = np.moveaxis(np.asarray(y), axis, -1)
    out = np.zeros_like(y)
    np.cumsum(0.5 * dx * (y[..., 1:] + y[..., :-1]), axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)


def cumsimps_half_grid(y_half: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative Simpson integral of half-step samples, at full-grid nodes.

    ``y_half`` has 2*n+1 samples spaced dt/2; the result has n+1 values,
    value k being the Simpson estimate of the integral up to t_k.
    """
    y = np.asarray(y_half)
    n = (y.shape[-1] - 1) // 2
    seg = (dt / 6.0) * (y[..., 0:-2:2] + 4.0 * y[..., 1:-1:2] + y[..., 2::2])
    out = np.zeros(y.shape[:-1] + (n + 1,), dtype=seg.dtype)
    np.cumsum(seg, axis=-1, out=out[..., 1:])
    return out
