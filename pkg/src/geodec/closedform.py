"""Closed-form phase expressions used as independent oracles.

All branch-carrying expressions share the unwrapping utility of
``geomphase`` (continuous argument along the time axis), so oracle and
pipeline cannot disagree on branch conventions.  Scalar-time entry points
evaluate on an internal fine grid from 0 to t to resolve the branch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import BathParams, TimeGrid, kernel_integral_running
from .geomphase import unwrap_arg
from .models import solve_dissipative_F
from ._integrate import cumsimps_half_grid

__all__ = [
    "ClosedFormResult",
    "dissipative_avg_total_phase",
    "dissipative_avg_dyn_phase",
    "dissipative_avg_phase_series",
    "markov_phase",
    "lambda_expansion_phase",
    "gamma_expansion_leading",
    "dephasing_avg_phases",
    "dephasing_avg_phase_series",
    "closed_system_phase",
]

_BRANCH_GRID = 4096


@dataclass(frozen=True)
class ClosedFormResult:
    value: complex
    formula_id: str
    inputs: dict


def _unwrapped_log(h: np.ndarray) -> np.ndarray:
    """log with the argument unwrapped along the last axis."""
    mag = np.abs(h)
    if np.any(mag < 1e-12):
        raise ValueError("log argument magnitude below 1e-12; branch undefined")
    return np.log(mag) + 1j * unwrap_arg(h)


def _closed_system_arg(omega: float, theta: float, t_grid: np.ndarray) -> np.ndarray:
    """Unwrapped arg(cos(wt/2) - i*cos(theta)*sin(wt/2)) along t_grid."""
    half = 0.5 * omega * t_grid
    c = np.cos(half) - 1j * np.cos(theta) * np.sin(half)
    return unwrap_arg(c)


def _t_grid(t: float) -> np.ndarray:
    return np.linspace(0.0, t, _BRANCH_GRID)


def dissipative_avg_phase_series(
    omega: float,
    lam: float,
    bath: BathParams,
    theta: float,
    grid: TimeGrid,
    f_half: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ensemble-averaged (beta_tot, beta_dyn, beta) of the dissipative model.

    Evaluates the averaged-total-phase log expression with
    g(t) = exp(-lam * int_0^t F) and the averaged dynamical integral
    -int [ (omega/2) cos(theta) - (i*lam*F/2)(cos(theta)+1) ], both on the
    full grid.  ``f_half`` may supply a precomputed F on the half grid.
    """
    if f_half is None:
        f_half = solve_dissipative_F(omega, lam, bath, grid)
    t = grid.times()
    cth = np.cos(theta)
    g = np.exp(-lam * cumsimps_half_grid(f_half, grid.dt))
    e = np.exp(1j * omega * t)
    num = g * (g * (cth + 1.0) - (cth - 1.0) * e)
    den = -g * (cth - 1.0) + (cth + 1.0) * e
    beta_tot = -0.5j * _unwrapped_log(num / den)
    integrand = 0.5 * omega * cth - 0.5j * lam * f_half * (cth + 1.0)
    beta_dyn = -cumsimps_half_grid(integrand, grid.dt)
    return beta_tot, beta_dyn, beta_tot - beta_dyn


def dissipative_avg_total_phase(
    omega: float,
    lam: float,
    bath: BathParams,
    theta: float,
    grid: TimeGrid,
    f_half: np.ndarray | None = None,
) -> complex:
    """Averaged dissipative total phase at the final grid time."""
    tot, _, _ = dissipative_avg_phase_series(omega, lam, bath, theta, grid, f_half)
    return complex(tot[-1])


def dissipative_avg_dyn_phase(
    omega: float,
    lam: float,
    theta: float,
    grid: TimeGrid,
    f_half: np.ndarray,
) -> complex:
    """Averaged dissipative dynamical phase at the final grid time."""
    cth = np.cos(theta)
    integrand = 0.5 * omega * cth - 0.5j * lam * f_half * (cth + 1.0)
    return complex(-cumsimps_half_grid(integrand, grid.dt)[-1])


def _atanh(x: float) -> float:
    if abs(x) >= 1.0:
        raise ValueError(f"atanh argument out of domain: {x}")
    return 0.5 * np.log((1.0 + x) / (1.0 - x))


def markov_phase(lam: float, theta: float) -> complex:
    """Markov-limit averaged geometric phase at t = 2*pi/omega.

    beta_M = pi - (i/2) * [-2*atanh(cos(theta)*tanh(pi*lam^2/2))
                           + pi*cos(theta)*(lam^2 + 2i)]
    """
    cth = np.cos(theta)
    x = cth * np.tanh(0.5 * np.pi * lam**2)
    bracket = -2.0 * _atanh(x) + np.pi * cth * (lam**2 + 2j)
    return complex(np.pi - 0.5j * bracket)


def lambda_expansion_phase(gamma: float, theta: float, t: float, lam: float) -> complex:
    """Small-coupling expansion of the dissipative geometric phase.

    Closed-system terms plus the explicit O(lam^2) coefficient, in the
    omega0 = 0, omega = 1 convention.  Accurate to O(lam^4).
    """
    cth = np.cos(theta)
    denom = cth**2 * np.sin(0.5 * t) ** 2 + np.cos(0.5 * t) ** 2
    if abs(denom) < 1e-12:
        raise ValueError("expansion denominator vanishes at this (theta, t)")
    closed = 0.5 * t * cth + _closed_system_arg(1.0, theta, _t_grid(t))[-1]
    s = np.sin(0.5 * theta) ** 2 * cth * (cth + 1.0)
    pref = (
        1j
        * gamma
        * (np.exp(1j * t) - 1.0) ** 2
        * s
        * np.exp(-gamma * t)
        / (8.0 * (gamma - 1j) ** 2 * denom)
    )
    tail = 1.0 + np.exp((gamma - 1j) * t) * (gamma * t - 1j * t - 1.0)
    return complex(closed - pref * tail * lam**2)


def gamma_expansion_leading(lam: float, theta: float, t: float) -> complex:
    """Coefficient of the O(gamma) term of the dissipative geometric phase.

    Returned without the factor gamma; omega0 = 0, omega = 1 convention.
    """
    cth = np.cos(theta)
    denom = np.cos(2.0 * theta) + 2.0 * np.sin(theta) ** 2 * np.cos(t) + 3.0
    if abs(denom) < 1e-12:
        raise ValueError("expansion denominator vanishes at this (theta, t)")
    s = np.sin(0.5 * theta) ** 2 * cth * (cth + 1.0)
    return complex(
        -2.0
        * lam**2
        * np.sin(0.5 * t) ** 2
        * (t - np.sin(t) + 1j * np.cos(t) - 1j)
        / denom
        * s
    )


def dephasing_avg_phase_series(
    omega: float, lam: float, bath: BathParams, theta: float, grid: TimeGrid
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ensemble-averaged (beta_tot, beta_dyn, beta) series for dephasing."""
    t = grid.times()
    ia = 1j * lam**2 * kernel_integral_running(bath, t)
    arg = _closed_system_arg(omega, theta, t)
    half = 0.5 * omega * t * np.cos(theta)
    beta_tot = ia + arg
    beta_dyn = ia - half
    return beta_tot, beta_dyn, beta_tot - beta_dyn


def dephasing_avg_phases(
    omega: float, lam: float, bath: BathParams, theta: float, t: float
) -> tuple[complex, complex, complex]:
    """Ensemble-averaged (beta_tot, beta_dyn, beta) of the dephasing model.

    beta_tot = i*lam^2*int_0^t A + arg-term, beta_dyn = i*lam^2*int_0^t A
    - (wt/2)cos(theta); the geometric part is the closed-system expression
    (dephasing decoherence is purely dynamical).
    """
    ia = 1j * lam**2 * kernel_integral_running(bath, t)
    arg_term = _closed_system_arg(omega, theta, _t_grid(t))[-1]
    half = 0.5 * omega * t * np.cos(theta)
    beta_tot = ia + arg_term
    beta_dyn = ia - half
    return complex(beta_tot), complex(beta_dyn), complex(half + arg_term)


def closed_system_phase(omega: float, theta: float, t: float) -> complex:
    """Closed-system geometric phase (wt/2)cos(theta) + unwrapped arg term."""
    return complex(
        0.5 * omega * t * np.cos(theta) + _closed_system_arg(omega, theta, _t_grid(t))[-1]
    )
