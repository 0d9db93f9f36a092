"""The three built-in system models and their noise-independent memory
operator coefficients.

Every model is a two- or three-level system with Hamiltonian H_s (possibly
time dependent through a control field), coupling operator L, and a memory
operator Obar(t) = sum_j c_j(t) B_j whose coefficients c_j are pure
functions of the parameters, obtained either in closed form (dephasing) or
by integrating a Riccati-type ODE (dissipative, controlled three-level).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .bath import BathParams, TimeGrid, kernel_integral
from ._integrate import rk4_tabulate

__all__ = [
    "ModelKind",
    "ControlField",
    "ModelSpec",
    "solve_dissipative_F",
    "solve_leo_F",
    "build_model",
]

SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SIGMA_MINUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)


class ModelKind(str, Enum):
    DISSIPATIVE = "dissipative"
    DEPHASING = "dephasing"
    LEO = "leo"

    @property
    def dim(self) -> int:
        return 3 if self is ModelKind.LEO else 2


@dataclass(frozen=True)
class ControlField:
    """Sine-modulated control c(t) = c_x * (1 + sin(Omega_c * t))."""

    c_x: float
    Omega_c: float

    def __call__(self, t):
        return self.c_x * (1.0 + np.sin(self.Omega_c * np.asarray(t)))


@dataclass(frozen=True)
class ModelSpec:
    """Fully assembled model: operators plus tabulated Obar coefficients.

    obar_coeffs has shape (n_coeffs, n_half): one row per basis matrix in
    ``obar_basis``, tabulated on the half-step grid so integrator stages
    never interpolate.
    """

    kind: ModelKind
    omega: float
    lam: float
    bath: BathParams
    theta: float
    grid: TimeGrid
    control: Optional[ControlField] = None
    obar_coeffs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta must be in [0, pi], got {self.theta}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.control is not None and self.kind is not ModelKind.LEO:
            raise ValueError(f"control field is only valid for the {ModelKind.LEO} model")
        if self.obar_coeffs is not None and self.obar_coeffs.shape[-1] != self.grid.n_half:
            raise ValueError("obar_coeffs must be tabulated on the half-step grid")

    @property
    def dim(self) -> int:
        return self.kind.dim

    def initial_state(self) -> np.ndarray:
        c, s = np.cos(self.theta / 2.0), np.sin(self.theta / 2.0)
        if self.dim == 2:
            return np.array([c, s], dtype=complex)
        return np.array([c, s, 0.0], dtype=complex)

    def h_system(self, t) -> np.ndarray:
        """System Hamiltonian (control included) at time t."""
        if self.kind is ModelKind.LEO:
            h = np.diag([self.omega / 2.0, -self.omega / 2.0, 0.0]).astype(complex)
            if self.control is not None:
                h += self.control(t) * np.diag([1.0, 1.0, 0.0])
            return h
        return (self.omega / 2.0) * SIGMA_Z

    def coupling(self) -> np.ndarray:
        if self.kind is ModelKind.DISSIPATIVE:
            return self.lam * SIGMA_MINUS
        if self.kind is ModelKind.DEPHASING:
            return self.lam * SIGMA_Z
        L = np.zeros((3, 3), dtype=complex)
        L[2, 0] = self.lam
        L[2, 1] = self.lam
        return L

    def obar_basis(self) -> np.ndarray:
        """Basis matrices B_j with Obar(t) = sum_j obar_coeffs[j](t) * B_j."""
        if self.kind is ModelKind.DISSIPATIVE:
            return SIGMA_MINUS[None]
        if self.kind is ModelKind.DEPHASING:
            return SIGMA_Z[None]
        b1 = np.zeros((3, 3), dtype=complex)
        b1[2, 0] = 1.0
        b2 = np.zeros((3, 3), dtype=complex)
        b2[2, 1] = 1.0
        return np.stack([b1, b2])


def solve_dissipative_F(
    omega: float, lam: float, bath: BathParams, grid: TimeGrid
) -> np.ndarray:
    """Memory coefficient F(t) of the dissipative model on the half-step grid.

    F solves the Riccati equation

        F' = alpha(0)*lam - [gamma + i*(omega0 - omega)]*F + lam*F**2,  F(0) = 0,

    whose drift alpha(0)*lam = gamma*Gamma*lam/2 reduces to the usual
    gamma*lam/2 at Gamma = 1.  Large gamma drives F toward the Markov value
    lam/2 (at Gamma = 1).
    """
    drift = bath.alpha0 * lam
    mu = bath.gamma + 1j * (bath.omega0 - omega)

    def rhs(t, f):
        return drift - mu * f + lam * f * f

    h = 0.5 * grid.dt
    return rk4_tabulate(rhs, 0.0 + 0.0j, grid.t0, h, grid.n_half - 1)


def solve_leo_F(
    omega: float,
    lam: float,
    bath: BathParams,
    control: Optional[ControlField],
    grid: TimeGrid,
) -> tuple[np.ndarray, np.ndarray]:
    """Coupled memory coefficients (F1, F2) of the controlled three-level model.

    F1' = alpha(0)*lam + (F1/2) * [2*lam*(F1+F2) - 2*gamma + i*omega + 2i*c(t)]
    F2' = alpha(0)*lam + (F2/2) * [2*lam*(F1+F2) - 2*gamma - i*omega + 2i*c(t)]

    with F1(0) = F2(0) = 0.  For omega = 0 the two equations coincide.
    """
    drift = bath.alpha0 * lam

    def c(t):
        return 0.0 if control is None else control(t)

    def rhs(t, y):
        f1, f2 = y
        common = 2.0 * lam * (f1 + f2) - 2.0 * bath.gamma + 2j * c(t)
        return np.array(
            [
                drift + 0.5 * f1 * (common + 1j * omega),
                drift + 0.5 * f2 * (common - 1j * omega),
            ]
        )

    h = 0.5 * grid.dt
    ys = rk4_tabulate(rhs, np.zeros(2, dtype=complex), grid.t0, h, grid.n_half - 1)
    return ys[:, 0], ys[:, 1]


def build_model(
    kind: ModelKind | str,
    omega: float,
    lam: float,
    bath: BathParams,
    theta: float,
    grid: TimeGrid,
    control: Optional[ControlField] = None,
) -> ModelSpec:
    """Assemble a ModelSpec with its Obar coefficients tabulated on ``grid``."""
    kind = ModelKind(kind)
    for name, v in (("omega", omega), ("lambda", lam), ("theta", theta)):
        if not np.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")

    if kind is ModelKind.DISSIPATIVE:
        coeffs = solve_dissipative_F(omega, lam, bath, grid)[None]
    elif kind is ModelKind.DEPHASING:
        coeffs = (lam * kernel_integral(bath, grid.half_times()))[None]
    else:
        f1, f2 = solve_leo_F(omega, lam, bath, control, grid)
        coeffs = np.stack([f1, f2])

    return ModelSpec(
        kind=kind,
        omega=omega,
        lam=lam,
        bath=bath,
        theta=theta,
        grid=grid,
        control=control,
        obar_coeffs=coeffs,
    )
