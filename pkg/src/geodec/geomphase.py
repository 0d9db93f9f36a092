"""Complex total, dynamical and geometric phases of a trajectory pair.

The total phase is -i*log(sqrt(r(t))) with r = <psit(0)|psi(t)> / <psit(t)|psi(0)>,
realized as half the continuously unwrapped argument of r minus (i/2)*log|r|.
The branch rule is normative here: the unwrapped argument starts at 0 and
every per-step jump must stay below pi, otherwise the trajectory passed too
close to a node and a BranchJump is raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bath import TimeGrid
from .dynamics import BatchResult, TrajectoryPair
from .models import ModelSpec
from ._integrate import cumtrapz

__all__ = [
    "PhaseSeries",
    "PhaseSingularity",
    "BranchJump",
    "unwrap_arg",
    "total_phase",
    "dynamical_phase",
    "geometric_phase",
    "one_form_phase",
    "geodesic_residual",
]

SINGULARITY_TOL = 1e-10
_JUMP_LIMIT = np.pi * (1.0 - 1e-9)


class PhaseSingularity(RuntimeError):
    """An overlap magnitude fell below the singularity threshold."""

    def __init__(self, t: float, magnitude: float):
        super().__init__(
            f"phase undefined at t = {t:g}: overlap magnitude {magnitude:.3g} "
            f"below threshold {SINGULARITY_TOL:g} (trajectory passed a node)"
        )
        self.t = t


class BranchJump(RuntimeError):
    """The unwrapped argument jumped by >= pi in a single step."""

    def __init__(self, t: float, jump: float):
        super().__init__(
            f"branch jump |darg| = {jump:.4f} >= pi at t = {t:g}; "
            "a smaller dt is needed to track the branch"
        )
        self.t = t


@dataclass(frozen=True)
class PhaseSeries:
    """Branch-continuous complex phases on a grid; beta = beta_tot - beta_dyn."""

    grid: TimeGrid
    beta_tot: np.ndarray = field(repr=False)
    beta_dyn: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    min_overlap_magnitude: float = np.inf


def unwrap_arg(values: np.ndarray, start: float | None = None) -> np.ndarray:
    """Continuously unwrapped argument along the last axis.

    Starts at the principal argument of the first element unless ``start``
    carries branch state from a previous segment (additivity in time).
    """
    values = np.asarray(values)
    d = np.angle(values[..., 1:] * np.conj(values[..., :-1]))
    a0 = np.angle(values[..., :1]) if start is None else np.full(values.shape[:-1] + (1,), start)
    return np.concatenate([a0, a0 + np.cumsum(d, axis=-1)], axis=-1)


def _unwrap_checked(values: np.ndarray):
    """Unwrap along the last axis and report per-row branch-jump flags."""
    d = np.angle(values[..., 1:] * np.conj(values[..., :-1]))
    bad = np.abs(d) >= _JUMP_LIMIT
    a0 = np.angle(values[..., :1])
    arg = np.concatenate([a0, a0 + np.cumsum(d, axis=-1)], axis=-1)
    return arg, bad


def phase_from_overlaps(num: np.ndarray, den: np.ndarray):
    """Batched total phase from overlap series.

    Returns (beta_tot, singular_row, jump_row, min_overlap) where the two
    boolean masks flag rows whose phase is unreliable; no exception is
    raised here so ensemble averaging can apply its exclusion policy.
    """
    num = np.atleast_2d(num)
    den = np.atleast_2d(den)
    mags = np.minimum(np.abs(num), np.abs(den))
    singular = (mags < SINGULARITY_TOL).any(axis=-1)
    r = num / np.where(np.abs(den) < SINGULARITY_TOL, 1.0, den)
    arg, bad = _unwrap_checked(r)
    jump = bad.any(axis=-1)
    with np.errstate(divide="ignore"):
        logmag = np.log(np.where(np.abs(r) > 0, np.abs(r), 1.0))
    beta_tot = 0.5 * arg - 0.5j * logmag
    min_overlap = np.abs(num * den).min(axis=-1)
    return beta_tot, singular, jump, min_overlap


def _pair_overlaps(pair: TrajectoryPair):
    psi0 = pair.psi[0]
    num = pair.psi @ np.conj(psi0)
    den = np.conj(pair.psi_tilde) @ psi0
    return num, den


def _raise_on_flags(grid: TimeGrid, num, den, singular, jump):
    if singular[0]:
        k = int(np.argmax(np.minimum(np.abs(num), np.abs(den)) < SINGULARITY_TOL))
        raise PhaseSingularity(grid.times()[k], float(min(abs(num[k]), abs(den[k]))))
    if jump[0]:
        d = np.angle((num / den)[1:] * np.conj((num / den)[:-1]))
        k = int(np.argmax(np.abs(d) >= _JUMP_LIMIT))
        raise BranchJump(grid.times()[k + 1], float(abs(d[k])))


def total_phase(pair: TrajectoryPair) -> np.ndarray:
    """Branch-continuous complex total phase along one trajectory pair."""
    num, den = _pair_overlaps(pair)
    beta_tot, singular, jump, _ = phase_from_overlaps(num, den)
    _raise_on_flags(pair.grid, num, den, singular, jump)
    return beta_tot[0]


def _h_expectation(pair: TrajectoryPair, model: ModelSpec) -> np.ndarray:
    """<psit|H(t)|psi> with H = H_s(t) + i*L*conj(z) - i*Ldag*Obar(t)."""
    if pair.noise is None:
        raise ValueError("trajectory pair carries no noise path")
    grid = pair.grid
    z = pair.noise.samples[::2]
    coeffs = model.obar_coeffs[:, ::2]
    L = model.coupling()
    k_ops = np.stack([L.conj().T @ b for b in model.obar_basis()])
    t = grid.times()
    psi, psit = pair.psi, pair.psi_tilde

    hpsi = np.empty_like(psi)
    for k, tk in enumerate(t):
        h = model.h_system(tk) + 1j * np.conj(z[k]) * L
        for cj, kop in zip(coeffs[:, k], k_ops):
            h = h - 1j * cj * kop
        hpsi[k] = h @ psi[k]
    return np.einsum("td,td->t", np.conj(psit), hpsi)


def dynamical_phase(pair: TrajectoryPair, model: ModelSpec | None = None) -> np.ndarray:
    """Cumulative -int <psit|H(s)|psi> ds by the trapezoid rule."""
    model = model or pair.model
    if model is None:
        raise ValueError("a model is required to evaluate H(t)")
    return -cumtrapz(_h_expectation(pair, model), pair.grid.dt)


def geometric_phase(pair: TrajectoryPair, model: ModelSpec | None = None) -> PhaseSeries:
    """Assemble total, dynamical and geometric phase series for one pair."""
    num, den = _pair_overlaps(pair)
    beta_tot, singular, jump, min_ov = phase_from_overlaps(num, den)
    _raise_on_flags(pair.grid, num, den, singular, jump)
    beta_dyn = dynamical_phase(pair, model)
    return PhaseSeries(
        grid=pair.grid,
        beta_tot=beta_tot[0],
        beta_dyn=beta_dyn,
        beta=beta_tot[0] - beta_dyn,
        min_overlap_magnitude=float(min_ov[0]),
    )


def one_form_phase(pair: TrajectoryPair) -> np.ndarray:
    """Geometric phase as the integral of the connection one-form.

    Builds the reference section chi(t) = exp(-i*phi(t)) * psi(t) with the
    same unwrapped sqrt branch as the total phase (phi = beta_tot), its
    adjoint section, differentiates chi by central differences and
    integrates i*<chit|dchi/ds> with the trapezoid rule.  Agrees with
    beta_tot - beta_dyn up to discretization error.
    """
    num, den = _pair_overlaps(pair)
    beta_tot, singular, jump, _ = phase_from_overlaps(num, den)
    _raise_on_flags(pair.grid, num, den, singular, jump)
    phi = beta_tot[0]

    chi = np.exp(-1j * phi)[:, None] * pair.psi
    chit_bra = np.exp(1j * phi)[:, None] * np.conj(pair.psi_tilde)  # row form <chit|

    dt = pair.grid.dt
    dchi = np.empty_like(chi)
    dchi[1:-1] = (chi[2:] - chi[:-2]) / (2.0 * dt)
    dchi[0] = (-3.0 * chi[0] + 4.0 * chi[1] - chi[2]) / (2.0 * dt)
    dchi[-1] = (3.0 * chi[-1] - 4.0 * chi[-2] + chi[-3]) / (2.0 * dt)

    integrand = 1j * np.einsum("td,td->t", chit_bra, dchi)
    return cumtrapz(integrand, dt)


def geodesic_residual(
    psi_path: np.ndarray, psi_tilde_path: np.ndarray, ds: float
) -> np.ndarray:
    """Pointwise residual of the projective geodesic equation along a path.

    With the connection A(s) = <phit|dphi/ds> / <phit|phi>, evaluates
    [d^2/ds^2 - d/ds A - A d/ds + A^2] |phi> by central differences and
    projects out the component along |phi> (which is pure gauge: any
    normalized lift of a geodesic picks up a curve-length term parallel to
    the state itself).  Great circles traversed at constant speed give
    residuals at the finite-difference floor; latitude circles do not.
    """
    phi = np.asarray(psi_path, dtype=complex)
    phit = np.asarray(psi_tilde_path, dtype=complex)
    if phi.shape[0] < 5:
        raise ValueError("geodesic residual needs at least 5 path points")

    dphi = (phi[2:] - phi[:-2]) / (2.0 * ds)
    d2phi = (phi[2:] - 2.0 * phi[1:-1] + phi[:-2]) / ds**2
    norm = np.einsum("td,td->t", np.conj(phit[1:-1]), phi[1:-1])
    a = np.einsum("td,td->t", np.conj(phit[1:-1]), dphi) / norm
    # A' also by central differences; costs the two outermost interior points.
    da = (a[2:] - a[:-2]) / (2.0 * ds)

    core = slice(1, -1)
    res = (
        d2phi[core]
        - da[:, None] * phi[2:-2]
        - 2.0 * a[core, None] * dphi[core]
        + (a[core] ** 2)[:, None] * phi[2:-2]
    )
    # remove the pure-gauge component along |phi>
    comp = np.einsum("td,td->t", np.conj(phit[2:-2]), res) / norm[core]
    res = res - comp[:, None] * phi[2:-2]
    return np.linalg.norm(res, axis=1)
