"""Bath correlation kernel and colored complex Gaussian noise generation.

The environment enters only through the stationary exponential correlation
kernel

    alpha(t, s) = (gamma*Gamma/2) * exp(-gamma*|t-s|) * exp(-1j*omega0*(t-s))

and the driving noise z(t), a stationary complex Ornstein-Uhlenbeck process
whose second-order statistics reproduce alpha:  E[z_t z_s*] = alpha(t,s),
E[z_t z_s] = 0, E[z_t] = 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BathParams",
    "TimeGrid",
    "NoisePath",
    "kernel",
    "kernel_integral",
    "sample_noise_path",
    "sample_noise_block",
    "exact_noise_oracle",
    "derive_path_seed",
]

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class BathParams:
    """Parameters of the exponential bath correlation kernel.

    gamma  : inverse memory time (> 0); the Markov regime is large finite gamma.
    Gamma  : kernel strength (>= 0); Gamma = 0 switches the bath off.
    omega0 : central bath frequency.
    """

    gamma: float
    Gamma: float = 1.0
    omega0: float = 0.0

    def __post_init__(self):
        for name in ("gamma", "Gamma", "omega0"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"BathParams.{name} must be finite, got {v!r}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.Gamma < 0:
            raise ValueError(f"Gamma must be >= 0, got {self.Gamma}")

    @property
    def alpha0(self) -> complex:
        """Equal-time kernel value alpha(t, t) = gamma*Gamma/2."""
        return 0.5 * self.gamma * self.Gamma


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid.  t_k = t0 + k*dt, k = 0..n_steps.

    Integrator stages and the noise are sampled on the half-step grid
    t0 + j*dt/2, j = 0..2*n_steps, so every Runge-Kutta stage hits an
    exact sample.
    """

    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.dt)):
            raise ValueError("t0 and dt must be finite")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def t_final(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def n_half(self) -> int:
        """Number of half-step sample points, 2*n_steps + 1."""
        return 2 * self.n_steps + 1

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def half_times(self) -> np.ndarray:
        return self.t0 + 0.5 * self.dt * np.arange(self.n_half)

    @classmethod
    def from_t_final(cls, t_final: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        n = int(round((t_final - t0) / dt))
        return cls(t0=t0, dt=dt, n_steps=max(n, 1))


@dataclass(frozen=True)
class NoisePath:
    """One realization of z on the half-step grid of ``grid``."""

    grid: TimeGrid
    samples: np.ndarray = field(repr=False)
    seed: int
    trajectory_index: int

    def __post_init__(self):
        if self.samples.shape != (self.grid.n_half,):
            raise ValueError(
                f"expected {self.grid.n_half} samples, got {self.samples.shape}"
            )

    def at_stages(self, k: int) -> tuple[complex, complex, complex]:
        """Noise at the three stage times of step k: t_k, t_k + dt/2, t_k + dt."""
        return (
            self.samples[2 * k],
            self.samples[2 * k + 1],
            self.samples[2 * k + 2],
        )


def kernel(params: BathParams, t, s):
    """Bath correlation function alpha(t, s).  Hermitian: alpha(s,t) = conj(alpha(t,s))."""
    tau = np.asarray(t) - np.asarray(s)
    return params.alpha0 * np.exp(-params.gamma * np.abs(tau) - 1j * params.omega0 * tau)


def kernel_integral(params: BathParams, t):
    """Running kernel integral A(t) = int_0^t alpha(t, s) ds, in closed form."""
    t = np.asarray(t)
    if np.any(t < 0):
        raise ValueError("kernel_integral requires t >= 0")
    mu = params.gamma + 1j * params.omega0
    return params.alpha0 * (1.0 - np.exp(-mu * t)) / mu


def kernel_integral_running(params: BathParams, t):
    """B(t) = int_0^t A(s) ds in closed form (used by the dephasing solutions)."""
    t = np.asarray(t)
    mu = params.gamma + 1j * params.omega0
    return params.alpha0 * (t / mu + (np.exp(-mu * t) - 1.0) / mu**2)


def splitmix64(x: int) -> int:
    """One step of the splitmix64 scrambler; maps 64-bit ints to 64-bit ints."""
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_path_seed(master_seed: int, trajectory_index: int) -> int:
    """Counter-based per-trajectory seed; independent of scheduling order."""
    if trajectory_index < 0:
        raise ValueError("trajectory_index must be >= 0")
    x = (master_seed & _MASK64) ^ splitmix64(trajectory_index & _MASK64)
    return splitmix64(x)


def _ou_step_coeffs(params: BathParams, h: float) -> tuple[complex, float]:
    decay = np.exp(-(params.gamma + 1j * params.omega0) * h)
    innov_sd = np.sqrt(params.alpha0 * (-np.expm1(-2.0 * params.gamma * h)))
    return decay, innov_sd


def sample_noise_block(
    params: BathParams,
    grid: TimeGrid,
    seed: int,
    trajectory_indices: np.ndarray,
) -> np.ndarray:
    """Noise samples for many trajectories at once, shape (n_traj, n_half).

    Row i is bit-identical to ``sample_noise_path(params, grid, seed,
    trajectory_indices[i]).samples``; batching only amortizes the Python
    overhead of the time recursion.
    """
    indices = np.asarray(trajectory_indices, dtype=np.int64)
    n = indices.size
    m = grid.n_half
    # One (m, 2) standard-normal draw per path, from its own generator.
    normals = np.empty((n, m, 2))
    for i, idx in enumerate(indices):
        rng = np.random.Generator(np.random.PCG64(derive_path_seed(seed, int(idx))))
        normals[i] = rng.standard_normal((m, 2))
    xi = (normals[..., 0] + 1j * normals[..., 1]) / np.sqrt(2.0)

    out = np.empty((n, m), dtype=complex)
    sd0 = np.sqrt(params.alpha0)
    out[:, 0] = sd0 * xi[:, 0]
    decay, innov_sd = _ou_step_coeffs(params, 0.5 * grid.dt)
    for j in range(1, m):
        out[:, j] = out[:, j - 1] * decay + innov_sd * xi[:, j]
    return out


def sample_noise_path(
    params: BathParams, grid: TimeGrid, seed: int, trajectory_index: int
) -> NoisePath:
    """Stationary complex OU path on the half-step grid.

    z(0) is drawn circular Gaussian with variance gamma*Gamma/2, and the
    exact discrete-time recursion is used, so marginals and covariances at
    the sample points are exact (no discretization bias).
    """
    samples = sample_noise_block(params, grid, seed, np.array([trajectory_index]))[0]
    return NoisePath(
        grid=grid, samples=samples, seed=seed, trajectory_index=trajectory_index
    )


def exact_noise_oracle(
    params: BathParams, grid: TimeGrid, seed: int, trajectory_index: int = 0
) -> NoisePath:
    """Independent path generator: factorize the covariance on the half grid.

    Builds Sigma_jk = alpha(t_j, t_k), takes a Cholesky-like factor and colors
    a white circular Gaussian vector.  Dense; guarded to <= 4096 points.
    Raises if Sigma fails positive semidefiniteness beyond 1e-10 (which would
    signal a kernel bug, since the exponential kernel is positive definite).
    """
    m = grid.n_half
    if m > 4096:
        raise ValueError(f"grid too large for dense factorization: {m} > 4096 points")
    rng = np.random.Generator(np.random.PCG64(derive_path_seed(seed, trajectory_index)))
    xi = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2.0)
    if params.Gamma == 0.0:
        return NoisePath(grid=grid, samples=np.zeros(m, dtype=complex), seed=seed,
                         trajectory_index=trajectory_index)

    ts = grid.half_times()
    sigma = kernel(params, ts[:, None], ts[None, :])
    w, v = np.linalg.eigh(sigma)
    scale = params.alpha0
    if w.min() < -1e-10 * scale:
        raise ValueError(
            f"covariance not positive semidefinite: min eigenvalue {w.min():g}"
        )
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    samples = factor @ xi
    return NoisePath(grid=grid, samples=samples, seed=seed,
                     trajectory_index=trajectory_index)
