"""Ground-truth generators: Darcy flow, Allen-Cahn travelling wave, and 2-d
incompressible Navier-Stokes in vorticity form.

Darcy uses a conservative 5-point finite-difference stencil (arithmetic-mean
face coefficients) on the periodic unit cell, solved by plain conjugate
gradients on the zero-mean subspace. Navier-Stokes uses a pseudo-spectral
discretization with 2/3-rule dealiasing and an explicit SSP-RK3 step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .spectral import GrfSample, GrfSpec, sample_grf

__all__ = [
    "GridField",
    "AcWaveParams",
    "SolverError",
    "StabilityError",
    "DarcySample",
    "darcy_forcing",
    "darcy_apply",
    "darcy_solve",
    "darcy_sample",
    "allen_cahn_eval",
    "sample_ac_params",
    "allen_cahn_sample",
    "AC_WAVE_SPEED",
    "ns_step",
    "ns_integrate",
    "ns_sample",
    "kinetic_energy",
    "enstrophy",
]


class SolverError(RuntimeError):
    """Iterative solver failed to reach the requested residual."""


class StabilityError(RuntimeError):
    """Time step exceeds the advective stability bound."""


@dataclass
class GridField:
    """Periodic nodal field: node (i, j) sits at (i, j) * period / n."""

    values: np.ndarray
    period: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("GridField expects a 2-d array")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.values.shape
        x = np.arange(nx) * (self.period / nx)
        y = np.arange(ny) * (self.period / ny)
        return np.meshgrid(x, y, indexing="ij")


# ---------------------------------------------------------------------------
# Darcy flow


def darcy_forcing(resolution: int, period: float = 1.0) -> GridField:
    """Fixed smooth zero-mean right-hand side sin(2 pi x) sin(2 pi y)."""
    f = GridField(np.zeros((resolution, resolution)), period)
    x, y = f.nodes()
    w = 2.0 * math.pi / period
    f.values = np.sin(w * x) * np.sin(w * y)
    return f


def darcy_apply(a: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
    """-div(a grad u) with arithmetic-mean face coefficients, periodic."""
    ax = 0.5 * (a + np.roll(a, -1, axis=0))   # face between i and i+1
    ay = 0.5 * (a + np.roll(a, -1, axis=1))
    flux_x = ax * (np.roll(u, -1, axis=0) - u)
    flux_y = ay * (np.roll(u, -1, axis=1) - u)
    div = (flux_x - np.roll(flux_x, 1, axis=0)) / (h * h) \
        + (flux_y - np.roll(flux_y, 1, axis=1)) / (h * h)
    return -div


def darcy_solve(a: GridField, f: GridField, tol: float = 1e-10,
                max_iter: int | None = None) -> GridField:
    """Solve -div(a grad u) = f with periodic BCs and zero-mean u.

    Conjugate gradients on the zero-mean subspace; converged when the
    relative residual drops below tol.
    """
    if a.resolution != f.resolution:
        raise ValueError(f"resolution mismatch {a.resolution} vs {f.resolution}")
    av = a.values
    if np.any(av <= 0.0):
        raise ValueError("Darcy coefficient must be strictly positive")
    n = a.resolution[0]
    if a.resolution[1] != n:
        raise ValueError("square grids only")
    h = a.period / n
    if max_iter is None:
        max_iter = 60 * n

    b = f.values - f.values.mean()
    bnorm = np.linalg.norm(b)
    u = np.zeros_like(b)
    if bnorm == 0.0:
        return GridField(u, a.period)
    r = b.copy()
    p = r.copy()
    rs = float(r.ravel() @ r.ravel())
    for _ in range(max_iter):
        ap = darcy_apply(av, p, h)
        alpha = rs / float(p.ravel() @ ap.ravel())
        u += alpha * p
        r -= alpha * ap
        r -= r.mean()          # keep the iterate in the zero-mean subspace
        rs_new = float(r.ravel() @ r.ravel())
        if math.sqrt(rs_new) <= tol * bnorm:
            u -= u.mean()
            return GridField(u, a.period)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverError(
        f"CG did not converge in {max_iter} iterations; "
        f"relative residual {math.sqrt(rs) / bnorm:.3e}"
    )


DARCY_GRF = dict(tau2=9.0, alpha=2.0, scale=1.0)


@dataclass
class DarcySample:
    log_coeff: GrfSample      # Gaussian field g with a = exp(g)
    a: GridField
    u: GridField

    def coeff_at(self, points: np.ndarray) -> np.ndarray:
        return np.exp(self.log_coeff.evaluate(points))


def darcy_sample(rng: np.random.Generator, resolution: int = 128,
                 cutoff: int | None = None, tol: float = 1e-10) -> DarcySample:
    """Draw a log-Gaussian permeability and solve for the pressure field."""
    if cutoff is None:
        cutoff = (resolution - 1) // 2
    spec = GrfSpec(d=2, period=1.0, cutoff=cutoff, zero_mean=True, **DARCY_GRF)
    g = sample_grf(spec, rng)
    a = GridField(np.exp(g.grid(resolution)), 1.0)
    u = darcy_solve(a, darcy_forcing(resolution), tol=tol)
    return DarcySample(log_coeff=g, a=a, u=u)


# ---------------------------------------------------------------------------
# Allen-Cahn rotated travelling wave

AC_WAVE_SPEED = 6.0   # front displacement per unit time along (c_x, c_y)


@dataclass(frozen=True)
class AcWaveParams:
    eps: float
    o_x: float
    o_y: float
    c_x: float
    c_y: float

    def __post_init__(self):
        if abs(self.c_x ** 2 + self.c_y ** 2 - 1.0) > 1e-12:
            raise ValueError("direction (c_x, c_y) must be a unit vector")


def allen_cahn_eval(w: AcWaveParams, x, y, t):
    """Closed-form wave: 1/2 - 1/2 tanh(front(x, y) - 3 t / (sqrt(2) eps))."""
    arg = (w.c_x * (np.asarray(x) - w.o_x) + w.c_y * (np.asarray(y) - w.o_y)) \
        / (2.0 * math.sqrt(2.0) * w.eps) - 3.0 * np.asarray(t) / (math.sqrt(2.0) * w.eps)
    return 0.5 - 0.5 * np.tanh(arg)


def sample_ac_params(rng: np.random.Generator) -> AcWaveParams:
    eps = rng.uniform(0.13, 0.18)
    o_x, o_y = rng.uniform(0.0, 2.0, size=2)
    c_x = rng.uniform(0.0, 1.0)
    return AcWaveParams(eps=eps, o_x=o_x, o_y=o_y, c_x=c_x,
                        c_y=math.sqrt(max(0.0, 1.0 - c_x * c_x)))


def allen_cahn_sample(rng: np.random.Generator, n_space: int = 26, n_time: int = 21,
                      t_final: float = 0.05):
    """Wave parameters plus u0 on the inclusive [0, 2]^2 grid and the full
    space-time evaluation (n_space, n_space, n_time)."""
    w = sample_ac_params(rng)
    xs = np.linspace(0.0, 2.0, n_space)
    ts = np.linspace(0.0, t_final, n_time)
    X, Y, Tm = np.meshgrid(xs, xs, ts, indexing="ij")
    u = allen_cahn_eval(w, X, Y, Tm)
    return w, u[:, :, 0], u


# ---------------------------------------------------------------------------
# Navier-Stokes, vorticity form


def _wavenumbers(n: int, period: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    k = 2.0 * math.pi / period * np.fft.fftfreq(n, d=1.0 / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    k2 = kx * kx + ky * ky
    return kx, ky, k2


def _dealias_mask(n: int) -> np.ndarray:
    freqs = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    keep = freqs <= n / 3.0
    return np.outer(keep, keep)


def _velocity(omega_hat, kx, ky, k2):
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    psi_hat = omega_hat * inv            # solves -lap psi = omega
    u = np.fft.ifft2(1j * ky * psi_hat).real
    v = np.fft.ifft2(-1j * kx * psi_hat).real
    return u, v


def _rhs(omega_hat, nu, kx, ky, k2, mask):
    u, v = _velocity(omega_hat, kx, ky, k2)
    wx = np.fft.ifft2(1j * kx * omega_hat).real
    wy = np.fft.ifft2(1j * ky * omega_hat).real
    adv_hat = np.fft.fft2(u * wx + v * wy) * mask
    adv_hat[0, 0] = 0.0                  # advection cannot move the mean
    return -adv_hat - nu * k2 * omega_hat


def _max_speed(omega_hat, kx, ky, k2) -> float:
    u, v = _velocity(omega_hat, kx, ky, k2)
    return float(max(np.abs(u).max(), np.abs(v).max()))


def ns_step(omega: GridField, nu: float, dt: float) -> GridField:
    """One SSP-RK3 step of the vorticity equation; raises above the CFL bound."""
    n = omega.resolution[0]
    if omega.resolution[1] != n:
        raise ValueError("square grids only")
    kx, ky, k2 = _wavenumbers(n, omega.period)
    mask = _dealias_mask(n)
    w_hat = np.fft.fft2(omega.values)
    h = omega.period / n
    speed = _max_speed(w_hat, kx, ky, k2)
    if speed > 0.0 and dt > 0.5 * h / speed:
        raise StabilityError(
            f"dt={dt:.3e} exceeds CFL bound {0.5 * h / speed:.3e}")
    w1 = w_hat + dt * _rhs(w_hat, nu, kx, ky, k2, mask)
    w2 = 0.75 * w_hat + 0.25 * (w1 + dt * _rhs(w1, nu, kx, ky, k2, mask))
    w3 = w_hat / 3.0 + (2.0 / 3.0) * (w2 + dt * _rhs(w2, nu, kx, ky, k2, mask))
    return GridField(np.fft.ifft2(w3).real, omega.period)


def kinetic_energy(omega: GridField) -> float:
    n = omega.resolution[0]
    kx, ky, k2 = _wavenumbers(n, omega.period)
    u, v = _velocity(np.fft.fft2(omega.values), kx, ky, k2)
    return 0.5 * float((u * u + v * v).mean()) * omega.period ** 2


def enstrophy(omega: GridField) -> float:
    return 0.5 * float((omega.values ** 2).mean()) * omega.period ** 2


def ns_integrate(omega0: GridField, nu: float, t_final: float,
                 cfl: float = 0.4, n_checks: int = 10):
    """March to t_final with CFL- and diffusion-limited steps.

    Returns the final field and the kinetic energies recorded at n_checks
    evenly spaced times (including start and end).
    """
    n = omega0.resolution[0]
    kx, ky, k2 = _wavenumbers(n, omega0.period)
    mask = _dealias_mask(n)
    h = omega0.period / n
    dt_visc = 0.4 * 2.51 / (nu * k2.max()) if nu > 0 else math.inf
    check_times = np.linspace(0.0, t_final, max(2, n_checks))
    energies = [kinetic_energy(omega0)]
    w_hat = np.fft.fft2(omega0.values)
    t = 0.0
    next_check = 1
    while t < t_final - 1e-14:
        speed = _max_speed(w_hat, kx, ky, k2)
        dt = min(dt_visc, t_final - t)
        if speed > 0.0:
            dt = min(dt, cfl * h / speed)
        if next_check < len(check_times):
            dt = min(dt, check_times[next_check] - t)
        w1 = w_hat + dt * _rhs(w_hat, nu, kx, ky, k2, mask)
        w2 = 0.75 * w_hat + 0.25 * (w1 + dt * _rhs(w1, nu, kx, ky, k2, mask))
        w_hat = w_hat / 3.0 + (2.0 / 3.0) * (w2 + dt * _rhs(w2, nu, kx, ky, k2, mask))
        t += dt
        if next_check < len(check_times) and t >= check_times[next_check] - 1e-14:
            energies.append(
                kinetic_energy(GridField(np.fft.ifft2(w_hat).real, omega0.period)))
            next_check += 1
    return GridField(np.fft.ifft2(w_hat).real, omega0.period), np.array(energies)


NS_GRF = dict(tau2=49.0, alpha=2.5, scale=7.0 ** 1.5)


@dataclass
class NsSample:
    initial: GrfSample
    omega0: GridField
    omega_final: GridField


def ns_sample(rng: np.random.Generator, resolution: int = 64, nu: float = 1e-3,
              t_final: float = 5.0, cutoff: int | None = None) -> NsSample:
    """Gaussian initial vorticity integrated to the final time."""
    if cutoff is None:
        cutoff = (resolution - 1) // 2
    spec = GrfSpec(d=2, period=1.0, cutoff=cutoff, zero_mean=True, **NS_GRF)
    g = sample_grf(spec, rng)
    omega0 = GridField(g.grid(resolution), 1.0)
    final, _ = ns_integrate(omega0, nu, t_final)
    return NsSample(initial=g, omega0=omega0, omega_final=final)
