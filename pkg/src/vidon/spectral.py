"""Real Fourier basis on the d-torus, spectral projections, Gaussian random
fields, and the Monte-Carlo coefficient estimator.

Conventions. For an integer vector kappa, sigma(kappa) is the sign of its
first non-zero component. The basis function is C * {1, cos, sin} of
<kappa', x> for sigma in {0, -1, +1}, with kappa' = (2 pi / period) * kappa
and C chosen so each function has unit L2 norm over the period cell.
Coefficient maps are plain dicts {kappa tuple: float}.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FourierIndex",
    "AliasingError",
    "basis_eval",
    "enumerate_modes",
    "coeffs_from_grid",
    "grid_from_coeffs",
    "eval_coeffs",
    "project_PN",
    "interpolate_IN",
    "coeffs_l2_diff",
    "GrfSpec",
    "GrfSample",
    "sample_grf",
    "mc_fourier_estimate",
    "mc_fourier_from_points",
    "canonical_point_order",
]


class AliasingError(ValueError):
    """Grid resolution too coarse to resolve the requested modes."""


@dataclass(frozen=True)
class FourierIndex:
    kappa: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kappa", tuple(int(k) for k in self.kappa))

    @property
    def sigma(self) -> int:
        for k in self.kappa:
            if k != 0:
                return 1 if k > 0 else -1
        return 0

    @property
    def d(self) -> int:
        return len(self.kappa)


def _norm_const(kappa: tuple[int, ...], period: float) -> float:
    d = len(kappa)
    c = period ** (-0.5 * d)
    if any(k != 0 for k in kappa):
        c *= math.sqrt(2.0)
    return c


def basis_eval(idx: FourierIndex, period: float, x) -> float | np.ndarray:
    """Evaluate one basis function at a point (d,) or batch (n, d)."""
    kappa = np.asarray(idx.kappa, dtype=np.float64)
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim == 0:
        pts, scalar = pts.reshape(1, 1), True
    elif pts.ndim == 1:
        if idx.d == 1 and pts.size > 1:
            pts, scalar = pts.reshape(-1, 1), False
        else:
            pts, scalar = pts.reshape(1, -1), True
    else:
        scalar = False
    if pts.shape[1] != idx.d:
        raise ValueError(f"point dim {pts.shape[1]} != mode dim {idx.d}")
    phase = pts @ (kappa * (2.0 * math.pi / period))
    c = _norm_const(idx.kappa, period)
    s = idx.sigma
    if s == 0:
        out = np.full(pts.shape[0], c)
    elif s == -1:
        out = c * np.cos(phase)
    else:
        out = c * np.sin(phase)
    return float(out[0]) if scalar else out


@functools.lru_cache(maxsize=64)
def _modes_cached(d: int, N: int) -> tuple[FourierIndex, ...]:
    modes: list[FourierIndex] = []
    for shell in range(N + 1):
        for kappa in itertools.product(range(-shell, shell + 1), repeat=d):
            if max(map(abs, kappa)) == shell:
                modes.append(FourierIndex(kappa))
    return tuple(modes)


def enumerate_modes(d: int, N: int) -> list[FourierIndex]:
    """All modes with |kappa|_inf <= N: shells ascending, lexicographic inside."""
    if N < 0:
        raise ValueError("N must be non-negative")
    return list(_modes_cached(d, N))


def _mode_array(modes: list[tuple[int, ...]]) -> np.ndarray:
    return np.array(modes, dtype=np.int64).reshape(len(modes), -1)


def coeffs_from_grid(values: np.ndarray, period: float, max_mode: int | None = None) -> dict:
    """Real-basis coefficients of a periodic grid function via the FFT.

    The grid has n_i nodes per axis at spacing period / n_i. Modes up to
    max_mode (default: the largest alias-free band) are returned.
    """
    u = np.asarray(values, dtype=np.float64)
    n = u.shape
    d = u.ndim
    nyquist = min((ni - 1) // 2 for ni in n)
    if max_mode is None:
        max_mode = nyquist
    elif max_mode > nyquist:
        raise AliasingError(f"grid {n} resolves |kappa| <= {nyquist}, requested {max_mode}")
    a = np.fft.fftn(u) / u.size
    half_vol = math.sqrt(2.0) * period ** (0.5 * d)
    out: dict[tuple[int, ...], float] = {}
    for idx in enumerate_modes(d, max_mode):
        kappa = idx.kappa
        ak = a[tuple(k % ni for k, ni in zip(kappa, n))]
        if idx.sigma == 0:
            out[kappa] = float(ak.real) * period ** (0.5 * d)
        elif idx.sigma == -1:
            out[kappa] = half_vol * float(ak.real)
        else:
            out[kappa] = -half_vol * float(ak.imag)
    return out


def grid_from_coeffs(coeffs: dict, shape, period: float) -> np.ndarray:
    """Synthesize the grid function of a coefficient map via the inverse FFT."""
    shape = tuple(int(s) for s in shape)
    d = len(shape)
    band = max((max(abs(k) for k in kappa) if kappa else 0) for kappa in coeffs) if coeffs else 0
    if band > min((ni - 1) // 2 for ni in shape):
        raise AliasingError(f"grid {shape} too coarse for band {band}")
    A = np.zeros(shape, dtype=np.complex128)
    scale_pair = 1.0 / (math.sqrt(2.0) * period ** (0.5 * d))
    for kappa, c in coeffs.items():
        if c == 0.0:
            continue
        sigma = FourierIndex(kappa).sigma
        if sigma == 0:
            A[tuple(0 for _ in shape)] += c * period ** (-0.5 * d)
        elif sigma == -1:
            # cos member at kappa, its sin partner sits at -kappa
            pos = tuple(k % ni for k, ni in zip(kappa, shape))
            neg = tuple(-k % ni for k, ni in zip(kappa, shape))
            A[pos] += c * scale_pair
            A[neg] += c * scale_pair
        else:
            pos = tuple(k % ni for k, ni in zip(kappa, shape))
            neg = tuple(-k % ni for k, ni in zip(kappa, shape))
            A[pos] += -1j * c * scale_pair
            A[neg] += 1j * c * scale_pair
    return np.fft.ifftn(A * np.prod(shape)).real


def eval_coeffs(coeffs: dict, points, period: float, chunk: int = 65536) -> np.ndarray:
    """Evaluate a trigonometric polynomial at arbitrary points (n, d)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not coeffs:
        return np.zeros(pts.shape[0])
    modes = list(coeffs.keys())
    K = _mode_array(modes).astype(np.float64) * (2.0 * math.pi / period)
    c = np.array([coeffs[m] for m in modes])
    sig = np.array([FourierIndex(m).sigma for m in modes])
    norm = np.array([_norm_const(m, period) for m in modes])
    w = c * norm
    out = np.zeros(pts.shape[0])
    for lo in range(0, pts.shape[0], chunk):
        block = pts[lo:lo + chunk]
        phase = block @ K.T
        vals = np.empty_like(phase)
        vals[:, sig == 0] = 1.0
        vals[:, sig == -1] = np.cos(phase[:, sig == -1])
        vals[:, sig == 1] = np.sin(phase[:, sig == 1])
        out[lo:lo + chunk] = vals @ w
    return out


def project_PN(obj, N: int, period: float | None = None) -> dict:
    """Orthogonal projection onto modes with |kappa|_inf <= N.

    Accepts either a coefficient map or a grid array (period required).
    """
    if isinstance(obj, dict):
        return {k: v for k, v in obj.items() if (max(abs(x) for x in k) if k else 0) <= N}
    if period is None:
        raise ValueError("period required when projecting a grid function")
    return coeffs_from_grid(np.asarray(obj), period, max_mode=N)


def interpolate_IN(samples: np.ndarray, N: int, period: float) -> dict:
    """Pseudo-spectral interpolation from the (2N+2)^d uniform node grid.

    Returns the coefficients of the degree-N trigonometric polynomial whose
    node values match the samples; bandlimited inputs are reproduced exactly
    and higher frequencies alias into the retained band.
    """
    u = np.asarray(samples, dtype=np.float64)
    m = 2 * N + 2
    if any(s != m for s in u.shape):
        raise ValueError(f"expected {m} nodes per axis for N={N}, got {u.shape}")
    a = np.fft.fftn(u) / u.size
    d = u.ndim
    half_vol = math.sqrt(2.0) * period ** (0.5 * d)
    out: dict[tuple[int, ...], float] = {}
    for idx in enumerate_modes(d, N):
        kappa = idx.kappa
        ak = a[tuple(k % m for k in kappa)]
        if idx.sigma == 0:
            out[kappa] = float(ak.real) * period ** (0.5 * d)
        elif idx.sigma == -1:
            out[kappa] = half_vol * float(ak.real)
        else:
            out[kappa] = -half_vol * float(ak.imag)
    return out


def coeffs_l2_diff(a: dict, b: dict) -> float:
    """L2 distance of two trigonometric polynomials via orthonormality."""
    keys = set(a) | set(b)
    return math.sqrt(sum((a.get(k, 0.0) - b.get(k, 0.0)) ** 2 for k in keys))


@dataclass(frozen=True)
class GrfSpec:
    """Spectrum of a stationary Gaussian field: lambda = scale * (w^2 |kappa|^2 + tau2)^-alpha."""

    d: int = 2
    period: float = 1.0
    tau2: float = 9.0
    alpha: float = 2.0
    scale: float = 1.0
    cutoff: int = 16
    zero_mean: bool = True

    def __post_init__(self):
        if self.alpha <= self.d / 2:
            raise ValueError(f"alpha must exceed d/2 for a summable spectrum: {self}")
        if self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")

    def eigenvalue(self, kappa: tuple[int, ...]) -> float:
        w = 2.0 * math.pi / self.period
        k2 = sum(k * k for k in kappa)
        return self.scale * (w * w * k2 + self.tau2) ** (-self.alpha)


@dataclass
class GrfSample:
    spec: GrfSpec
    coeffs: dict = field(default_factory=dict)

    def evaluate(self, points) -> np.ndarray:
        return eval_coeffs(self.coeffs, points, self.spec.period)

    def grid(self, n: int) -> np.ndarray:
        return grid_from_coeffs(self.coeffs, (n,) * self.spec.d, self.spec.period)


def sample_grf(spec: GrfSpec, rng: np.random.Generator) -> GrfSample:
    """Draw a field by sampling each retained mode's coefficient independently."""
    modes = enumerate_modes(spec.d, spec.cutoff)
    if spec.zero_mean:
        modes = [m for m in modes if m.sigma != 0]
    xi = rng.standard_normal(len(modes))
    coeffs = {
        m.kappa: math.sqrt(spec.eigenvalue(m.kappa)) * x for m, x in zip(modes, xi)
    }
    return GrfSample(spec=spec, coeffs=coeffs)


def canonical_point_order(points: np.ndarray) -> np.ndarray:
    """Permutation sorting rows by raw bytes; fixes reduction order exactly."""
    rows = np.ascontiguousarray(points)
    key = rows.view(np.dtype((np.void, rows.shape[1] * rows.itemsize))).ravel()
    return np.argsort(key, kind="stable")


def mc_fourier_from_points(values: np.ndarray, points: np.ndarray, K: int,
                           period: float) -> dict:
    """Coefficient estimates (|T^d| / N) sum v(X_n) e_kappa(X_n) from given points."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    vals = np.asarray(values, dtype=np.float64)
    if pts.shape[0] != vals.shape[0] or pts.shape[0] == 0:
        raise ValueError("need one value per sample point and at least one point")
    order = canonical_point_order(pts)
    pts = pts[order]
    vals = vals[order]
    d = pts.shape[1]
    cell = period ** d
    n = pts.shape[0]
    out: dict[tuple[int, ...], float] = {}
    for idx in enumerate_modes(d, K):
        basis = basis_eval(idx, period, pts)
        out[idx.kappa] = cell / n * float(vals @ basis)
    return out


def mc_fourier_estimate(v, K: int, N: int, rng: np.random.Generator,
                        d: int = 2, period: float = 2.0 * math.pi) -> dict:
    """Monte-Carlo Fourier coefficients of v from N uniform sample points."""
    if N < 1:
        raise ValueError("need at least one Monte-Carlo point")
    pts = rng.uniform(0.0, period, size=(N, d))
    return mc_fourier_from_points(np.asarray(v(pts), dtype=np.float64), pts, K, period)
