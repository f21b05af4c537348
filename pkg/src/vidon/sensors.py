"""Sensor-layout samplers: six configurations of increasing difficulty.

Counts are seed-indexed and pure: layout i of a dataset depends only on
(config, dataset seed, i). Count bounds round 0.9 m, 1.1 m and 0.2 m to
the nearest integer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["SensorConfig", "SENSOR_KINDS", "sample_coords", "config_ranges", "lattice"]

SENSOR_KINDS = (
    "regular",
    "irregular",
    "missing",
    "perturbed",
    "random",
    "variable-random",
)

_PER_SAMPLE_TAG = 101
_SHARED_TAG = 102


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SensorConfig:
    kind: str
    base_grid: tuple[int, int] = (16, 16)
    domain: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    drop_fraction_max: float = 0.20
    count_variance: float = 0.10
    perturb_scale: float | None = None   # default: half the lattice spacing

    def __post_init__(self):
        if self.kind not in SENSOR_KINDS:
            raise ValueError(f"unknown sensor kind {self.kind!r}; choose from {SENSOR_KINDS}")
        if not (0.0 <= self.drop_fraction_max < 1.0):
            raise ValueError("drop_fraction_max must lie in [0, 1)")
        if not (0.0 <= self.count_variance < 1.0):
            raise ValueError("count_variance must lie in [0, 1)")
        if any(n < 1 for n in self.base_grid):
            raise ValueError("base grid extents must be positive")

    @property
    def m0(self) -> int:
        return self.base_grid[0] * self.base_grid[1]

    def spacings(self) -> tuple[float, float]:
        return tuple(
            (hi - lo) / (n - 1) if n > 1 else 0.0
            for (lo, hi), n in zip(self.domain, self.base_grid)
        )


def lattice(cfg: SensorConfig) -> np.ndarray:
    """Inclusive rectangular lattice over the domain box, shape (m0, 2)."""
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(cfg.domain, cfg.base_grid)]
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def config_ranges(cfg: SensorConfig) -> tuple[int, int]:
    """Closed-form (m_min, m_max) implied by the sampling rules."""
    m0 = cfg.m0
    if cfg.kind in ("regular", "irregular", "random"):
        return m0, m0
    if cfg.kind == "missing":
        return m0 - _round_half_up(cfg.drop_fraction_max * m0), m0
    # perturbed and variable-random share the +-count_variance band
    return (_round_half_up((1.0 - cfg.count_variance) * m0),
            _round_half_up((1.0 + cfg.count_variance) * m0))


def _rng(seed: int, tag: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tag, index]))


def _uniform_points(rng: np.random.Generator, cfg: SensorConfig, m: int) -> np.ndarray:
    (x0, x1), (y0, y1) = cfg.domain
    pts = rng.uniform(0.0, 1.0, size=(m, 2))
    pts[:, 0] = x0 + (x1 - x0) * pts[:, 0]
    pts[:, 1] = y0 + (y1 - y0) * pts[:, 1]
    return pts


def sample_coords(cfg: SensorConfig, sample_index: int, seed: int) -> np.ndarray:
    """Sensor coordinates for one sample; pure in (cfg, seed, sample_index)."""
    m0 = cfg.m0
    if cfg.kind == "regular":
        return lattice(cfg)

    if cfg.kind == "irregular":
        # one fixed random cloud per dataset, shared by every sample
        return _uniform_points(_rng(seed, _SHARED_TAG, 0), cfg, m0)

    rng = _rng(seed, _PER_SAMPLE_TAG, sample_index)

    if cfg.kind == "missing":
        k = int(rng.integers(0, _round_half_up(cfg.drop_fraction_max * m0) + 1))
        pts = lattice(cfg)
        if k == 0:
            return pts
        drop = rng.choice(m0, size=k, replace=False)
        return np.delete(pts, drop, axis=0)

    if cfg.kind == "perturbed":
        m_min, m_max = config_ranges(cfg)
        target = int(rng.integers(m_min, m_max + 1))
        sx, sy = cfg.spacings()
        scale_x = 0.5 * sx if cfg.perturb_scale is None else cfg.perturb_scale
        scale_y = 0.5 * sy if cfg.perturb_scale is None else cfg.perturb_scale
        pts = lattice(cfg)
        pts = pts + np.column_stack([
            rng.uniform(-scale_x, scale_x, m0),
            rng.uniform(-scale_y, scale_y, m0),
        ])
        (x0, x1), (y0, y1) = cfg.domain
        pts[:, 0] = np.clip(pts[:, 0], x0, x1)
        pts[:, 1] = np.clip(pts[:, 1], y0, y1)
        if target < m0:
            drop = rng.choice(m0, size=m0 - target, replace=False)
            pts = np.delete(pts, drop, axis=0)
        elif target > m0:
            pts = np.vstack([pts, _uniform_points(rng, cfg, target - m0)])
        return pts

    if cfg.kind == "random":
        return _uniform_points(rng, cfg, m0)

    # variable-random
    m_min, m_max = config_ranges(cfg)
    m = int(rng.integers(m_min, m_max + 1))
    return _uniform_points(rng, cfg, m)
