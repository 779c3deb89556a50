"""3GPP-style spatial channel model for a half-wavelength uniform linear array.

Every channel sample draws its own cluster parameters (center angles, path
gains), builds the covariance

    C = integral over [-pi, pi] of g(theta) a(theta) a(theta)^H dtheta

with ``g`` a weighted sum of Laplace densities, and draws ``h ~ CN(0, C)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import toeplitz

from .complex_linalg import default_ridge, hermitian_cholesky, standard_complex_normal
from .dataset_io import ChannelDataset, normalize_dataset

SECTOR_HALF_WIDTH = np.pi / 3
DEFAULT_SPREAD = np.deg2rad(2.0)
MIN_QUADRATURE_POINTS = 3600


@dataclass(frozen=True)
class ClusterParams:
    """Cluster center angles (rad), path gains summing to one, and the
    angular standard deviation shared by all clusters."""

    angles: np.ndarray
    gains: np.ndarray
    spread: float

    def __post_init__(self):
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64))
        gains = np.atleast_1d(np.asarray(self.gains, dtype=np.float64))
        if angles.shape != gains.shape or angles.ndim != 1:
            raise ValueError("angles and gains must be 1-D of equal length")
        if np.any(gains < 0) or abs(gains.sum() - 1.0) > 1e-12:
            raise ValueError("gains must be nonnegative and sum to one")
        if not self.spread > 0:
            raise ValueError("spread must be positive")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "gains", gains)

    @property
    def n_clusters(self) -> int:
        return self.angles.shape[0]


@dataclass(frozen=True)
class ModelConfig:
    antennas: int = 16
    clusters: int = 1
    spread: float = DEFAULT_SPREAD
    quadrature_points: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.antennas < 1 or self.clusters < 1:
            raise ValueError("antennas and clusters must be positive")
        if self.quadrature_points is None:
            object.__setattr__(self, "quadrature_points", default_quadrature_points(self.antennas))
        if self.quadrature_points < 16 * self.antennas:
            raise ValueError("quadrature_points must be at least 16 * antennas")


def default_quadrature_points(n_antennas: int) -> int:
    return max(MIN_QUADRATURE_POINTS, 16 * n_antennas)


def steering_vector(theta: float, n_antennas: int) -> np.ndarray:
    """ULA response ``[1, e^{j pi sin(theta)}, ..., e^{j pi (N-1) sin(theta)}]``."""
    if n_antennas < 1:
        raise ValueError("n_antennas must be positive")
    return np.exp(1j * np.pi * np.arange(n_antennas) * np.sin(theta))


@lru_cache(maxsize=8)
def _trapezoid_grid(points: int):
    theta = np.linspace(-np.pi, np.pi, points)
    weights = np.full(points, 2 * np.pi / (points - 1))
    weights[[0, -1]] *= 0.5
    theta.flags.writeable = False
    weights.flags.writeable = False
    return theta, weights


@lru_cache(maxsize=8)
def _phase_table(n_antennas: int, points: int) -> np.ndarray:
    theta, _ = _trapezoid_grid(points)
    table = np.exp(1j * np.pi * np.outer(np.arange(n_antennas), np.sin(theta)))
    table.flags.writeable = False
    return table


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    top = np.max(a, axis=axis, keepdims=True)
    out = top + np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.item()


def _log_laplace_mixture(theta: np.ndarray, params: ClusterParams) -> np.ndarray:
    # Laplace scale b = spread / sqrt(2) makes the standard deviation equal to spread
    b = params.spread / np.sqrt(2.0)
    with np.errstate(divide="ignore"):
        log_gains = np.log(params.gains)
    dist = np.abs(np.subtract.outer(np.atleast_1d(theta), params.angles))
    return _logsumexp(log_gains - np.log(2 * b) - dist / b, axis=1)


def _log_normalizer(params: ClusterParams, quadrature_points: int) -> float:
    grid, weights = _trapezoid_grid(quadrature_points)
    return float(_logsumexp(_log_laplace_mixture(grid, params) + np.log(weights)))


def laplace_power_density(theta, params: ClusterParams, quadrature_points: int = MIN_QUADRATURE_POINTS):
    """Angular power density ``g(theta)``: weighted Laplace densities truncated to
    ``[-pi, pi]`` and renormalized so the trapezoid integral is one."""
    log_g = _log_laplace_mixture(theta, params) - _log_normalizer(params, quadrature_points)
    g = np.exp(log_g)
    return float(g[0]) if np.ndim(theta) == 0 else g


def _covariance_first_column(params: ClusterParams, n_antennas: int, quadrature_points: int) -> np.ndarray:
    grid, weights = _trapezoid_grid(quadrature_points)
    log_w = _log_laplace_mixture(grid, params) + np.log(weights)
    w = np.exp(log_w - _logsumexp(log_w))
    # entry (i, j) = sum_t w_t exp(j pi (i - j) sin theta_t); only i - j matters
    col = _phase_table(n_antennas, quadrature_points) @ w
    col[0] = col[0].real
    return col


def cluster_covariance(params: ClusterParams, n_antennas: int, quadrature_points: int | None = None) -> np.ndarray:
    """Trapezoid-rule covariance of the ULA response under ``g(theta)``.

    The result is Hermitian Toeplitz with unit diagonal.
    """
    if quadrature_points is None:
        quadrature_points = default_quadrature_points(n_antennas)
    if quadrature_points < 16 * n_antennas:
        raise ValueError("quadrature_points must be at least 16 * n_antennas")
    col = _covariance_first_column(params, n_antennas, quadrature_points)
    return toeplitz(col, col.conj())


def draw_cluster_params(n_clusters: int, spread: float, rng: np.random.Generator) -> ClusterParams:
    """Uniform angles on the 120 degree sector; uniform gains normalized to one."""
    if n_clusters < 1:
        raise ValueError("n_clusters must be positive")
    angles = rng.uniform(-SECTOR_HALF_WIDTH, SECTOR_HALF_WIDTH, n_clusters)
    raw = 1.0 - rng.random(n_clusters)  # (0, 1]
    gains = raw / raw.sum()
    return ClusterParams(angles, gains, spread)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` of a run seeded with ``seed``."""
    return np.random.default_rng([seed, index])


def draw_channel(config: ModelConfig, rng: np.random.Generator, params: ClusterParams | None = None):
    """Draw one ``(h, C)`` pair; ``params`` are drawn from ``rng`` unless given."""
    if params is None:
        params = draw_cluster_params(config.clusters, config.spread, rng)
    cov = cluster_covariance(params, config.antennas, config.quadrature_points)
    lower = hermitian_cholesky(cov, default_ridge(cov)).lower
    h = lower @ standard_complex_normal(rng, config.antennas)
    return h, cov


def generate_dataset(
    config: ModelConfig,
    n_samples: int,
    retain_covariances: bool = True,
    params: ClusterParams | None = None,
) -> ChannelDataset:
    """Generate and normalize ``n_samples`` channels.

    Sample ``m`` uses its own generator derived from ``(config.seed, m)``, so
    the output does not depend on evaluation order. Passing ``params`` fixes
    the cluster geometry for every sample (used for moment checks).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    n = config.antennas
    channels = np.empty((n_samples, n), np.complex128)
    covs = np.empty((n_samples, n, n), np.complex128) if retain_covariances else None
    for m in range(n_samples):
        h, cov = draw_channel(config, sample_rng(config.seed, m), params)
        channels[m] = h
        if covs is not None:
            covs[m] = cov
    return normalize_dataset(ChannelDataset(channels, covs))
