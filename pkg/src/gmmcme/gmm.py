"""Circularly-symmetric complex Gaussian mixture models fitted by EM."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .complex_linalg import (
    CholeskyFactor,
    default_ridge,
    hermitian_cholesky,
    hermitize,
    log_gauss_density_factored,
    sample_gaussian,
)
from .dataset_io import ChannelDataset, _pack_upper, _unpack_upper
from .errors import CorruptFile, DegenerateComponent, DimensionMismatch

log = logging.getLogger(__name__)

MODEL_MAGIC = b"CGMM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_C128_LE = np.dtype("<c16")
_F64_LE = np.dtype("<f8")
RIDGE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class GmmModel:
    """Mixture ``sum_k weights[k] * CN(means[k], covariances[k])``.

    ``means`` has shape ``(K, N)`` and ``covariances`` ``(K, N, N)``.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.complex128)
        covs = hermitize(self.covariances)
        if weights.ndim != 1 or means.ndim != 2 or covs.ndim != 3:
            raise DimensionMismatch("weights (K,), means (K, N), covariances (K, N, N) expected")
        k, n = means.shape
        if weights.shape[0] != k or covs.shape != (k, n, n):
            raise DimensionMismatch(
                f"inconsistent shapes {weights.shape}, {means.shape}, {covs.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def factors(self, noise: np.ndarray | None = None, ridge_scale: float = 0.0) -> list[CholeskyFactor]:
        """Cholesky factors of ``C_k (+ noise)``, optionally ridge-loaded."""
        out = []
        for cov in self.covariances:
            m = cov if noise is None else cov + noise
            out.append(hermitian_cholesky(m, default_ridge(m, ridge_scale) if ridge_scale else 0.0))
        return out


class InitStrategy(str, Enum):
    RANDOM_RESPONSIBILITY = "random-responsibility"
    KMEANS_SEEDED = "kmeans-seeded"


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 500
    rel_tolerance: float = 1e-6
    ridge_scale: float = 1e-6
    init_strategy: InitStrategy = InitStrategy.RANDOM_RESPONSIBILITY
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "init_strategy", InitStrategy(self.init_strategy))
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not 0 < self.rel_tolerance < 1:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.ridge_scale < 0:
            raise ValueError("ridge_scale must be nonnegative")


@dataclass
class EmResult:
    model: GmmModel
    log_likelihood_trace: list[float] = field(default_factory=list)
    converged: bool = False
    n_iterations: int = 0
    reinitialized: list[int] = field(default_factory=list)


def _as_samples(data) -> np.ndarray:
    if isinstance(data, ChannelDataset):
        return data.channels
    x = np.asarray(data, dtype=np.complex128)
    return x[None, :] if x.ndim == 1 else x


def component_log_densities(x: np.ndarray, means: np.ndarray, factors: list[CholeskyFactor]) -> np.ndarray:
    """``(M, K)`` matrix of ``log CN(x_m; means[k], L_k L_k^H)``."""
    out = np.empty((x.shape[0], len(factors)))
    for k, fac in enumerate(factors):
        out[:, k] = log_gauss_density_factored(x, means[k], fac)
    return out


def _weighted_log_densities(model: GmmModel, x: np.ndarray, factors) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    return component_log_densities(x, model.means, factors) + log_w


def log_likelihood(model: GmmModel, data) -> float:
    """Total log-likelihood ``sum_m log sum_k p(k) CN(h_m; mu_k, C_k)``."""
    x = _as_samples(data)
    if x.shape[1] != model.dim:
        raise DimensionMismatch(f"sample dim {x.shape[1]} != model dim {model.dim}")
    return float(np.sum(logsumexp(_weighted_log_densities(model, x, model.factors()), axis=1)))


def receive_pdf(model: GmmModel, noise: np.ndarray) -> GmmModel:
    """Mixture of ``y = h + n``: same weights and means, covariances ``C_k + noise``."""
    noise = np.asarray(noise, dtype=np.complex128)
    if noise.shape != (model.dim, model.dim):
        raise DimensionMismatch(f"noise shape {noise.shape} != ({model.dim}, {model.dim})")
    return GmmModel(model.weights.copy(), model.means.copy(), model.covariances + noise)


def log_responsibilities(model: GmmModel, y: np.ndarray, factors: list[CholeskyFactor]) -> np.ndarray:
    """Row-wise log posteriors ``log p(k | y)`` given factors of ``C_k + noise``."""
    lw = _weighted_log_densities(model, y, factors)
    return lw - logsumexp(lw, axis=1, keepdims=True)


def responsibilities(model: GmmModel, y: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Posterior component probabilities ``p(k | y)`` for ``y = h + n``.

    ``y`` may be one vector (returns ``(K,)``) or rows ``(M, N)`` (returns ``(M, K)``).
    """
    y = np.asarray(y, dtype=np.complex128)
    single = y.ndim == 1
    x = _as_samples(y)
    if x.shape[1] != model.dim:
        raise DimensionMismatch(f"observation dim {x.shape[1]} != model dim {model.dim}")
    factors = receive_pdf(model, noise).factors()
    resp = np.exp(log_responsibilities(model, x, factors))
    return resp[0] if single else resp


def sample_gmm(model: GmmModel, rng: np.random.Generator, count: int, return_labels: bool = False):
    """Draw ``count`` rows: component index by weight, then a Gaussian sample."""
    labels = rng.choice(model.n_components, size=count, p=model.weights)
    out = np.empty((count, model.dim), np.complex128)
    for k in range(model.n_components):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            out[idx] = sample_gaussian(model.means[k], model.covariances[k], rng, idx.size)
    return (out, labels) if return_labels else out


# -- EM ---------------------------------------------------------------------


def _m_step(x: np.ndarray, resp: np.ndarray, ridge_scale: float, ridge_floor: float = 0.0):
    m, n = x.shape
    nk = resp.sum(axis=0)
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((resp.shape[1], n, n), np.complex128)
    for k in range(resp.shape[1]):
        xc = x - means[k]
        cov = hermitize((xc.T * resp[:, k]) @ xc.conj() / nk[k])
        covs[k] = cov + max(default_ridge(cov, ridge_scale), ridge_floor) * np.eye(n)
    weights = nk / m
    return weights / weights.sum(), means, covs


def _initial_responsibilities(x: np.ndarray, k: int, cfg: EmConfig, rng: np.random.Generator) -> np.ndarray:
    m = x.shape[0]
    if cfg.init_strategy is InitStrategy.KMEANS_SEEDED:
        stacked = np.hstack([x.real, x.imag])
        _, labels = kmeans2(stacked, k, minit="++", seed=rng)
        resp = np.zeros((m, k))
        resp[np.arange(m), labels] = 1.0
        return resp
    resp = rng.random((m, k))
    return resp / resp.sum(axis=1, keepdims=True)


def fit_em(data, k: int, cfg: EmConfig | None = None) -> EmResult:
    """Fit a ``k``-component full-covariance complex GMM by EM.

    The E-step runs in the log domain. Each M-step updates weights, means
    and Hermitian-symmetrized covariances loaded with
    ``ridge_scale * trace / N`` (never less than ``1e-12`` times the mean
    per-entry data power). Iteration stops when the per-sample average
    log-likelihood improves by less than ``rel_tolerance`` (relative) or
    after ``max_iterations``.

    A component whose effective sample count falls below 0.1 (weight below
    ``1 / (10 M)``) is re-seeded once: it is split off from the component
    owning a random sample, taking that sample as mean; a second collapse of the same component raises
    DegenerateComponent. Trace entries following a re-seed are listed in
    ``EmResult.reinitialized``; monotonicity holds between such restarts.
    """
    cfg = cfg or EmConfig()
    x = _as_samples(data)
    m, n = x.shape
    if k < 1:
        raise ValueError("k must be positive")
    if m < k:
        raise ValueError(f"need at least k={k} samples, got {m}")
    rng = np.random.default_rng(cfg.seed)
    # keeps a component that has shrunk onto a single point factorizable
    floor = RIDGE_FLOOR * float(np.mean(np.abs(x) ** 2)) if cfg.ridge_scale > 0 else 0.0

    resp = _initial_responsibilities(x, k, cfg, rng)
    reseeded: set[int] = set()
    result = EmResult(model=None)
    prev = None
    for it in range(cfg.max_iterations):
        nk = resp.sum(axis=0)
        weak = np.flatnonzero(nk < 0.1)
        if weak.size:
            for j in weak:
                if j in reseeded:
                    raise DegenerateComponent(
                        f"component {j} collapsed twice (effective weight {nk[j] / m:.3g})"
                    )
                reseeded.add(int(j))
                log.warning("EM: re-seeding collapsed component %d at iteration %d", j, it)
            strong = np.setdiff1d(np.arange(k), weak)
            weights, means, covs = _m_step(x, resp[:, strong], cfg.ridge_scale, floor)
            full_w = np.empty(k)
            full_mu = np.empty((k, n), np.complex128)
            full_cov = np.empty((k, n, n), np.complex128)
            full_w[strong], full_mu[strong], full_cov[strong] = weights, means, covs
            # split off from the component owning a random sample: same covariance, new mean
            picks = rng.choice(m, size=weak.size, replace=False)
            owners = strong[np.argmax(resp[picks][:, strong], axis=1)]
            for j, i, owner in zip(weak, picks, owners):
                full_mu[j] = x[i]
                full_cov[j] = full_cov[owner]
                full_w[owner] *= 0.5
                full_w[j] = full_w[owner]
            weights, means, covs = full_w / full_w.sum(), full_mu, full_cov
            result.reinitialized.append(it)
            prev = None
        else:
            weights, means, covs = _m_step(x, resp, cfg.ridge_scale, floor)
        model = GmmModel(weights, means, covs)
        lw = _weighted_log_densities(model, x, model.factors())
        norm = logsumexp(lw, axis=1, keepdims=True)
        resp = np.exp(lw - norm)
        avg_ll = float(norm.mean())
        result.log_likelihood_trace.append(avg_ll)
        result.model = model
        result.n_iterations = it + 1
        if prev is not None and (avg_ll - prev) <= cfg.rel_tolerance * abs(prev):
            result.converged = True
            break
        prev = avg_ll
    log.debug("EM: K=%d stopped after %d iterations (converged=%s)", k, result.n_iterations, result.converged)
    return result


# -- persistence --------------------------------------------------------------


def save_model(model: GmmModel, path) -> None:
    """Write ``model`` in the CGMM binary format (little-endian float64).

    Layout: magic ``CGMM``, uint32 version, uint32 K, uint32 N, then K weights,
    K*N complex means, and the row-major upper triangle of each covariance.
    """
    header = _HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.n_components, model.dim)
    body = (
        model.weights.astype(_F64_LE).tobytes()
        + model.means.astype(_C128_LE).tobytes()
        + np.ascontiguousarray(_pack_upper(model.covariances)).astype(_C128_LE).tobytes()
    )
    Path(path).write_bytes(header + body)


def load_model(path) -> GmmModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptFile(f"{path}: file shorter than header")
    magic, version, k, n = _HEADER.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    if k == 0 or n == 0:
        raise CorruptFile(f"{path}: invalid header")
    tri = n * (n + 1) // 2
    expected = _HEADER.size + 8 * k + 16 * k * n + 16 * k * tri
    if len(data) != expected:
        raise CorruptFile(f"{path}: expected {expected} bytes, found {len(data)}")
    off = _HEADER.size
    weights = np.frombuffer(data, _F64_LE, k, off).astype(np.float64)
    off += 8 * k
    means = np.frombuffer(data, _C128_LE, k * n, off).astype(np.complex128).reshape(k, n)
    off += 16 * k * n
    packed = np.frombuffer(data, _C128_LE, k * tri, off).astype(np.complex128).reshape(k, tri)
    try:
        return GmmModel(weights, means, _unpack_upper(packed, n))
    except ValueError as exc:
        raise CorruptFile(f"{path}: {exc}") from None
