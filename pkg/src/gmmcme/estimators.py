"""Channel estimators for ``y = h + n``.

The GMM conditional-mean estimator combines per-component LMMSE estimates

    h_hat = sum_k p(k | y) [C_k (C_k + Sigma)^-1 (y - mu_k) + mu_k],

with responsibilities ``p(k | y)`` from the receive-signal mixture. The
baselines are least squares, LMMSE with a sample covariance or with the
true (genie) covariance, and genie-aided OMP over an oversampled DFT
dictionary.

Single-observation functions return :class:`Estimate`; the ``*_batch``
variants take observations as rows of an ``(M, N)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import cho_solve

from .complex_linalg import CholeskyFactor, hermitian_cholesky, hermitize, solve_psd
from .dataset_io import ChannelDataset
from .errors import DimensionMismatch, EmptyDataset, RankDeficientSupport
from .gmm import GmmModel, log_responsibilities

DEFAULT_OMP_SPARSITY_CAP = 64


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Noise covariance ``Sigma``; isotropic ``sigma_sq * I`` unless given."""

    sigma_sq: float
    covariance: np.ndarray

    @classmethod
    def isotropic(cls, sigma_sq: float, n_antennas: int) -> NoiseModel:
        if not sigma_sq > 0:
            raise ValueError("sigma_sq must be positive")
        return cls(float(sigma_sq), sigma_sq * np.eye(n_antennas, dtype=np.complex128))

    @classmethod
    def from_snr_db(cls, snr_db: float, n_antennas: int) -> NoiseModel:
        """``SNR = 1 / sigma^2`` for channels normalized to ``E||h||^2 = N``."""
        return cls.isotropic(10.0 ** (-snr_db / 10.0), n_antennas)

    @property
    def snr(self) -> float:
        return 1.0 / self.sigma_sq

    @property
    def snr_db(self) -> float:
        return 10.0 * np.log10(self.snr)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]


@dataclass(frozen=True, eq=False)
class Dictionary:
    atoms: np.ndarray

    @property
    def n_antennas(self) -> int:
        return self.atoms.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True, eq=False)
class Estimate:
    channel: np.ndarray
    estimator_name: str
    aux: dict[str, Any] = field(default_factory=dict)


def _check_dim(y: np.ndarray, n: int) -> None:
    if y.shape[-1] != n:
        raise DimensionMismatch(f"observation dim {y.shape[-1]} != {n}")


# -- GMM conditional mean -------------------------------------------------------


class GmmCme:
    """GMM conditional-mean estimator bound to one model and one noise level.

    Factors of ``C_k + Sigma`` and the filters ``C_k (C_k + Sigma)^-1`` are
    computed once at construction and reused for every observation.
    """

    name = "gmm"

    def __init__(self, model: GmmModel, noise: NoiseModel):
        if noise.dim != model.dim:
            raise DimensionMismatch(f"noise dim {noise.dim} != model dim {model.dim}")
        self.model = model
        self.noise = noise
        self.factors: list[CholeskyFactor] = [
            hermitian_cholesky(cov + noise.covariance) for cov in model.covariances
        ]
        # W_k = C_k (C_k + Sigma)^-1 = ((C_k + Sigma)^-1 C_k)^H since both are Hermitian
        self.filters = np.stack(
            [cho_solve((f.lower, True), cov, check_finite=False).conj().T
             for f, cov in zip(self.factors, model.covariances)]
        )

    def responsibilities(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.complex128))
        _check_dim(y, self.model.dim)
        return np.exp(log_responsibilities(self.model, y, self.factors))

    def estimate_batch(self, y: np.ndarray, return_responsibilities: bool = False):
        y = np.atleast_2d(np.asarray(y, dtype=np.complex128))
        _check_dim(y, self.model.dim)
        resp = np.exp(log_responsibilities(self.model, y, self.factors))
        out = np.zeros_like(y)
        for k in range(self.model.n_components):
            mu = self.model.means[k]
            out += resp[:, k : k + 1] * ((y - mu) @ self.filters[k].T + mu)
        return (out, resp) if return_responsibilities else out

    def estimate(self, y: np.ndarray) -> Estimate:
        y = np.asarray(y, dtype=np.complex128)
        h, resp = self.estimate_batch(y[None, :], return_responsibilities=True)
        resp = resp[0]
        assert abs(resp.sum() - 1.0) < 1e-12, "responsibilities must sum to one"
        return Estimate(
            h[0],
            self.name,
            {"responsibilities": resp, "dominant_component": int(np.argmax(resp))},
        )


def gmm_cme_estimate(model: GmmModel, noise: NoiseModel, y: np.ndarray) -> Estimate:
    """Closed-form conditional mean of ``h`` given ``y`` under a GMM prior."""
    return GmmCme(model, noise).estimate(y)


# -- classical baselines -------------------------------------------------------


def ls_estimate(y: np.ndarray) -> Estimate:
    return Estimate(np.asarray(y, dtype=np.complex128), "ls")


def sample_covariance(ds) -> np.ndarray:
    """Non-central second moment ``(1/M) sum_m h_m h_m^H`` (no mean removal)."""
    x = ds.channels if isinstance(ds, ChannelDataset) else np.atleast_2d(np.asarray(ds, np.complex128))
    if x.shape[0] == 0:
        raise EmptyDataset("sample covariance of an empty dataset")
    return hermitize(x.T @ x.conj() / x.shape[0])


def lmmse_estimate(cov: np.ndarray, noise: NoiseModel, y: np.ndarray, name: str = "lmmse") -> Estimate:
    """Zero-mean LMMSE estimate ``C (C + Sigma)^-1 y``."""
    cov = np.asarray(cov, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if cov.shape != noise.covariance.shape:
        raise DimensionMismatch(f"cov shape {cov.shape} != noise shape {noise.covariance.shape}")
    _check_dim(y, cov.shape[0])
    factor = hermitian_cholesky(cov + noise.covariance)
    return Estimate(cov @ solve_psd(factor, y), name)


def lmmse_batch(cov: np.ndarray, noise: NoiseModel, y: np.ndarray) -> np.ndarray:
    """LMMSE with one shared covariance applied to rows of ``y``."""
    y = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    _check_dim(y, cov.shape[0])
    factor = hermitian_cholesky(np.asarray(cov, np.complex128) + noise.covariance)
    return solve_psd(factor, y) @ np.asarray(cov).T


def genie_lmmse_batch(covs: np.ndarray, noise: NoiseModel, y: np.ndarray) -> np.ndarray:
    """LMMSE with a per-row covariance ``covs[m]`` (the true generating one)."""
    y = np.atleast_2d(np.asarray(y, dtype=np.complex128))
    covs = np.asarray(covs, dtype=np.complex128)
    if covs.shape != (y.shape[0], y.shape[1], y.shape[1]):
        raise DimensionMismatch(f"covariances {covs.shape} do not match observations {y.shape}")
    lower = np.linalg.cholesky(covs + noise.covariance)
    z = np.linalg.solve(lower, y[..., None])
    x = np.linalg.solve(np.swapaxes(lower, -1, -2).conj(), z)
    return (covs @ x)[..., 0]


# -- sparse recovery -----------------------------------------------------------


def dft_dictionary(n_antennas: int, oversampling: int = 4) -> Dictionary:
    """Unit-norm ULA atoms on the uniform grid ``sin(theta_l) = -1 + 2 l / L``."""
    if n_antennas < 1 or oversampling < 1:
        raise ValueError("n_antennas and oversampling must be positive")
    n_atoms = oversampling * n_antennas
    grid = -1.0 + 2.0 * np.arange(n_atoms) / n_atoms
    atoms = np.exp(1j * np.pi * np.outer(np.arange(n_antennas), grid)) / np.sqrt(n_antennas)
    return Dictionary(atoms)


def omp_path(y: np.ndarray, dictionary: Dictionary, max_sparsity: int) -> list[np.ndarray]:
    """Channel estimates ``D s_hat`` after each OMP iteration.

    Stops early (returning the iterates so far) when the next atom would make
    the support numerically dependent.
    """
    d = dictionary.atoms
    y = np.asarray(y, dtype=np.complex128)
    _check_dim(y, d.shape[0])
    if not 1 <= max_sparsity <= min(d.shape):
        raise ValueError(f"max_sparsity must lie in [1, {min(d.shape)}], got {max_sparsity}")
    support: list[int] = []
    residual = y.copy()
    path = []
    for _ in range(max_sparsity):
        corr = np.abs(d.conj().T @ residual)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        sub = d[:, support]
        try:
            coef = _least_squares(sub, y)
        except RankDeficientSupport:
            break
        approx = sub @ coef
        path.append(approx)
        residual = y - approx
    return path


def _least_squares(sub: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, _, rank, sv = np.linalg.lstsq(sub, y, rcond=None)
    if rank < sub.shape[1] or sv[-1] < 1e-10 * sv[0]:
        raise RankDeficientSupport(f"support of size {sub.shape[1]} has rank {rank}")
    return coef


def omp_genie(y: np.ndarray, dictionary: Dictionary, h_true: np.ndarray, max_sparsity: int | None = None) -> Estimate:
    """OMP with the sparsity chosen by the true channel.

    Runs OMP up to ``max_sparsity`` atoms and returns the iterate closest
    to ``h_true``; ``aux["sparsity"]`` records the chosen support size.
    """
    if max_sparsity is None:
        max_sparsity = min(dictionary.n_antennas, dictionary.n_atoms, DEFAULT_OMP_SPARSITY_CAP)
    path = omp_path(y, dictionary, max_sparsity)
    if not path:
        raise RankDeficientSupport("OMP produced no iterate")
    h_true = np.asarray(h_true, dtype=np.complex128)
    errors = [float(np.sum(np.abs(h_true - h) ** 2)) for h in path]
    best = int(np.argmin(errors))
    return Estimate(path[best], "genie_omp", {"sparsity": best + 1, "errors": errors})


def omp_genie_batch(y: np.ndarray, dictionary: Dictionary, h_true: np.ndarray, max_sparsity: int | None = None) -> np.ndarray:
    y = np.atleast_2d(y)
    return np.stack([omp_genie(yi, dictionary, hi, max_sparsity).channel for yi, hi in zip(y, h_true)])
