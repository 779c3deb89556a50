"""Dense Hermitian linear algebra and circularly-symmetric complex Gaussians.

All Gaussians here have zero pseudo-covariance, so the density of
``x ~ CN(mean, cov)`` in ``N`` dimensions is

    pi^-N det(cov)^-1 exp(-(x - mean)^H cov^-1 (x - mean)).

Matrices are plain ``complex128`` numpy arrays; vectors may be passed
one at a time (shape ``(N,)``) or stacked as rows (shape ``(M, N)``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

DEFAULT_RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor of a Hermitian positive definite matrix."""

    lower: np.ndarray
    log_det: float

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def matrix(self) -> np.ndarray:
        """Reconstruct the factored matrix ``lower @ lower^H``."""
        return self.lower @ self.lower.conj().T


def hermitize(m: np.ndarray) -> np.ndarray:
    """Return ``(m + m^H) / 2`` as complex128."""
    m = np.asarray(m, dtype=np.complex128)
    return 0.5 * (m + np.swapaxes(m, -1, -2).conj())


def default_ridge(m: np.ndarray, scale: float = DEFAULT_RIDGE_SCALE) -> float:
    """Scale-invariant diagonal loading ``scale * trace(m) / N``."""
    m = np.asarray(m)
    n = m.shape[-1]
    return float(scale * np.real(np.trace(m)) / n)


def hermitian_cholesky(m: np.ndarray, ridge: float = 0.0) -> CholeskyFactor:
    """Factor ``m + ridge * I`` as ``L L^H``.

    Raises NotPositiveDefinite if the loaded matrix is not positive definite;
    callers may retry with a larger ridge.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    loaded = m + ridge * np.eye(m.shape[0]) if ridge else m
    try:
        lower = np.linalg.cholesky(loaded)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    diag = np.real(np.diag(lower))
    if not np.all(diag > 0) or not np.all(np.isfinite(lower)):
        raise NotPositiveDefinite("non-positive pivot in Cholesky factor")
    return CholeskyFactor(lower=lower, log_det=float(2.0 * np.sum(np.log(diag))))


def solve_psd(factor: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve ``A x = rhs`` given the Cholesky factor of ``A``.

    ``rhs`` is a vector of length N or a stack of row vectors ``(M, N)``.
    """
    rhs = np.asarray(rhs, dtype=np.complex128)
    n = factor.dim
    if rhs.shape[-1] != n or rhs.ndim > 2:
        raise DimensionMismatch(f"rhs of shape {rhs.shape} does not fit a {n}x{n} factor")
    b = rhs.T
    z = solve_triangular(factor.lower, b, lower=True, check_finite=False)
    x = solve_triangular(factor.lower.conj().T, z, lower=False, check_finite=False)
    return x.T


def whiten(factor: CholeskyFactor, x: np.ndarray) -> np.ndarray:
    """Return ``L^-1 x`` row-wise, so that ``|L^-1 x|^2 = x^H A^-1 x``."""
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[-1] != factor.dim:
        raise DimensionMismatch(f"vector dim {x.shape[-1]} != {factor.dim}")
    return solve_triangular(factor.lower, x.T, lower=True, check_finite=False).T


def log_gauss_density_factored(x: np.ndarray, mean: np.ndarray, factor: CholeskyFactor) -> np.ndarray | float:
    """Log density of CN(mean, L L^H) at ``x`` (single vector or rows)."""
    x = np.asarray(x, dtype=np.complex128)
    mean = np.asarray(mean, dtype=np.complex128)
    n = factor.dim
    if mean.shape != (n,):
        raise DimensionMismatch(f"mean shape {mean.shape} != ({n},)")
    w = whiten(factor, x - mean)
    maha = np.sum(w.real**2 + w.imag**2, axis=-1)
    out = -n * np.log(np.pi) - factor.log_det - maha
    return float(out) if np.ndim(out) == 0 else out


def log_gauss_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray, ridge: float = 0.0):
    """Log of the circularly-symmetric complex Gaussian density.

    Examples
    --------
    >>> round(log_gauss_density(np.zeros(1), np.zeros(1), np.eye(1)), 12) == round(-np.log(np.pi), 12)
    True
    """
    return log_gauss_density_factored(x, mean, hermitian_cholesky(cov, ridge))


def standard_complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) entries: real and imaginary parts each N(0, 1/2)."""
    z = rng.standard_normal(tuple(np.atleast_1d(shape)) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) * np.sqrt(0.5)


def sample_gaussian(
    mean: np.ndarray,
    cov: np.ndarray,
    rng: np.random.Generator,
    count: int,
    ridge: float | None = None,
) -> np.ndarray:
    """Draw ``count`` samples ``mean + L z`` as rows of a ``(count, N)`` array.

    ``ridge`` defaults to the scale-invariant loading of :func:`default_ridge`.
    An all-zero covariance yields copies of ``mean``.
    """
    mean = np.asarray(mean, dtype=np.complex128)
    cov = np.asarray(cov, dtype=np.complex128)
    n = mean.shape[0]
    if cov.shape != (n, n):
        raise DimensionMismatch(f"cov shape {cov.shape} != ({n}, {n})")
    if count < 1:
        raise ValueError("count must be positive")
    z = standard_complex_normal(rng, (count, n))
    if not np.any(cov):
        return np.broadcast_to(mean, (count, n)).copy()
    if ridge is None:
        ridge = default_ridge(cov)
    lower = hermitian_cholesky(cov, ridge).lower
    return mean + z @ lower.T
