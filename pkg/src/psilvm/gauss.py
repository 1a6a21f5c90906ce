"""Gaussian carriers, Cholesky-based solves and the diagonal KL term."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotPositiveDefinite


@dataclass(frozen=True)
class DiagGaussian:
    """Factorised Gaussian N(mean, diag(var))."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if var.shape == (1,) and mean.shape[0] > 1:
            var = np.full_like(mean, var[0])
        if mean.ndim != 1 or mean.shape != var.shape:
            raise DimensionMismatch(f"mean {mean.shape} and var {var.shape} differ")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("non-finite Gaussian parameters")
        if np.any(var <= 0):
            raise NotPositiveDefinite("diagonal variances must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def cov(self):
        return np.diag(self.var)


@dataclass(frozen=True)
class FullGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DimensionMismatch(f"cov {cov.shape} does not match mean {mean.shape}")
        scale = max(np.abs(cov).max(), np.finfo(float).tiny)
        if np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular L with L @ L.T equal to the factored matrix."""

    lower: np.ndarray

    @property
    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.lower)))


def cholesky(m):
    """Cholesky factor of a symmetric positive definite matrix.

    No jitter is added; indefinite or singular input raises NotPositiveDefinite.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        lower = scipy.linalg.cholesky(m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    if np.any(np.diag(lower) <= 0):
        raise NotPositiveDefinite("zero pivot in Cholesky factor")
    return CholFactor(lower)


def solve_psd(factor, b):
    """Solve (L L^T) x = b given the Cholesky factor."""
    b = np.asarray(b, dtype=float)
    n = factor.lower.shape[0]
    if b.shape[0] != n:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, factor is {n}x{n}")
    return scipy.linalg.cho_solve((factor.lower, True), b, check_finite=False)


def kl_diag_to_standard(q):
    """KL(q || N(0, I)) for a diagonal Gaussian: 0.5 * sum(mu^2 + s^2 - log s^2 - 1)."""
    return 0.5 * float(np.sum(q.mean**2 + q.var - np.log(q.var) - 1.0))
