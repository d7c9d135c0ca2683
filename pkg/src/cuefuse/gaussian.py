"""Mean/covariance estimation and Mahalanobis distances over feature vectors.

Distances go through a Cholesky factor of the regularized covariance and
triangular solves; the explicit inverse is never formed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .feature_io import _read_kv, _write_kv


@dataclass(frozen=True)
class GaussianModel:
    """Fitted mean + covariance with a cached Cholesky factor of cov + eps*I."""

    mean: np.ndarray
    covariance: np.ndarray
    regularized_factor: np.ndarray
    sample_count: int
    reg_epsilon: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        factor = np.asarray(self.regularized_factor, dtype=np.float64)
        d = mean.shape[0]
        if cov.shape != (d, d) or factor.shape != (d, d):
            raise ValueError("mean, covariance, and factor dimensions disagree")
        if self.sample_count < 2:
            raise ValueError("a Gaussian model needs at least 2 samples")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > 1e-9 * scale:
            raise ValueError("covariance is not symmetric")
        recomposed = factor @ factor.T
        target = cov + self.reg_epsilon * np.eye(d)
        tscale = max(np.abs(target).max(), 1.0)
        if np.abs(recomposed - target).max() > 1e-6 * tscale:
            raise ValueError("regularized_factor does not reproduce cov + eps*I")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "regularized_factor", factor)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(samples: np.ndarray, reg_scale: float = 1e-3) -> GaussianModel:
    """Fit mean and unbiased (1/(K-1)) covariance to a (K, D) sample matrix.

    The diagonal is loaded with eps = reg_scale * trace(cov) / D before the
    Cholesky factorization; for an exactly zero covariance (all samples
    identical) eps falls back to reg_scale so the factorization still succeeds.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
    k, d = samples.shape
    if k < 2:
        raise ValueError(f"need at least 2 samples, got {k}")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples contain non-finite values")
    if reg_scale < 0:
        raise ValueError("reg_scale must be nonnegative")

    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / (k - 1)
    cov = (cov + cov.T) / 2.0  # kill round-off asymmetry

    eps = reg_scale * np.trace(cov) / d
    if eps == 0.0 and reg_scale > 0.0:
        eps = reg_scale
    try:
        factor = np.linalg.cholesky(cov + eps * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"covariance factorization failed even with eps={eps:g}") from exc
    return GaussianModel(mean=mean, covariance=cov, regularized_factor=factor,
                         sample_count=k, reg_epsilon=float(eps))


def mahalanobis_batch(model: GaussianModel, x: np.ndarray) -> np.ndarray:
    """Row-wise sqrt((x-mu)^T (cov + eps*I)^{-1} (x-mu)) for an (M, D) matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValueError(f"expected (M, {model.dim}) input, got shape {x.shape}")
    diff = x - model.mean
    y = solve_triangular(model.regularized_factor, diff.T, lower=True, check_finite=False)
    return np.sqrt(np.einsum("dm,dm->m", y, y))


def mahalanobis(model: GaussianModel, x: np.ndarray) -> float:
    """Mahalanobis distance of a single D-vector under the regularized metric."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {x.shape}")
    return float(mahalanobis_batch(model, x[None, :])[0])


def save_gaussian(model: GaussianModel, path: str | os.PathLike) -> None:
    """Persist a model as mean.npy + cov.npy + meta.txt (float64 payloads)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / "mean.npy", model.mean, allow_pickle=False)
    np.save(path / "cov.npy", model.covariance, allow_pickle=False)
    _write_kv(path / "meta.txt", {
        "sample_count": model.sample_count,
        "reg_epsilon": repr(model.reg_epsilon),
    })


def load_gaussian(path: str | os.PathLike) -> GaussianModel:
    path = Path(path)
    meta = _read_kv(path / "meta.txt")
    mean = np.load(path / "mean.npy", allow_pickle=False)
    cov = np.load(path / "cov.npy", allow_pickle=False)
    eps = float(meta["reg_epsilon"])
    factor = np.linalg.cholesky(cov + eps * np.eye(mean.shape[0]))
    return GaussianModel(mean=mean, covariance=cov, regularized_factor=factor,
                         sample_count=int(meta["sample_count"]), reg_epsilon=eps)
