"""PCA subspace over flattened displacement vectors."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

log = logging.getLogger(__name__)


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    basis: np.ndarray  # (D, k), orthonormal columns
    singular_values: np.ndarray  # (k,)
    padded: int = 0  # trailing columns that complete a rank-deficient basis

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def project(self, d: np.ndarray) -> np.ndarray:
        """Coefficients of ``d`` (``(D,)`` or ``(N, D)``)."""
        return (np.asarray(d) - self.mean) @ self.basis

    def reconstruct(self, c: np.ndarray) -> np.ndarray:
        return self.mean + np.asarray(c) @ self.basis.T

    def arrays(self, prefix: str) -> dict:
        return {f"{prefix}.mean": self.mean, f"{prefix}.basis": self.basis,
                f"{prefix}.singular_values": self.singular_values}

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str, padded: int = 0) -> "PcaModel":
        return cls(arrays[f"{prefix}.mean"], arrays[f"{prefix}.basis"], arrays[f"{prefix}.singular_values"], padded)


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip columns so that each one's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0.0] = 1.0
    return basis * signs


def fit_pca(samples, k: int) -> PcaModel:
    """Mean plus the top-``k`` left singular vectors of the centered samples.

    ``samples`` is ``(N, D)``.  If the data has rank below ``k`` the basis is
    completed with orthonormal directions outside the data span (reported in
    ``padded`` and logged).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array (N, D)")
    n, dim = x.shape
    if not 1 <= k <= dim:
        raise ValueError(f"k={k} must lie in 1..{dim}")
    mean = x.mean(axis=0)
    u, s, _ = np.linalg.svd((x - mean).T, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(n, dim) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol))
    keep = min(k, rank)
    basis = u[:, :keep]
    values = s[:keep]
    padded = k - keep
    if padded:
        log.warning("PCA rank %d below k=%d; padding with %d complement directions", rank, k, padded)
        extra = null_space(basis.T)[:, :padded] if keep else np.eye(dim)[:, :padded]
        basis = np.concatenate([basis, extra], axis=1)
        values = np.concatenate([values, np.zeros(padded)])
    return PcaModel(mean, _fix_signs(basis), values, padded)
