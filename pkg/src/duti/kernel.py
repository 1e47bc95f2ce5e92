"""RBF kernel evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .core import DomainError


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel ``exp(-||a - b||^2 / (2 * bandwidth^2))``."""

    bandwidth: float = 1.0

    def __post_init__(self):
        s = float(self.bandwidth)
        if not np.isfinite(s) or s <= 0:
            raise DomainError(f"kernel bandwidth must be finite and positive, got {self.bandwidth}")
        object.__setattr__(self, "bandwidth", s)


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DomainError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]} features")
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def rbf_kernel_matrix(A, B, cfg: KernelConfig) -> np.ndarray:
    """Cross kernel matrix between the rows of ``A`` and ``B``."""
    if not isinstance(cfg, KernelConfig):
        cfg = KernelConfig(cfg)
    d2 = squared_distances(A, B)
    K = np.exp(-d2 / (2.0 * cfg.bandwidth ** 2))
    if A is B:
        # symmetric by construction; kill round-off asymmetry from the gemm
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K


def median_heuristic_bandwidth(X) -> float:
    """Median pairwise Euclidean distance (mean positive distance if that is 0)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise DomainError("median heuristic needs at least two points")
    d = pdist(X)
    med = float(np.median(d))
    if med > 0:
        return med
    pos = d[d > 0]
    if pos.size == 0:
        raise DomainError("all points coincide; bandwidth is undefined")
    return float(pos.mean())
