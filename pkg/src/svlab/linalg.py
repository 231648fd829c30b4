"""Dense numerical kernels shared by every training objective.

All functions are pure and operate on plain numpy arrays (rows = samples).
Reduction order is fixed, so repeated calls on identical inputs are
bit-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DegenerateInputError",
    "l2_normalize_rows",
    "cosine_similarity_matrix",
    "temperature_softmax",
    "shannon_entropy",
    "kl_divergence",
    "covariance_matrix",
    "cross_correlation_matrix",
    "whiten",
    "sinkhorn_knopp",
]


class DegenerateInputError(ValueError):
    """Raised when an input violates a numerical precondition (zero-norm row,
    rank-deficient covariance, empty support, ...)."""


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValueError(f"batch must be at least 1x1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("batch contains non-finite entries")
    return x


def l2_normalize_rows(batch) -> np.ndarray:
    """Scale every row to unit Euclidean norm, preserving direction."""
    batch = _as_batch(batch)
    norms = np.sqrt(np.sum(batch * batch, axis=1))
    bad = np.where(norms == 0.0)[0]
    if bad.size:
        raise DegenerateInputError(f"zero-norm row at index {bad[0]}")
    return batch / norms[:, None]


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarities; entry (i, j) compares a[i] with b[j]."""
    a = _as_batch(a)
    b = _as_batch(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sims = l2_normalize_rows(a) @ l2_normalize_rows(b).T
    return np.clip(sims, -1.0, 1.0)


def temperature_softmax(logits, tau: float) -> np.ndarray:
    """Softmax of logits / tau, computed with max-subtraction for stability."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise DegenerateInputError("logits contain non-finite entries")
    scaled = logits / tau
    scaled = scaled - np.max(scaled, axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / np.sum(e, axis=-1, keepdims=True)


def shannon_entropy(p) -> float:
    """Entropy in nats with the 0 * log(0) := 0 convention."""
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise DegenerateInputError("input is not a probability vector")
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats; requires q > 0 wherever p > 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] <= 0):
        raise DegenerateInputError("q has zero mass where p is positive")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def covariance_matrix(batch) -> np.ndarray:
    """Unbiased sample covariance (divide by B - 1), exactly symmetric."""
    batch = _as_batch(batch)
    n = batch.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 rows for covariance, got {n}")
    centered = batch - batch.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    return 0.5 * (cov + cov.T)


def cross_correlation_matrix(z, zp, eps: float = 1e-12) -> np.ndarray:
    """Cross-correlation between two batches after per-branch, per-dimension
    standardization (mean removed, divided by population std + eps)."""
    z = _as_batch(z)
    zp = _as_batch(zp)
    if z.shape != zp.shape:
        raise ValueError(f"shape mismatch: {z.shape} vs {zp.shape}")
    n = z.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 rows, got {n}")
    zc = (z - z.mean(axis=0)) / (z.std(axis=0) + eps)
    zpc = (zp - zp.mean(axis=0)) / (zp.std(axis=0) + eps)
    return zc.T @ zpc / n


def whiten(batch, eps: float = 1e-5) -> np.ndarray:
    """PCA whitening: project onto covariance eigenvectors and divide each
    coordinate by sqrt(eigenvalue + eps).

    Output has zero mean and (unbiased) covariance equal to identity up to
    the eps regularization. Requires more rows than columns.
    """
    batch = _as_batch(batch)
    n, d = batch.shape
    if n <= d:
        raise ValueError(f"whitening needs B > D, got B={n}, D={d}")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    cov = covariance_matrix(batch)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eps == 0.0 and eigvals[0] <= 1e-12 * max(eigvals[-1], 1.0):
        raise DegenerateInputError("rank-deficient covariance with eps = 0")
    centered = batch - batch.mean(axis=0)
    return centered @ eigvecs / np.sqrt(eigvals + eps)


def sinkhorn_knopp(scores, epsilon: float = 0.05, iters: int = 3) -> np.ndarray:
    """Balanced soft assignment from a score matrix.

    Alternately rescales rows to sum to 1/B and columns to sum to 1/P,
    starting from exp(scores / epsilon). Max-subtraction keeps the initial
    exponentiation finite for any score scale.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError(f"expected a 2-D score matrix, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise DegenerateInputError("scores contain non-finite entries")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if iters < 1:
        raise ValueError("iters must be at least 1")
    b, p = scores.shape
    logits = scores / epsilon
    q = np.exp(logits - logits.max())
    for _ in range(iters):
        q *= (1.0 / b) / q.sum(axis=1, keepdims=True)
        q *= (1.0 / p) / q.sum(axis=0, keepdims=True)
    return q
