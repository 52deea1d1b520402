"""Self-contained numerical kernels.

Deterministic building blocks used throughout the package: a seeded
truncated SVD, exact Euclidean projection onto the probability simplex,
magnitude-based hard thresholding, nonnegative clamping, and a QR wrapper
with a fixed sign convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, DimensionError, NumericError, ValidationError

# Fixed seed for subspace-iteration start vectors; runs are reproducible.
_SVD_START_SEED = 20230817

SVD_TOL = 1e-10
SVD_MAX_ITERS = 10_000


@dataclass
class SvdTriple:
    """Leading singular triples: U (m, r), S (r,), V (n, r), S descending."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def _check_finite_matrix(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NumericError(f"{name} contains non-finite entries")
    return X


def truncated_svd(X, r: int, tol: float = SVD_TOL, max_iters: int = SVD_MAX_ITERS) -> SvdTriple:
    """Leading-r SVD by block subspace iteration with seeded start vectors.

    Alternates Y = X V, QR -> U and Z = X^T U, QR -> V until the singular
    value estimates (diagonal of the second R) change by less than tol.
    The start block is drawn from a fixed-seed generator so repeated calls
    are bit-identical.  Sign convention: the largest-magnitude entry of each
    left singular vector is made positive.
    """
    X = _check_finite_matrix(X, "svd input")
    m, n = X.shape
    if not 1 <= r <= min(m, n):
        raise DimensionError(f"rank {r} out of range for {m} x {n} input")

    rng = np.random.default_rng(_SVD_START_SEED)
    V = np.linalg.qr(rng.standard_normal((n, r)))[0]
    s_prev = np.zeros(r)
    converged = False
    for _ in range(max_iters):
        U, _ = np.linalg.qr(X @ V)
        V, R = np.linalg.qr(X.T @ U)
        s = np.abs(np.diag(R))
        if np.max(np.abs(s - s_prev)) <= tol:
            converged = True
            break
        s_prev = s
    if not converged:
        raise ConvergenceError(
            f"truncated_svd did not converge in {max_iters} iterations"
        )

    # Extract exact singular triples of the projection onto span(U): the
    # small eigenproblem rotates the basis so U and V come out orthonormal
    # to roundoff even when near-equal singular values stall the iteration.
    W = X.T @ U
    lam, Q = np.linalg.eigh(W.T @ W)
    order = np.argsort(-lam, kind="stable")
    lam = np.maximum(lam[order], 0.0)
    Q = Q[:, order]
    s = np.sqrt(lam)
    U = U @ Q
    V = V @ Q
    positive = s > 0
    if np.any(positive):
        V[:, positive] = (W @ Q[:, positive]) / s[positive]
    for k in range(r):
        j = int(np.argmax(np.abs(U[:, k])))
        if U[j, k] < 0:
            U[:, k] = -U[:, k]
            V[:, k] = -V[:, k]
    return SvdTriple(U=U, S=s, V=V)


def spectral_norm(X) -> float:
    """Largest singular value, via rank-1 truncated_svd."""
    return float(truncated_svd(X, 1).S[0])


def project_simplex(v) -> np.ndarray:
    """Exact Euclidean projection of v onto the probability simplex.

    Sort-based algorithm (Held, Wolfe and Crowder 1974; Duchi et al. 2008):
    find the largest index rho with sorted_v[rho] + (1 - cumsum[rho]) / (rho+1)
    positive, shift by that amount and clip.
    """
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise DimensionError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError("simplex projection input has non-finite entries")
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    cond = u + (1.0 - cssv) / idx > 0
    rho = int(np.nonzero(cond)[0][-1])
    shift = (1.0 - cssv[rho]) / (rho + 1.0)
    return np.maximum(v + shift, 0.0)


def project_simplex_rows(V) -> np.ndarray:
    """Row-wise simplex projection; each row of the result sums to one.

    Same algorithm as project_simplex, vectorized over rows.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] == 0:
        raise DimensionError(f"expected a nonempty 2-d array, got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValidationError("simplex projection input has non-finite entries")
    U = -np.sort(-V, axis=1)
    cssv = np.cumsum(U, axis=1)
    idx = np.arange(1, V.shape[1] + 1)
    cond = U + (1.0 - cssv) / idx > 0
    # Last True per row; the first column is always True.
    rho = V.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    rows = np.arange(V.shape[0])
    shift = (1.0 - cssv[rows, rho]) / (rho + 1.0)
    return np.maximum(V + shift[:, None], 0.0)


def hard_threshold(B, s: int) -> np.ndarray:
    """Keep the s largest-magnitude entries of B, zeroing the rest.

    Ties in magnitude are broken by keeping the smallest (row, col) index
    first, i.e. row-major order.  s >= B.size returns B unchanged; s == 0
    returns all zeros.
    """
    B = np.asarray(B, dtype=float)
    if s < 0:
        raise ValidationError(f"threshold count must be nonnegative, got {s}")
    if s >= B.size:
        return B.copy()
    flat = B.ravel()
    # Stable sort on negated magnitudes keeps row-major order among ties.
    order = np.argsort(-np.abs(flat), kind="stable")
    out = np.zeros_like(flat)
    keep = order[:s]
    out[keep] = flat[keep]
    return out.reshape(B.shape)


def clamp_nonneg(B) -> np.ndarray:
    """Entrywise max(B, 0)."""
    return np.maximum(np.asarray(B, dtype=float), 0.0)


def qr_decompose(B) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with the diagonal of R forced nonnegative.

    Wraps the LAPACK-backed factorization and flips signs so every retained
    R[k, k] >= 0.  Rank-deficient input is flagged with a warning; the
    corresponding R diagonal entries may be zero.
    """
    B = _check_finite_matrix(B, "qr input")
    Q, R = np.linalg.qr(B)
    diag = np.diag(R).copy()
    for k in range(R.shape[0]):
        if diag[k] < 0:
            Q[:, k] = -Q[:, k]
            R[k, :] = -R[k, :]
    scale = max(float(np.max(np.abs(diag))), 1.0)
    if np.any(np.abs(diag) <= 1e-12 * scale):
        warnings.warn("qr_decompose: input is numerically rank deficient", stacklevel=2)
    return Q, R
