"""Domain types and the forward model.

A network snapshot is a p x p interaction matrix whose expected value is
determined by two nonnegative p x K factor matrices: an influence matrix B1
(how strongly each node emits on each topic) and a receptivity matrix B2
(how strongly each node absorbs on each topic), combined through a
per-observation topic distribution m on the K-simplex:

    expected interaction = B1 @ diag(m) @ B2.T = sum_k m_k * b1_k b2_k^T

Observations are the expected matrix plus mean-zero noise (real kind) or
entrywise Bernoulli draws of the clipped expected matrix (binary kind).
A variant zeroes the diagonal, and a masked variant restricts the model to
rows flagged active for that observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, ValidationError

# Tolerance for accepting a vector as a point on the probability simplex.
SIMPLEX_ATOL = 1e-9

OBSERVATION_KINDS = ("real", "binary")


def _as_float_matrix(X, name: str) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite entries")
    return X


def validate_topic_distribution(m, K: int | None = None) -> np.ndarray:
    """Check that m is a valid point on the K-simplex and return it as float64.

    Entries must be nonnegative and sum to 1 within SIMPLEX_ATOL.  Vectors
    outside tolerance are rejected, never silently renormalized.
    """
    m = np.asarray(m, dtype=float).ravel()
    if K is not None and m.size != K:
        raise DimensionError(f"topic vector has length {m.size}, expected {K}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("topic vector contains non-finite entries")
    if np.any(m < 0):
        raise ValidationError("topic vector has negative entries")
    total = float(m.sum())
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValidationError(f"topic vector sums to {total!r}, not 1")
    return m


def validate_topic_matrix(M, n: int | None = None, K: int | None = None) -> np.ndarray:
    """Check that M is (n, K) with every row on the simplex."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise DimensionError(f"topic matrix must be 2-d, got shape {M.shape}")
    if n is not None and M.shape[0] != n:
        raise DimensionError(f"topic matrix has {M.shape[0]} rows, expected {n}")
    if K is not None and M.shape[1] != K:
        raise DimensionError(f"topic matrix has {M.shape[1]} columns, expected {K}")
    for i in range(M.shape[0]):
        try:
            validate_topic_distribution(M[i])
        except ValidationError as exc:
            raise ValidationError(f"topic matrix row {i}: {exc}") from exc
    return M


@dataclass
class FactorPair:
    """Nonnegative influence/receptivity factors, both p x K."""

    B1: np.ndarray
    B2: np.ndarray

    def __post_init__(self):
        self.B1 = _as_float_matrix(self.B1, "B1")
        self.B2 = _as_float_matrix(self.B2, "B2")
        if self.B1.shape != self.B2.shape:
            raise DimensionError(
                f"factor shapes differ: {self.B1.shape} vs {self.B2.shape}"
            )
        if np.any(self.B1 < 0) or np.any(self.B2 < 0):
            raise ValidationError("factor matrices must be entrywise nonnegative")

    @property
    def p(self) -> int:
        return self.B1.shape[0]

    @property
    def K(self) -> int:
        return self.B1.shape[1]

    def thetas(self) -> np.ndarray:
        """Stack of K rank-one topic matrices b1_k b2_k^T, shape (K, p, p)."""
        return np.einsum("jk,lk->kjl", self.B1, self.B2)

    def nnz(self) -> tuple[int, int]:
        return int(np.count_nonzero(self.B1)), int(np.count_nonzero(self.B2))

    def copy(self) -> "FactorPair":
        return FactorPair(self.B1.copy(), self.B2.copy())


def balance_factor_columns(bp: FactorPair) -> FactorPair:
    """Rescale each column pair to equal 2-norms without changing the model.

    The products b1_k b2_k^T are invariant under b1_k *= g, b2_k /= g, so the
    forward model cannot distinguish column scales.  This picks the balanced
    representative ||b1_k|| == ||b2_k||, the gauge the balance penalty used by
    the estimator drives iterates toward.  Columns where either norm is zero
    are left untouched.
    """
    B1 = bp.B1.copy()
    B2 = bp.B2.copy()
    n1 = np.linalg.norm(B1, axis=0)
    n2 = np.linalg.norm(B2, axis=0)
    for k in range(bp.K):
        if n1[k] > 0 and n2[k] > 0:
            g = np.sqrt(n2[k] / n1[k])
            B1[:, k] *= g
            B2[:, k] /= g
    return FactorPair(B1, B2)


def validate_theta_stack(thetas, K: int | None = None, p: int | None = None) -> np.ndarray:
    """Check a (K, p, p) stack of topic matrices for shape and finiteness."""
    thetas = np.asarray(thetas, dtype=float)
    if thetas.ndim != 3 or thetas.shape[1] != thetas.shape[2]:
        raise DimensionError(f"theta stack must be (K, p, p), got {thetas.shape}")
    if K is not None and thetas.shape[0] != K:
        raise DimensionError(f"theta stack has {thetas.shape[0]} slices, expected {K}")
    if p is not None and thetas.shape[1] != p:
        raise DimensionError(f"theta slices are {thetas.shape[1]} x {thetas.shape[2]}, expected p={p}")
    if not np.all(np.isfinite(thetas)):
        raise ValidationError("theta stack contains non-finite entries")
    return thetas


@dataclass
class Observation:
    """One network snapshot: matrix X plus its kind and optional side info.

    kind is "real" (noisy real-valued entries) or "binary" (entries in {0,1}).
    topics, when present, is the observation's topic distribution.  mask, when
    present, is a binary p x p matrix; model predictions for this observation
    are restricted to mask == 1 entries.
    """

    X: np.ndarray
    kind: str = "real"
    topics: np.ndarray | None = None
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.X = _as_float_matrix(self.X, "observation")
        if self.X.shape[0] != self.X.shape[1]:
            raise DimensionError(f"observation must be square, got {self.X.shape}")
        if self.kind not in OBSERVATION_KINDS:
            raise ValidationError(f"unknown observation kind {self.kind!r}")
        if self.kind == "binary":
            vals = np.unique(self.X)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValidationError("binary observation has entries outside {0, 1}")
        if self.topics is not None:
            self.topics = validate_topic_distribution(self.topics)
        if self.mask is not None:
            self.mask = _as_float_matrix(self.mask, "mask")
            if self.mask.shape != self.X.shape:
                raise DimensionError(
                    f"mask shape {self.mask.shape} does not match observation {self.X.shape}"
                )
            if not np.all(np.isin(np.unique(self.mask), (0.0, 1.0))):
                raise ValidationError("mask must be binary")

    @property
    def p(self) -> int:
        return self.X.shape[0]


@dataclass
class Dataset:
    """A collection of observations over a fixed node set and topic count."""

    p: int
    K: int
    observations: tuple
    topics_known: bool = True

    def __post_init__(self):
        self.observations = tuple(self.observations)
        if self.p <= 0 or self.K <= 0:
            raise ValidationError("p and K must be positive")
        if not self.observations:
            raise ValidationError("dataset has no observations")
        for i, obs in enumerate(self.observations):
            if not isinstance(obs, Observation):
                raise ValidationError(f"observation {i} is not an Observation")
            if obs.p != self.p:
                raise DimensionError(
                    f"observation {i} is {obs.p} x {obs.p}, dataset says p={self.p}"
                )
            if self.topics_known:
                if obs.topics is None:
                    raise ValidationError(
                        f"topics_known dataset but observation {i} has no topics"
                    )
                if obs.topics.size != self.K:
                    raise DimensionError(
                        f"observation {i} topics have length {obs.topics.size}, expected {self.K}"
                    )

    @property
    def n(self) -> int:
        return len(self.observations)

    def topic_matrix(self) -> np.ndarray | None:
        """Stack per-observation topics into (n, K), or None if any missing."""
        if any(obs.topics is None for obs in self.observations):
            return None
        return np.stack([obs.topics for obs in self.observations])

    def stacked(self) -> tuple[np.ndarray, np.ndarray | None]:
        """Return observations as an (n, p, p) array plus a mask stack.

        The mask stack is None when no observation carries a mask; otherwise
        unmasked observations contribute all-ones slices.
        """
        X = np.stack([obs.X for obs in self.observations])
        if all(obs.mask is None for obs in self.observations):
            return X, None
        masks = np.stack([
            obs.mask if obs.mask is not None else np.ones((self.p, self.p))
            for obs in self.observations
        ])
        return X, masks


def forward(bp: FactorPair, m) -> np.ndarray:
    """Expected interaction matrix B1 @ diag(m) @ B2.T."""
    m = validate_topic_distribution(m, bp.K)
    return (bp.B1 * m) @ bp.B2.T


def forward_nodiag(bp: FactorPair, m) -> np.ndarray:
    """Forward model with the diagonal (self-interaction) zeroed."""
    out = forward(bp, m)
    np.fill_diagonal(out, 0.0)
    return out


def forward_masked(bp: FactorPair, m, mask) -> np.ndarray:
    """Forward model restricted to the active entries of a binary mask."""
    mask = _as_float_matrix(mask, "mask")
    if mask.shape != (bp.p, bp.p):
        raise DimensionError(f"mask shape {mask.shape}, expected {(bp.p, bp.p)}")
    return forward(bp, m) * mask


def predict_dataset(bp: FactorPair, ds: Dataset, M) -> list[np.ndarray]:
    """Per-observation predictions, honoring each observation's mask."""
    M = validate_topic_matrix(M, n=ds.n, K=ds.K)
    if bp.p != ds.p:
        raise DimensionError(f"factors have p={bp.p}, dataset has p={ds.p}")
    preds = []
    for i, obs in enumerate(ds.observations):
        if obs.mask is not None:
            preds.append(forward_masked(bp, M[i], obs.mask))
        else:
            preds.append(forward(bp, M[i]))
    return preds
