"""Estimation of the factor pair when topic distributions are known.

Two stages:

1. init_convex: gradient descent on the convex relaxation over a free stack
   of K topic matrices, followed by a rank-one SVD of each matrix to produce
   nonnegative starting factors.
2. fit_known: alternating proximal gradient descent on the factors.  Each
   iteration takes a gradient step on the loss plus the column-balance
   penalty, clamps negatives to zero, and hard-thresholds each factor to s
   entries.  Both gradients are evaluated at the current iterate; neither
   update sees the other's half-step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, DimensionError, NumericError, ValidationError
from .model import Dataset, FactorPair, validate_topic_matrix
from .numerics import clamp_nonneg, hard_threshold, spectral_norm, truncated_svd
from .objective import hessian_topics, loss_and_grads, theta_loss_and_grad

RELAX_MAX_ITERS = 5000
RELAX_TOL = 1e-10


@dataclass
class FitConfig:
    """Settings for the alternating proximal gradient loop.

    s: entries kept per factor by hard thresholding (must be >= K).
    eta: step size; None applies the conservative spectral-norm rule.
    lam: weight of the column-balance penalty.
    tol: relative-loss-change stopping tolerance (0 disables early stop).
    """

    s: int
    eta: float | None = None
    lam: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-10
    seed: int = 0
    threads: int = 1

    def validate(self, K: int | None = None) -> None:
        if K is not None and self.s < K:
            raise ValidationError(f"s={self.s} must be at least K={K}")
        if self.s <= 0:
            raise ValidationError(f"s must be positive, got {self.s}")
        if self.eta is not None and not self.eta > 0:
            raise ValidationError(f"eta must be positive, got {self.eta}")
        if self.lam < 0:
            raise ValidationError(f"lam must be nonnegative, got {self.lam}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValidationError(f"tol must be nonnegative, got {self.tol}")
        if self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")


@dataclass
class FitReport:
    """Per-run diagnostics; traces have length iters_run."""

    loss_trace: np.ndarray
    dist_trace: np.ndarray | None
    iters_run: int
    wall_time: float
    converged: bool


def solve_theta_relaxation(
    X: np.ndarray,
    M: np.ndarray,
    mask: np.ndarray | None,
    K: int,
    max_iters: int = RELAX_MAX_ITERS,
    tol: float = RELAX_TOL,
    thetas0: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Gradient descent on the convex topic-matrix relaxation.

    The objective is a quadratic whose curvature along any direction is at
    most the largest eigenvalue of the topic second moment, itself at most 1
    for simplex rows, so a fixed unit step is safe.  Stops when the stacked
    gradient norm drops below tol.  Returns the theta stack and the number
    of iterations used.
    """
    p = X.shape[1]
    thetas = np.zeros((K, p, p)) if thetas0 is None else thetas0.copy()
    iters = 0
    for iters in range(1, max_iters + 1):
        _, grad = theta_loss_and_grad(thetas, X, M, mask)
        thetas -= grad
        if not np.all(np.isfinite(thetas)):
            raise ConvergenceError(f"relaxation diverged at iteration {iters}")
        if float(np.linalg.norm(grad)) <= tol:
            break
    return thetas, iters


def init_convex(
    ds: Dataset,
    M,
    K: int | None = None,
    relax_iters: int = RELAX_MAX_ITERS,
    relax_tol: float = RELAX_TOL,
) -> FactorPair:
    """Starting factors from the convex relaxation.

    Solves the relaxation, then factors each estimated topic matrix by its
    leading singular triple: b1_k = u sqrt(s), b2_k = v sqrt(s).  The SVD
    sign convention makes the dominant entry of u positive; any remaining
    negative entries are clamped to zero afterwards.
    """
    K = ds.K if K is None else K
    if K != ds.K:
        raise DimensionError(f"K={K} does not match dataset K={ds.K}")
    X, mask = ds.stacked()
    M = validate_topic_matrix(M, n=ds.n, K=K)
    thetas, _ = solve_theta_relaxation(X, M, mask, K, max_iters=relax_iters, tol=relax_tol)

    p = ds.p
    B1 = np.zeros((p, K))
    B2 = np.zeros((p, K))
    for k in range(K):
        triple = truncated_svd(thetas[k], 1)
        root = np.sqrt(triple.S[0])
        B1[:, k] = triple.U[:, 0] * root
        B2[:, k] = triple.V[:, 0] * root
    return FactorPair(clamp_nonneg(B1), clamp_nonneg(B2))


def auto_step_size(bp0: FactorPair, mu_theta: float, L_theta: float) -> float:
    """Conservative step size from the starting point's spectral norm.

    eta = 1 / (16 ||B0||_2^2) * min(1 / (2 (mu_theta + L_theta)), 1), where
    ||B0||_2 is the spectral norm of the p x 2K concatenation [B1, B2].
    """
    concat = np.hstack([bp0.B1, bp0.B2])
    norm = spectral_norm(concat)
    if norm <= 0:
        raise ValidationError("step-size rule undefined for all-zero starting factors")
    cap = 1.0
    if mu_theta + L_theta > 0:
        cap = min(1.0 / (2.0 * (mu_theta + L_theta)), 1.0)
    return cap / (16.0 * norm**2)


def fit_known(
    ds: Dataset,
    M,
    cfg: FitConfig,
    bp0: FactorPair | None = None,
    bp_star: FactorPair | None = None,
) -> tuple[FactorPair, FitReport]:
    """Alternating proximal gradient descent with known topic weights.

    bp0 defaults to init_convex on the same data.  When bp_star is supplied
    the report carries a per-iteration trace of the squared factor distance
    to it.  Stops after max_iters or when the relative change of the
    objective (loss plus balance penalty) falls below cfg.tol.
    """
    cfg.validate(ds.K)
    X, mask = ds.stacked()
    M = validate_topic_matrix(M, n=ds.n, K=ds.K)
    if bp0 is None:
        bp0 = init_convex(ds, M)
    if bp0.p != ds.p or bp0.K != ds.K:
        raise DimensionError(
            f"starting factors are {bp0.p} x {bp0.K}, dataset needs {ds.p} x {ds.K}"
        )

    eta = cfg.eta
    if eta is None:
        eigs = np.linalg.eigvalsh(hessian_topics(M))
        eta = auto_step_size(bp0, float(eigs[0]), float(eigs[-1]))

    B1 = bp0.B1.copy()
    B2 = bp0.B2.copy()
    loss_trace = np.empty(cfg.max_iters)
    dist_trace = np.empty(cfg.max_iters) if bp_star is not None else None
    start = time.perf_counter()

    # One evaluation per iteration: the gradients computed after an update
    # drive the next update, and the loss at the same point feeds the trace.
    loss, G1, G2 = loss_and_grads(B1, B2, X, M, mask, threads=cfg.threads)
    diff = np.sum(B1**2, axis=0) - np.sum(B2**2, axis=0)
    prev_obj = loss + 0.5 * cfg.lam * float(np.sum(diff**2))

    converged = False
    iters_run = 0
    for t in range(1, cfg.max_iters + 1):
        # Both penalty gradients use the pre-update factors, like the loss.
        P1 = 2.0 * cfg.lam * B1 * diff
        P2 = -2.0 * cfg.lam * B2 * diff
        B1 = hard_threshold(clamp_nonneg(B1 - eta * (G1 + P1)), cfg.s)
        B2 = hard_threshold(clamp_nonneg(B2 - eta * (G2 + P2)), cfg.s)

        loss, G1, G2 = loss_and_grads(B1, B2, X, M, mask, threads=cfg.threads)
        diff = np.sum(B1**2, axis=0) - np.sum(B2**2, axis=0)
        obj = loss + 0.5 * cfg.lam * float(np.sum(diff**2))
        if not np.isfinite(obj):
            raise NumericError(f"objective became non-finite at iteration {t}")
        loss_trace[t - 1] = obj
        if dist_trace is not None:
            dist_trace[t - 1] = subspace_distance(FactorPair(B1, B2), bp_star)
        iters_run = t
        denom = max(abs(prev_obj), 1e-30)
        if cfg.tol > 0 and abs(prev_obj - obj) / denom < cfg.tol:
            converged = True
            break
        prev_obj = obj

    report = FitReport(
        loss_trace=loss_trace[:iters_run],
        dist_trace=None if dist_trace is None else dist_trace[:iters_run],
        iters_run=iters_run,
        wall_time=time.perf_counter() - start,
        converged=converged,
    )
    return FactorPair(B1, B2), report


def subspace_distance(bp: FactorPair, bp_star: FactorPair) -> float:
    """Squared factor distance minimized over per-column sign flips.

    d^2 = min over o_k in {-1, +1} of
    sum_k ||b1_k - o_k b1*_k||^2 + ||b2_k - o_k b2*_k||^2; each column's
    sign is chosen independently.  For nonnegative factors the optimal signs
    are +1 and this reduces to ||B1 - B1*||_F^2 + ||B2 - B2*||_F^2.
    """
    if bp.B1.shape != bp_star.B1.shape:
        raise DimensionError(
            f"factor shapes differ: {bp.B1.shape} vs {bp_star.B1.shape}"
        )
    cross = np.einsum("jk,jk->k", bp.B1, bp_star.B1) + np.einsum(
        "jk,jk->k", bp.B2, bp_star.B2
    )
    base = (
        np.sum(bp.B1**2)
        + np.sum(bp.B2**2)
        + np.sum(bp_star.B1**2)
        + np.sum(bp_star.B2**2)
    )
    return float(base - 2.0 * np.sum(np.abs(cross)))
