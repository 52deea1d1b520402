"""Joint estimation of factors and per-observation topic weights.

When topic distributions are unknown the fit alternates two blocks:

* topic step: for every observation, projected gradient descent of its
  quadratic loss over the probability simplex (run first each round);
* factor step: a fixed budget of the known-topics proximal gradient loop,
  warm-started from the current factors.

Initialization comes from the rank-K SVD of the mean observation: with
near-orthogonal true columns and near-uniform topic usage the mean is close
to (1/K) sum_k Theta_k, so K * sigma_k u_k v_k^T approximates Theta_k.
Estimated topics are only identified up to a relabeling, so evaluation
helpers align columns by an exact assignment before measuring distances.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from scipy.optimize import linear_sum_assignment

from .exceptions import DimensionError, ValidationError
from .fit_known import FitConfig, FitReport, fit_known, subspace_distance
from .model import (
    Dataset,
    FactorPair,
    Observation,
    validate_theta_stack,
    validate_topic_matrix,
)
from .numerics import clamp_nonneg, project_simplex, project_simplex_rows, truncated_svd
from .objective import hessian_M, loss_and_grads

TOPIC_STEP_ITERS = 200
TOPIC_STEP_TOL = 1e-10
# Singular values at or below this are treated as numerically absent.
DEGENERATE_SV = 1e-12


@dataclass
class MeanSvdInit:
    """Rank-K initialization: free theta stack, clamped factors, and the
    indices of components whose singular value was numerically zero."""

    thetas: np.ndarray
    factors: FactorPair
    degenerate: tuple


@dataclass
class JointFitReport:
    """Outer-loop diagnostics for the alternating fit."""

    outer_iters: int
    loss_trace: np.ndarray
    dist_B_trace: np.ndarray | None
    dist_M_trace: np.ndarray | None
    permutation: np.ndarray
    wall_time: float
    converged: bool
    degenerate_init: tuple


def init_mean_svd(ds: Dataset, K: int | None = None, seed: int = 0) -> MeanSvdInit:
    """Initialize from the leading-K SVD of the mean observation.

    Theta_k = K * sigma_k u_k v_k^T; factors are u_k sqrt(K sigma_k) and
    v_k sqrt(K sigma_k) with negatives clamped after the SVD sign fix.
    Components whose singular value is numerically zero (rank of the mean
    below K) are replaced by seeded random unit-norm rank-one factors scaled
    to the smallest retained singular value, and reported as degenerate.
    """
    K = ds.K if K is None else K
    if K <= 0 or K > ds.p:
        raise DimensionError(f"K={K} out of range for p={ds.p}")
    X, _ = ds.stacked()
    xbar = X.mean(axis=0)
    triple = truncated_svd(xbar, K)

    degenerate = tuple(int(k) for k in np.nonzero(triple.S <= DEGENERATE_SV)[0])
    kept = triple.S[triple.S > DEGENERATE_SV]
    fill_scale = float(kept[-1]) if kept.size else 1.0

    rng = np.random.default_rng(seed)
    p = ds.p
    thetas = np.empty((K, p, p))
    B1 = np.empty((p, K))
    B2 = np.empty((p, K))
    for k in range(K):
        if k in degenerate:
            u = rng.random(p)
            v = rng.random(p)
            u /= np.linalg.norm(u)
            v /= np.linalg.norm(v)
            sigma = fill_scale
        else:
            u = triple.U[:, k]
            v = triple.V[:, k]
            sigma = float(triple.S[k])
        scale = K * sigma
        thetas[k] = scale * np.outer(u, v)
        B1[:, k] = u * np.sqrt(scale)
        B2[:, k] = v * np.sqrt(scale)
    factors = FactorPair(clamp_nonneg(B1), clamp_nonneg(B2))
    return MeanSvdInit(thetas=thetas, factors=factors, degenerate=degenerate)


def _topic_quadratic(thetas: np.ndarray, X: np.ndarray, mask: np.ndarray | None):
    """Linear/quadratic coefficients of the per-observation topic loss.

    With masked topic matrices T_k the loss is
    (1/2) m^T H m - c^T m + const, H[k, k'] = <T_k, T_k'>, c_k = <X, T_k>.
    """
    T = thetas if mask is None else thetas * mask
    c = np.einsum("jl,kjl->k", X, T)
    H = np.einsum("kjl,mjl->km", T, T)
    return c, H


def _solve_simplex_quadratic(
    c: np.ndarray,
    H: np.ndarray,
    m0: np.ndarray,
    step: float | None,
    iters: int,
    tol: float,
) -> np.ndarray:
    if step is None:
        lam_max = float(np.linalg.eigvalsh(H)[-1])
        if lam_max <= 0:
            return project_simplex(m0)
        step = 1.0 / (2.0 * lam_max)
    m = m0
    for _ in range(iters):
        grad = H @ m - c
        m_new = project_simplex(m - step * grad)
        if float(np.max(np.abs(m_new - m))) <= tol:
            return m_new
        m = m_new
    return m


def _solve_simplex_quadratic_rows(
    C: np.ndarray,
    H: np.ndarray,
    M0: np.ndarray,
    iters: int,
    tol: float,
) -> np.ndarray:
    """Row-batched solver for observations sharing one Hessian.

    Rows whose update moves at most tol are frozen and skipped afterwards.
    """
    lam_max = float(np.linalg.eigvalsh(H)[-1])
    if lam_max <= 0:
        return project_simplex_rows(M0)
    step = 1.0 / (2.0 * lam_max)
    M = np.array(M0, dtype=float)
    active = np.arange(M.shape[0])
    for _ in range(iters):
        sub = M[active]
        new = project_simplex_rows(sub - step * (sub @ H - C[active]))
        moved = np.max(np.abs(new - sub), axis=1)
        M[active] = new
        active = active[moved > tol]
        if active.size == 0:
            break
    return M


def _flat_coefficients(thetas: np.ndarray, X: np.ndarray):
    """Shared Gram and per-observation linear terms for unmasked data."""
    T = thetas.reshape(thetas.shape[0], -1)
    C = X.reshape(X.shape[0], -1) @ T.T
    H = T @ T.T
    return C, H


def estimate_topics(
    bp: FactorPair,
    obs: Observation,
    m0=None,
    step: float | None = None,
    iters: int = TOPIC_STEP_ITERS,
    tol: float = TOPIC_STEP_TOL,
) -> np.ndarray:
    """Estimate one observation's topic weights given fixed factors.

    Projected gradient descent on the simplex; the default step is half the
    inverse largest eigenvalue of the topic-matrix Gram, which guarantees
    the loss at the output never exceeds the loss at m0.
    """
    if obs.p != bp.p:
        raise DimensionError(f"observation is {obs.p} x {obs.p}, factors have p={bp.p}")
    if m0 is None:
        m0 = np.full(bp.K, 1.0 / bp.K)
    else:
        m0 = np.asarray(m0, dtype=float).ravel()
        if m0.size != bp.K:
            raise DimensionError(f"m0 has length {m0.size}, expected {bp.K}")
        if np.any(m0 < 0) or abs(float(m0.sum()) - 1.0) > 1e-9:
            raise ValidationError("m0 must lie on the probability simplex")
    c, H = _topic_quadratic(bp.thetas(), obs.X, obs.mask)
    return _solve_simplex_quadratic(c, H, m0, step, iters, tol)


def infer_topic_matrix(
    thetas,
    ds: Dataset,
    iters: int = TOPIC_STEP_ITERS,
    tol: float = TOPIC_STEP_TOL,
) -> np.ndarray:
    """Per-observation topic estimates for a whole dataset, from a theta stack.

    Used both by the joint fit's topic step and to score fitted models on
    held-out data, where topic weights must be inferred per observation.
    """
    thetas = validate_theta_stack(thetas, p=ds.p)
    K = thetas.shape[0]
    if all(obs.mask is None for obs in ds.observations):
        X, _ = ds.stacked()
        C, H = _flat_coefficients(thetas, X)
        M0 = np.full((ds.n, K), 1.0 / K)
        return _solve_simplex_quadratic_rows(C, H, M0, iters, tol)
    M = np.empty((ds.n, K))
    for i, obs in enumerate(ds.observations):
        c, H = _topic_quadratic(thetas, obs.X, obs.mask)
        M[i] = _solve_simplex_quadratic(c, H, np.full(K, 1.0 / K), None, iters, tol)
    return M


def fit_joint(
    ds: Dataset,
    K: int | None = None,
    cfg: FitConfig | None = None,
    outer_tol: float = 1e-8,
    max_outer: int = 50,
    bp_star: FactorPair | None = None,
    M_star=None,
    bp0: FactorPair | None = None,
) -> tuple[FactorPair, np.ndarray, JointFitReport]:
    """Alternate topic and factor steps from the mean-SVD initialization.

    Any topics stored on the dataset are ignored.  cfg.max_iters is the
    factor-step budget per outer round.  Stops when the relative change of
    the loss across an outer round falls below outer_tol, or after
    max_outer rounds.  When ground truth is supplied the report carries
    aligned per-round distance traces and the final column permutation.
    bp0 overrides the mean-SVD starting factors (warm restart).
    """
    K = ds.K if K is None else K
    if K != ds.K:
        raise DimensionError(f"K={K} does not match dataset K={ds.K}")
    if cfg is None:
        cfg = FitConfig(s=4 * ds.p, max_iters=100)
    cfg.validate(K)

    start = time.perf_counter()
    if bp0 is None:
        init = init_mean_svd(ds, K, seed=cfg.seed)
        bp = init.factors
        degenerate = init.degenerate
    else:
        if bp0.p != ds.p or bp0.K != K:
            raise DimensionError(
                f"starting factors are {bp0.p} x {bp0.K}, dataset needs {ds.p} x {K}"
            )
        bp = bp0
        degenerate = ()
    M = np.full((ds.n, K), 1.0 / K)
    X, mask = ds.stacked()

    loss_trace = np.empty(max_outer)
    dist_B = np.empty(max_outer) if bp_star is not None else None
    dist_M = np.empty(max_outer) if M_star is not None else None
    if M_star is not None:
        M_star = validate_topic_matrix(M_star, n=ds.n, K=K)

    prev_loss = None
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        M = _topic_step(bp, ds, M)
        bp, _ = fit_known(ds, M, cfg, bp0=bp)
        loss, _, _ = loss_and_grads(bp.B1, bp.B2, X, M, mask, threads=cfg.threads)
        loss_trace[outer - 1] = loss
        if dist_B is not None or dist_M is not None:
            perm = _eval_permutation(M, M_star, bp, bp_star)
            if dist_B is not None:
                aligned = FactorPair(bp_star.B1[:, perm], bp_star.B2[:, perm])
                dist_B[outer - 1] = subspace_distance(bp, aligned)
            if dist_M is not None:
                dist_M[outer - 1] = distance_topics(M, M_star[:, perm])
        if prev_loss is not None:
            denom = max(abs(prev_loss), 1e-30)
            if abs(prev_loss - loss) / denom < outer_tol:
                converged = True
                break
        prev_loss = loss

    perm = _eval_permutation(M, M_star, bp, bp_star)
    report = JointFitReport(
        outer_iters=outer,
        loss_trace=loss_trace[:outer],
        dist_B_trace=None if dist_B is None else dist_B[:outer],
        dist_M_trace=None if dist_M is None else dist_M[:outer],
        permutation=perm,
        wall_time=time.perf_counter() - start,
        converged=converged,
        degenerate_init=degenerate,
    )
    return bp, M, report


def _topic_step(bp: FactorPair, ds: Dataset, M: np.ndarray) -> np.ndarray:
    thetas = bp.thetas()
    if all(obs.mask is None for obs in ds.observations):
        X, _ = ds.stacked()
        C, H = _flat_coefficients(thetas, X)
        return _solve_simplex_quadratic_rows(C, H, M, TOPIC_STEP_ITERS, TOPIC_STEP_TOL)
    out = np.empty_like(M)
    for i, obs in enumerate(ds.observations):
        c, H = _topic_quadratic(thetas, obs.X, obs.mask)
        out[i] = _solve_simplex_quadratic(
            c, H, M[i], None, TOPIC_STEP_ITERS, TOPIC_STEP_TOL
        )
    return out


def _eval_permutation(M, M_star, bp, bp_star) -> np.ndarray:
    if M_star is not None:
        return align_permutation(M, M_star)
    if bp_star is not None:
        return align_factor_permutation(bp, bp_star)
    K = M.shape[1]
    return np.arange(K)


def align_permutation(M_hat, M_star) -> np.ndarray:
    """Column relabeling of the truth that best matches estimated topics.

    Solves the K x K assignment problem on squared column distances exactly;
    entry k of the result is the truth column paired with estimate column k,
    so M_star[:, perm] is aligned with M_hat.
    """
    M_hat = np.asarray(M_hat, dtype=float)
    M_star = np.asarray(M_star, dtype=float)
    if M_hat.shape != M_star.shape:
        raise DimensionError(f"shapes differ: {M_hat.shape} vs {M_star.shape}")
    cost = np.sum(
        (M_hat[:, :, None] - M_star[:, None, :]) ** 2, axis=0
    )
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(M_hat.shape[1], dtype=int)
    perm[rows] = cols
    return perm


def align_factor_permutation(bp: FactorPair, bp_star: FactorPair) -> np.ndarray:
    """Assignment alignment on factor columns, for models without topics."""
    if bp.B1.shape != bp_star.B1.shape:
        raise DimensionError(f"shapes differ: {bp.B1.shape} vs {bp_star.B1.shape}")
    cost = np.sum(
        (bp.B1[:, :, None] - bp_star.B1[:, None, :]) ** 2, axis=0
    ) + np.sum((bp.B2[:, :, None] - bp_star.B2[:, None, :]) ** 2, axis=0)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(bp.K, dtype=int)
    perm[rows] = cols
    return perm


def distance_topics(M_hat, M_star) -> float:
    """Mean squared topic-weight error (1/n) sum_i sum_k (m_ik - m*_ik)^2.

    Columns must already be aligned; apply align_permutation first.
    """
    M_hat = np.asarray(M_hat, dtype=float)
    M_star = np.asarray(M_star, dtype=float)
    if M_hat.shape != M_star.shape:
        raise DimensionError(f"shapes differ: {M_hat.shape} vs {M_star.shape}")
    return float(np.sum((M_hat - M_star) ** 2)) / M_hat.shape[0]
