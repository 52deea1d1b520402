"""Loss, gradients, curvature summaries and identifiability diagnostics.

Two equivalent parameterizations appear throughout:

* factor form: squared-error loss of (B1, B2) over a dataset,
  f(B1, B2) = (1 / 2n) * sum_i ||X_i - B1 diag(m_i) B2^T||_F^2
* topic-matrix form: the same loss over a free stack of K matrices,
  f(Theta) = (1 / 2n) * sum_i ||X_i - sum_k m_ik Theta_k||_F^2

Masked observations contribute masked residuals.  Array-level kernels are
exposed for the fitting loops, which stack a dataset once and iterate.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DimensionError, ValidationError
from .model import Dataset, FactorPair, Observation, validate_theta_stack, validate_topic_matrix
from .numerics import qr_decompose


# ---------------------------------------------------------------------------
# array-level kernels (used directly by the fitting loops)
# ---------------------------------------------------------------------------

def forward_stack(B1: np.ndarray, B2: np.ndarray, M: np.ndarray) -> np.ndarray:
    """All-observation forward model, shape (n, p, p)."""
    W = M[:, None, :] * B1[None, :, :]
    return W @ B2.T


def _chunks(n: int, parts: int):
    sizes = np.full(parts, n // parts)
    sizes[: n % parts] += 1
    start = 0
    for size in sizes:
        if size:
            yield slice(start, start + size)
        start += size


def loss_and_grads(
    B1: np.ndarray,
    B2: np.ndarray,
    X: np.ndarray,
    M: np.ndarray,
    mask: np.ndarray | None = None,
    threads: int = 1,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and both factor gradients in one pass over the observations.

    threads > 1 opts into a chunked parallel reduction whose partial sums are
    combined in completion order; that mode is not bit-reproducible.  The
    default is a single deterministic sequential pass.
    """
    n = X.shape[0]

    def partial(sel: slice):
        R = X[sel] - forward_stack(B1, B2, M[sel])
        if mask is not None:
            R *= mask[sel]
        flat = R.reshape(-1)
        sq = float(flat @ flat)
        # sum_i R_i B2 diag(m_i) and sum_i R_i^T B1 diag(m_i), batched.
        G1 = ((R @ B2) * M[sel, None, :]).sum(axis=0)
        G2 = ((R.transpose(0, 2, 1) @ B1) * M[sel, None, :]).sum(axis=0)
        return sq, G1, G2

    if threads <= 1 or n < 2 * threads:
        sq, G1, G2 = partial(slice(0, n))
    else:
        sq, G1, G2 = 0.0, np.zeros_like(B1), np.zeros_like(B2)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(partial, sel) for sel in _chunks(n, threads)]
            for fut in as_completed(futures):
                dsq, dG1, dG2 = fut.result()
                sq += dsq
                G1 += dG1
                G2 += dG2
    return 0.5 * sq / n, -G1 / n, -G2 / n


def theta_forward_stack(thetas: np.ndarray, M: np.ndarray) -> np.ndarray:
    """All-observation forward model from a free theta stack."""
    return np.tensordot(M, thetas, axes=([1], [0]))


def theta_loss_and_grad(
    thetas: np.ndarray,
    X: np.ndarray,
    M: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Loss and gradient of the topic-matrix form, gradient shape (K, p, p)."""
    n = X.shape[0]
    R = X - theta_forward_stack(thetas, M)
    if mask is not None:
        R *= mask
    flat = R.reshape(-1)
    loss = 0.5 * float(flat @ flat) / n
    grad = -np.tensordot(M, R, axes=([0], [0])) / n
    return loss, grad


def _stack_dataset(ds: Dataset, M) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    X, mask = ds.stacked()
    M = validate_topic_matrix(M, n=ds.n, K=ds.K)
    return X, mask, M


# ---------------------------------------------------------------------------
# public objective surface
# ---------------------------------------------------------------------------

def loss_factors(bp: FactorPair, ds: Dataset, M) -> float:
    """Mean halved squared Frobenius residual of the factor model."""
    if bp.p != ds.p:
        raise DimensionError(f"factors have p={bp.p}, dataset has p={ds.p}")
    X, mask, M = _stack_dataset(ds, M)
    loss, _, _ = loss_and_grads(bp.B1, bp.B2, X, M, mask)
    return loss


def loss_theta(thetas, ds: Dataset, M) -> float:
    """Same loss evaluated on a free stack of K topic matrices."""
    thetas = validate_theta_stack(thetas, K=ds.K, p=ds.p)
    X, mask, M = _stack_dataset(ds, M)
    loss, _ = theta_loss_and_grad(thetas, X, M, mask)
    return loss


def grad_factors(bp: FactorPair, ds: Dataset, M) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of loss_factors with respect to B1 and B2.

    With residuals R_i = X_i - B1 diag(m_i) B2^T (masked when a mask is
    present) these are G1 = -(1/n) sum_i R_i B2 diag(m_i) and
    G2 = -(1/n) sum_i R_i^T B1 diag(m_i).
    """
    if bp.p != ds.p:
        raise DimensionError(f"factors have p={bp.p}, dataset has p={ds.p}")
    X, mask, M = _stack_dataset(ds, M)
    _, G1, G2 = loss_and_grads(bp.B1, bp.B2, X, M, mask)
    return G1, G2


def grad_theta(thetas, ds: Dataset, M) -> np.ndarray:
    """Gradient of loss_theta, shape (K, p, p)."""
    thetas = validate_theta_stack(thetas, K=ds.K, p=ds.p)
    X, mask, M = _stack_dataset(ds, M)
    _, grad = theta_loss_and_grad(thetas, X, M, mask)
    return grad


def regularizer_balance(bp: FactorPair, lam: float) -> float:
    """Column-scale penalty (lam/2) * sum_k (||b1_k||^2 - ||b2_k||^2)^2.

    Zero exactly when every column pair has equal norms; it pins down the
    scale gauge the forward model cannot see.
    """
    if lam < 0:
        raise ValidationError(f"penalty weight must be nonnegative, got {lam}")
    diff = np.sum(bp.B1**2, axis=0) - np.sum(bp.B2**2, axis=0)
    return 0.5 * lam * float(np.sum(diff**2))


def grad_balance(bp: FactorPair, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of regularizer_balance: column k scales by the norm gap."""
    if lam < 0:
        raise ValidationError(f"penalty weight must be nonnegative, got {lam}")
    diff = np.sum(bp.B1**2, axis=0) - np.sum(bp.B2**2, axis=0)
    G1 = 2.0 * lam * bp.B1 * diff
    G2 = -2.0 * lam * bp.B2 * diff
    return G1, G2


def regularizer_l1(bp: FactorPair, lam: float) -> float:
    """Entry-sum penalty lam * sum(B1) + lam * sum(B2) for nonnegative factors."""
    if lam < 0:
        raise ValidationError(f"penalty weight must be nonnegative, got {lam}")
    return lam * float(np.sum(bp.B1) + np.sum(bp.B2))


def _obs_arrays(obs) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(obs, Observation):
        return obs.X, obs.mask
    return np.asarray(obs, dtype=float), None


def loss_topics(thetas, obs, m) -> float:
    """Per-observation loss (1/2) ||X - sum_k m_k Theta_k||_F^2 (masked)."""
    X, mask = _obs_arrays(obs)
    thetas = validate_theta_stack(thetas)
    m = np.asarray(m, dtype=float).ravel()
    R = X - np.einsum("k,kjl->jl", m, thetas)
    if mask is not None:
        R = R * mask
    return 0.5 * float(np.sum(R * R))


def grad_topics(thetas, obs, m) -> np.ndarray:
    """Gradient of loss_topics with respect to the topic weights.

    Component k is -<X - sum_k0 m_k0 Theta_k0, Theta_k>, with the residual
    masked when the observation carries a mask.
    """
    X, mask = _obs_arrays(obs)
    thetas = validate_theta_stack(thetas)
    m = np.asarray(m, dtype=float).ravel()
    if m.size != thetas.shape[0]:
        raise DimensionError(f"m has length {m.size}, theta stack has {thetas.shape[0]}")
    R = X - np.einsum("k,kjl->jl", m, thetas)
    if mask is not None:
        R = R * mask
    return -np.einsum("jl,kjl->k", R, thetas)


def hessian_topics(M) -> np.ndarray:
    """Second-moment matrix (1/n) M^T M of the topic rows, shape (K, K)."""
    M = validate_topic_matrix(M)
    return M.T @ M / M.shape[0]


def hessian_M(thetas) -> np.ndarray:
    """Gram matrix <Theta_k, Theta_k'> of the topic matrices, shape (K, K)."""
    thetas = validate_theta_stack(thetas)
    return np.einsum("kjl,mjl->km", thetas, thetas)


# ---------------------------------------------------------------------------
# identifiability diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ConditionReport:
    """Scalar diagnostics of how well-posed an instance is.

    mu_theta / L_theta: extreme eigenvalues of the topic second moment;
    mu_theta > 0 means topic usage spans all K directions.  mu_M: smallest
    eigenvalue of the topic-matrix Gram; positive means the K topic matrices
    are linearly independent.  rho0: Frobenius norm of the off-diagonal part
    of R1 A R2^T from the QR factors of the ground truth, zero when the true
    columns are orthogonal.  eta_oc: K times the largest mean topic weight,
    equal to 1 under perfectly uniform topic usage.  sigma_max: largest
    spectral norm among the rank-one topic matrices.  s_star: sparsity of
    the ground-truth factors (max nonzero count of the pair).
    """

    mu_theta: float
    L_theta: float
    mu_M: float
    rho0: float
    eta_oc: float
    sigma_max: float
    s_star: int

    def as_dict(self) -> dict:
        return asdict(self)


def check_conditions(bp_star: FactorPair, M_star) -> ConditionReport:
    """Evaluate the diagnostics at a ground-truth (factors, topics) pair."""
    M_star = validate_topic_matrix(M_star, K=bp_star.K)
    H_theta = hessian_topics(M_star)
    eigs_theta = np.linalg.eigvalsh(H_theta)
    thetas = bp_star.thetas()
    eigs_M = np.linalg.eigvalsh(hessian_M(thetas))

    _, R1 = qr_decompose(bp_star.B1)
    _, R2 = qr_decompose(bp_star.B2)
    col_means = M_star.mean(axis=0)
    A = R1 @ np.diag(col_means) @ R2.T
    off = A - np.diag(np.diag(A))
    rho0 = float(np.linalg.norm(off))

    sigma_max = float(
        np.max(np.linalg.norm(bp_star.B1, axis=0) * np.linalg.norm(bp_star.B2, axis=0))
    )
    return ConditionReport(
        mu_theta=float(eigs_theta[0]),
        L_theta=float(eigs_theta[-1]),
        mu_M=float(eigs_M[0]),
        rho0=rho0,
        eta_oc=float(bp_star.K * np.max(col_means)),
        sigma_max=sigma_max,
        s_star=max(bp_star.nnz()),
    )


def stat_error_M(errors, thetas_star) -> float:
    """Noise-topic alignment (1/n) sum_i sum_k <E_i, Theta_k>^2.

    This is the statistical floor for topic-weight recovery: the component of
    the noise that looks like a change in topic weights.
    """
    thetas_star = validate_theta_stack(thetas_star)
    E = np.asarray(errors, dtype=float)
    if E.ndim != 3:
        raise DimensionError(f"errors must be (n, p, p), got {E.shape}")
    inner = np.einsum("ijl,kjl->ik", E, thetas_star)
    return float(np.sum(inner**2)) / E.shape[0]


def grad_norm_at_truth(thetas_star, ds: Dataset, M) -> float:
    """Frobenius norm of the topic-matrix-form gradient at the ground truth.

    At the truth the residuals are exactly the noise matrices, so block k of
    the gradient is -(1/n) sum_i E_i m_ik; the stacked norm is the surrogate
    statistical error that drives the recovery bound for the relaxation.
    """
    return float(np.linalg.norm(grad_theta(thetas_star, ds, M)))
