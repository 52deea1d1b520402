"""Reference estimators the factor model is compared against.

* one_matrix: the mean observation, hard-thresholded; predicts the same
  matrix for every observation (p^2 parameters).
* k_matrices: one free matrix per topic from the convex relaxation,
  hard-thresholded; predicts the topic-weighted sum (p^2 K parameters).
* k_matrices joint: the same model with unknown topic weights, fit by
  alternating gradient steps on the matrices and simplex-projected steps
  on the weights.

The factor model carries 2pK parameters.  Hard thresholds default to 4p
entries per matrix so every method works at a comparable sparsity budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, ValidationError
from .fit_joint import _solve_simplex_quadratic, _topic_quadratic
from .fit_known import solve_theta_relaxation
from .model import Dataset, validate_topic_matrix
from .numerics import hard_threshold, project_simplex
from .objective import theta_forward_stack, theta_loss_and_grad

TOPIC_ITERS = 200
TOPIC_TOL = 1e-10


@dataclass
class BaselineModel:
    """Fitted baseline: variant tag plus the per-variant parameters."""

    variant: str  # "one_matrix" | "k_matrices"
    p: int
    K: int
    xbar: np.ndarray | None = None
    thetas: np.ndarray | None = None
    M: np.ndarray | None = None

    @property
    def n_parameters(self) -> int:
        if self.variant == "one_matrix":
            return self.p * self.p
        return self.p * self.p * self.K


def parameter_counts(p: int, K: int) -> dict:
    """Free-parameter counts of the three model families."""
    return {
        "ours": 2 * p * K,
        "one_matrix": p * p,
        "k_matrices": p * p * K,
    }


def default_threshold(p: int) -> int:
    return 4 * p


def fit_one_matrix(ds: Dataset, threshold_s: int | None = None) -> BaselineModel:
    """Mean observation, hard-thresholded to threshold_s entries."""
    s = default_threshold(ds.p) if threshold_s is None else threshold_s
    X, _ = ds.stacked()
    xbar = hard_threshold(X.mean(axis=0), s)
    return BaselineModel(variant="one_matrix", p=ds.p, K=ds.K, xbar=xbar)


def fit_k_matrices(
    ds: Dataset,
    M=None,
    threshold_s: int | None = None,
    relax_iters: int = 5000,
    relax_tol: float = 1e-10,
) -> BaselineModel:
    """Free topic matrices from the convex relaxation, known topic weights.

    Runs the same relaxation solver the factor initialization uses, then
    hard-thresholds each matrix to threshold_s entries.
    """
    if M is None:
        M = ds.topic_matrix()
        if M is None:
            raise ValidationError("k_matrices baseline needs topic weights")
    M = validate_topic_matrix(M, n=ds.n, K=ds.K)
    s = default_threshold(ds.p) if threshold_s is None else threshold_s
    X, mask = ds.stacked()
    thetas, _ = solve_theta_relaxation(
        X, M, mask, ds.K, max_iters=relax_iters, tol=relax_tol
    )
    thetas = np.stack([hard_threshold(thetas[k], s) for k in range(ds.K)])
    return BaselineModel(variant="k_matrices", p=ds.p, K=ds.K, thetas=thetas, M=M)


def fit_k_matrices_joint(
    ds: Dataset,
    K: int | None = None,
    outer_iters: int = 50,
    inner_theta_iters: int = 50,
    threshold_s: int | None = None,
    tol: float = 1e-10,
    seed: int = 0,
    thetas0: np.ndarray | None = None,
    M0: np.ndarray | None = None,
) -> BaselineModel:
    """Alternating fit of free topic matrices and unknown topic weights.

    Each round solves every observation's simplex-projected weight problem,
    then takes unit-step gradient descent on the matrices.  The uniform
    weight matrix with identical topic matrices is a fixed point of the
    alternation, so the default start perturbs uniform weights with a small
    seeded jitter before projecting back to the simplex.
    """
    K = ds.K if K is None else K
    if K != ds.K:
        raise DimensionError(f"K={K} does not match dataset K={ds.K}")
    s = default_threshold(ds.p) if threshold_s is None else threshold_s
    X, mask = ds.stacked()
    n = ds.n

    if thetas0 is None:
        thetas = np.zeros((K, ds.p, ds.p))
    else:
        thetas = thetas0.copy()
    if M0 is None:
        rng = np.random.default_rng(seed)
        jitter = rng.uniform(-0.5 / K, 0.5 / K, size=(n, K))
        M = np.stack([project_simplex(1.0 / K + jitter[i]) for i in range(n)])
    else:
        M = validate_topic_matrix(M0, n=n, K=K).copy()

    prev_loss = None
    for _ in range(outer_iters):
        # Weight step first, mirroring the factor model's joint fit.
        M = _weight_step(thetas, ds, M)
        for _ in range(inner_theta_iters):
            _, grad = theta_loss_and_grad(thetas, X, M, mask)
            thetas -= grad
            if float(np.linalg.norm(grad)) <= tol:
                break
        loss, _ = theta_loss_and_grad(thetas, X, M, mask)
        if prev_loss is not None and abs(prev_loss - loss) / max(abs(prev_loss), 1e-30) < tol:
            break
        prev_loss = loss

    thetas = np.stack([hard_threshold(thetas[k], s) for k in range(K)])
    return BaselineModel(variant="k_matrices", p=ds.p, K=ds.K, thetas=thetas, M=M)


def _weight_step(thetas: np.ndarray, ds: Dataset, M: np.ndarray) -> np.ndarray:
    shared = None
    if all(obs.mask is None for obs in ds.observations):
        shared = np.einsum("kjl,mjl->km", thetas, thetas)
    out = np.empty_like(M)
    for i, obs in enumerate(ds.observations):
        if shared is None:
            c, H = _topic_quadratic(thetas, obs.X, obs.mask)
        else:
            c = np.einsum("jl,kjl->k", obs.X, thetas)
            H = shared
        out[i] = _solve_simplex_quadratic(c, H, M[i], None, TOPIC_ITERS, TOPIC_TOL)
    return out


def predict_baseline(model: BaselineModel, ds: Dataset, M=None) -> list:
    """Per-observation predictions, masked where observations carry masks.

    one_matrix ignores topics.  k_matrices needs weights: pass M explicitly
    (e.g. inferred on held-out data) or rely on the dataset's stored topics.
    """
    preds = []
    if model.variant == "one_matrix":
        for obs in ds.observations:
            pred = model.xbar if obs.mask is None else model.xbar * obs.mask
            preds.append(pred.copy() if obs.mask is None else pred)
        return preds
    if model.variant == "k_matrices":
        if M is None:
            M = ds.topic_matrix()
            if M is None:
                raise ValidationError("k_matrices prediction needs topic weights")
        M = validate_topic_matrix(M, n=ds.n, K=ds.K)
        stack = theta_forward_stack(model.thetas, M)
        for i, obs in enumerate(ds.observations):
            pred = stack[i] if obs.mask is None else stack[i] * obs.mask
            preds.append(pred)
        return preds
    raise ValidationError(f"unknown baseline variant {model.variant!r}")


def prediction_error(predictions, ds: Dataset) -> float:
    """Mean squared Frobenius residual (1/n) sum_i ||X_i - Xhat_i||_F^2.

    Masked observations contribute masked residuals, so all methods are
    scored on the same observed entries.
    """
    if len(predictions) != ds.n:
        raise DimensionError(
            f"{len(predictions)} predictions for {ds.n} observations"
        )
    total = 0.0
    for pred, obs in zip(predictions, ds.observations):
        pred = np.asarray(pred, dtype=float)
        if pred.shape != obs.X.shape:
            raise DimensionError(
                f"prediction shape {pred.shape} does not match {obs.X.shape}"
            )
        R = obs.X - pred
        if obs.mask is not None:
            R = R * obs.mask
        total += float(np.sum(R * R))
    return total / ds.n
