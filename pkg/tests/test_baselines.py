"""Baseline estimator tests against mean/threshold oracles and the factor fit."""

import numpy as np
import pytest

from irnet import (
    Dataset,
    FitConfig,
    Observation,
    SynthSpec,
    fit_k_matrices,
    fit_k_matrices_joint,
    fit_known,
    fit_one_matrix,
    forward,
    gen_instance,
    loss_factors,
    loss_theta,
    noiseless,
    parameter_counts,
    predict_baseline,
    prediction_error,
)
from irnet.exceptions import DimensionError, ValidationError


def hard_threshold_oracle(X, s):
    flat = X.ravel()
    order = sorted(range(flat.size), key=lambda i: (-abs(flat[i]), i))
    out = np.zeros_like(flat)
    for i in order[:s]:
        out[i] = flat[i]
    return out.reshape(X.shape)


# ---------------------------------------------------------------------------
# one matrix
# ---------------------------------------------------------------------------

def test_one_matrix_single_observation():
    rng = np.random.default_rng(120)
    X = rng.random((6, 6))
    ds = Dataset(6, 2, (Observation(X),), topics_known=False)
    model = fit_one_matrix(ds, threshold_s=36)
    assert np.array_equal(model.xbar, X)


def test_one_matrix_identical_observations():
    rng = np.random.default_rng(121)
    X = rng.random((5, 5))
    ds = Dataset(5, 2, tuple(Observation(X.copy()) for _ in range(4)), topics_known=False)
    model = fit_one_matrix(ds, threshold_s=25)
    assert np.allclose(model.xbar, X, atol=1e-14)


def test_one_matrix_matches_mean_threshold_oracle():
    inst = gen_instance(SynthSpec(p=12, K=3, n=7, seed=122))
    model = fit_one_matrix(inst.dataset)
    X, _ = inst.dataset.stacked()
    oracle = hard_threshold_oracle(X.mean(axis=0), 4 * 12)
    assert np.array_equal(model.xbar, oracle)
    assert model.variant == "one_matrix"
    assert model.n_parameters == 12 * 12


# ---------------------------------------------------------------------------
# k matrices, known weights
# ---------------------------------------------------------------------------

def test_k_matrices_recovers_noiseless_thetas():
    inst = gen_instance(noiseless(SynthSpec(p=10, K=2, n=20, seed=123)))
    model = fit_k_matrices(inst.dataset, threshold_s=100)
    truth = inst.bp_star.thetas()
    for k in range(2):
        assert np.linalg.norm(model.thetas[k] - truth[k]) <= 1e-6


def test_k_matrices_single_topic_data():
    # all weight on topic 1: that matrix becomes the least-squares fit and
    # the unused components never leave their all-zero start
    rng = np.random.default_rng(124)
    obs = tuple(
        Observation(rng.random((6, 6)), topics=np.array([1.0, 0.0]))
        for _ in range(5)
    )
    ds = Dataset(6, 2, obs)
    model = fit_k_matrices(ds, threshold_s=36)
    X, _ = ds.stacked()
    assert np.allclose(model.thetas[0], X.mean(axis=0), atol=1e-8)
    assert np.array_equal(model.thetas[1], np.zeros((6, 6)))


def test_k_matrices_needs_topics():
    ds = Dataset(4, 2, (Observation(np.eye(4)),), topics_known=False)
    with pytest.raises(ValidationError):
        fit_k_matrices(ds)


def test_k_matrices_training_loss_beats_factor_model():
    # a free matrix per topic strictly contains the rank-one factor model
    inst = gen_instance(SynthSpec(p=10, K=2, n=15, seed=125))
    model = fit_k_matrices(inst.dataset, threshold_s=100)
    bp, _ = fit_known(inst.dataset, inst.M_star, FitConfig(s=40, max_iters=300))
    base_loss = loss_theta(model.thetas, inst.dataset, inst.M_star)
    ours_loss = loss_factors(bp, inst.dataset, inst.M_star)
    assert base_loss <= ours_loss + 1e-12


# ---------------------------------------------------------------------------
# k matrices, unknown weights
# ---------------------------------------------------------------------------

def test_k_matrices_joint_noiseless_objective_vanishes():
    spec = noiseless(SynthSpec(p=10, K=2, n=20, seed=126, topics_per_row=(1, 1)))
    inst = gen_instance(spec)
    model = fit_k_matrices_joint(inst.dataset, outer_iters=100, threshold_s=100)
    loss = loss_theta(model.thetas, inst.dataset, model.M)
    assert loss <= 1e-6


def test_k_matrices_joint_single_topic_reduces_to_mean():
    rng = np.random.default_rng(127)
    obs = tuple(Observation(rng.random((5, 5))) for _ in range(6))
    ds = Dataset(5, 1, obs, topics_known=False)
    model = fit_k_matrices_joint(ds, threshold_s=25)
    X, _ = ds.stacked()
    assert np.array_equal(model.M, np.ones((6, 1)))
    assert np.allclose(model.thetas[0], X.mean(axis=0), atol=1e-10)


def test_k_matrices_joint_stationary_at_truth():
    # stationary up to roundoff: the factor-path and theta-path products of
    # the same clean matrices differ in the last bits, so the gradient at
    # the truth is ~1e-17 rather than exactly zero
    inst = gen_instance(noiseless(SynthSpec(p=8, K=2, n=10, seed=128)))
    truth = inst.bp_star.thetas()
    model = fit_k_matrices_joint(
        inst.dataset, thetas0=truth, M0=inst.M_star, threshold_s=64,
    )
    assert np.allclose(model.thetas, truth, atol=1e-12)
    assert np.allclose(model.M, inst.M_star, atol=1e-12)
    assert loss_theta(model.thetas, inst.dataset, model.M) <= 1e-20


def test_k_matrices_joint_rejects_wrong_K():
    inst = gen_instance(SynthSpec(p=6, K=2, n=4, seed=129))
    with pytest.raises(DimensionError):
        fit_k_matrices_joint(inst.dataset, K=3)


# ---------------------------------------------------------------------------
# parameter counts and prediction
# ---------------------------------------------------------------------------

def test_parameter_counts():
    counts = parameter_counts(p=50, K=5)
    assert counts["ours"] == 2 * 50 * 5
    assert counts["one_matrix"] == 50 * 50
    assert counts["k_matrices"] == 50 * 50 * 5


def test_predict_one_matrix_ignores_topics():
    inst = gen_instance(SynthSpec(p=8, K=2, n=5, seed=130))
    model = fit_one_matrix(inst.dataset)
    preds = predict_baseline(model, inst.dataset)
    for pred in preds:
        assert np.array_equal(pred, model.xbar)


def test_predict_k_matrices_weighted_sum():
    inst = gen_instance(SynthSpec(p=8, K=3, n=5, seed=131))
    model = fit_k_matrices(inst.dataset)
    preds = predict_baseline(model, inst.dataset)
    for i in range(5):
        manual = sum(inst.M_star[i, k] * model.thetas[k] for k in range(3))
        assert np.allclose(preds[i], manual, atol=1e-12)


def test_predict_k_matrices_needs_weights():
    inst = gen_instance(SynthSpec(p=6, K=2, n=4, seed=132))
    model = fit_k_matrices(inst.dataset)
    bare = Dataset(6, 2, tuple(
        Observation(obs.X) for obs in inst.dataset.observations
    ), topics_known=False)
    with pytest.raises(ValidationError):
        predict_baseline(model, bare)


def test_predict_respects_masks():
    inst = gen_instance(SynthSpec(p=8, K=2, n=3, seed=133))
    mask = np.zeros((8, 8))
    mask[:4, :] = 1.0
    masked = Dataset(8, 2, tuple(
        Observation(obs.X * mask, topics=obs.topics, mask=mask)
        for obs in inst.dataset.observations
    ))
    model = fit_one_matrix(masked)
    preds = predict_baseline(model, masked)
    for pred in preds:
        assert np.array_equal(pred[4:], np.zeros((4, 8)))


# ---------------------------------------------------------------------------
# prediction error
# ---------------------------------------------------------------------------

def test_prediction_error_perfect_and_zero():
    inst = gen_instance(SynthSpec(p=7, K=2, n=4, seed=134))
    X, _ = inst.dataset.stacked()
    perfect = [obs.X for obs in inst.dataset.observations]
    assert prediction_error(perfect, inst.dataset) == 0.0
    zeros = [np.zeros((7, 7)) for _ in range(4)]
    expected = float(np.sum(X * X)) / 4
    assert prediction_error(zeros, inst.dataset) == pytest.approx(expected, rel=1e-12)


def test_prediction_error_matches_loop_oracle():
    rng = np.random.default_rng(135)
    inst = gen_instance(SynthSpec(p=6, K=2, n=5, seed=135))
    preds = [rng.random((6, 6)) for _ in range(5)]
    total = 0.0
    for pred, obs in zip(preds, inst.dataset.observations):
        for j in range(6):
            for l in range(6):
                total += (obs.X[j, l] - pred[j, l]) ** 2
    assert prediction_error(preds, inst.dataset) == pytest.approx(total / 5, rel=1e-12)


def test_prediction_error_masked_entries_free():
    rng = np.random.default_rng(136)
    X = rng.random((5, 5))
    mask = np.zeros((5, 5))
    mask[0, :] = 1.0
    ds = Dataset(5, 1, (Observation(X * mask, mask=mask),), topics_known=False)
    pred = X * mask
    pred[4, :] = 77.0  # disagreement outside the mask costs nothing
    assert prediction_error([pred], ds) == 0.0


def test_prediction_error_validates_lengths():
    ds = Dataset(4, 1, (Observation(np.eye(4)),), topics_known=False)
    with pytest.raises(DimensionError):
        prediction_error([], ds)
    with pytest.raises(DimensionError):
        prediction_error([np.zeros((3, 3))], ds)
