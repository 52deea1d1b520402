"""Joint-estimation tests: initialization, topic steps, alternation, alignment."""

import itertools

import numpy as np
import pytest

from irnet import (
    Dataset,
    FactorPair,
    FitConfig,
    Observation,
    SynthSpec,
    align_permutation,
    check_conditions,
    distance_topics,
    estimate_topics,
    fit_joint,
    forward,
    gen_instance,
    infer_topic_matrix,
    init_mean_svd,
    noiseless,
    subspace_distance,
)
from irnet.exceptions import DimensionError, ValidationError
from irnet.fit_joint import align_factor_permutation


def orthogonal_truth(p=12, K=3, seed=5):
    """Factor pair with disjoint column supports, so columns are orthogonal.

    Column k is scaled by (1 + k/2) to keep singular values well separated.
    """
    rng = np.random.default_rng(seed)
    rows = np.arange(p).reshape(K, -1)
    B1 = np.zeros((p, K))
    B2 = np.zeros((p, K))
    for k in range(K):
        scale = 1.0 + 0.5 * k
        B1[rows[k], k] = scale * rng.uniform(1.0, 2.0, rows.shape[1])
        B2[rows[(k + 1) % K], k] = scale * rng.uniform(1.0, 2.0, rows.shape[1])
    return FactorPair(B1, B2)


def uniform_mean_topics(K, copies=2):
    # exact column means 1/K, the easiest case for the mean-SVD start
    return np.tile(np.eye(K), (copies, 1))


def noiseless_dataset(bp, M):
    obs = tuple(Observation(forward(bp, M[i]), topics=M[i]) for i in range(M.shape[0]))
    return Dataset(bp.p, bp.K, obs)


# ---------------------------------------------------------------------------
# init_mean_svd
# ---------------------------------------------------------------------------

def test_init_exact_on_orthogonal_uniform_case():
    bp = orthogonal_truth()
    M = uniform_mean_topics(bp.K)
    ds = noiseless_dataset(bp, M)
    init = init_mean_svd(ds)

    truth = bp.thetas()
    order = np.argsort(-np.array([np.linalg.norm(truth[k]) for k in range(bp.K)]))
    for j in range(bp.K):
        assert np.linalg.norm(init.thetas[j] - truth[order[j]]) <= 1e-8
    assert init.degenerate == ()
    # factors must reproduce the same rank-one components
    for k in range(bp.K):
        outer = np.outer(init.factors.B1[:, k], init.factors.B2[:, k])
        assert np.linalg.norm(outer - init.thetas[k]) <= 1e-8


def test_init_single_observation_matches_svd_oracle():
    # well-separated spectrum so the oracle components are sharply defined
    rng = np.random.default_rng(30)
    Q1, _ = np.linalg.qr(rng.normal(size=(7, 7)))
    Q2, _ = np.linalg.qr(rng.normal(size=(7, 7)))
    X1 = Q1 @ np.diag([5.0, 3.0, 2.0, 1.0, 0.5, 0.2, 0.1]) @ Q2.T
    ds = Dataset(7, 3, (Observation(X1),), topics_known=False)
    init = init_mean_svd(ds, 3)

    U, S, Vt = np.linalg.svd(X1)
    for k in range(3):
        oracle = 3.0 * S[k] * np.outer(U[:, k], Vt[k])
        assert np.linalg.norm(init.thetas[k] - oracle) <= 1e-8


def test_init_error_grows_with_column_overlap():
    # interpolate the truth away from orthogonality and watch the
    # initialization error track the measured off-diagonal mass
    base = orthogonal_truth(p=12, K=3, seed=6)
    rng = np.random.default_rng(7)
    bleed1 = rng.uniform(0.5, 1.0, base.B1.shape) * (base.B1 == 0)
    bleed2 = rng.uniform(0.5, 1.0, base.B2.shape) * (base.B2 == 0)
    M = uniform_mean_topics(base.K, copies=4)

    rhos, errors = [], []
    for t in (0.0, 0.25, 0.5):
        bp = FactorPair(base.B1 + t * bleed1, base.B2 + t * bleed2)
        ds = noiseless_dataset(bp, M)
        init = init_mean_svd(ds)
        report = check_conditions(bp, M)
        truth = bp.thetas()
        perm = np.argsort(-np.array([np.linalg.norm(truth[k]) for k in range(bp.K)]))
        err = max(
            float(np.linalg.norm(init.thetas[j] - truth[perm[j]]))
            for j in range(bp.K)
        )
        rhos.append(report.rho0)
        errors.append(err)

    assert rhos[0] <= 1e-9
    assert errors[0] <= 1e-8
    assert rhos[0] < rhos[1] < rhos[2]
    assert errors[0] < errors[1] < errors[2]
    # uniform topic means kill the eta term, so the error must be covered by
    # the rho term alone; the constant measured at the mildest perturbation
    # must still cover the stronger one (error grows sublinearly in rho here)
    c_tilde = errors[1] / (2.0 * base.K * rhos[1])
    assert np.isfinite(c_tilde)
    assert errors[2] <= 2.0 * c_tilde * base.K * rhos[2] + 1e-12


def test_init_flags_degenerate_components():
    rng = np.random.default_rng(8)
    X = np.outer(rng.random(6), rng.random(6))
    ds = Dataset(6, 3, (Observation(X), Observation(X)), topics_known=False)
    init = init_mean_svd(ds)
    assert init.degenerate == (1, 2)
    assert np.all(np.isfinite(init.thetas))
    assert np.all(init.factors.B1 >= 0)
    # filled components are scaled to the smallest retained singular value
    for k in init.degenerate:
        assert np.linalg.norm(init.thetas[k]) > 0


def test_init_rejects_bad_K():
    ds = Dataset(4, 2, (Observation(np.eye(4)),), topics_known=False)
    with pytest.raises(DimensionError):
        init_mean_svd(ds, 0)
    with pytest.raises(DimensionError):
        init_mean_svd(ds, 5)


# ---------------------------------------------------------------------------
# estimate_topics / infer_topic_matrix
# ---------------------------------------------------------------------------

def test_estimate_topics_recovers_noiseless_weights():
    from irnet import gen_ground_truth

    bp = gen_ground_truth(SynthSpec(p=10, K=3, n=1, seed=40))
    m_star = np.array([0.5, 0.2, 0.3])
    obs = Observation(forward(bp, m_star))
    m_hat = estimate_topics(bp, obs, iters=5000, tol=1e-14)
    assert np.linalg.norm(m_hat - m_star) <= 1e-6


def test_estimate_topics_single_topic_returns_point():
    bp = FactorPair(np.ones((4, 1)), np.ones((4, 1)))
    obs = Observation(np.zeros((4, 4)))
    assert np.array_equal(estimate_topics(bp, obs), np.array([1.0]))


def test_estimate_topics_never_increases_objective():
    from irnet import gen_ground_truth

    rng = np.random.default_rng(41)
    bp = gen_ground_truth(SynthSpec(p=8, K=3, n=1, seed=41))
    X = rng.normal(size=(8, 8))
    obs = Observation(X)
    m0 = np.array([0.6, 0.3, 0.1])

    def objective(m):
        return 0.5 * float(np.sum((X - forward(bp, m)) ** 2))

    m_hat = estimate_topics(bp, obs, m0=m0)
    assert objective(m_hat) <= objective(m0) + 1e-12
    assert np.all(m_hat >= 0)
    assert abs(float(m_hat.sum()) - 1.0) <= 1e-12


def test_estimate_topics_validates_inputs():
    bp = FactorPair(np.ones((4, 2)), np.ones((4, 2)))
    obs = Observation(np.zeros((4, 4)))
    with pytest.raises(DimensionError):
        estimate_topics(bp, obs, m0=np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValidationError):
        estimate_topics(bp, obs, m0=np.array([0.8, 0.8]))
    with pytest.raises(DimensionError):
        estimate_topics(bp, Observation(np.zeros((5, 5))))


def test_infer_matrix_matches_per_observation_path():
    inst = gen_instance(SynthSpec(p=8, K=3, n=15, seed=42))
    thetas = inst.bp_star.thetas()
    batched = infer_topic_matrix(thetas, inst.dataset)
    for i, obs in enumerate(inst.dataset.observations):
        single = estimate_topics(inst.bp_star, obs)
        assert np.linalg.norm(batched[i] - single) <= 1e-8


def test_infer_matrix_ignores_masked_entries():
    from irnet import gen_ground_truth

    bp = gen_ground_truth(SynthSpec(p=10, K=2, n=1, seed=43))
    m_star = np.array([0.7, 0.3])
    clean = forward(bp, m_star)
    mask = np.ones((10, 10))
    mask[:3, :] = 0.0
    X = clean.copy()
    X[:3, :] = 99.0  # junk hidden behind the mask
    ds = Dataset(10, 2, (Observation(X, mask=mask),), topics_known=False)
    M = infer_topic_matrix(bp.thetas(), ds, iters=5000, tol=1e-14)
    assert np.linalg.norm(M[0] - m_star) <= 1e-6


# ---------------------------------------------------------------------------
# fit_joint
# ---------------------------------------------------------------------------

def test_joint_fixed_point_at_truth():
    spec = noiseless(SynthSpec(p=10, K=2, n=16, seed=44, balance_columns=True))
    inst = gen_instance(spec)
    cfg = FitConfig(s=40, max_iters=50, tol=0.0)
    bp, M, report = fit_joint(
        inst.dataset, cfg=cfg, max_outer=3, outer_tol=0.0,
        bp_star=inst.bp_star, M_star=inst.M_star, bp0=inst.bp_star,
    )
    assert report.loss_trace[-1] <= 1e-14
    assert subspace_distance(bp, inst.bp_star) <= 1e-8
    assert distance_topics(M, inst.M_star[:, report.permutation]) <= 1e-12


def test_joint_loss_monotone_on_noiseless_data():
    spec = noiseless(SynthSpec(p=10, K=2, n=16, seed=45, balance_columns=True))
    inst = gen_instance(spec)
    cfg = FitConfig(s=40, max_iters=60, tol=0.0)
    _, _, report = fit_joint(inst.dataset, cfg=cfg, max_outer=12, outer_tol=0.0)
    diffs = np.diff(report.loss_trace)
    assert np.all(diffs <= 1e-8)


def test_joint_recovers_noiseless_instance():
    spec = noiseless(SynthSpec(p=12, K=2, n=30, seed=46, balance_columns=True,
                               topics_per_row=(1, 1)))
    inst = gen_instance(spec)
    cfg = FitConfig(s=4 * spec.p, max_iters=150, tol=0.0)
    bp, M, report = fit_joint(
        inst.dataset, cfg=cfg, max_outer=80, outer_tol=0.0,
        bp_star=inst.bp_star, M_star=inst.M_star,
    )
    perm = report.permutation
    aligned = FactorPair(inst.bp_star.B1[:, perm], inst.bp_star.B2[:, perm])
    total = subspace_distance(bp, aligned) + distance_topics(M, inst.M_star[:, perm])
    assert total <= 1e-6


def test_joint_report_shapes_and_permutation():
    inst = gen_instance(SynthSpec(p=8, K=2, n=10, seed=47))
    cfg = FitConfig(s=32, max_iters=20, tol=0.0)
    bp, M, report = fit_joint(
        inst.dataset, cfg=cfg, max_outer=4, outer_tol=0.0,
        bp_star=inst.bp_star, M_star=inst.M_star,
    )
    assert report.loss_trace.shape == (report.outer_iters,)
    assert report.dist_B_trace.shape == (report.outer_iters,)
    assert report.dist_M_trace.shape == (report.outer_iters,)
    assert sorted(report.permutation) == [0, 1]
    assert M.shape == (10, 2)
    assert bp.p == 8 and bp.K == 2


def test_joint_validates_K_and_start():
    inst = gen_instance(SynthSpec(p=6, K=2, n=5, seed=48))
    with pytest.raises(DimensionError):
        fit_joint(inst.dataset, K=3)
    wrong = FactorPair(np.ones((6, 3)), np.ones((6, 3)))
    with pytest.raises(DimensionError):
        fit_joint(inst.dataset, bp0=wrong)


# ---------------------------------------------------------------------------
# alignment and topic distance
# ---------------------------------------------------------------------------

def test_align_identity():
    M = np.array([[0.2, 0.8], [0.5, 0.5]])
    assert np.array_equal(align_permutation(M, M), np.array([0, 1]))


def test_align_swap():
    M = np.array([[0.2, 0.8], [0.9, 0.1], [0.4, 0.6]])
    swapped = M[:, [1, 0]]
    assert np.array_equal(align_permutation(M, swapped), np.array([1, 0]))


def test_align_matches_exhaustive_search():
    rng = np.random.default_rng(49)
    for _ in range(5):
        M_hat = rng.random((6, 4))
        M_star = rng.random((6, 4))
        perm = align_permutation(M_hat, M_star)
        cost = float(np.sum((M_hat - M_star[:, perm]) ** 2))
        best = min(
            float(np.sum((M_hat - M_star[:, list(q)]) ** 2))
            for q in itertools.permutations(range(4))
        )
        assert cost == pytest.approx(best, abs=1e-12)


def test_align_factor_permutation_swap():
    rng = np.random.default_rng(50)
    bp = FactorPair(rng.random((5, 3)), rng.random((5, 3)))
    order = [2, 0, 1]
    shuffled = FactorPair(bp.B1[:, order], bp.B2[:, order])
    perm = align_factor_permutation(bp, shuffled)
    assert np.allclose(shuffled.B1[:, perm], bp.B1)
    assert np.allclose(shuffled.B2[:, perm], bp.B2)


def test_alignment_never_increases_distance():
    rng = np.random.default_rng(51)
    for _ in range(10):
        M_hat = rng.random((8, 3))
        M_star = rng.random((8, 3))
        perm = align_permutation(M_hat, M_star)
        assert (
            distance_topics(M_hat, M_star[:, perm])
            <= distance_topics(M_hat, M_star) + 1e-12
        )


def test_distance_topics_values():
    M = np.array([[0.3, 0.7]])
    assert distance_topics(M, M) == 0.0
    assert distance_topics(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == 2.0


def test_distance_topics_matches_loop_oracle():
    rng = np.random.default_rng(52)
    A = rng.random((7, 3))
    B = rng.random((7, 3))
    total = 0.0
    for i in range(7):
        for k in range(3):
            total += (A[i, k] - B[i, k]) ** 2
    assert distance_topics(A, B) == pytest.approx(total / 7, rel=1e-12)


def test_distance_topics_shape_mismatch():
    with pytest.raises(DimensionError):
        distance_topics(np.zeros((3, 2)), np.zeros((2, 3)))
