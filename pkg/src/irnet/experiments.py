"""Synthetic experiment drivers: error-vs-n sweeps, runtime grids and
convergence traces.

Sweeps generate a training instance and an independent held-out instance
per (n, replicate) cell.  The two share the ground-truth factors and the
topic-generation process but nothing else: their generators are keyed by
disjoint seed tuples, recorded in the output for audit.  Results serialize
to JSON (round-trip) and to delimited rows for the CLI.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import (
    fit_k_matrices,
    fit_k_matrices_joint,
    fit_one_matrix,
    predict_baseline,
    prediction_error,
)
from .exceptions import ValidationError
from .fit_joint import fit_joint, infer_topic_matrix
from .fit_known import FitConfig, fit_known, init_convex, subspace_distance
from .model import FactorPair, predict_dataset
from .objective import grad_norm_at_truth
from .synth import SynthSpec, gen_ground_truth, gen_instance, gen_test_set, noiseless
from .synth import _rng as _synth_rng

METHODS = ("ours", "one_matrix", "k_matrices")
DEFAULT_N_VALUES = (20, 50, 120)


@dataclass
class SweepCell:
    """One fitted method on one train/test pair."""

    n: int
    replicate: int
    method: str
    test_error: float
    fit_seconds: float
    train_seed: list
    test_seed: list


@dataclass
class SweepResult:
    """Complete sweep output plus the settings needed to reproduce it."""

    p: int
    K: int
    kind: str
    known_topics: bool
    n_values: list
    methods: list
    replicates: list
    base_seed: int
    cells: list = field(default_factory=list)

    def medians(self) -> dict:
        """Per-method median test error along the n axis."""
        out = {}
        for method in self.methods:
            vals = []
            for n in self.n_values:
                errs = [
                    c.test_error
                    for c in self.cells
                    if c.method == method and c.n == n
                ]
                vals.append(float(np.median(errs)) if errs else float("nan"))
            out[method] = vals
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        cells = [SweepCell(**c) for c in d.pop("cells")]
        return cls(cells=cells, **d)

    def csv_rows(self) -> list:
        header = [
            "kind", "known_topics", "p", "K", "n", "replicate", "method",
            "test_error", "fit_seconds",
        ]
        rows = [header]
        for c in self.cells:
            rows.append([
                self.kind, self.known_topics, self.p, self.K, c.n,
                c.replicate, c.method, repr(c.test_error), repr(c.fit_seconds),
            ])
        return rows


def _truth_seed(base: int, rep: int) -> list:
    return [base, rep]


def _train_seed(base: int, n: int, rep: int) -> list:
    return [base, n, rep, 0]


def _test_seed(base: int, rep: int) -> list:
    return [base, rep, 1]


def run_nsweep(
    spec: SynthSpec,
    n_values=DEFAULT_N_VALUES,
    methods=METHODS,
    replicates: int = 5,
    known_topics: bool = True,
    n_test: int | None = None,
    fit_iters: int = 500,
    joint_outer: int = 20,
    joint_inner: int = 100,
    threshold_s: int | None = None,
) -> SweepResult:
    """Test-error sweep over training-set sizes.

    spec fixes (p, K, kind, noise); its n is ignored.  Each replicate draws
    one ground truth and one held-out test set of size n_test (default
    max(50, max(n_values))); the training instances along the n axis share
    both, so cells within a replicate differ only in training data.  All
    three streams (truth, train, test) use disjoint seed tuples, recorded
    per cell.  With known_topics=False every method that needs topic
    weights estimates them, both during training and per held-out
    observation.
    """
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValidationError(f"unknown methods: {bad}")
    result = SweepResult(
        p=spec.p,
        K=spec.K,
        kind=spec.kind,
        known_topics=known_topics,
        n_values=list(n_values),
        methods=list(methods),
        replicates=list(range(replicates)),
        base_seed=spec.seed,
    )
    s_ours = 4 * spec.p
    ntest = max(50, max(n_values)) if n_test is None else n_test
    for rep in range(replicates):
        bp_star = gen_ground_truth(replace(spec, seed=_truth_seed(spec.seed, rep)))
        te_seed = _test_seed(spec.seed, rep)
        test = gen_test_set(bp_star, spec, ntest, seed=te_seed)
        for n in n_values:
            tr_seed = _train_seed(spec.seed, n, rep)
            train = gen_test_set(bp_star, spec, n, seed=tr_seed)
            for method in methods:
                start = time.perf_counter()
                if known_topics:
                    err = _score_known(
                        method, train, test, s_ours, fit_iters, threshold_s
                    )
                else:
                    err = _score_unknown(
                        method, train, test, s_ours, joint_outer, joint_inner,
                        threshold_s,
                    )
                result.cells.append(
                    SweepCell(
                        n=n,
                        replicate=rep,
                        method=method,
                        test_error=err,
                        fit_seconds=time.perf_counter() - start,
                        train_seed=tr_seed,
                        test_seed=te_seed,
                    )
                )
    return result


def _score_known(method, train, test, s_ours, fit_iters, threshold_s) -> float:
    ds, M_train = train.dataset, train.M_star
    if method == "ours":
        cfg = FitConfig(s=s_ours, max_iters=fit_iters)
        bp, _ = fit_known(ds, M_train, cfg)
        preds = predict_dataset(bp, test.dataset, test.M_star)
        return prediction_error(preds, test.dataset)
    if method == "one_matrix":
        model = fit_one_matrix(ds, threshold_s)
        return prediction_error(predict_baseline(model, test.dataset), test.dataset)
    model = fit_k_matrices(ds, M_train, threshold_s)
    preds = predict_baseline(model, test.dataset, test.M_star)
    return prediction_error(preds, test.dataset)


def _score_unknown(
    method, train, test, s_ours, joint_outer, joint_inner, threshold_s
) -> float:
    ds = train.dataset
    if method == "ours":
        cfg = FitConfig(s=s_ours, max_iters=joint_inner)
        bp, _, _ = fit_joint(ds, cfg=cfg, max_outer=joint_outer)
        M_test = infer_topic_matrix(bp.thetas(), test.dataset)
        preds = predict_dataset(bp, test.dataset, M_test)
        return prediction_error(preds, test.dataset)
    if method == "one_matrix":
        model = fit_one_matrix(ds, threshold_s)
        return prediction_error(predict_baseline(model, test.dataset), test.dataset)
    model = fit_k_matrices_joint(ds, outer_iters=joint_outer, threshold_s=threshold_s)
    M_test = infer_topic_matrix(model.thetas, test.dataset)
    preds = predict_baseline(model, test.dataset, M_test)
    return prediction_error(preds, test.dataset)


# ---------------------------------------------------------------------------
# runtime grid
# ---------------------------------------------------------------------------

@dataclass
class RuntimeCell:
    p: int
    K: int
    seconds: list
    seconds_per_iter: float


@dataclass
class RuntimeGrid:
    n: int
    T: int
    p_values: list
    K_values: list
    base_seed: int
    cells: list = field(default_factory=list)

    def seconds_per_iter(self, p: int, K: int) -> float:
        for c in self.cells:
            if c.p == p and c.K == K:
                return c.seconds_per_iter
        raise KeyError(f"no cell for p={p}, K={K}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RuntimeGrid":
        cells = [RuntimeCell(**c) for c in d.pop("cells")]
        return cls(cells=cells, **d)

    def csv_rows(self) -> list:
        rows = [["p", "K", "n", "T", "median_seconds", "seconds_per_iter"]]
        for c in self.cells:
            rows.append([
                c.p, c.K, self.n, self.T,
                repr(float(np.median(c.seconds))), repr(c.seconds_per_iter),
            ])
        return rows


def run_runtime_grid(
    p_values=(50, 100),
    K_values=(5, 10),
    n: int = 200,
    T: int = 50,
    repeats: int = 3,
    seed: int = 0,
) -> RuntimeGrid:
    """Median per-iteration fit time over a (p, K) grid.

    Each cell generates one instance, builds a cheap seeded sparse start
    (so initialization cost stays out of the measurement), then times the
    proximal gradient loop for exactly T iterations, repeats times.
    """
    grid = RuntimeGrid(
        n=n, T=T, p_values=list(p_values), K_values=list(K_values), base_seed=seed
    )
    for p in p_values:
        for K in K_values:
            spec = SynthSpec(p=p, K=K, n=n, seed=[seed, p, K])
            inst = gen_instance(spec)
            rng = _synth_rng([seed, p, K, 99])
            bp0 = FactorPair(rng.random((p, K)), rng.random((p, K)))
            cfg = FitConfig(s=4 * p, max_iters=T, tol=0.0)
            seconds = []
            for _ in range(repeats):
                start = time.perf_counter()
                fit_known(inst.dataset, inst.M_star, cfg, bp0=bp0)
                seconds.append(time.perf_counter() - start)
            grid.cells.append(
                RuntimeCell(
                    p=p,
                    K=K,
                    seconds=seconds,
                    seconds_per_iter=float(np.median(seconds)) / T,
                )
            )
    return grid


# ---------------------------------------------------------------------------
# convergence trace
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceTrace:
    """Distance-to-truth trajectory of one fit, with a log-linear summary.

    slope and r2 describe the least-squares line through log(d^2) over the
    contraction window (iterations with d^2 above 10x the plateau).  The
    plateau is the median of the final tenth of the trace, and
    stat_surrogate is the gradient norm at the truth, the scale the theory
    predicts the plateau should track.
    """

    p: int
    K: int
    n: int
    noiseless: bool
    dist_trace: np.ndarray
    loss_trace: np.ndarray
    slope: float
    r2: float
    plateau: float
    stat_surrogate: float


def run_convergence_trace(
    spec: SynthSpec,
    noiseless_run: bool = True,
    relax_iters: int = 80,
    fit_iters: int = 20000,
    s: int | None = None,
) -> ConvergenceTrace:
    """Fit one instance and trace the squared factor distance to the truth.

    The ground truth is generated in the balanced column gauge, the only
    representative the estimator can converge to.  relax_iters deliberately
    under-solves the initialization so the proximal phase shows a visible
    contraction before the plateau.
    """
    sp = noiseless(spec) if noiseless_run else spec
    sp = replace(sp, balance_columns=True)
    inst = gen_instance(sp)
    ds, M = inst.dataset, inst.M_star
    bp0 = init_convex(ds, M, relax_iters=relax_iters)
    cfg = FitConfig(s=4 * sp.p if s is None else s, max_iters=fit_iters, tol=0.0)
    _, report = fit_known(ds, M, cfg, bp0=bp0, bp_star=inst.bp_star)

    d = report.dist_trace
    tail = max(1, d.size // 10)
    plateau = float(np.median(d[-tail:]))
    window = np.nonzero(d > 10.0 * max(plateau, 1e-300))[0]
    if window.size >= 3:
        t = window.astype(float)
        y = np.log(d[window])
        coef = np.polyfit(t, y, 1)
        fitted = np.polyval(coef, t)
        ss_res = float(np.sum((y - fitted) ** 2))
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        slope = float(coef[0])
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, r2 = float("nan"), float("nan")

    surrogate = grad_norm_at_truth(inst.bp_star.thetas(), ds, M)
    return ConvergenceTrace(
        p=sp.p,
        K=sp.K,
        n=sp.n,
        noiseless=noiseless_run,
        dist_trace=d,
        loss_trace=report.loss_trace,
        slope=slope,
        r2=r2,
        plateau=plateau,
        stat_surrogate=surrogate,
    )
