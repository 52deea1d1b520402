"""Synthetic instance generation with a documented, reproducible draw order.

All randomness flows through a counter-based Philox generator keyed by an
explicit seed.  gen_instance consumes draws in a fixed order:

1. rows of the influence factor B1 (per row: topic count, topic columns,
   values; with share_topics the receptivity rows reuse the columns),
2. rows of the receptivity factor B2,
3. topic rows (per observation: count, columns, weights),
4. per-observation noise, observation by observation.

Ground-truth factor rows load 1-3 uniformly chosen topics with values drawn
from value_range, so each factor carries about 2p nonzeros.  Topic rows
spread uniform weights over 1-3 topics and normalize.  Real-kind noise
zeroes an exact count of nonzeros, scales survivors multiplicatively, and
promotes an exact count of zeros to false positives; binary-kind
observations are Bernoulli draws of the clipped clean matrix plus false
positives among structural zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ValidationError
from .model import Dataset, FactorPair, Observation, balance_factor_columns, forward


@dataclass
class SynthSpec:
    """Generator settings; defaults mirror the reference protocol.

    topics_per_row / topics_per_obs default to (1, min(3, K)) so small-K
    specs stay valid without arguments.
    """

    p: int
    K: int
    n: int
    kind: str = "real"
    seed: int = 0
    topics_per_row: tuple | None = None
    value_range: tuple = (1.0, 2.0)
    topics_per_obs: tuple | None = None
    miss_frac: float = 0.10
    noise_mult_range: tuple = (0.3, 3.0)
    false_pos_frac: float = 0.10
    share_topics: bool = False
    balance_columns: bool = False

    def __post_init__(self):
        if self.p <= 0 or self.K <= 0 or self.n <= 0:
            raise ValidationError("p, K and n must be positive")
        if self.kind not in ("real", "binary"):
            raise ValidationError(f"unknown kind {self.kind!r}")
        if self.topics_per_row is None:
            self.topics_per_row = (1, min(3, self.K))
        if self.topics_per_obs is None:
            self.topics_per_obs = (1, min(3, self.K))
        for name, pair in (
            ("topics_per_row", self.topics_per_row),
            ("topics_per_obs", self.topics_per_obs),
        ):
            lo, hi = pair
            if not (1 <= lo <= hi <= self.K):
                raise ValidationError(f"{name}={pair} out of range for K={self.K}")
        for name, frac in (
            ("miss_frac", self.miss_frac),
            ("false_pos_frac", self.false_pos_frac),
        ):
            if not 0.0 <= frac <= 1.0:
                raise ValidationError(f"{name}={frac} must be in [0, 1]")
        for name, pair in (
            ("value_range", self.value_range),
            ("noise_mult_range", self.noise_mult_range),
        ):
            lo, hi = pair
            if not lo <= hi:
                raise ValidationError(f"{name}={pair} must be ordered")


@dataclass
class SynthInstance:
    """Generated data plus the retained ground truth."""

    spec: SynthSpec
    bp_star: FactorPair
    M_star: np.ndarray
    clean: np.ndarray
    dataset: Dataset


def noiseless(spec: SynthSpec) -> SynthSpec:
    """Copy of spec with every noise channel disabled."""
    return replace(
        spec, miss_frac=0.0, noise_mult_range=(1.0, 1.0), false_pos_frac=0.0
    )


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _count(frac: float, total: int) -> int:
    return int(round(frac * total))


def gen_ground_truth(spec: SynthSpec, rng: np.random.Generator | None = None) -> FactorPair:
    """Draw the nonnegative factor pair row by row.

    With share_topics the receptivity rows reuse the influence rows' topic
    columns and draw fresh values; otherwise both selections are
    independent.  With balance_columns the pair is rescaled column-wise to
    the equal-norm gauge afterwards (support and products are unchanged,
    individual values leave value_range).
    """
    rng = _rng(spec.seed) if rng is None else rng
    lo, hi = spec.topics_per_row
    vlo, vhi = spec.value_range

    def draw_rows():
        B = np.zeros((spec.p, spec.K))
        chosen = []
        for j in range(spec.p):
            t = int(rng.integers(lo, hi + 1))
            cols = rng.choice(spec.K, size=t, replace=False)
            B[j, cols] = rng.uniform(vlo, vhi, size=t)
            chosen.append(cols)
        return B, chosen

    B1, picked = draw_rows()
    if spec.share_topics:
        B2 = np.zeros((spec.p, spec.K))
        for j, cols in enumerate(picked):
            B2[j, cols] = rng.uniform(vlo, vhi, size=cols.size)
    else:
        B2, _ = draw_rows()
    bp = FactorPair(B1, B2)
    if spec.balance_columns:
        bp = balance_factor_columns(bp)
    return bp


def gen_topics(
    spec: SynthSpec, n: int | None = None, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Draw n topic rows: uniform weights on 1-3 chosen topics, normalized."""
    rng = _rng(spec.seed) if rng is None else rng
    n = spec.n if n is None else n
    lo, hi = spec.topics_per_obs
    M = np.zeros((n, spec.K))
    for i in range(n):
        t = int(rng.integers(lo, hi + 1))
        cols = rng.choice(spec.K, size=t, replace=False)
        w = rng.uniform(0.0, 1.0, size=t)
        while w.sum() == 0.0:
            w = rng.uniform(0.0, 1.0, size=t)
        M[i, cols] = w / w.sum()
    return M


def gen_observation_real(
    clean: np.ndarray, spec: SynthSpec, rng: np.random.Generator
) -> np.ndarray:
    """Real-kind noise: exact missing/multiplicative/false-positive channels.

    Zeroes round(miss_frac * nnz) nonzeros chosen without replacement,
    multiplies each survivor by a noise_mult_range uniform draw (row-major
    order), then promotes round(false_pos_frac * #zeros) structural zeros to
    uniform (0, 1) values.  Zero-count channels consume no draws.
    """
    flat = clean.ravel().copy()
    nz = np.flatnonzero(flat != 0.0)
    zeros = np.flatnonzero(flat == 0.0)

    n_miss = _count(spec.miss_frac, nz.size)
    if n_miss:
        missed = rng.choice(nz, size=n_miss, replace=False)
        survivors = np.setdiff1d(nz, missed)
    else:
        missed = np.empty(0, dtype=int)
        survivors = nz
    if survivors.size:
        lo, hi = spec.noise_mult_range
        flat[survivors] *= rng.uniform(lo, hi, size=survivors.size)
    flat[missed] = 0.0

    n_fp = _count(spec.false_pos_frac, zeros.size)
    if n_fp:
        fp = rng.choice(zeros, size=n_fp, replace=False)
        flat[fp] = rng.uniform(0.0, 1.0, size=n_fp)
    return flat.reshape(clean.shape)


def gen_observation_binary(
    clean: np.ndarray, spec: SynthSpec, rng: np.random.Generator
) -> np.ndarray:
    """Binary-kind noise: Bernoulli draws of the clipped clean matrix.

    Entry (j, l) is 1 with probability min(clean[j, l], 1); afterwards
    round(false_pos_frac * #structural zeros) entries that are zero in the
    clean matrix are forced to 1.
    """
    U = rng.random(clean.shape)
    X = (U < np.clip(clean, 0.0, 1.0)).astype(float)
    zeros = np.flatnonzero(clean.ravel() == 0.0)
    n_fp = _count(spec.false_pos_frac, zeros.size)
    if n_fp:
        fp = rng.choice(zeros, size=n_fp, replace=False)
        X.ravel()[fp] = 1.0
    return X


def _make_observations(
    spec: SynthSpec,
    bp: FactorPair,
    M: np.ndarray,
    rng: np.random.Generator,
    masks=None,
) -> tuple[np.ndarray, list]:
    n = M.shape[0]
    clean = np.empty((n, spec.p, spec.p))
    observations = []
    noise = gen_observation_real if spec.kind == "real" else gen_observation_binary
    for i in range(n):
        clean[i] = forward(bp, M[i])
        base = clean[i] if masks is None else clean[i] * masks[i]
        X = noise(base, spec, rng)
        observations.append(
            Observation(
                X,
                kind=spec.kind,
                topics=M[i],
                mask=None if masks is None else masks[i],
            )
        )
    return clean, observations


def gen_instance(spec: SynthSpec) -> SynthInstance:
    """Generate a full instance; same seed gives a bit-identical result."""
    rng = _rng(spec.seed)
    bp = gen_ground_truth(spec, rng)
    M = gen_topics(spec, spec.n, rng)
    clean, observations = _make_observations(spec, bp, M, rng)
    ds = Dataset(spec.p, spec.K, observations, topics_known=True)
    return SynthInstance(spec=spec, bp_star=bp, M_star=M, clean=clean, dataset=ds)


def gen_test_set(bp_star: FactorPair, spec: SynthSpec, n_test: int, seed) -> SynthInstance:
    """Fresh observations for held-out evaluation, sharing only the factors.

    Topic rows and noise come from a new generator keyed by seed, so a test
    set never replays the training stream.
    """
    rng = _rng(seed)
    test_spec = replace(spec, n=n_test, seed=seed)
    M = gen_topics(test_spec, n_test, rng)
    clean, observations = _make_observations(test_spec, bp_star, M, rng)
    ds = Dataset(spec.p, spec.K, observations, topics_known=True)
    return SynthInstance(spec=test_spec, bp_star=bp_star, M_star=M, clean=clean, dataset=ds)


def random_author_masks(p: int, n: int, row_frac: float = 0.5, seed=0) -> list:
    """Row-active binary masks for tests: each mask switches on a uniform
    without-replacement choice of round(row_frac * p) rows (at least one)."""
    rng = _rng(seed)
    n_rows = max(1, _count(row_frac, p))
    masks = []
    for _ in range(n):
        rows = rng.choice(p, size=n_rows, replace=False)
        A = np.zeros((p, p))
        A[rows, :] = 1.0
        masks.append(A)
    return masks


def gen_masked_instance(
    spec: SynthSpec, row_frac: float = 0.5
) -> SynthInstance:
    """Instance whose observations are restricted to random author rows.

    Draw order: ground truth, topic rows, one mask per observation, then
    per-observation noise applied to the masked clean matrix.  The stored
    clean stack is unmasked; observations carry their masks.
    """
    rng = _rng(spec.seed)
    bp = gen_ground_truth(spec, rng)
    M = gen_topics(spec, spec.n, rng)
    n_rows = max(1, _count(row_frac, spec.p))
    masks = []
    for _ in range(spec.n):
        rows = rng.choice(spec.p, size=n_rows, replace=False)
        A = np.zeros((spec.p, spec.p))
        A[rows, :] = 1.0
        masks.append(A)
    clean, observations = _make_observations(spec, bp, M, rng, masks=masks)
    ds = Dataset(spec.p, spec.K, observations, topics_known=True)
    return SynthInstance(spec=spec, bp_star=bp, M_star=M, clean=clean, dataset=ds)
