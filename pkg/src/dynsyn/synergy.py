"""Dynamics-driven actuator grouping.

The pipeline: drive the plant with random joint-velocity perturbations while
muscles stay passive, record muscle lengths, correlate the per-muscle length
changes by segment-averaged cosine similarity, and partition actuators with
K-Medoids on the dissimilarity 1 - R. Stability is quantified by the
co-grouping probability matrix across seeds and the Frobenius distance
between such matrices.

The clusterers (`KMedoids`, `SynergyGrouping`) follow the scikit-learn
estimator protocol (get_params / fit / fit_predict, trailing-underscore
fitted attributes) so they compose with the usual tooling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from dynsyn.plant import PlantModel, init_state, set_joint_velocity, step
from dynsyn.models import neutral_pose
from dynsyn.validation import check_distance_matrix, check_square

__all__ = [
    "PerturbationConfig",
    "TrajectoryBuffer",
    "CorrelationResult",
    "GroupingResult",
    "SelectionResult",
    "KMedoids",
    "SynergyGrouping",
    "generate_trajectory",
    "correlation_matrix",
    "distance_from_correlation",
    "kmedoids",
    "select_group_count",
    "grouping_probability",
    "grouping_distance",
    "convergence_study",
]


@dataclass(frozen=True)
class PerturbationConfig:
    """Random-perturbation protocol for trajectory generation."""

    total_steps: int = 500_000
    control_frequency: int = 10  # steps between velocity resamples
    control_amplitude: float = 10.0  # rad/s
    seed: int = 0
    dt: float = 0.01

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if self.control_frequency < 1:
            raise ValueError("control_frequency must be at least 1")
        if self.control_amplitude < 0:
            raise ValueError("control_amplitude must be non-negative")
        if not 0 < self.dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01]")


@dataclass
class TrajectoryBuffer:
    """Recorded muscle lengths (m), one row per simulation step."""

    lengths: np.ndarray  # (n_steps, n_muscles)
    dt: float
    model_name: str
    seed: int = 0

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=float)
        if self.lengths.ndim != 2:
            raise ValueError("lengths must be a 2-D matrix")
        if not np.all(np.isfinite(self.lengths)) or np.any(self.lengths <= 0):
            raise ValueError("lengths must be finite and positive")

    @property
    def n_steps(self) -> int:
        return self.lengths.shape[0]

    @property
    def n_muscles(self) -> int:
        return self.lengths.shape[1]

    def truncated(self, n_steps: int) -> "TrajectoryBuffer":
        if not 1 <= n_steps <= self.n_steps:
            raise ValueError("truncation size out of range")
        return TrajectoryBuffer(self.lengths[:n_steps], self.dt,
                                self.model_name, self.seed)


def generate_trajectory(model: PlantModel, config: PerturbationConfig,
                        q0=None) -> TrajectoryBuffer:
    """Drive the plant with seeded random joint velocities, zero excitation.

    Every `control_frequency` steps the joint velocity is overwritten with a
    fresh uniform sample from [-A, A]^n; every step applies a zero control
    vector so muscles produce passive force only. Reproducible bitwise for a
    fixed seed.
    """
    if model.n_muscles == 0:
        raise ValueError("model has no muscles to record")
    rng = np.random.default_rng(config.seed)
    state = init_state(model, q=neutral_pose(model) if q0 is None else q0)
    zero = np.zeros(model.n_muscles)
    out = np.empty((config.total_steps, model.n_muscles))
    amp = config.control_amplitude
    for t in range(config.total_steps):
        if t % config.control_frequency == 0:
            qdot = rng.uniform(-amp, amp, model.n_joints)
            state = set_joint_velocity(state, qdot)
        try:
            state = step(model, state, zero, config.dt)
        except Exception as exc:
            raise RuntimeError(f"trajectory generation failed at step {t}: {exc}") from exc
        out[t] = state.l_norm * model.l_opt
    return TrajectoryBuffer(out, config.dt, model.name, config.seed)


@dataclass
class CorrelationResult:
    """Segment-averaged cosine-similarity matrix between actuator signals."""

    R: np.ndarray
    n_segments: int
    use_differences: bool
    degenerate: tuple[int, ...] = ()

    @property
    def n_muscles(self) -> int:
        return self.R.shape[0]


def correlation_matrix(buffer: TrajectoryBuffer, n_segments: int = 100,
                       use_differences: bool = True) -> CorrelationResult:
    """Average cosine similarity of per-muscle signals over contiguous segments.

    The signal is the first difference of the recorded lengths by default
    (grouping tracks length *changes*); the raw-length variant is kept behind
    the flag for comparison. A trailing remainder that does not fill a whole
    segment is dropped. Segments where a muscle's signal has zero norm
    contribute similarity 0 for every pair involving that muscle.
    """
    if n_segments < 1:
        raise ValueError("n_segments must be at least 1")
    data = np.diff(buffer.lengths, axis=0) if use_differences else buffer.lengths
    n_rows, n_m = data.shape
    seg_len = n_rows // n_segments
    if seg_len < 1:
        raise ValueError(
            f"trajectory too short: {n_rows} rows for {n_segments} segments")
    data = data[:seg_len * n_segments]
    segs = data.reshape(n_segments, seg_len, n_m)
    dots = np.einsum("kti,ktj->kij", segs, segs)
    norms = np.sqrt(np.einsum("kti,kti->ki", segs, segs))
    denom = norms[:, :, None] * norms[:, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)
    R = cos.mean(axis=0)
    # exact symmetry: compute once, mirror the upper triangle
    iu = np.triu_indices(n_m, 1)
    R[(iu[1], iu[0])] = R[iu]
    degenerate = tuple(int(i) for i in np.flatnonzero(np.all(norms == 0.0, axis=0)))
    return CorrelationResult(R=R, n_segments=n_segments,
                             use_differences=use_differences, degenerate=degenerate)


def distance_from_correlation(R: np.ndarray) -> np.ndarray:
    """Dissimilarity 1 - R, clamped into [0, 2] against rounding."""
    return np.clip(1.0 - np.asarray(R, dtype=float), 0.0, 2.0)


@dataclass(frozen=True)
class GroupingResult:
    """Partition of actuator indices into synergy bins."""

    groups: tuple[tuple[int, ...], ...]
    medoids: tuple[int, ...]
    seed: int
    n_muscles: int
    cost: float

    def __post_init__(self):
        seen = [i for g in self.groups for i in g]
        if sorted(seen) != list(range(self.n_muscles)):
            raise ValueError("groups must partition the actuator indices")
        for g, m in zip(self.groups, self.medoids):
            if m not in g:
                raise ValueError("each medoid must belong to its bin")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def labels(self) -> np.ndarray:
        lab = np.empty(self.n_muscles, dtype=int)
        for b, g in enumerate(self.groups):
            for i in g:
                lab[i] = b
        return lab


def _pam_swap(D: np.ndarray, medoids: np.ndarray, rng) -> np.ndarray:
    """Steepest-descent SWAP phase; seeded tie-breaking among equal bests."""
    n = D.shape[0]
    k = len(medoids)
    medoids = medoids.copy()
    while True:
        dmed = D[:, medoids]  # (n, k)
        near = np.argmin(dmed, axis=1)
        d1 = dmed[np.arange(n), near]
        if k > 1:
            dmed_inf = dmed.copy()
            dmed_inf[np.arange(n), near] = np.inf
            d2 = dmed_inf.min(axis=1)
        else:
            d2 = np.full(n, np.inf)
        # change in total deviation for swapping medoid slot i against candidate c
        base = np.minimum(D - d1[:, None], 0.0)  # (n, c): gain if c adopted, i kept
        common = base.sum(axis=0)
        delta = np.empty((k, n))
        for i in range(k):
            mask = near == i
            if mask.any():
                lost = (np.minimum(D[mask], d2[mask, None]) - d1[mask, None]).sum(axis=0)
                delta[i] = common - base[mask].sum(axis=0) + lost
            else:
                delta[i] = common
        delta[:, medoids] = np.inf  # existing medoids are not candidates
        best = delta.min()
        if best >= -1e-12:
            return medoids
        ties = np.argwhere(delta <= best + 1e-15)
        slot, cand = ties[rng.integers(len(ties))]
        medoids[slot] = cand


def _pam(D: np.ndarray, k: int, rng) -> tuple[np.ndarray, np.ndarray, float]:
    """Greedy BUILD followed by SWAP; returns (medoids, labels, cost)."""
    n = D.shape[0]
    medoids = [int(np.argmin(D.sum(axis=0)))]
    while len(medoids) < k:
        dmed = D[:, medoids].min(axis=1)
        gains = np.maximum(dmed[:, None] - D, 0.0).sum(axis=0)
        gains[medoids] = -np.inf
        medoids.append(int(np.argmax(gains)))
    medoids = _pam_swap(D, np.array(medoids, dtype=int), rng)
    medoids = np.sort(medoids)
    labels = np.argmin(D[:, medoids], axis=1)
    labels[medoids] = np.arange(k)  # a medoid always anchors its own bin
    cost = float(D[np.arange(n), medoids[labels]].sum())
    return medoids, labels, cost


_EXACT_LIMIT = 50_000  # medoid subsets; above this PAM takes over


def _exact_medoids(D: np.ndarray, k: int) -> np.ndarray:
    """Globally optimal medoid set by enumeration (lexicographic tie-break)."""
    n = D.shape[0]
    combos = np.array(list(itertools.combinations(range(n), k)), dtype=int)
    costs = D[:, combos].min(axis=2).sum(axis=0)
    return combos[int(np.argmin(costs))]


def kmedoids(distance: np.ndarray, n_groups: int, seed: int = 0,
             n_restarts: int = 2) -> GroupingResult:
    """K-Medoids clustering of a precomputed dissimilarity matrix.

    Small instances (up to 50k candidate medoid sets) are solved exactly by
    enumeration, which is both fast and deterministic; larger ones fall back
    to PAM, where greedy BUILD breaks ties by lowest index, SWAP breaks ties
    through the seeded generator, and `n_restarts` extra seeded random
    initializations are descended with the best local optimum winning.
    """
    D = check_distance_matrix(distance)
    n = D.shape[0]
    if not 1 <= n_groups <= n:
        raise ValueError(f"n_groups must lie in [1, {n}], got {n_groups}")
    if math.comb(n, n_groups) <= _EXACT_LIMIT:
        medoids = _exact_medoids(D, n_groups)
        labels = np.argmin(D[:, medoids], axis=1)
        labels[medoids] = np.arange(n_groups)
        cost = float(D[np.arange(n), medoids[labels]].sum())
    else:
        rng = np.random.default_rng(seed)
        medoids, labels, cost = _pam(D, n_groups, rng)
        for _ in range(n_restarts):
            init = rng.choice(n, size=n_groups, replace=False)
            meds = np.sort(_pam_swap(D, np.sort(init), rng))
            lab = np.argmin(D[:, meds], axis=1)
            lab[meds] = np.arange(n_groups)
            c = float(D[np.arange(n), meds[lab]].sum())
            if c < cost - 1e-15:
                medoids, labels, cost = meds, lab, c
    groups = tuple(tuple(int(i) for i in np.flatnonzero(labels == b))
                   for b in range(n_groups))
    return GroupingResult(groups=groups, medoids=tuple(int(m) for m in medoids),
                          seed=seed, n_muscles=n, cost=cost)


@dataclass
class SelectionResult:
    """Group-count choice plus the diagnostic table behind it."""

    n_groups: int
    degenerate: bool
    threshold: float
    table: list[dict]  # rows: n_groups, d_max, d_min, gap


def select_group_count(distance: np.ndarray, candidates, seed: int = 0,
                       threshold: float = 0.8,
                       n_restarts: int = 2) -> SelectionResult:
    """Pick a group count from the spread of inter-medoid distances.

    For every candidate the clustering is run and the maximum and minimum
    pairwise distance between medoids recorded. The chosen count is the
    largest candidate whose gap (d_max - d_min) reaches `threshold` times the
    best gap observed; if every gap is zero (all points identical) the
    smallest candidate is returned with the degenerate flag set. The full
    table is always returned so the choice can be reviewed or overridden.
    """
    D = check_distance_matrix(distance)
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("candidates must be non-empty")
    if cands[0] < 2 or cands[-1] > D.shape[0]:
        raise ValueError("candidates must lie in [2, n_muscles]")
    table = []
    for c in cands:
        res = kmedoids(D, c, seed=seed, n_restarts=n_restarts)
        meds = np.array(res.medoids)
        pair = D[np.ix_(meds, meds)][np.triu_indices(len(meds), 1)]
        d_max, d_min = float(pair.max()), float(pair.min())
        table.append({"n_groups": c, "d_max": d_max, "d_min": d_min,
                      "gap": d_max - d_min})
    max_gap = max(row["gap"] for row in table)
    if max_gap <= 1e-12:
        return SelectionResult(n_groups=cands[0], degenerate=True,
                               threshold=threshold, table=table)
    chosen = max(row["n_groups"] for row in table
                 if row["gap"] >= threshold * max_gap)
    return SelectionResult(n_groups=chosen, degenerate=False,
                           threshold=threshold, table=table)


def grouping_probability(results) -> np.ndarray:
    """Co-grouping probability matrix across seeds: p_ij in [0, 1]."""
    results = list(results)
    if not results:
        raise ValueError("need at least one grouping result")
    n = results[0].n_muscles
    if any(r.n_muscles != n for r in results):
        raise ValueError("all grouping results must cover the same actuators")
    P = np.zeros((n, n))
    for r in results:
        lab = r.labels()
        P += (lab[:, None] == lab[None, :])
    return P / len(results)


def grouping_distance(p_a: np.ndarray, p_b: np.ndarray) -> float:
    """Frobenius norm between two co-grouping probability matrices."""
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    if p_a.shape != p_b.shape:
        raise ValueError("probability matrices must share a shape")
    return float(np.linalg.norm(p_a - p_b))


@dataclass
class ConvergenceRow:
    sample_size: int
    distance: float


def convergence_study(model: PlantModel, config: PerturbationConfig,
                      sample_sizes, n_seeds: int = 10,
                      n_groups: int | None = None,
                      candidates=None, n_segments: int = 100,
                      use_differences: bool = True):
    """Grouping stability versus trajectory length.

    Trajectories of the largest requested size are generated for `n_seeds`
    seeds, truncated to each size, regrouped, and the co-grouping matrix of
    each size is compared (Frobenius) against the largest-size reference.
    Returns (rows, n_groups, reference probability matrix).
    """
    sizes = [int(s) for s in sample_sizes]
    if not sizes:
        raise ValueError("sample_sizes must be non-empty")
    if sizes != sorted(sizes):
        raise ValueError("sample_sizes must be sorted ascending")
    ref_size = sizes[-1]
    if ref_size > config.total_steps:
        raise ValueError("largest sample size exceeds config.total_steps")
    buffers = [
        generate_trajectory(
            model,
            PerturbationConfig(total_steps=ref_size,
                               control_frequency=config.control_frequency,
                               control_amplitude=config.control_amplitude,
                               seed=config.seed + s, dt=config.dt),
        )
        for s in range(n_seeds)
    ]

    if n_groups is None:
        corr = correlation_matrix(buffers[0], n_segments=n_segments,
                                  use_differences=use_differences)
        D = distance_from_correlation(corr.R)
        cands = candidates or range(2, min(model.n_muscles, 8) + 1)
        n_groups = select_group_count(D, cands, seed=config.seed).n_groups
    k_groups = int(n_groups)

    def group_at(size):
        results = []
        for s, buf in enumerate(buffers):
            corr = correlation_matrix(buf.truncated(size), n_segments=n_segments,
                                      use_differences=use_differences)
            D = distance_from_correlation(corr.R)
            results.append(kmedoids(D, k_groups, seed=config.seed + s))
        return grouping_probability(results)

    p_ref = group_at(ref_size)
    rows = [ConvergenceRow(size, grouping_distance(group_at(size), p_ref))
            for size in sizes]
    return rows, k_groups, p_ref


class KMedoids(ClusterMixin, BaseEstimator):
    """PAM clusterer over a precomputed dissimilarity matrix.

    Scikit-learn estimator face of :func:`kmedoids`; `fit` expects a square
    distance matrix and exposes `labels_`, `medoid_indices_`, `inertia_`.
    """

    def __init__(self, n_clusters: int = 2, random_state: int = 0,
                 n_restarts: int = 2):
        self.n_clusters = n_clusters
        self.random_state = random_state
        self.n_restarts = n_restarts

    def fit(self, X, y=None):
        result = kmedoids(X, self.n_clusters, seed=self.random_state,
                          n_restarts=self.n_restarts)
        self.grouping_ = result
        self.labels_ = result.labels()
        self.medoid_indices_ = np.array(result.medoids)
        self.inertia_ = result.cost
        return self


class SynergyGrouping(BaseEstimator):
    """End-to-end grouping estimator over a recorded length matrix.

    `fit` takes an (n_steps, n_muscles) trajectory of muscle lengths,
    correlates length changes, optionally selects the group count from the
    inter-medoid distance spread, and clusters. Fitted attributes follow the
    scikit-learn convention.
    """

    def __init__(self, n_groups: int | None = None, candidates=None,
                 n_segments: int = 100, use_differences: bool = True,
                 selection_threshold: float = 0.8, random_state: int = 0,
                 n_restarts: int = 2):
        self.n_groups = n_groups
        self.candidates = candidates
        self.n_segments = n_segments
        self.use_differences = use_differences
        self.selection_threshold = selection_threshold
        self.random_state = random_state
        self.n_restarts = n_restarts

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be an (n_steps, n_muscles) matrix")
        buf = TrajectoryBuffer(X, dt=0.01, model_name="<array>")
        corr = correlation_matrix(buf, n_segments=self.n_segments,
                                  use_differences=self.use_differences)
        D = distance_from_correlation(corr.R)
        self.correlation_ = corr.R
        self.distance_ = D
        self.degenerate_ = corr.degenerate
        if self.n_groups is None:
            cands = self.candidates or range(2, min(X.shape[1], 8) + 1)
            sel = select_group_count(D, cands, seed=self.random_state,
                                     threshold=self.selection_threshold,
                                     n_restarts=self.n_restarts)
            self.selection_ = sel
            k = sel.n_groups
        else:
            self.selection_ = None
            k = self.n_groups
        result = kmedoids(D, k, seed=self.random_state, n_restarts=self.n_restarts)
        self.grouping_ = result
        self.labels_ = result.labels()
        self.medoid_indices_ = np.array(result.medoids)
        self.n_groups_ = result.n_groups
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
