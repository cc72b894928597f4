import itertools

import numpy as np
import pytest

from dynsyn import synergy as S
from dynsyn.models import make_model
from dynsyn.plant import muscle_lengths


def brute_force_cost(D, k):
    best = np.inf
    for meds in itertools.combinations(range(D.shape[0]), k):
        best = min(best, D[:, meds].min(axis=1).sum())
    return best


def toy_buffer(lengths):
    return S.TrajectoryBuffer(np.asarray(lengths, dtype=float), dt=0.01,
                              model_name="toy")


class TestPerturbationConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            S.PerturbationConfig(total_steps=0)
        with pytest.raises(ValueError):
            S.PerturbationConfig(control_frequency=0)
        with pytest.raises(ValueError):
            S.PerturbationConfig(control_amplitude=-1.0)


class TestGenerateTrajectory:
    def test_zero_amplitude_rows_constant(self, arm):
        cfg = S.PerturbationConfig(total_steps=200, control_amplitude=0.0, seed=0)
        buf = S.generate_trajectory(arm, cfg)
        assert np.array_equal(buf.lengths, np.tile(buf.lengths[0], (200, 1)))

    def test_deterministic_bitwise(self, arm):
        cfg = S.PerturbationConfig(total_steps=500, control_amplitude=10.0, seed=42)
        a = S.generate_trajectory(arm, cfg)
        b = S.generate_trajectory(arm, cfg)
        assert np.array_equal(a.lengths, b.lengths)

    def test_seed_changes_data(self, arm):
        base = dict(total_steps=500, control_amplitude=10.0)
        a = S.generate_trajectory(arm, S.PerturbationConfig(seed=0, **base))
        b = S.generate_trajectory(arm, S.PerturbationConfig(seed=1, **base))
        assert not np.array_equal(a.lengths, b.lengths)

    def test_length_range_coverage(self, arm, arm_extraction_50k):
        buffers, _ = arm_extraction_50k
        grid1 = np.linspace(arm.limit_lo[0], arm.limit_hi[0], 60)
        grid2 = np.linspace(arm.limit_lo[1], arm.limit_hi[1], 60)
        lengths = np.array([muscle_lengths(arm, [a, b])
                            for a in grid1 for b in grid2])
        geo_span = lengths.max(axis=0) - lengths.min(axis=0)
        seen = buffers[0].lengths.max(axis=0) - buffers[0].lengths.min(axis=0)
        assert np.all(seen / geo_span >= 0.8)


class TestCorrelationMatrix:
    def test_identical_signal_unity(self):
        rng = np.random.default_rng(0)
        sig = np.cumsum(rng.standard_normal(101)) * 1e-3 + 1.0
        buf = toy_buffer(np.stack([sig, sig], axis=1))
        corr = S.correlation_matrix(buf, n_segments=4)
        assert corr.R[0, 1] == pytest.approx(1.0)

    def test_perfect_antagonist_minus_one(self):
        rng = np.random.default_rng(1)
        diffs = rng.standard_normal(100) * 1e-3
        a = 1.0 + np.concatenate([[0.0], np.cumsum(diffs)])
        b = 1.0 - np.concatenate([[0.0], np.cumsum(diffs)])
        corr = S.correlation_matrix(toy_buffer(np.stack([a, b], axis=1)),
                                    n_segments=5)
        assert corr.R[0, 1] == pytest.approx(-1.0)

    def test_hand_computed_two_segments(self):
        # diffs muscle0: [1, 0, 2, 2], muscle1: [1, 1, 0, 2] -> two segments
        d0 = np.array([1.0, 0.0, 2.0, 2.0])
        d1 = np.array([1.0, 1.0, 0.0, 2.0])
        l0 = 5.0 + np.concatenate([[0], np.cumsum(d0)])
        l1 = 5.0 + np.concatenate([[0], np.cumsum(d1)])
        corr = S.correlation_matrix(toy_buffer(np.stack([l0, l1], 1)), n_segments=2)
        s1 = np.dot([1, 0], [1, 1]) / (np.linalg.norm([1, 0]) * np.linalg.norm([1, 1]))
        s2 = np.dot([2, 2], [0, 2]) / (np.linalg.norm([2, 2]) * np.linalg.norm([0, 2]))
        assert corr.R[0, 1] == pytest.approx(0.5 * (s1 + s2), rel=1e-12)

    def test_zero_norm_segment_contributes_zero(self):
        # muscle1 flat in the first segment, correlated in the second
        l0 = np.array([1.0, 1.1, 1.2, 1.3, 1.4])
        l1 = np.array([1.0, 1.0, 1.0, 1.1, 1.2])
        corr = S.correlation_matrix(toy_buffer(np.stack([l0, l1], 1)), n_segments=2)
        assert corr.R[0, 1] == pytest.approx(0.5 * (0.0 + 1.0))

    def test_fully_degenerate_muscle_flagged(self):
        l0 = np.linspace(1.0, 1.5, 40)
        l1 = np.full(40, 2.0)
        corr = S.correlation_matrix(toy_buffer(np.stack([l0, l1], 1)), n_segments=4)
        assert corr.degenerate == (1,)
        assert corr.R[1, 1] == 0.0

    def test_exact_symmetry(self, arm_extraction_50k):
        _, corrs = arm_extraction_50k
        R = corrs[0].R
        assert np.array_equal(R, R.T)
        assert np.all(np.abs(R) <= 1.0 + 1e-12)
        assert np.allclose(np.diag(R), 1.0)

    def test_raw_mode_switch(self):
        rng = np.random.default_rng(3)
        data = 1.0 + 0.1 * rng.random((50, 3))
        raw = S.correlation_matrix(toy_buffer(data), n_segments=2,
                                   use_differences=False)
        diff = S.correlation_matrix(toy_buffer(data), n_segments=2)
        assert raw.use_differences is False
        assert not np.allclose(raw.R, diff.R)

    def test_too_many_segments_rejected(self):
        with pytest.raises(ValueError):
            S.correlation_matrix(toy_buffer(np.ones((5, 2)) + 0.1), n_segments=10)


class TestKMedoids:
    def test_every_point_its_own_medoid(self):
        rng = np.random.default_rng(0)
        pts = rng.random((6, 2))
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        g = S.kmedoids(D, 6)
        assert g.cost == 0.0
        assert g.medoids == tuple(range(6))

    def test_two_separated_pairs_match_brute_force(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        g = S.kmedoids(D, 2)
        assert sorted(map(sorted, g.groups)) == [[0, 1], [2, 3]]
        assert g.cost == pytest.approx(brute_force_cost(D, 2), abs=1e-12)

    def test_duplicates_always_cogrouped(self):
        D = np.array([[0.0, 0.0, 1.0, 1.1],
                      [0.0, 0.0, 1.0, 1.1],
                      [1.0, 1.0, 0.0, 0.2],
                      [1.1, 1.1, 0.2, 0.0]])
        g = S.kmedoids(D, 2)
        lab = g.labels()
        assert lab[0] == lab[1]

    def test_bad_group_count(self):
        D = np.zeros((3, 3))
        with pytest.raises(ValueError):
            S.kmedoids(D, 4)
        with pytest.raises(ValueError):
            S.kmedoids(D, 0)

    def test_asymmetric_rejected(self):
        D = np.array([[0.0, 1.0], [2.0, 0.0]])
        with pytest.raises(ValueError):
            S.kmedoids(D, 1)

    def test_matches_exhaustive_on_random_instances(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            pts = rng.random((7, 3))
            D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
            for k in (2, 3):
                assert S.kmedoids(D, k, seed=trial).cost == pytest.approx(
                    brute_force_cost(D, k), abs=1e-12)

    def test_pam_path_beats_random_partitions(self):
        # big enough that enumeration is bypassed
        rng = np.random.default_rng(11)
        pts = rng.random((24, 2))
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        g = S.kmedoids(D, 11, seed=0)
        assert all(len(b) >= 1 for b in g.groups)
        sizes = [len(b) for b in g.groups]
        for trial in range(100):
            perm = rng.permutation(24)
            cost = 0.0
            at = 0
            for size in sizes:
                idx = perm[at:at + size]
                at += size
                # best in-bin medoid for this random partition
                cost += D[np.ix_(idx, idx)].sum(axis=0).min()
            assert g.cost <= cost + 1e-12

    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(13)
        pts = rng.random((30, 2))
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        a = S.kmedoids(D, 12, seed=5)
        b = S.kmedoids(D, 12, seed=5)
        assert a.groups == b.groups and a.medoids == b.medoids

    def test_estimator_api(self):
        pts = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.1, 5.0]])
        D = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        est = S.KMedoids(n_clusters=2, random_state=0)
        labels = est.fit(D).labels_
        assert est.get_params()["n_clusters"] == 2
        assert labels[0] == labels[1] and labels[2] == labels[3]
        assert est.inertia_ == pytest.approx(brute_force_cost(D, 2), abs=1e-12)


class TestSelectGroupCount:
    def _cluster_distance(self, rng, centers, per=4, spread=0.01):
        pts = np.vstack([c + spread * rng.standard_normal((per, len(c)))
                         for c in centers])
        return np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))

    def test_recovers_known_cluster_count(self):
        rng = np.random.default_rng(0)
        D = self._cluster_distance(rng, [[0, 0], [3.0, 0], [0, 4.5]])
        sel = S.select_group_count(D, [2, 3], seed=0)
        assert sel.n_groups == 3 and not sel.degenerate

    def test_all_identical_degenerate(self):
        D = np.zeros((5, 5))
        sel = S.select_group_count(D, [2, 3, 4])
        assert sel.n_groups == 2 and sel.degenerate

    def test_single_candidate(self):
        rng = np.random.default_rng(1)
        D = self._cluster_distance(rng, [[0, 0], [2.0, 0], [0, 3.0]])
        sel = S.select_group_count(D, [3], seed=0)
        assert sel.n_groups == 3

    def test_candidate_bounds(self):
        D = np.zeros((4, 4))
        with pytest.raises(ValueError):
            S.select_group_count(D, [1, 2])
        with pytest.raises(ValueError):
            S.select_group_count(D, [])
        with pytest.raises(ValueError):
            S.select_group_count(D, [5])

    def test_table_is_complete(self):
        rng = np.random.default_rng(2)
        D = self._cluster_distance(rng, [[0, 0], [2.0, 0], [0, 3.0], [4, 4]])
        sel = S.select_group_count(D, [2, 3, 4], seed=0)
        assert [row["n_groups"] for row in sel.table] == [2, 3, 4]
        assert all(row["gap"] == row["d_max"] - row["d_min"] for row in sel.table)


class TestGroupingProbability:
    def _result(self, groups, n):
        meds = tuple(g[0] for g in groups)
        return S.GroupingResult(groups=tuple(tuple(g) for g in groups),
                                medoids=meds, seed=0, n_muscles=n, cost=0.0)

    def test_single_result_binary(self):
        P = S.grouping_probability([self._result([[0, 1], [2]], 3)])
        assert set(np.unique(P)) <= {0.0, 1.0}

    def test_identical_results_binary(self):
        results = [self._result([[0, 1], [2]], 3)] * 10
        P = S.grouping_probability(results)
        assert set(np.unique(P)) <= {0.0, 1.0}

    def test_three_of_ten_flip(self):
        base = self._result([[0, 1], [2]], 3)
        alt = self._result([[0], [1, 2]], 3)
        P = S.grouping_probability([base] * 7 + [alt] * 3)
        assert P[0, 1] == pytest.approx(0.7)
        assert P[1, 2] == pytest.approx(0.3)
        assert np.array_equal(P, P.T)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            S.grouping_probability([])


class TestGroupingDistance:
    def test_identity_zero(self):
        P = np.random.default_rng(0).random((4, 4))
        assert S.grouping_distance(P, P) == 0.0

    def test_hand_value(self):
        assert S.grouping_distance(np.ones((2, 2)), np.eye(2)) == pytest.approx(
            np.sqrt(2.0))

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 3)), rng.random((3, 3))
        assert S.grouping_distance(a, b) == S.grouping_distance(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            S.grouping_distance(np.ones((2, 2)), np.ones((3, 3)))


class TestConvergenceStudy:
    def test_validation(self, arm):
        cfg = S.PerturbationConfig(total_steps=1000, seed=0)
        with pytest.raises(ValueError):
            S.convergence_study(arm, cfg, [])
        with pytest.raises(ValueError):
            S.convergence_study(arm, cfg, [500, 200])
        with pytest.raises(ValueError):
            S.convergence_study(arm, cfg, [2000])

    def test_reference_distance_zero(self, arm):
        cfg = S.PerturbationConfig(total_steps=2000, control_amplitude=10.0, seed=0)
        rows, k, p_ref = S.convergence_study(arm, cfg, [500, 2000], n_seeds=3,
                                             n_groups=3, n_segments=10)
        assert rows[-1].sample_size == 2000
        assert rows[-1].distance == 0.0
        assert p_ref.shape == (6, 6)


class TestSynergyGroupingEstimator:
    def test_fit_on_trajectory(self, arm_extraction_50k):
        buffers, _ = arm_extraction_50k
        est = S.SynergyGrouping(candidates=[2, 3, 4], random_state=0)
        labels = est.fit_predict(buffers[0].lengths)
        assert len(labels) == 6
        assert est.n_groups_ == est.selection_.n_groups
        assert est.correlation_.shape == (6, 6)
        # antagonist pairs land in different bins
        for i, j in ((0, 1), (2, 3), (4, 5)):
            assert labels[i] != labels[j]

    def test_explicit_group_count(self):
        rng = np.random.default_rng(0)
        data = 1.0 + 0.01 * np.cumsum(rng.standard_normal((300, 4)), axis=0)
        data = np.abs(data) + 0.5
        est = S.SynergyGrouping(n_groups=2, n_segments=5, random_state=1)
        est.fit(data)
        assert est.n_groups_ == 2 and est.selection_ is None

    def test_get_params_roundtrip(self):
        est = S.SynergyGrouping(n_groups=3, n_segments=7)
        params = est.get_params()
        assert params["n_groups"] == 3 and params["n_segments"] == 7
        est.set_params(n_segments=9)
        assert est.n_segments == 9
