import numpy as np
import pytest

from oracles import (
    best_two_partition_inertia,
    exhaustive_assignment,
    exhaustive_clustering_accuracy,
    loop_nmi,
    pair_counting_ari,
)
from scfp import (
    ExpressionMatrix,
    ScfpError,
    adjusted_rand_index,
    apply_dropout,
    clustering_accuracy,
    evaluate_clustering,
    hungarian_assign,
    kmeans,
    masked_rmse,
    normalized_mutual_info,
    pca_reduce,
)


def pairwise_distances(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


class TestApplyDropout:
    def test_rate_flooring_to_zero(self):
        x = ExpressionMatrix([[1.0, 0.0], [0.0, 2.0]])  # nnz = 2
        experiment = apply_dropout(x, 0.4, seed=7)  # floor(0.8) = 0
        assert experiment.held_out == []
        assert np.array_equal(experiment.corrupted.values, x.values)
        assert experiment.realized_rate == 0.0

    def test_near_full_rate(self, rng):
        values = rng.uniform(1.0, 2.0, (4, 5))
        x = ExpressionMatrix(values)
        experiment = apply_dropout(x, 0.999, seed=3)  # floor(0.999 * 20) = 19
        assert len(experiment.held_out) == 19
        assert experiment.realized_rate == 19 / 20
        assert np.count_nonzero(experiment.corrupted.values) == 1

    def test_same_seed_same_heldout(self, rng):
        x = ExpressionMatrix(rng.uniform(0, 3, (6, 6)))
        a = apply_dropout(x, 0.3, seed=11)
        b = apply_dropout(x, 0.3, seed=11)
        assert a.held_out == b.held_out

    def test_heldout_entries_were_nonzero_and_are_zeroed(self, rng):
        values = rng.uniform(0, 3, (8, 8)) * (rng.random((8, 8)) < 0.6)
        values[0, 0] = 1.5
        x = ExpressionMatrix(values)
        experiment = apply_dropout(x, 0.5, seed=0)
        for i, j, value in experiment.held_out:
            assert x.values[i, j] == value and value != 0.0
            assert experiment.corrupted.values[i, j] == 0.0
        expected = int(0.5 * np.count_nonzero(values))
        assert len(experiment.held_out) == expected

    def test_rejects_bad_rate(self, rng):
        x = ExpressionMatrix(rng.uniform(1, 2, (2, 2)))
        for rate in (0.0, 1.0, -0.5):
            with pytest.raises(ValueError):
                apply_dropout(x, rate, seed=0)

    def test_rejects_all_zero_matrix(self):
        with pytest.raises(ScfpError):
            apply_dropout(ExpressionMatrix(np.zeros((2, 2))), 0.5, seed=0)


class TestMaskedRmse:
    def test_perfect_imputation_is_zero(self, rng):
        x = ExpressionMatrix(rng.uniform(1, 3, (5, 5)))
        experiment = apply_dropout(x, 0.4, seed=2)
        assert masked_rmse(x, experiment.held_out) == 0.0

    def test_hand_arithmetic(self):
        imputed = ExpressionMatrix([[2.0, 4.0]])
        assert masked_rmse(imputed, [(0, 0, 1.0), (0, 1, 3.0)]) == 1.0

    def test_single_entry(self):
        imputed = ExpressionMatrix([[0.0]])
        assert masked_rmse(imputed, [(0, 0, 0.5)]) == 0.5

    def test_empty_heldout_rejected(self):
        with pytest.raises(ScfpError):
            masked_rmse(ExpressionMatrix([[1.0]]), [])


class TestPcaReduce:
    def test_line_in_2d_preserves_distances(self):
        t = np.linspace(0, 3, 7)
        points = np.stack([2 * t + 1, -t + 4], axis=1)
        x = ExpressionMatrix(points)
        embedded = pca_reduce(x, 1)
        original = pairwise_distances(points)
        reduced = pairwise_distances(embedded)
        assert reduced == pytest.approx(original, abs=1e-9)

    def test_full_rank_orthogonal_transform(self, rng):
        points = rng.uniform(0, 2, (6, 4))
        embedded = pca_reduce(ExpressionMatrix(points), 4)
        assert pairwise_distances(embedded) == pytest.approx(
            pairwise_distances(points), abs=1e-8
        )

    def test_duplicate_rows_map_together(self, rng):
        row = rng.uniform(0, 2, 5)
        other = rng.uniform(0, 2, (3, 5))
        points = np.vstack([row, other, row])
        embedded = pca_reduce(ExpressionMatrix(points), 2)
        assert embedded[0] == pytest.approx(embedded[4], abs=1e-10)

    def test_sign_deterministic(self, rng):
        x = ExpressionMatrix(rng.uniform(0, 2, (8, 5)))
        a = pca_reduce(x, 3)
        b = pca_reduce(x, 3)
        assert np.array_equal(a, b)

    def test_d_out_of_range(self, rng):
        x = ExpressionMatrix(rng.uniform(0, 1, (4, 3)))
        for d in (0, 4):
            with pytest.raises(ValueError):
                pca_reduce(x, d)


class TestKmeans:
    def test_two_separated_clouds_match_optimal_partition(self, rng):
        cloud_a = rng.normal(0.0, 0.1, (5, 2))
        cloud_b = rng.normal(8.0, 0.1, (5, 2))
        points = np.vstack([cloud_a, cloud_b])
        result = kmeans(points, 2, seed=0)
        assert result.inertia == pytest.approx(
            best_two_partition_inertia(points.tolist()), rel=1e-9
        )
        labels = result.labels
        assert len(set(labels[:5])) == 1 and len(set(labels[5:])) == 1
        assert labels[0] != labels[5]

    def test_c_equals_n_gives_zero_inertia(self, rng):
        points = rng.uniform(0, 5, (6, 3))
        result = kmeans(points, 6, seed=1)
        assert result.inertia == pytest.approx(0.0, abs=1e-20)
        assert sorted(result.labels.tolist()) == list(range(6))

    def test_identical_points_flag_empty_cluster(self):
        points = np.ones((5, 2))
        result = kmeans(points, 2, seed=0)
        assert result.inertia == 0.0
        assert result.empty_clusters  # one cluster can never be filled

    def test_inertia_history_non_increasing(self, rng):
        points = rng.uniform(0, 5, (40, 3))
        result = kmeans(points, 4, seed=3, restarts=1)
        history = result.inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))

    def test_c_greater_than_n_rejected(self, rng):
        with pytest.raises(ValueError):
            kmeans(rng.uniform(0, 1, (3, 2)), 4, seed=0)

    def test_deterministic_given_seed(self, rng):
        points = rng.uniform(0, 5, (25, 4))
        a = kmeans(points, 3, seed=9)
        b = kmeans(points, 3, seed=9)
        assert np.array_equal(a.labels, b.labels)
        assert a.inertia == b.inertia


class TestAdjustedRandIndex:
    def test_label_permutation_is_perfect(self):
        assert adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0

    def test_independent_labelings(self):
        # frozen from the pair-counting oracle: n11=0 n10=2 n01=2 n00=2
        assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)
        assert adjusted_rand_index([0, 0, 1, 1], [0, 1, 0, 1]) <= 0.0

    def test_self_agreement(self, rng):
        labels = rng.integers(0, 4, 20)
        assert adjusted_rand_index(labels, labels) == 1.0

    def test_both_single_cluster_convention(self):
        assert adjusted_rand_index([0, 0, 0], [5, 5, 5]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            adjusted_rand_index([0, 1], [0, 1, 2])


class TestNormalizedMutualInfo:
    def test_identical_labelings(self):
        assert normalized_mutual_info([0, 0, 1, 1, 2], [0, 0, 1, 1, 2]) == 1.0

    def test_independent_labelings(self):
        assert normalized_mutual_info([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0

    def test_permutation_invariance(self, rng):
        a = rng.integers(0, 3, 30)
        b = rng.integers(0, 4, 30)
        remap = {0: 3, 1: 0, 2: 2, 3: 1}
        b_renamed = [remap[v] for v in b.tolist()]
        assert normalized_mutual_info(a, b) == pytest.approx(
            normalized_mutual_info(a, b_renamed), abs=1e-15
        )

    def test_single_cluster_conventions(self):
        assert normalized_mutual_info([0, 0, 0], [1, 1, 1]) == 1.0
        assert normalized_mutual_info([0, 0, 0], [0, 1, 2]) == 0.0


class TestClusteringAccuracy:
    def test_relabeling_is_perfect(self):
        assert clustering_accuracy([1, 1, 0], [0, 0, 1]) == 1.0

    def test_hand_matched_value(self):
        # best matching keeps 3 of 5 (frozen from exhaustive enumeration)
        assert clustering_accuracy([0, 0, 1, 1, 1], [0, 1, 0, 1, 1]) == 0.6

    def test_self_agreement(self, rng):
        labels = rng.integers(0, 5, 25)
        assert clustering_accuracy(labels, labels) == 1.0

    def test_unequal_cluster_counts(self, rng):
        pred = rng.integers(0, 6, 30).tolist()
        truth = rng.integers(0, 3, 30).tolist()
        assert clustering_accuracy(pred, truth) == pytest.approx(
            exhaustive_clustering_accuracy(pred, truth), abs=1e-12
        )


class TestHungarianAssign:
    def test_two_by_two_hand_value(self):
        pairs, cost = hungarian_assign(np.array([[4.0, 1.0], [2.0, 3.0]]))
        assert cost == 3.0
        assert sorted(pairs) == [(0, 1), (1, 0)]

    def test_zero_diagonal_picks_diagonal(self):
        cost = np.ones((4, 4)) - np.eye(4)
        pairs, total = hungarian_assign(cost)
        assert total == 0.0
        assert sorted(pairs) == [(i, i) for i in range(4)]

    def test_rectangular_matches_enumeration(self, rng):
        for _ in range(20):
            cost = rng.uniform(-5, 5, (2, 3))
            _, total = hungarian_assign(cost)
            assert total == pytest.approx(exhaustive_assignment(cost.tolist()), abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            hungarian_assign(np.array([[1.0, np.inf], [0.0, 1.0]]))


class TestMetricOracleAgreement:
    def test_random_label_pairs(self, rng):
        for _ in range(60):
            n = int(rng.integers(2, 13))
            a = rng.integers(0, int(rng.integers(1, 6)), n).tolist()
            b = rng.integers(0, int(rng.integers(1, 6)), n).tolist()
            assert adjusted_rand_index(a, b) == pytest.approx(
                pair_counting_ari(a, b), abs=1e-12
            )
            assert normalized_mutual_info(a, b) == pytest.approx(
                min(1.0, max(0.0, loop_nmi(a, b))), abs=1e-12
            )
            assert clustering_accuracy(a, b) == pytest.approx(
                exhaustive_clustering_accuracy(a, b), abs=1e-12
            )


class TestEvaluateClustering:
    def test_perfectly_separated_groups(self, rng):
        centers = np.array([[0.0] * 6, [50.0] * 6, [-40.0] * 6])
        labels = np.repeat([0, 1, 2], 10)
        points = np.abs(centers[labels] + rng.normal(0, 0.2, (30, 6)))
        report = evaluate_clustering(ExpressionMatrix(points), labels, c=3, seed=0)
        assert report.ari == 1.0
        assert report.nmi == 1.0
        assert report.ca == 1.0

    def test_single_label_degenerate_convention(self, rng):
        points = rng.uniform(0, 1, (6, 4))
        report = evaluate_clustering(
            ExpressionMatrix(points), np.zeros(6, dtype=int), c=1, seed=0
        )
        assert report.ca == 1.0
        assert report.ari == 1.0
        assert "degenerate_single_cluster_convention" in report.flags

    def test_shuffled_labels_score_near_zero(self, rng):
        centers = np.array([[0.0] * 5, [30.0] * 5])
        labels = np.repeat([0, 1], 100)
        points = np.abs(centers[labels] + rng.normal(0, 0.3, (200, 5)))
        x = ExpressionMatrix(points)
        for trial in range(20):
            shuffled = labels.copy()
            np.random.default_rng(trial).shuffle(shuffled)
            report = evaluate_clustering(x, shuffled, c=2, seed=0)
            assert abs(report.ari) < 0.2

    def test_label_length_mismatch(self, rng):
        x = ExpressionMatrix(rng.uniform(0, 1, (4, 3)))
        with pytest.raises(ValueError):
            evaluate_clustering(x, [0, 1], c=2, seed=0)
