import numpy as np
import pytest

from oracles import brute_cosine_edges
from scfp import ExpressionMatrix, ScfpError, cosine_knn, refine_graph, row_normalize
from scfp.graph import graph_changes
from scfp.model import validate_graph


def edges_of(graph):
    return {
        i: sorted(graph.adjacency.indices[graph.adjacency.indptr[i]:graph.adjacency.indptr[i + 1]].tolist())
        for i in range(graph.n_cells)
    }


class TestCosineKnn:
    def test_tie_breaks_to_lower_index(self):
        # cell2 ties between cells 0 and 1 at exactly 1/sqrt(2)
        g = cosine_knn(ExpressionMatrix([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), 1)
        assert edges_of(g) == {0: [2], 1: [2], 2: [0]}
        assert g.adjacency.data.tolist() == [1.0, 1.0, 1.0]

    def test_identical_rows_point_at_each_other(self):
        g = cosine_knn(ExpressionMatrix([[1.0, 1.0], [1.0, 1.0]]), 1)
        assert edges_of(g) == {0: [1], 1: [0]}
        assert g.adjacency.data.tolist() == [1.0, 1.0]

    def test_zero_norm_row_gets_self_loop(self):
        # rows 0 and 2 see similarity 0 everywhere, so the lower index wins
        g = cosine_knn(ExpressionMatrix([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]), 1)
        assert edges_of(g) == {0: [1], 1: [1], 2: [0]}
        assert g.adjacency[1, 1] == 1.0

    def test_k_saturates_at_n_minus_1(self, rng):
        x = ExpressionMatrix(rng.random((4, 3)))
        g = cosine_knn(x, 10)
        assert g.k == 3
        for i, neighbors in edges_of(g).items():
            assert neighbors == sorted(set(range(4)) - {i})
        assert np.allclose(g.adjacency.data, 1.0 / 3.0)

    def test_rejects_single_cell(self):
        with pytest.raises(ScfpError):
            cosine_knn(ExpressionMatrix([[1.0, 2.0]]), 1)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            cosine_knn(ExpressionMatrix([[1.0], [2.0]]), 0)

    def test_rows_sum_to_one(self, rng):
        for k in (1, 3, 7):
            g = cosine_knn(ExpressionMatrix(rng.random((12, 5))), k)
            sums = np.asarray(g.adjacency.sum(axis=1)).ravel()
            assert np.abs(sums - 1.0).max() <= 1e-12
            validate_graph(g)

    def test_matches_brute_force_all_pairs(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 9))
            m = int(rng.integers(1, 5))
            k = int(rng.integers(1, 4))
            values = rng.random((n, m)) * rng.integers(0, 2, (n, m))
            g = cosine_knn(ExpressionMatrix(values), k)
            assert edges_of(g) == brute_cosine_edges(values.tolist(), k)

    def test_permutation_equivariance(self, rng):
        values = rng.random((10, 6))
        perm = rng.permutation(10)
        g = cosine_knn(ExpressionMatrix(values), 3)
        g_perm = cosine_knn(ExpressionMatrix(values[perm]), 3)
        base = edges_of(g)
        inverse = np.argsort(perm)
        remapped = {
            int(inverse[i]): sorted(int(inverse[j]) for j in neighbors)
            for i, neighbors in base.items()
        }
        assert edges_of(g_perm) == remapped

    def test_scale_invariance_power_of_two_is_exact(self, rng):
        values = rng.random((9, 4))
        scaled = values.copy()
        scaled[3] *= 4.0
        scaled[7] *= 0.5
        g = cosine_knn(ExpressionMatrix(values), 2)
        g_scaled = cosine_knn(ExpressionMatrix(scaled), 2)
        assert (g.adjacency != g_scaled.adjacency).nnz == 0

    def test_scale_invariance_generic_scalar(self, rng):
        values = rng.random((9, 4))
        scaled = values.copy()
        scaled[2] *= 3.7
        g = cosine_knn(ExpressionMatrix(values), 2)
        g_scaled = cosine_knn(ExpressionMatrix(scaled), 2)
        assert edges_of(g) == edges_of(g_scaled)


class TestRefineGraph:
    def test_same_input_same_graph(self, rng):
        values = rng.random((8, 4)) * rng.integers(0, 2, (8, 4))
        x = ExpressionMatrix(values)
        g0 = cosine_knn(x, 2)
        g1 = refine_graph(x, 2)
        assert (g0.adjacency != g1.adjacency).nnz == 0

    def test_filled_dropout_flips_only_row_2(self):
        # found by brute-force search: filling the (2,0) dropout with 2.2
        # moves cell2's nearest neighbor from cell0 to cell1, nothing else
        x = np.array([[1.4, 0.7, 2.4], [2.8, 0.8, 1.6], [0.0, 2.8, 0.1]])
        warmed = x.copy()
        warmed[2, 0] = 2.2
        g0 = cosine_knn(ExpressionMatrix(x), 1)
        g1 = refine_graph(ExpressionMatrix(warmed), 1)
        assert edges_of(g0) == {0: [1], 1: [0], 2: [0]}
        assert edges_of(g1) == {0: [1], 1: [0], 2: [1]}
        changed_edges, changed_rows = graph_changes(g0, g1)
        assert changed_edges == 2 and changed_rows == 1

    def test_k_saturation_gives_complete_graph(self, rng):
        x = ExpressionMatrix(rng.random((5, 3)))
        g = refine_graph(x, 4)
        assert all(len(n) == 4 for n in edges_of(g).values())
        assert np.allclose(g.adjacency.data, 0.25)


class TestRowNormalize:
    def test_already_stochastic(self):
        g = row_normalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
        assert g.adjacency.toarray().tolist() == [[0.0, 1.0], [1.0, 0.0]]

    def test_divides_by_row_sum(self):
        g = row_normalize(np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]]))
        expected = [[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]
        assert g.adjacency.toarray().tolist() == expected

    def test_zero_row_becomes_self_loop(self):
        g = row_normalize(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        assert g.adjacency.toarray()[1].tolist() == [0.0, 1.0, 0.0]

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            row_normalize(np.array([[0.0, 2.0], [1.0, 0.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            row_normalize(np.zeros((2, 3)))
