import itertools

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hosr.data import EdgeList
from hosr.graph import build_graph, graph_dropout, korder_neighbors, propagation_matrix, write_census_csv
from hosr.numerics import RandomStream


def graph(n, pairs):
    return build_graph(EdgeList(n, np.asarray(pairs, dtype=np.int64).reshape(-1, 2)))


PATH = graph(3, [(0, 1), (1, 2)])


@st.composite
def graphs(draw, max_n=20):
    n = draw(st.integers(1, max_n))
    pairs = list(itertools.combinations(range(n), 2))
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return graph(n, chosen)


def dense_oracle(g):
    A = g.adjacency.todense()
    Dm = np.diag(1.0 / np.sqrt(A.sum(axis=1) + 1.0))
    return Dm @ (A + np.eye(g.n_users)) @ Dm


class TestBuildGraph:
    def test_degrees(self):
        npt.assert_array_equal(graph(3, [(0, 1)]).degree, [1, 1, 0])
        npt.assert_array_equal(graph(4, []).adjacency.todense(), np.zeros((4, 4)))
        assert PATH.degree[1] == 2

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            build_graph(EdgeList(5, np.array([[0, 4]])), n_users=3)

    @given(graphs())
    def test_symmetric_zero_diagonal(self, g):
        A = g.adjacency.todense()
        npt.assert_array_equal(A, A.T)
        assert np.all(np.diag(A) == 0)
        npt.assert_array_equal(g.degree, A.sum(axis=1))


class TestPropagationMatrix:
    def test_isolated_user(self):
        npt.assert_array_equal(propagation_matrix(graph(1, [])).todense(), [[1.0]])

    def test_path_values(self):
        L = propagation_matrix(PATH).todense()
        assert L[0, 0] == 0.5 and L[2, 2] == 0.5
        assert L[1, 1] == 1 / 3
        assert L[0, 1] == pytest.approx(0.40825, abs=5e-6)
        assert L[0, 2] == 0.0

    def test_complete_graph(self):
        L = propagation_matrix(graph(3, [(0, 1), (0, 2), (1, 2)])).todense()
        npt.assert_allclose(L, np.full((3, 3), 1 / 3), rtol=0, atol=1e-16)

    @given(graphs(max_n=50))
    def test_matches_dense_oracle(self, g):
        L = propagation_matrix(g)
        npt.assert_allclose(L.todense(), dense_oracle(g), rtol=0, atol=1e-15)
        assert L.nnz == g.adjacency.nnz + g.n_users

    @given(graphs())
    def test_exactly_symmetric(self, g):
        L = propagation_matrix(g).todense()
        assert np.array_equal(L, L.T)
        npt.assert_array_equal(np.diag(L), 1.0 / (g.degree + 1.0))


class TestGraphDropout:
    def test_zero_rate_is_identity(self):
        assert graph_dropout(PATH, 0.0, RandomStream(0)) is PATH

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            graph_dropout(PATH, 1.0, RandomStream(0))

    @given(graphs(), st.floats(0.0, 0.99), st.integers(0, 10_000))
    def test_subgraph_and_symmetric(self, g, p2, seed):
        d = graph_dropout(g, p2, RandomStream(seed))
        A, B = g.adjacency.todense(), d.adjacency.todense()
        npt.assert_array_equal(B, B.T)
        assert np.all(B <= A)
        L = propagation_matrix(d)
        npt.assert_array_equal(np.diag(L.todense()) > 0, True)

    def test_binomial_survival(self):
        rng = np.random.default_rng(0)
        n = 2000
        pairs = set()
        while len(pairs) < 10_000:
            a, b = sorted(rng.choice(n, 2, replace=False))
            pairs.add((int(a), int(b)))
        g = graph(n, sorted(pairs))
        sigma = np.sqrt(10_000 * 0.2 * 0.8)
        for seed in range(5):
            kept = len(graph_dropout(g, 0.2, RandomStream(seed)).edges)
            assert abs(kept - 8000) <= 3 * sigma

    def test_high_rate_empties(self):
        g = graph(6, list(itertools.combinations(range(6), 2)))
        kept = [len(graph_dropout(g, 0.999, RandomStream(s)).edges) for s in range(20)]
        assert np.mean(kept) < 1


class TestNeighborCensus:
    def test_path_by_hand(self):
        assert korder_neighbors(PATH, 1).counts[0] == 1
        assert korder_neighbors(PATH, 2).counts[0] == 2
        npt.assert_array_equal(korder_neighbors(PATH, 1).counts, [1, 2, 1])

    def test_complete_graph(self):
        g = graph(5, list(itertools.combinations(range(5), 2)))
        for k in (1, 2, 3):
            npt.assert_array_equal(korder_neighbors(g, k).counts, 4)
            assert korder_neighbors(g, k).density == 1.0

    def test_bad_order(self):
        with pytest.raises(ValueError):
            korder_neighbors(PATH, 0)

    @given(graphs(), st.integers(1, 4))
    def test_matches_boolean_powers(self, g, k):
        step = (g.adjacency.todense() + np.eye(g.n_users)) > 0
        reach = np.linalg.matrix_power(step.astype(np.int64), k) > 0
        npt.assert_array_equal(korder_neighbors(g, k).counts, reach.sum(axis=1) - 1)

    @given(graphs())
    def test_monotone_in_k(self, g):
        counts = [korder_neighbors(g, k).counts for k in range(1, 5)]
        for a, b in zip(counts, counts[1:]):
            assert np.all(b >= a)

    def test_csv(self, tmp_path):
        write_census_csv(PATH, 3, tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "order,density,avg_neighbors"
        assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3"]
        assert float(lines[1].split(",")[2]) == pytest.approx(4 / 3)
        assert float(lines[2].split(",")[1]) == 1.0
