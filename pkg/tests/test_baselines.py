import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hosr.baselines import (
    BaselineScorer,
    init_baseline,
    score_bpr_mf,
    score_trustsvd,
    social_aggregation_matrix,
)
from hosr.data import EdgeList, InteractionSet
from hosr.grad import compare_gradients, numeric_gradient
from hosr.graph import build_graph


def tiny(seed, n=6, m=7):
    rng = np.random.default_rng(seed)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35]
    g = build_graph(EdgeList(n, np.asarray(pairs, dtype=np.int64).reshape(-1, 2)))
    mask = rng.random((n, m)) < 0.4
    mask[:, -1] = False
    u, i = np.nonzero(mask)
    train = InteractionSet(n, m, u, i)
    users = rng.integers(0, n, 12)
    batch = np.stack([users, rng.integers(0, m, 12), np.full(12, m - 1)], 1)
    return train, g, batch


class TestScores:
    def test_bpr_examples(self):
        p = init_baseline("bpr", 2, 2, 2)
        p.U[0], p.V[0], p.V[1] = (1, 2), (3, -1), (2, -1)
        assert score_bpr_mf(p, 0, 0) == 1.0
        assert score_bpr_mf(p, 0, 1) == 0.0
        p.V[1] = p.U[0]
        assert score_bpr_mf(p, 0, 1) == 5.0

    def test_trustsvd_scalar(self):
        train = InteractionSet(2, 2, np.array([0]), np.array([1]))
        g = build_graph(EdgeList(2, np.array([[0, 1]])))
        p = init_baseline("trustsvd", 2, 2, 1, scale=0)
        p.Q[1], p.Wt[1], p.V[0] = 2.0, 3.0, 1.0
        assert score_trustsvd(p, train, g, 0, 0) == 5.0

    def test_trustsvd_degenerate_sets(self):
        train = InteractionSet(3, 2, np.array([1]), np.array([0]))
        g = build_graph(EdgeList(3, np.zeros((0, 2), dtype=np.int64)))
        p = init_baseline("trustsvd", 3, 2, 3, scale=0.5, seed=1)
        assert score_trustsvd(p, train, g, 0, 1) == score_bpr_mf(p, 0, 1)

    @given(st.integers(0, 1000))
    def test_zero_side_terms_equal_bpr(self, seed):
        train, g, _ = tiny(seed)
        p = init_baseline("trustsvd", 6, 7, 3, scale=0.5, seed=seed)
        p.Q[:], p.Wt[:] = 0.0, 0.0
        for u in range(6):
            for j in range(7):
                assert score_trustsvd(p, train, g, u, j) == score_bpr_mf(p, u, j)

    @given(st.integers(0, 1000))
    def test_vectorised_matches_scalar(self, seed):
        train, g, _ = tiny(seed)
        p = init_baseline("trustsvd", 6, 7, 3, scale=0.5, seed=seed)
        Z = BaselineScorer("trustsvd", train, g).user_vectors(p)
        for u in range(6):
            npt.assert_allclose(Z[u] @ p.V.T, [score_trustsvd(p, train, g, u, j) for j in range(7)], atol=1e-12)

    def test_social_matrix(self):
        g = build_graph(EdgeList(3, np.array([[0, 1], [0, 2]])))
        npt.assert_allclose(social_aggregation_matrix(g).todense(),
                            [[0, 1 / np.sqrt(2), 1 / np.sqrt(2)], [1, 0, 0], [1, 0, 0]])


class TestGradients:
    @pytest.mark.parametrize("variant", ["bpr", "trustsvd"])
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, variant, seed):
        train, g, batch = tiny(seed)
        scorer = BaselineScorer(variant, train, g)
        p = init_baseline(variant, 6, 7, 3, scale=0.5, seed=seed)
        _, grads = scorer.backward(p, batch, 0.01)
        numeric = numeric_gradient(lambda q: scorer.loss(q, batch, 0.01), p.copy(), scorer.trainable(p))
        report = compare_gradients(grads, numeric, 1e-4)
        assert report.passed, report.to_csv()

    def test_loss_matches_backward(self):
        train, g, batch = tiny(1)
        scorer = BaselineScorer("trustsvd", train, g)
        p = init_baseline("trustsvd", 6, 7, 3, scale=0.5, seed=1)
        assert scorer.backward(p, batch, 0.1)[0] == pytest.approx(scorer.loss(p, batch, 0.1), rel=1e-14)


class TestValidation:
    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            init_baseline("ncf", 2, 2, 2)
        train, g, _ = tiny(0)
        with pytest.raises(ValueError):
            BaselineScorer("ncf", train, g)

    def test_trustsvd_needs_graph(self):
        train, _, _ = tiny(0)
        with pytest.raises(ValueError):
            BaselineScorer("trustsvd", train, None)

    def test_tensor_sets(self):
        assert list(init_baseline("bpr", 2, 3, 2).tensors()) == ["U", "V"]
        p = init_baseline("trustsvd", 2, 3, 2)
        assert [t.shape for t in p.tensors().values()] == [(2, 2), (3, 2), (3, 2), (2, 2)]
        q = p.copy()
        q.Q[0, 0] = 5.0
        assert p.Q[0, 0] != 5.0
