import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hosr.grad import (
    TraceMismatchError,
    backward,
    batch_loss,
    bpr_head,
    compare_gradients,
    finite_diff_check,
    numeric_gradient,
    relative_error,
    tiny_instance,
)
from hosr.model import forward, init_params, trainable_names, user_vectors
from hosr.numerics import RandomStream, softplus


class TestBackward:
    def test_zero_params(self):
        params, L, N, batch = tiny_instance(0, n=6, m=8, d=3, k=2)
        zero = init_params(6, 8, 3, 2, scale=0)
        loss, grads = backward(zero, forward(zero, L), batch, 0.0, N)
        assert loss == pytest.approx(len(batch) * np.log(2), rel=1e-15)
        npt.assert_array_equal(grads["h"], 0.0)

    def test_zero_params_check_is_exact(self):
        _, L, N, batch = tiny_instance(1, n=6, m=8, d=3, k=2)
        report = finite_diff_check(init_params(6, 8, 3, 2, scale=0), L, N, batch)
        assert report.max_error == 0.0

    def test_empty_batch_is_pure_regularizer(self):
        params, L, N, _ = tiny_instance(2, k=3)
        loss, grads = backward(params, forward(params, L), np.zeros((0, 3), dtype=int), 0.05, N)
        t = params.tensors()
        for name in trainable_names(3):
            npt.assert_array_equal(grads[name], 2 * 0.05 * t[name])
        assert loss == pytest.approx(0.05 * sum(np.sum(t[n] ** 2) for n in trainable_names(3)))

    def test_spec_fixture(self):
        params, L, N, batch = tiny_instance(3, n=6, m=8, d=3, k=2)
        assert finite_diff_check(params, L, N, batch, lam=0.01).max_error <= 1e-4

    @pytest.mark.parametrize("k", [1, 2, 3])
    @pytest.mark.parametrize("attention", ["attention", "average", "base"])
    @pytest.mark.parametrize("decay", ["user", "user_item"])
    def test_all_variants(self, k, attention, decay):
        params, L, N, batch = tiny_instance(10 + k, n=7, m=9, d=3, k=k, decay=decay)
        report = finite_diff_check(params, L, N, batch, lam=0.01, attention=attention)
        assert report.passed, report.to_csv()

    @settings(max_examples=25)
    @given(st.integers(0, 10_000), st.integers(2, 10), st.integers(2, 12), st.integers(1, 4), st.integers(1, 3))
    def test_random_instances(self, seed, n, m, d, k):
        params, L, N, batch = tiny_instance(seed, n, m, d, k)
        assert finite_diff_check(params, L, N, batch, lam=0.01).max_error <= 1e-4

    def test_dropout_masks_are_reused(self):
        params, L, N, batch = tiny_instance(4, n=8, m=10, d=3, k=3)
        p1, s = 0.3, 77

        def loss(p):
            tr = forward(p, L, p1, RandomStream(s), "train")
            Z = user_vectors(p, tr.U_a, N)
            b = np.asarray(batch)
            return float(np.sum(softplus(-np.einsum("bd,bd->b", Z[b[:, 0]], p.V[b[:, 1]] - p.V[b[:, 2]]))))

        _, grads = backward(params, forward(params, L, p1, RandomStream(s), "train"), batch, 0.0, N)
        numeric = numeric_gradient(loss, params.copy(), trainable_names(3))
        assert compare_gradients(grads, numeric, 1e-4).passed

    def test_items_outside_batch_only_regularized(self):
        params, L, N, batch = tiny_instance(5, n=6, m=12, d=3, k=2)
        batch = batch[:1]
        u = batch[0, 0]
        touched = set(batch[0, 1:]) | set(N.row(u)[0])
        lam = 0.02
        _, grads = backward(params, forward(params, L), batch, lam, N)
        for j in set(range(12)) - touched:
            npt.assert_array_equal(grads["V"][j], 2 * lam * params.V[j])

    def test_swapped_pair_convexity(self, rng):
        params, L, N, batch = tiny_instance(6)
        for b in batch:
            fwd = batch_loss(params, L, N, b[None, :], 0.0)
            rev = batch_loss(params, L, N, b[None, [0, 2, 1]], 0.0)
            assert fwd + rev >= 2 * np.log(2) - 1e-15
        zero = init_params(8, 10, 3, 2, scale=0)
        b = batch[:1]
        assert batch_loss(zero, L, N, b, 0) + batch_loss(zero, L, N, b[:, [0, 2, 1]], 0) == 2 * np.log(2)

    @given(st.integers(0, 10_000))
    def test_small_step_descends(self, seed):
        params, L, N, batch = tiny_instance(seed, k=2)
        before = batch_loss(params, L, N, batch, 0.01)
        _, grads = backward(params, forward(params, L), batch, 0.01, N)
        t = params.tensors()
        stepped = type(params).from_tensors({n: t[n] - 1e-4 * grads[n] for n in t})
        assert batch_loss(stepped, L, N, batch, 0.01) < before

    def test_trace_mismatch(self):
        params, L, N, batch = tiny_instance(7, k=2)
        other, *_ = tiny_instance(8, k=2)
        with pytest.raises(TraceMismatchError):
            backward(params, forward(other, L), batch, 0.0, N)
        deeper = init_params(8, 10, 3, 3, seed=7)
        deeper.U = params.U
        with pytest.raises(TraceMismatchError):
            backward(params, forward(deeper, L), batch, 0.0, N)


class TestBprHead:
    def test_matches_finite_differences(self, rng):
        Z, V = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        batch = np.array([[0, 1, 2], [0, 1, 3], [3, 4, 0], [3, 4, 0]])
        _, dZ, dV = bpr_head(Z, V, batch)
        eps = 1e-6
        for X, dX in ((Z, dZ), (V, dV)):
            for idx in np.ndindex(X.shape):
                old = X[idx]
                X[idx] = old + eps
                up = bpr_head(Z, V, batch)[0]
                X[idx] = old - eps
                down = bpr_head(Z, V, batch)[0]
                X[idx] = old
                assert dX[idx] == pytest.approx((up - down) / (2 * eps), abs=1e-7)


class TestReport:
    def test_fault_injection_names_tensor(self):
        params, L, N, batch = tiny_instance(9, k=2)

        def corrupt(g):
            flat = g["W2"].reshape(-1)
            i = np.argmax(np.abs(flat))
            flat[i] *= 1.1

        report = finite_diff_check(params, L, N, batch, corrupt=corrupt)
        assert not report.passed
        assert report.failing == ["W2"]
        assert "W2" in report.to_csv()

    def test_csv_layout(self):
        params, L, N, batch = tiny_instance(9, k=1)
        lines = finite_diff_check(params, L, N, batch).to_csv().splitlines()
        assert lines[0] == "tensor,max_rel_error,passed"
        assert [line.split(",")[0] for line in lines[1:]] == ["U", "V", "W1", "overall"]

    def test_relative_error_floor(self):
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
        assert relative_error(2.0, 1.0) == 0.5
