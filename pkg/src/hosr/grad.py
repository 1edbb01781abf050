"""Hand-derived gradients of the BPR objective through the HOSR forward pass,
plus a central-difference checker."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .data import EdgeList, InteractionSet
from .graph import build_graph, propagation_matrix
from .model import (
    ForwardTrace,
    ModelParams,
    forward,
    init_params,
    item_aggregation_matrix,
    trainable_names,
    user_vectors,
)
from .numerics import RandomStream, SparseMatrix, sigmoid, softplus, spmm_t


class TraceMismatchError(ValueError):
    pass


def l2_penalty(tensors: dict[str, np.ndarray], names) -> float:
    return float(sum(np.sum(tensors[n] ** 2) for n in names))


def bpr_head(Z: np.ndarray, V: np.ndarray, batch: np.ndarray):
    """Data term of the BPR loss for scores Z_i . V_j, and its gradients.

    Returns (loss, dZ, dV) where dV only holds the direct scoring contribution.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    dZ = np.zeros_like(Z)
    dV = np.zeros_like(V)
    if len(batch) == 0:
        return 0.0, dZ, dV
    u, jp, jn = batch[:, 0], batch[:, 1], batch[:, 2]
    zu = Z[u]
    diff = V[jp] - V[jn]
    margin = np.einsum("bd,bd->b", zu, diff)
    loss = float(np.sum(softplus(-margin)))
    g = sigmoid(margin) - 1.0  # d softplus(-x) / dx
    gz = g[:, None] * zu
    np.add.at(dZ, u, g[:, None] * diff)
    np.add.at(dV, jp, gz)
    np.add.at(dV, jn, -gz)
    return loss, dZ, dV


def _check_trace(params: ModelParams, trace: ForwardTrace):
    if trace.layers[0] is not params.U and not np.array_equal(trace.layers[0], params.U):
        raise TraceMismatchError("trace was produced from different user embeddings")
    if trace.k != params.k:
        raise TraceMismatchError(f"trace has {trace.k} layers, params have {params.k}")
    if trace.U_a is None:
        raise TraceMismatchError("trace has no aggregated embedding; run attention_aggregate first")


def backward(params: ModelParams, trace: ForwardTrace, batch, lam: float,
             N: SparseMatrix) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients for one batch of (user, pos, neg) triples.

    ``N`` is the item-aggregation matrix used for scoring. Dropout masks stored
    in the trace are reused, so gradients only reach surviving units.
    """
    _check_trace(params, trace)
    t = params.tensors()
    names = trainable_names(params.k, trace.attention)
    grads = {name: np.zeros_like(x) for name, x in t.items()}

    Z = user_vectors(params, trace.U_a, N)
    loss, dZ, dV = bpr_head(Z, params.V, batch)
    dV += spmm_t(N, dZ)
    grads["V"] += dV
    dUa = dZ

    k = params.k
    outs = trace.layers[1:]
    dX = [None] + [np.zeros_like(x) for x in outs]
    S = trace.weights
    for l in range(k):
        dX[l + 1] += S[:, [l]] * dUa
    dU = np.zeros_like(params.U)

    if trace.attention == "attention" and k > 1:
        dS = np.stack([np.einsum("nd,nd->n", dUa, x) for x in outs], axis=1)
        dlogit = S * (dS - np.sum(S * dS, axis=1, keepdims=True))
        dQ = np.zeros_like(trace.query)
        for l in range(k):
            g = trace.hidden[l]
            r = np.maximum(g, 0.0)
            grads["h"] += dlogit[:, l] @ r
            dG = np.outer(dlogit[:, l], params.h) * (g > 0)
            dQ += dG
            grads["P_o"] += outs[l].T @ dG
            dX[l + 1] += dG @ params.P_o.T
        grads["P_u"] += params.U.T @ dQ
        dU += dQ @ params.P_u.T

    for l in range(k, 0, -1):
        dH = dX[l] if trace.masks[l - 1] is None else dX[l] * trace.masks[l - 1]
        a = trace.activations[l - 1]
        dA = dH * (1.0 - a * a)
        grads[f"W{l}"] += trace.propagated[l - 1].T @ dA
        dprop = dA @ params.W[l - 1].T
        back = spmm_t(trace.L, dprop)
        if l > 1:
            dX[l - 1] += back
        else:
            dU += back
    grads["U"] += dU

    if lam:
        loss += lam * l2_penalty(t, names)
        for name in names:
            grads[name] += 2.0 * lam * t[name]
    return loss, grads


def batch_loss(params: ModelParams, L: SparseMatrix, N: SparseMatrix, batch, lam: float,
               attention: str = "attention") -> float:
    """Dropout-free loss, recomputed from scratch (no cached trace)."""
    trace = forward(params, L, mode="eval", attention=attention)
    Z = user_vectors(params, trace.U_a, N)
    b = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    margin = np.einsum("bd,bd->b", Z[b[:, 0]], params.V[b[:, 1]] - params.V[b[:, 2]])
    loss = float(np.sum(softplus(-margin)))
    if lam:
        loss += lam * l2_penalty(params.tensors(), trainable_names(params.k, attention))
    return loss


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]
    threshold: float
    n_checked: int

    @property
    def max_error(self) -> float:
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.threshold

    @property
    def failing(self) -> list[str]:
        return [n for n, e in self.per_tensor.items() if e > self.threshold]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tensor", "max_rel_error", "passed"])
        for name, err in self.per_tensor.items():
            w.writerow([name, f"{err:.3e}", err <= self.threshold])
        w.writerow(["overall", f"{self.max_error:.3e}", self.passed])
        return buf.getvalue()


def relative_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def numeric_gradient(loss_fn, params, names, eps=1e-5, coords=None):
    """Central differences of ``loss_fn(params)`` over the given coordinates.

    ``coords`` maps tensor name -> flat indices; default is every entry.
    Params are perturbed in place and restored.
    """
    t = params.tensors()
    out = {}
    for name in names:
        x = t[name]
        flat = x.reshape(-1)
        idx = np.arange(flat.size) if coords is None else coords[name]
        g = np.zeros(len(idx))
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn(params)
            flat[i] = old - eps
            down = loss_fn(params)
            flat[i] = old
            g[n] = (up - down) / (2.0 * eps)
        out[name] = (idx, g)
    return out


def compare_gradients(analytic: dict, numeric: dict, threshold: float) -> GradCheckReport:
    per = {}
    total = 0
    for name, (idx, g_num) in numeric.items():
        g_ana = analytic[name].reshape(-1)[idx]
        per[name] = float(relative_error(g_ana, g_num).max()) if len(idx) else 0.0
        total += len(idx)
    return GradCheckReport(per, threshold, total)


def sample_coords(params, names, limit=5000, seed=0):
    t = params.tensors()
    total = sum(t[n].size for n in names)
    if total < limit:
        return None
    rng = np.random.default_rng(seed)
    per = max(1, limit // len(names))
    return {n: np.sort(rng.choice(t[n].size, size=min(per, t[n].size), replace=False)) for n in names}


def finite_diff_check(params: ModelParams, L: SparseMatrix, N: SparseMatrix, batch,
                      lam: float = 0.0, epsilon: float = 1e-5, threshold: float = 1e-4,
                      attention: str = "attention", corrupt=None) -> GradCheckReport:
    """Compare ``backward`` against central differences with dropout disabled.

    ``corrupt`` is an optional callable applied to the analytic gradient dict
    before comparison, for fault-injection tests.
    """
    params = params.copy()
    names = trainable_names(params.k, attention)
    trace = forward(params, L, mode="eval", attention=attention)
    _, analytic = backward(params, trace, batch, lam, N)
    if corrupt is not None:
        corrupt(analytic)
    coords = sample_coords(params, names)
    numeric = numeric_gradient(
        lambda p: batch_loss(p, L, N, batch, lam, attention), params, names, epsilon, coords
    )
    return compare_gradients(analytic, numeric, threshold)


def tiny_instance(seed=0, n=8, m=10, d=3, k=2, batch=16, decay="user", scale=0.5):
    """Random small problem for gradient checks: (params, L, N, batch).

    Each user holds between 1 and m - 1 items, so every user has a positive
    and a negative; edges are an Erdos-Renyi draw plus a ring so no user is
    isolated.
    """
    rng = RandomStream(seed)
    ring = [(i, (i + 1) % n) for i in range(n)] if n > 2 else [(0, 1)] if n == 2 else []
    extra = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.3]
    edges = np.unique(np.sort(np.asarray(ring + extra, dtype=np.int64).reshape(-1, 2), axis=1), axis=0)
    g = build_graph(EdgeList(n, edges))
    if m < 2:
        raise ValueError("need at least two items to form a (positive, negative) pair")
    held = [np.sort(rng.choice(m, size=int(rng.integers(1, m)), replace=False)) for _ in range(n)]
    users = np.repeat(np.arange(n), [len(h) for h in held])
    items = np.concatenate(held)
    train = InteractionSet(n, m, users, items)
    u = rng.integers(0, n, size=batch)
    pos = np.array([rng.choice(train.user_items(x)) for x in u])
    neg = np.array([rng.choice(np.setdiff1d(np.arange(m), train.user_items(x))) for x in u])
    params = init_params(n, m, d, k, scale=scale, seed=seed)
    return params, propagation_matrix(g), item_aggregation_matrix(train, decay), np.stack([u, pos, neg], 1)
