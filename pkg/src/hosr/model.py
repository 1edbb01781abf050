"""HOSR forward pass: social propagation layers, attentive layer aggregation, scoring."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionSet
from .numerics import RandomStream, SparseMatrix, relu, softmax_rows, spmm

ATTENTION_MODES = ("attention", "average", "base")
DECAY_VARIANTS = ("user", "user_item")


@dataclass
class ModelParams:
    U: np.ndarray
    V: np.ndarray
    W: list[np.ndarray]
    P_u: np.ndarray
    P_o: np.ndarray
    h: np.ndarray

    @property
    def k(self) -> int:
        return len(self.W)

    @property
    def d(self) -> int:
        return self.U.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> array in declaration order (U, V, W1..Wk, P_u, P_o, h)."""
        out = {"U": self.U, "V": self.V}
        for i, w in enumerate(self.W, start=1):
            out[f"W{i}"] = w
        out["P_u"] = self.P_u
        out["P_o"] = self.P_o
        out["h"] = self.h
        return out

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray]) -> "ModelParams":
        k = sum(1 for name in t if name.startswith("W"))
        return cls(
            U=t["U"], V=t["V"], W=[t[f"W{i}"] for i in range(1, k + 1)],
            P_u=t["P_u"], P_o=t["P_o"], h=t["h"],
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_tensors({k: v.copy() for k, v in self.tensors().items()})


def trainable_names(k: int, attention: str = "attention") -> list[str]:
    """Tensors that take part in the score. Attention parameters drop out when
    the layer aggregation does not use them."""
    names = ["U", "V"] + [f"W{i}" for i in range(1, k + 1)]
    if attention == "attention" and k > 1:
        names += ["P_u", "P_o", "h"]
    return names


def init_params(n, m, d, k, scale=None, seed=0, embed_scale=0.01) -> ModelParams:
    """Uniform init. ``scale`` (Glorot-style sqrt(6/2d) by default) covers the d x d
    weights and h; ``embed_scale`` covers U and V. ``scale=0`` zeroes everything."""
    if d < 1 or k < 1:
        raise ValueError("d and k must be >= 1")
    if scale is None:
        scale = np.sqrt(6.0 / (d + d))
    else:
        embed_scale = scale
    rng = RandomStream(seed).child(2)
    uni = lambda *shape, s: rng.uniform(-s, s, size=shape) if s else np.zeros(shape)
    return ModelParams(
        U=uni(n, d, s=embed_scale),
        V=uni(m, d, s=embed_scale),
        W=[uni(d, d, s=scale) for _ in range(k)],
        P_u=uni(d, d, s=scale),
        P_o=uni(d, d, s=scale),
        h=uni(d, s=scale),
    )


@dataclass
class ForwardTrace:
    L: SparseMatrix
    mode: str  # "train" or "eval"
    attention: str
    layers: list[np.ndarray]  # U^(0..k), after dropout
    propagated: list[np.ndarray] = field(default_factory=list)  # L U^(l-1), l = 1..k
    activations: list[np.ndarray] = field(default_factory=list)  # tanh output before dropout
    masks: list[np.ndarray | None] = field(default_factory=list)
    query: np.ndarray | None = None  # U P_u
    hidden: list[np.ndarray] = field(default_factory=list)  # pre-ReLU attention input per layer
    logits: np.ndarray | None = None  # n x k
    weights: np.ndarray | None = None  # n x k
    U_a: np.ndarray | None = None

    @property
    def k(self) -> int:
        return len(self.layers) - 1


def forward_layers(params: ModelParams, L: SparseMatrix, p1: float = 0.0,
                   rng: RandomStream | None = None, mode: str = "eval",
                   attention: str = "attention") -> ForwardTrace:
    """U^(l) = tanh(L U^(l-1) W^(l)), with inverted embedding dropout in train mode."""
    if L.shape != (params.U.shape[0],) * 2:
        raise ValueError(f"propagation matrix {L.shape} does not match {params.U.shape[0]} users")
    if not 0.0 <= p1 < 1.0:
        raise ValueError("p1 must lie in [0, 1)")
    drop = mode == "train" and p1 > 0.0
    if drop and rng is None:
        raise ValueError("embedding dropout needs a random stream")
    trace = ForwardTrace(L=L, mode=mode, attention=attention, layers=[params.U])
    x = params.U
    for W in params.W:
        z = spmm(L, x)
        a = np.tanh(z @ W)
        if drop:
            mask = (rng.random(a.shape) >= p1) / (1.0 - p1)
            x = a * mask
        else:
            mask = None
            x = a
        trace.propagated.append(z)
        trace.activations.append(a)
        trace.masks.append(mask)
        trace.layers.append(x)
    return trace


def attention_aggregate(params: ModelParams, trace: ForwardTrace,
                        attention: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Combine layers 1..k into one user embedding per user.

    The original embedding U is only the attention query. With a single layer,
    or in ``base`` mode, the last layer is used as is.
    """
    attention = trace.attention if attention is None else attention
    if attention not in ATTENTION_MODES:
        raise ValueError(f"unknown attention mode {attention!r}")
    outs = trace.layers[1:]
    k = len(outs)
    n = params.U.shape[0]
    if attention == "base":
        S = np.zeros((n, k))
        S[:, -1] = 1.0
        U_a = outs[-1]
    elif k == 1:
        S = np.ones((n, 1))
        U_a = outs[0]
    elif attention == "average":
        S = np.full((n, k), 1.0 / k)
        U_a = sum(S[:, [l]] * outs[l] for l in range(k))
    else:
        q = params.U @ params.P_u
        hidden = [q + x @ params.P_o for x in outs]
        logits = np.stack([relu(g) @ params.h for g in hidden], axis=1)
        S = softmax_rows(logits)
        U_a = sum(S[:, [l]] * outs[l] for l in range(k))
        trace.query = q
        trace.hidden = hidden
        trace.logits = logits
    trace.weights = S
    trace.U_a = U_a
    return U_a, S


def forward(params, L, p1=0.0, rng=None, mode="eval", attention="attention") -> ForwardTrace:
    trace = forward_layers(params, L, p1, rng, mode, attention)
    attention_aggregate(params, trace)
    return trace


def item_aggregation_matrix(train: InteractionSet, decay: str = "user") -> SparseMatrix:
    """Sparse n x m weights for the interacted-item term.

    ``user``: 1/sqrt(|I_i|). ``user_item``: 1/sqrt(|I_i| |A_j|) with A_j the
    training users of item j. Users without training items get an empty row.
    """
    if decay not in DECAY_VARIANTS:
        raise ValueError(f"unknown decay variant {decay!r}")
    n_i = train.user_counts().astype(np.float64)
    w = 1.0 / np.sqrt(n_i[train.users])
    if decay == "user_item":
        w = w / np.sqrt(train.item_counts()[train.items].astype(np.float64))
    by_user = train.by_user
    return SparseMatrix(by_user.rows, by_user.cols, by_user.indptr, by_user.indices, w)


def user_vectors(params: ModelParams, U_a: np.ndarray, N: SparseMatrix) -> np.ndarray:
    """Rows u_i^(a) + sum_j N_ij v_j; scores are these rows dotted with V."""
    return U_a + spmm(N, params.V)


def predict(params: ModelParams, U_a, train: InteractionSet, user: int, item: int,
            decay: str = "user") -> float:
    items = train.user_items(user)
    z = U_a[user].copy()
    if len(items):
        if decay == "user_item":
            w = 1.0 / np.sqrt(len(items) * train.item_counts()[items])
            z += w @ params.V[items]
        else:
            z += params.V[items].sum(axis=0) / np.sqrt(len(items))
    return float(z @ params.V[item])


def full_scores(params: ModelParams, U_a, train: InteractionSet, user: int,
                decay: str = "user", N: SparseMatrix | None = None) -> np.ndarray:
    """Scores of every item for one user, as a single matrix-vector product."""
    if N is None:
        N = item_aggregation_matrix(train, decay)
    cols, w = N.row(user)
    z = U_a[user] + w @ params.V[cols]
    return params.V @ z


def write_attention_csv(S: np.ndarray, path, user_ids=None):
    n, k = S.shape
    ids = np.arange(n) if user_ids is None else user_ids
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["user_id", "layer", "weight"])
        for i in range(n):
            for l in range(k):
                w.writerow([ids[i], l + 1, repr(float(S[i, l]))])
