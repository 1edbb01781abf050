"""BPR-MF and TrustSVD scorers. Both train through the same BPR loop as HOSR."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionSet
from .grad import bpr_head, l2_penalty
from .graph import SocialGraph
from .model import item_aggregation_matrix
from .numerics import RandomStream, SparseMatrix, softplus, spmm, spmm_t

VARIANTS = ("bpr", "trustsvd")


@dataclass
class BaselineParams:
    variant: str
    U: np.ndarray
    V: np.ndarray
    Q: np.ndarray | None = None  # implicit item influence (trustsvd)
    Wt: np.ndarray | None = None  # trusted-user vectors (trustsvd)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"U": self.U, "V": self.V}
        if self.variant == "trustsvd":
            out["Q"] = self.Q
            out["Wt"] = self.Wt
        return out

    @classmethod
    def from_tensors(cls, variant, t) -> "BaselineParams":
        return cls(variant, t["U"], t["V"], t.get("Q"), t.get("Wt"))

    def copy(self) -> "BaselineParams":
        return BaselineParams.from_tensors(self.variant, {k: v.copy() for k, v in self.tensors().items()})


def init_baseline(variant, n, m, d, scale=0.01, seed=0) -> BaselineParams:
    if variant not in VARIANTS:
        raise ValueError(f"unknown baseline {variant!r}")
    rng = RandomStream(seed).child(3)
    draw = lambda r: rng.uniform(-scale, scale, size=(r, d)) if scale else np.zeros((r, d))
    U, V = draw(n), draw(m)
    if variant == "bpr":
        return BaselineParams("bpr", U, V)
    return BaselineParams("trustsvd", U, V, draw(m), draw(n))


def social_aggregation_matrix(g: SocialGraph) -> SparseMatrix:
    """Row i holds 1/sqrt(|A_i|) on each neighbour of i."""
    adj = g.adjacency
    deg = g.degree.astype(np.float64)
    row_of = np.repeat(np.arange(adj.rows), adj.row_nnz())
    return SparseMatrix(adj.rows, adj.cols, adj.indptr, adj.indices, 1.0 / np.sqrt(deg[row_of]))


def score_bpr_mf(params: BaselineParams, user: int, item: int) -> float:
    return float(params.U[user] @ params.V[item])


def score_trustsvd(params: BaselineParams, train: InteractionSet, social: SocialGraph,
                   user: int, item: int) -> float:
    z = params.U[user].copy()
    items = train.user_items(user)
    if len(items):
        z += params.Q[items].sum(axis=0) / np.sqrt(len(items))
    friends = social.neighbors(user)
    if len(friends):
        z += params.Wt[friends].sum(axis=0) / np.sqrt(len(friends))
    return float(z @ params.V[item])


class BaselineScorer:
    """Vectorised user-side vectors and BPR gradients for one baseline."""

    def __init__(self, variant: str, train: InteractionSet, social: SocialGraph | None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown baseline {variant!r}")
        self.variant = variant
        if variant == "trustsvd":
            if social is None:
                raise ValueError("trustsvd needs the social graph")
            self.N_items = item_aggregation_matrix(train, "user")
            self.N_social = social_aggregation_matrix(social)

    def trainable(self, params: BaselineParams) -> list[str]:
        return list(params.tensors())

    def user_vectors(self, params: BaselineParams) -> np.ndarray:
        if self.variant == "bpr":
            return params.U
        return params.U + spmm(self.N_items, params.Q) + spmm(self.N_social, params.Wt)

    def backward(self, params: BaselineParams, batch, lam: float):
        Z = self.user_vectors(params)
        loss, dZ, dV = bpr_head(Z, params.V, batch)
        t = params.tensors()
        grads = {"U": dZ, "V": dV}
        if self.variant == "trustsvd":
            grads["Q"] = spmm_t(self.N_items, dZ)
            grads["Wt"] = spmm_t(self.N_social, dZ)
        if lam:
            loss += lam * l2_penalty(t, t)
            for name in t:
                grads[name] = grads[name] + 2.0 * lam * t[name]
        return loss, grads

    def loss(self, params: BaselineParams, batch, lam: float) -> float:
        Z = self.user_vectors(params)
        b = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
        margin = np.einsum("bd,bd->b", Z[b[:, 0]], params.V[b[:, 1]] - params.V[b[:, 2]])
        loss = float(np.sum(softplus(-margin)))
        if lam:
            loss += lam * l2_penalty(params.tensors(), params.tensors())
        return loss
