"""BPR training: triple sampling, loss, RMSprop, and the epoch loop."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .baselines import BaselineParams, BaselineScorer, init_baseline
from .data import DataWarning, InteractionSet, SplitPair
from .grad import backward
from .graph import SocialGraph, graph_dropout, propagation_matrix
from .model import (
    ATTENTION_MODES,
    DECAY_VARIANTS,
    ModelParams,
    forward,
    init_params,
    item_aggregation_matrix,
    trainable_names,
    user_vectors,
)
from .numerics import RandomStream, softplus

log = logging.getLogger(__name__)

MODELS = ("hosr", "bpr", "trustsvd")


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    model: str = "hosr"
    d: int = 10
    k: int = 3
    lr: float = 5e-3
    lam: float = 1e-3
    batch: int = 512
    epochs: int = 100
    p1: float = 0.0
    p2: float = 0.2
    eval_every: int = 10
    seed: int = 0
    decay: str = "user"
    attention: str = "attention"
    k_eval: int = 20
    ratio: float = 0.8
    rho: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")
        if self.decay not in DECAY_VARIANTS:
            raise ValueError(f"decay must be one of {DECAY_VARIANTS}")
        if self.batch < 1 or self.d < 1 or self.k < 1 or self.epochs < 0:
            raise ValueError("batch, d and k must be >= 1; epochs >= 0")
        if self.lr < 0 or self.lam < 0:
            raise ValueError("lr and lam must be nonnegative")
        for name in ("p1", "p2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainConfig":
        """Read flat ``key = value`` lines. Keyword overrides win over the file."""
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        with open(path, encoding="utf-8") as f:
            parser.read_string("[train]\n" + f.read())
        values = dict(parser["train"])
        return cls.from_mapping(values, **overrides)

    @classmethod
    def from_mapping(cls, values: dict, **overrides) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(types[key], raw)
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)

    def as_rows(self):
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self)]


def _coerce(type_name, raw):
    if not isinstance(raw, str):
        return raw
    if type_name in ("int", int):
        return int(raw)
    if type_name in ("float", float):
        return float(raw)
    return raw.strip()


@dataclass
class OptimizerState:
    acc: dict[str, np.ndarray] = field(default_factory=dict)
    rho: float = 0.9
    eps: float = 1e-8


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss", "recall@20", "map@20", "seconds"])
            for r in self.rows:
                w.writerow([
                    r["epoch"], repr(r["loss"]),
                    "" if r["recall"] is None else repr(r["recall"]),
                    "" if r["map"] is None else repr(r["map"]),
                    f"{r['seconds']:.4f}",
                ])


# --- sampling, loss, optimiser ----------------------------------------------


def sample_batch(train: InteractionSet, batch_size: int, rng: RandomStream) -> np.ndarray:
    """(user, pos, neg) triples: (user, pos) uniform over observed pairs, neg
    uniform over the user's unobserved items by rejection."""
    if len(train) == 0:
        raise ValueError("cannot sample from an empty training set")
    m = train.n_items
    full = train.user_counts() >= m
    users, items = train.users, train.items
    if full.any():
        warnings.warn(f"skipping {int(full.sum())} users who interacted with every item",
                      DataWarning, stacklevel=2)
        keep = ~full[users]
        users, items = users[keep], items[keep]
        if len(users) == 0:
            raise ValueError("no user has an unobserved item to sample")
    keys = train.keys()
    pick = rng.integers(0, len(users), size=batch_size)
    u, pos = users[pick], items[pick]
    neg = rng.integers(0, m, size=batch_size)
    bad = np.isin(u * m + neg, keys)
    while bad.any():
        neg[bad] = rng.integers(0, m, size=int(bad.sum()))
        bad = np.isin(u * m + neg, keys)
    return np.stack([u, pos, neg], axis=1)


def bpr_loss(pos_scores, neg_scores, tensors=None, lam: float = 0.0) -> float:
    """sum -ln sigmoid(pos - neg) + lam * sum of squared entries of ``tensors``."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape:
        raise ValueError("score arrays differ in length")
    loss = float(np.sum(softplus(neg - pos)))
    if lam and tensors:
        vals = tensors.values() if isinstance(tensors, dict) else tensors
        loss += lam * float(sum(np.sum(np.asarray(t) ** 2) for t in vals))
    return loss


def rmsprop_step(params: dict, grads: dict, state: OptimizerState, lr: float):
    """One RMSprop update. Returns (new params, new state); inputs are untouched."""
    new_params, new_acc = {}, {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = theta
            if name in state.acc:
                new_acc[name] = state.acc[name]
            continue
        acc = state.acc.get(name)
        acc = np.zeros_like(theta) if acc is None else acc
        acc = state.rho * acc + (1.0 - state.rho) * g * g
        new_params[name] = theta - lr * g / (np.sqrt(acc) + state.eps)
        new_acc[name] = acc
    return new_params, OptimizerState(new_acc, state.rho, state.eps)


# --- model adapters ----------------------------------------------------------


class HOSRRunner:
    name = "hosr"

    def __init__(self, config: TrainConfig, train: InteractionSet, social: SocialGraph):
        self.config = config
        self.train = train
        self.social = social
        self.L = propagation_matrix(social)
        self.N = item_aggregation_matrix(train, config.decay)
        self.names = trainable_names(config.k, config.attention)

    def init(self) -> ModelParams:
        c = self.config
        return init_params(self.train.n_users, self.train.n_items, c.d, c.k, seed=c.seed)

    def begin_epoch(self, epoch: int, root: RandomStream):
        g = graph_dropout(self.social, self.config.p2, root.child(10, epoch))
        self._epoch_L = self.L if g is self.social else propagation_matrix(g)
        self._drop_rng = root.child(12, epoch)

    def loss_and_grads(self, params: ModelParams, batch):
        c = self.config
        trace = forward(params, self._epoch_L, c.p1, self._drop_rng, "train", c.attention)
        loss, grads = backward(params, trace, batch, c.lam, self.N)
        return loss, {n: grads[n] for n in self.names}

    def tensors(self, params):
        return params.tensors()

    def rebuild(self, params, tensors):
        return ModelParams.from_tensors(tensors)

    def user_vectors(self, params: ModelParams) -> np.ndarray:
        trace = forward(params, self.L, mode="eval", attention=self.config.attention)
        return user_vectors(params, trace.U_a, self.N)


class BaselineRunner:
    def __init__(self, config: TrainConfig, train: InteractionSet, social: SocialGraph):
        self.config = config
        self.name = config.model
        self.train = train
        self.scorer = BaselineScorer(config.model, train, social)

    def init(self) -> BaselineParams:
        c = self.config
        return init_baseline(c.model, self.train.n_users, self.train.n_items, c.d, seed=c.seed)

    def begin_epoch(self, epoch, root):
        pass

    def loss_and_grads(self, params, batch):
        return self.scorer.backward(params, batch, self.config.lam)

    def tensors(self, params):
        return params.tensors()

    def rebuild(self, params, tensors):
        return BaselineParams.from_tensors(params.variant, tensors)

    def user_vectors(self, params) -> np.ndarray:
        return self.scorer.user_vectors(params)


def make_runner(config: TrainConfig, train: InteractionSet, social: SocialGraph):
    if config.model == "hosr":
        return HOSRRunner(config, train, social)
    return BaselineRunner(config, train, social)


# --- epoch loop --------------------------------------------------------------


def batch_sizes(n: int, batch: int) -> list[int]:
    nb = max(1, math.ceil(n / batch))
    return [batch] * (nb - 1) + [n - batch * (nb - 1)]


def train(config: TrainConfig, data: SplitPair, social: SocialGraph, params=None,
          on_epoch=None):
    """Fixed-budget training. Test metrics are logged every ``eval_every`` epochs
    for monitoring only; nothing is selected on them."""
    from .evaluation import evaluate

    runner = make_runner(config, data.train, social)
    params = runner.init() if params is None else params
    root = RandomStream(config.seed)
    state = OptimizerState(rho=config.rho, eps=config.eps)
    trainlog = TrainLog()
    sizes = batch_sizes(len(data.train), config.batch)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        runner.begin_epoch(epoch, root)
        sampler = root.child(11, epoch)
        total = 0.0
        for b, size in enumerate(sizes):
            batch = sample_batch(data.train, size, sampler)
            loss, grads = runner.loss_and_grads(params, batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b}")
            tensors, state = rmsprop_step(runner.tensors(params), grads, state, config.lr)
            params = runner.rebuild(params, tensors)
            total += loss
        seconds = time.perf_counter() - t0
        rec = ap = None
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            report = evaluate(runner.user_vectors(params), _item_matrix(params), data, config.k_eval)
            rec, ap = report.recall, report.map
        row = dict(epoch=epoch, loss=total / len(data.train), recall=rec, map=ap, seconds=seconds)
        trainlog.rows.append(row)
        log.info("epoch %d loss %.6f", epoch, row["loss"])
        if on_epoch is not None:
            on_epoch(row)
    return params, trainlog


def _item_matrix(params) -> np.ndarray:
    return params.V


def score_matrix_inputs(config: TrainConfig, params, train: InteractionSet, social: SocialGraph):
    """(user vectors, item matrix) for evaluation of trained params."""
    runner = make_runner(config, train, social)
    return runner.user_vectors(params), params.V
