"""Interaction and social datasets: loading, splitting, synthesis, statistics."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import RandomStream, SparseMatrix


class DataFormatError(ValueError):
    pass


class DataWarning(UserWarning):
    pass


@dataclass(frozen=True)
class InteractionSet:
    """Observed (user, item) pairs, kept as both per-user and per-item CSR views.

    ``user_ids`` / ``item_ids`` map dense indices back to the ids in the source
    file (identity for generated data).
    """

    n_users: int
    n_items: int
    users: np.ndarray  # pair arrays, sorted by (user, item)
    items: np.ndarray
    user_ids: np.ndarray | None = field(default=None, compare=False)
    item_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        order = np.lexsort((self.items, self.users))
        u = np.asarray(self.users, dtype=np.int64)[order]
        i = np.asarray(self.items, dtype=np.int64)[order]
        if len(u):
            if u.min() < 0 or u.max() >= self.n_users:
                raise DataFormatError("user id out of range")
            if i.min() < 0 or i.max() >= self.n_items:
                raise DataFormatError("item id out of range")
            dup = (np.diff(u) == 0) & (np.diff(i) == 0)
            if dup.any():
                raise DataFormatError("duplicate (user, item) pairs")
        object.__setattr__(self, "users", u)
        object.__setattr__(self, "items", i)
        ones = np.ones(len(u))
        object.__setattr__(
            self, "_by_user", SparseMatrix.from_coo(self.n_users, self.n_items, u, i, ones)
        )
        object.__setattr__(self, "_by_item", self._by_user.transpose())

    @classmethod
    def from_pairs(cls, n_users, n_items, pairs, **kw) -> "InteractionSet":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return cls(n_users, n_items, pairs[:, 0], pairs[:, 1], **kw)

    def __len__(self):
        return len(self.users)

    @property
    def by_user(self) -> SparseMatrix:
        return self._by_user

    @property
    def by_item(self) -> SparseMatrix:
        return self._by_item

    def user_items(self, u: int) -> np.ndarray:
        return self._by_user.row(u)[0]

    def item_users(self, j: int) -> np.ndarray:
        return self._by_item.row(j)[0]

    def user_counts(self) -> np.ndarray:
        return self._by_user.row_nnz()

    def item_counts(self) -> np.ndarray:
        return self._by_item.row_nnz()

    def pairs(self) -> np.ndarray:
        return np.stack([self.users, self.items], axis=1)

    def keys(self) -> np.ndarray:
        """Sorted scalar keys ``user * n_items + item``, for fast membership."""
        return self.users * self.n_items + self.items

    def same_pairs(self, other: "InteractionSet") -> bool:
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
        )


@dataclass(frozen=True)
class EdgeList:
    """Undirected social ties stored once each as (i, j) with i < j."""

    n_users: int
    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            if (e[:, 0] == e[:, 1]).any():
                raise DataFormatError("self-loop in edge list")
            e = np.sort(e, axis=1)
            e = np.unique(e, axis=0)
            if e.min() < 0 or e.max() >= self.n_users:
                raise DataFormatError("edge endpoint out of range")
        object.__setattr__(self, "edges", e)

    def __len__(self):
        return len(self.edges)


@dataclass(frozen=True)
class SplitPair:
    train: InteractionSet
    test: InteractionSet


@dataclass
class StatsReport:
    n_users: int
    n_items: int
    n_interactions: int
    n_relations: int
    interaction_density: float
    social_density: float
    avg_interactions_per_user: float
    avg_relations_per_user: float
    cold_test_users: int
    degree_histogram: dict[int, int]

    def rows(self):
        return [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_interactions", self.n_interactions),
            ("n_relations", self.n_relations),
            ("interaction_density", self.interaction_density),
            ("social_density", self.social_density),
            ("avg_interactions_per_user", self.avg_interactions_per_user),
            ("avg_relations_per_user", self.avg_relations_per_user),
            ("cold_test_users", self.cold_test_users),
        ]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["key", "value"])
            w.writerows(self.rows())

    def write_histogram_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["degree", "count"])
            for deg in sorted(self.degree_histogram):
                w.writerow([deg, self.degree_histogram[deg]])


# --- loading -----------------------------------------------------------------


def _read_pairs(path) -> np.ndarray:
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataFormatError(f"{path}: line {lineno}: expected two ids, got {line.rstrip()!r}")
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: ids must be integers, got {line.rstrip()!r}") from None
            if a < 0 or b < 0:
                raise DataFormatError(f"{path}: line {lineno}: ids must be nonnegative")
            rows.append((a, b))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def _dense_index(ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    pos = np.searchsorted(table, ids)
    pos = np.minimum(pos, len(table) - 1) if len(table) else pos
    if len(ids) and (len(table) == 0 or np.any(table[pos] != ids)):
        raise DataFormatError("id not present in the remap table")
    return pos


def _dedupe_pairs(pairs: np.ndarray, what: str, path) -> np.ndarray:
    uniq = np.unique(pairs, axis=0)
    if len(uniq) < len(pairs):
        warnings.warn(f"{path}: dropped {len(pairs) - len(uniq)} duplicate {what}", DataWarning, stacklevel=3)
    return uniq


def load_interactions(path, user_ids=None) -> InteractionSet:
    """Read ``user<TAB>item`` lines. Ids are remapped to dense ranges.

    ``user_ids`` fixes the user remap table (sorted original ids), which keeps
    users aligned with a social file loaded separately.
    """
    raw = _read_pairs(path)
    if len(raw) == 0:
        raise DataFormatError(f"{path}: no interactions")
    raw = _dedupe_pairs(raw, "interactions", path)
    user_ids = np.unique(raw[:, 0]) if user_ids is None else np.asarray(user_ids, dtype=np.int64)
    item_ids = np.unique(raw[:, 1])
    return InteractionSet(
        n_users=len(user_ids),
        n_items=len(item_ids),
        users=_dense_index(raw[:, 0], user_ids),
        items=_dense_index(raw[:, 1], item_ids),
        user_ids=user_ids,
        item_ids=item_ids,
    )


def load_social(path, user_ids=None) -> EdgeList:
    """Read ``user<TAB>user`` lines into a symmetric, self-loop-free edge list."""
    raw = _read_pairs(path)
    loops = raw[:, 0] == raw[:, 1]
    if loops.any():
        warnings.warn(f"{path}: dropped {int(loops.sum())} self-loops", DataWarning, stacklevel=2)
        raw = raw[~loops]
    canon = np.sort(raw, axis=1)
    canon = _dedupe_pairs(canon, "social ties", path)
    if user_ids is None:
        user_ids = np.unique(canon) if len(canon) else np.zeros(0, dtype=np.int64)
    user_ids = np.asarray(user_ids, dtype=np.int64)
    dense = _dense_index(canon.ravel(), user_ids).reshape(-1, 2)
    return EdgeList(len(user_ids), dense)


def load_dataset(interaction_path, social_path) -> tuple[InteractionSet, EdgeList]:
    """Load both files with one shared user remap (union of users in either file)."""
    inter_raw = _read_pairs(interaction_path)
    social_raw = _read_pairs(social_path)
    user_ids = np.unique(np.concatenate([inter_raw[:, 0], social_raw.ravel()]))
    return load_interactions(interaction_path, user_ids), load_social(social_path, user_ids)


def write_interactions(inter: InteractionSet, path):
    uid = inter.user_ids if inter.user_ids is not None else np.arange(inter.n_users)
    iid = inter.item_ids if inter.item_ids is not None else np.arange(inter.n_items)
    with open(path, "w", encoding="utf-8") as f:
        for u, i in zip(inter.users, inter.items):
            f.write(f"{uid[u]}\t{iid[i]}\n")


def write_social(edges: EdgeList, path):
    with open(path, "w", encoding="utf-8") as f:
        for a, b in edges.edges:
            f.write(f"{a}\t{b}\n")


# --- splitting ---------------------------------------------------------------


def split(inter: InteractionSet, ratio: float, seed: int) -> SplitPair:
    """Global uniform split of interaction pairs into train/test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    n = len(inter)
    perm = RandomStream(seed).permutation(n)
    n_train = int(round(ratio * n))
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    kw = dict(user_ids=inter.user_ids, item_ids=inter.item_ids)
    return SplitPair(
        train=InteractionSet(inter.n_users, inter.n_items, inter.users[tr], inter.items[tr], **kw),
        test=InteractionSet(inter.n_users, inter.n_items, inter.users[te], inter.items[te], **kw),
    )


# --- synthesis ---------------------------------------------------------------


def _powerlaw_degrees(n, exponent, avg_degree, rng: RandomStream) -> np.ndarray:
    # continuous Pareto weights with tail index exponent - 1, rescaled to the target mean
    w = rng.random(n) ** (-1.0 / (exponent - 1.0))
    cap = n - 1
    scale = avg_degree / w.mean()
    for _ in range(50):
        deg = np.minimum(w * scale, cap)
        if abs(deg.mean() - avg_degree) < 1e-6 * avg_degree:
            break
        scale *= avg_degree / max(deg.mean(), 1e-12)
    deg = np.minimum(w * scale, cap)
    base = np.floor(deg)
    deg = base + (rng.random(n) < deg - base)
    return np.maximum(deg, 1).astype(np.int64)


def _configuration_edges(deg: np.ndarray, rng: RandomStream) -> np.ndarray:
    if deg.sum() % 2:
        deg = deg.copy()
        deg[rng.integers(len(deg))] += 1
    stubs = np.repeat(np.arange(len(deg)), deg)
    stubs = stubs[rng.permutation(len(stubs))]
    e = stubs.reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(np.sort(e, axis=1), axis=0)


def _community_edges(deg: np.ndarray, communities: int, mixing: float, rng: RandomStream) -> np.ndarray:
    """Configuration model with planted groups: each stub is paired globally with
    probability ``mixing`` and inside its owner's group otherwise."""
    n = len(deg)
    group = rng.integers(0, communities, size=n)
    stubs = np.repeat(np.arange(n), deg)
    external = rng.random(len(stubs)) < mixing
    pools = [stubs[external]] + [stubs[~external & (group[stubs] == c)] for c in range(communities)]
    parts = []
    for pool in pools:
        pool = pool[rng.permutation(len(pool))]
        parts.append(pool[: len(pool) // 2 * 2].reshape(-1, 2))
    e = np.concatenate(parts)
    e = e[e[:, 0] != e[:, 1]]
    return np.unique(np.sort(e, axis=1), axis=0)


def _attach_isolated(n, edges: np.ndarray, rng: RandomStream) -> np.ndarray:
    deg = np.bincount(edges.ravel(), minlength=n)
    extra = []
    for u in np.flatnonzero(deg == 0):
        v = int(rng.integers(n - 1))
        v += v >= u
        extra.append((min(u, v), max(u, v)))
        deg[u] += 1
        deg[v] += 1
    if extra:
        edges = np.unique(np.concatenate([edges, np.asarray(extra)]), axis=0)
    return edges


def _copy_interactions(nbrs, counts, n_items, homophily, rng: RandomStream) -> list[list[int]]:
    """Per-user item lists drawn one user at a time in a random order.

    Each draw copies, with probability ``homophily``, a random item from a
    random neighbour that still holds something this user lacks; otherwise,
    or when no neighbour qualifies, it is uniform over unheld items.
    """
    n = len(nbrs)
    held = [[] for _ in range(n)]
    held_sets = [set() for _ in range(n)]
    for u in rng.permutation(n):
        for _ in range(counts[u]):
            item = None
            if homophily > 0 and rng.random() < homophily:
                pool = [v for v in nbrs[u] if not held_sets[v] <= held_sets[u]]
                if pool:
                    v = pool[int(rng.integers(len(pool)))]
                    cand = [j for j in held[v] if j not in held_sets[u]]
                    item = cand[int(rng.integers(len(cand)))]
            while item is None:
                j = int(rng.integers(n_items))
                if j not in held_sets[u]:
                    item = j
            held[u].append(item)
            held_sets[u].add(item)
    return held


def synth_dataset(
    n_users: int,
    n_items: int,
    social_exponent: float = 2.3,
    homophily: float = 0.5,
    avg_degree: float = 10.0,
    avg_interactions: float = 20.0,
    seed: int = 0,
    communities: int = 1,
    mixing: float = 0.1,
) -> tuple[InteractionSet, EdgeList]:
    """Generate a long-tailed social graph and socially correlated interactions.

    The graph comes from an erased configuration model over power-law degrees,
    with every user guaranteed at least one tie. Interaction counts are also
    long-tailed. Users draw their items one user at a time in a random order;
    each item is, with probability ``homophily``, copied from a random
    neighbour's items drawn so far, and otherwise uniform. A user whose
    neighbours hold nothing yet draws uniformly, so the first user of each
    component seeds it. Copy cascades stay local (branching factor about
    ``homophily``), which keeps the social signal from collapsing into plain
    item popularity.

    With ``communities`` > 1, users are assigned to planted groups and a
    fraction ``1 - mixing`` of each user's ties stays inside the group, so
    copied tastes spread over several hops instead of one.
    """
    if min(n_users, n_items) < 1 or avg_degree <= 0 or avg_interactions <= 0:
        raise ValueError("counts must be >= 1")
    if not 0.0 <= homophily <= 1.0:
        raise ValueError("homophily must lie in [0, 1]")
    if social_exponent <= 2.0:
        raise ValueError("social_exponent must exceed 2 for a finite mean degree")
    if communities < 1 or not 0.0 <= mixing <= 1.0:
        raise ValueError("communities must be >= 1 and mixing in [0, 1]")
    root = RandomStream(seed)

    edges = None
    for attempt in range(10):
        rng = root.child(0, attempt)
        if n_users < 2:
            continue
        deg = _powerlaw_degrees(n_users, social_exponent, min(avg_degree, n_users - 1), rng)
        if communities == 1:
            raw = _configuration_edges(deg, rng)
        else:
            raw = _community_edges(deg, communities, mixing, rng)
        edges = _attach_isolated(n_users, raw, rng)
        break
    if edges is None:
        raise ValueError("could not realise a degree sequence with >= 1 tie per user")
    social = EdgeList(n_users, edges)

    rng = root.child(1)
    counts = _powerlaw_degrees(n_users, 2.5, min(avg_interactions, n_items), rng)
    counts = np.minimum(counts, n_items)

    nbrs = [[] for _ in range(n_users)]
    for a, b in social.edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    held = _copy_interactions(nbrs, counts, n_items, homophily, rng)
    users = np.repeat(np.arange(n_users), [len(h) for h in held])
    items = np.fromiter((j for h in held for j in h), dtype=np.int64, count=len(users))
    return InteractionSet(n_users, n_items, users, items), social


# --- statistics --------------------------------------------------------------


def dataset_stats(inter: InteractionSet, social: EdgeList, test: InteractionSet | None = None) -> StatsReport:
    """Dataset summary. When ``test`` is given, ``inter`` is read as the training set
    and test users with no training interactions are counted as cold."""
    if inter.n_users != social.n_users:
        raise ValueError("interaction and social user counts differ")
    n, m = inter.n_users, inter.n_items
    deg = np.bincount(social.edges.ravel(), minlength=n) if len(social) else np.zeros(n, dtype=np.int64)
    values, freq = np.unique(deg, return_counts=True)
    cold = 0
    if test is not None:
        tested = np.unique(test.users)
        cold = int(np.sum(inter.user_counts()[tested] == 0))
    return StatsReport(
        n_users=n,
        n_items=m,
        n_interactions=len(inter),
        n_relations=len(social),
        interaction_density=len(inter) / (n * m) if n * m else 0.0,
        social_density=2 * len(social) / (n * n) if n else 0.0,
        avg_interactions_per_user=len(inter) / n if n else 0.0,
        avg_relations_per_user=2 * len(social) / n if n else 0.0,
        cold_test_users=cold,
        degree_histogram={int(v): int(c) for v, c in zip(values, freq)},
    )
