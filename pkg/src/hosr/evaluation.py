"""Top-K ranking metrics, sparsity groups, attention analysis, paired t-test."""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import InteractionSet, SplitPair


def ranked_list(scores, exclude=()) -> np.ndarray:
    """Item ids by descending score, ties by ascending id, ``exclude`` removed."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if len(exclude):
        order = order[~np.isin(order, exclude)]
    return order


def recall_at_k(ranked, positives, K: int) -> float:
    positives = np.asarray(list(positives) if isinstance(positives, set) else positives)
    if len(positives) == 0:
        raise ValueError("recall is undefined for a user without positives")
    top = np.asarray(ranked)[:K]
    return float(np.isin(top, positives).sum() / len(positives))


def map_at_k(ranked, positives, K: int) -> float:
    """Truncated average precision: sum of precision@p at hit ranks p <= K,
    divided by min(|positives|, K).

    The sum is taken over a common denominator in integers, so the result is
    the correctly rounded value of the exact rational.
    """
    positives = np.asarray(list(positives) if isinstance(positives, set) else positives)
    if len(positives) == 0:
        raise ValueError("AP is undefined for a user without positives")
    hits = np.isin(np.asarray(ranked)[:K], positives)
    if not hits.any():
        return 0.0
    ranks = [int(r) + 1 for r in np.flatnonzero(hits)]
    D = math.lcm(*ranks)
    num = sum(n * (D // r) for n, r in enumerate(ranks, start=1))
    return num / (D * min(len(positives), K))


@dataclass
class EvalReport:
    K: int
    users: np.ndarray
    recall_per_user: np.ndarray
    ap_per_user: np.ndarray
    groups: np.ndarray | None = None
    group_ranges: list[tuple[int, int]] = field(default_factory=list)

    @property
    def recall(self) -> float:
        return float(self.recall_per_user.mean()) if len(self.users) else 0.0

    @property
    def map(self) -> float:
        return float(self.ap_per_user.mean()) if len(self.users) else 0.0

    def group_means(self):
        out = []
        for g, (lo, hi) in enumerate(self.group_ranges):
            sel = self.groups == g
            out.append((g, lo, hi, int(sel.sum()),
                        float(self.recall_per_user[sel].mean()) if sel.any() else 0.0,
                        float(self.ap_per_user[sel].mean()) if sel.any() else 0.0))
        return out

    def write_detail_csv(self, path, user_ids=None):
        ids = self.users if user_ids is None else np.asarray(user_ids)[self.users]
        groups = self.groups if self.groups is not None else np.zeros(len(self.users), dtype=int)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["user_id", "group", "recall", "ap"])
            for u, g, r, a in zip(ids, groups, self.recall_per_user, self.ap_per_user):
                w.writerow([u, g, repr(float(r)), repr(float(a))])

    def write_summary_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["metric", "value"])
            w.writerow([f"recall@{self.K}", repr(self.recall)])
            w.writerow([f"map@{self.K}", repr(self.map)])
            w.writerow(["users", len(self.users)])

    def write_group_csv(self, path, model: str):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["group", "range", "model", f"recall@{self.K}", f"map@{self.K}"])
            for g, lo, hi, _, r, a in self.group_means():
                w.writerow([g, f"{lo}-{hi}", model, repr(r), repr(a)])


def _score_chunk(users, Z, V, train: InteractionSet, test: InteractionSet, K):
    S = Z[users] @ V.T
    rec = np.empty(len(users))
    ap = np.empty(len(users))
    for row, u in enumerate(users):
        s = S[row]
        s[train.user_items(u)] = -np.inf
        order = np.argsort(-s, kind="stable")
        n_cand = train.n_items - len(train.user_items(u))
        top = order[: min(K, n_cand)]
        pos = test.user_items(u)
        rec[row] = recall_at_k(top, pos, K)
        ap[row] = map_at_k(top, pos, K)
    return rec, ap


def evaluate(Z: np.ndarray, V: np.ndarray, split: SplitPair, K: int = 20,
             threads: int = 1, n_groups: int | None = None, chunk: int = 256) -> EvalReport:
    """Rank all non-training items for every test user (scores Z_u . V_j)."""
    users = np.unique(split.test.users)
    chunks = [users[i:i + chunk] for i in range(0, len(users), chunk)]
    work = lambda us: _score_chunk(us, Z, V, split.train, split.test, K)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    rec = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    ap = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    report = EvalReport(K, users, rec, ap)
    if n_groups:
        report.groups, report.group_ranges = sparsity_groups(split, n_groups, users)
    return report


def sparsity_groups(split: SplitPair, n_groups: int = 4, users=None):
    """Split test users, sorted by training-interaction count, into groups with
    roughly equal summed training interactions.

    Returns (group index per user in ``users`` order, [(min count, max count)]).
    A user goes to group floor(n_groups * interactions before it / total).
    """
    if n_groups < 1:
        raise ValueError("n_groups must be >= 1")
    users = np.unique(split.test.users) if users is None else np.asarray(users)
    counts = split.train.user_counts()[users]
    order = np.argsort(counts, kind="stable")
    c = counts[order]
    total = c.sum()
    before = np.concatenate([[0], np.cumsum(c)[:-1]])
    if total > 0:
        g_sorted = np.minimum((before * n_groups) // total, n_groups - 1)
    else:
        g_sorted = np.zeros(len(c), dtype=np.int64)
    groups = np.empty(len(users), dtype=np.int64)
    groups[order] = g_sorted
    ranges = []
    for g in range(n_groups):
        sel = c[g_sorted == g]
        ranges.append((int(sel.min()), int(sel.max())) if len(sel) else (0, 0))
    return groups, ranges


def equal_population_bins(values, n_bins: int) -> np.ndarray:
    """Bin index per entry: entries sorted by value (ties by position) and cut
    into n_bins near-equal runs. Equal values always share a bin."""
    values = np.asarray(values)
    order = np.argsort(values, kind="stable")
    raw = (np.arange(len(values)) * n_bins) // max(len(values), 1)
    # keep equal values together: a run of ties takes the bin of its first member
    sv = values[order]
    first = np.searchsorted(sv, sv, side="left")
    bins = np.empty(len(values), dtype=np.int64)
    bins[order] = raw[first]
    return bins


def attention_report(S: np.ndarray, social_degree, interaction_count, n_bins: int = 4):
    """Mean attention weight per (axis, bin, layer) for users binned by social
    degree and by training-interaction count.

    Rows: (axis, bin, lo, hi, users, layer, mean_weight).
    """
    S = np.asarray(S)
    if S.shape[1] < 2:
        raise ValueError("attention undefined for single layer")
    rows = []
    for axis, vals in (("degree", np.asarray(social_degree)), ("interactions", np.asarray(interaction_count))):
        bins = equal_population_bins(vals, n_bins)
        for b in np.unique(bins):
            sel = bins == b
            means = S[sel].mean(axis=0)
            for l, w in enumerate(means, start=1):
                rows.append((axis, int(b), int(vals[sel].min()), int(vals[sel].max()),
                             int(sel.sum()), l, float(w)))
    return rows


def write_attention_report_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["axis", "bin", "lo", "hi", "users", "layer", "mean_weight"])
        for r in rows:
            w.writerow(list(r[:-1]) + [repr(r[-1])])


def paired_significance(a, b) -> float:
    """Two-sided paired t-test p-value on per-user metric pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("need two equal-length samples of at least 2 pairs")
    diff = a - b
    if np.all(diff == diff[0]):
        if diff[0] == 0:
            return 1.0
        warnings.warn("differences have zero variance; reporting p = 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(stats.ttest_rel(a, b).pvalue)
