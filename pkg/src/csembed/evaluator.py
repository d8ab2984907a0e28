"""Holdout splits, top-N recommendation and ranking metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .graph import BipartiteGraph, DataError, Interactions, merge_duplicates
from .model import EmbeddingTriplet

BATCH = 1024


@dataclass
class SplitPair:
    train: Interactions
    test: Interactions
    ratio: float
    seed: int


def split(table: Interactions, ratio: float = 0.8, seed: int = 0) -> SplitPair:
    """Uniform edge-level split; ``round(ratio * |E|)`` distinct pairs go to train.

    Duplicate rows are merged first so a pair never lands on both sides.
    """
    if not 0 < ratio < 1:
        raise ValueError("ratio must be in (0, 1)")
    merged = merge_duplicates(table)
    n = len(merged)
    n_train = int(round(ratio * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"split of {n} edges at ratio {ratio} leaves an empty side")
    order = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(order[:n_train])
    test_idx = np.sort(order[n_train:])
    return SplitPair(merged.take(train_idx), merged.take(test_idx), ratio, seed)


# ── recommendation ───────────────────────────────────────────────────────────

def _rank_row(scores: np.ndarray, n: int) -> np.ndarray:
    """Item offsets of the top ``n`` finite scores, ties by ascending offset."""
    finite = np.flatnonzero(np.isfinite(scores))
    if finite.size > n:
        kth = np.partition(scores[finite], finite.size - n)[finite.size - n]
        finite = finite[scores[finite] >= kth]
    order = np.lexsort((finite, -scores[finite]))
    return finite[order[:n]]


def top_n_batch(users: Sequence[int], triplet: EmbeddingTriplet, graph: BipartiteGraph,
                n: int) -> list[np.ndarray]:
    """Top-``n`` item vertex ids for each user vertex, excluding training items."""
    if n < 1:
        raise ValueError("N must be >= 1")
    items = triplet.phi[graph.n_users:graph.n_users + graph.n_items]
    users = np.asarray(users, np.int64)
    out = []
    for lo in range(0, users.size, BATCH):
        block = users[lo:lo + BATCH]
        scores = triplet.phi[block] @ items.T
        for row, u in zip(scores, block.tolist()):
            seen = graph.indices[graph.indptr[u]:graph.indptr[u + 1]] - graph.n_users
            row[seen] = -np.inf
            out.append(_rank_row(row, n) + graph.n_users)
    return out


def recommend_top_n(user: int, triplet: EmbeddingTriplet, graph: BipartiteGraph,
                    n: int) -> np.ndarray:
    """Ranked item vertex ids for ``user`` by descending ``phi`` dot product.

    Items the user has in ``graph`` are excluded. The list is shorter than
    ``n`` when fewer candidates exist.
    """
    if graph.side_of(user) != "user":
        raise ValueError(f"vertex {user} is not a user")
    return top_n_batch([user], triplet, graph, n)[0]


# ── metrics ──────────────────────────────────────────────────────────────────

def recall_at_n(recommended: Sequence, truth: Iterable, n: int) -> float:
    truth = set(truth)
    if not truth:
        raise ValueError("empty ground truth")
    hits = sum(1 for r in list(recommended)[:n] if r in truth)
    return hits / min(n, len(truth))


def average_precision(recommended: Sequence, truth: Iterable, n: int) -> float:
    """Sum of precision@k at each hit within the top ``n``, over min(n, |truth|)."""
    truth = set(truth)
    if not truth:
        raise ValueError("empty ground truth")
    hits = 0
    total = 0.0
    for k, r in enumerate(list(recommended)[:n], 1):
        if r in truth:
            hits += 1
            total += hits / k
    return total / min(n, len(truth))


def map_at_n(recommended: Sequence[Sequence], truth: Sequence[Iterable], n: int) -> float:
    if len(recommended) != len(truth):
        raise ValueError("one recommendation list per user required")
    if not recommended:
        raise ValueError("no users to evaluate")
    return float(np.mean([average_precision(r, t, n) for r, t in zip(recommended, truth)]))


# ── full evaluation ──────────────────────────────────────────────────────────

@dataclass
class EvalReport:
    cutoff: int
    recall: float
    map: float
    users: int
    cold_users: int = 0
    seed: int | None = None
    per_user: list[dict] | None = field(default=None, repr=False)

    def lines(self) -> list[str]:
        return [f"Recall@{self.cutoff}\t{self.recall:.6f}",
                f"mAP@{self.cutoff}\t{self.map:.6f}",
                f"users\t{self.users}"]

    def records(self) -> list[dict]:
        return [{"metric": name, "cutoff": self.cutoff, "value": value, "seed": self.seed}
                for name, value in (("recall", self.recall), ("map", self.map))]

    def jsonl(self) -> str:
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records())


def ground_truth(test: Interactions, graph: BipartiteGraph) -> tuple[dict[int, set], int]:
    """Map test pairs onto graph vertex ids.

    Returns per-user truth sets for users present in ``graph`` and the count
    of test users missing from it. Items unseen in training get negative
    placeholder ids so they count toward |T_u| but can never be hit.
    """
    uidx, iidx = graph.user_index, graph.item_index
    truth: dict[int, set] = {}
    cold: set[str] = set()
    for ukey, ikey, _ in test.triples():
        u = uidx.get(ukey)
        if u is None:
            cold.add(ukey)
            continue
        i = iidx.get(ikey)
        truth.setdefault(u, set()).add(i if i is not None else -1 - test.item_index[ikey])
    return truth, len(cold)


def evaluate(triplet: EmbeddingTriplet, graph: BipartiteGraph, test: Interactions,
             n: int = 10, count_cold: bool = False, seed: int | None = None,
             per_user: bool = False) -> EvalReport:
    """Recall@n and mAP@n of ``phi``-based recommendations against ``test``.

    ``graph`` must be built from the training side of the split. Test users
    absent from training are skipped unless ``count_cold``, which scores
    them as zero.
    """
    truth, cold = ground_truth(test, graph)
    users = sorted(truth)
    recs = top_n_batch(users, triplet, graph, n)
    recalls = []
    aps = []
    records = [] if per_user else None
    for u, rec in zip(users, recs):
        seen = graph.indices[graph.indptr[u]:graph.indptr[u + 1]]
        assert not np.isin(rec, seen).any(), f"user {u}: training item recommended"
        r = recall_at_n(rec.tolist(), truth[u], n)
        ap = average_precision(rec.tolist(), truth[u], n)
        recalls.append(r)
        aps.append(ap)
        if records is not None:
            records.append({"user": graph.key_of(u), "recall": r, "ap": ap})
    if count_cold:
        recalls += [0.0] * cold
        aps += [0.0] * cold
    if not recalls:
        raise DataError("no evaluable users")
    return EvalReport(n, float(np.mean(recalls)), float(np.mean(aps)), len(recalls),
                      cold, seed, records)
