"""Interaction ingestion, preprocessing and the sampled bipartite graph.

Vertex ids are dense integers: users occupy ``[0, n_users)`` and items
``[n_users, n_users + n_items)``. Neighbor lists are stored CSR-style with a
parallel alias row per vertex, so every draw (edge, neighbor, negative) is
O(1) and the whole structure is O(|E|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal

import numpy as np

from . import _kernels
from .alias import AliasTable

Side = Literal["user", "item"]
EdgeType = Literal["five_star", "count", "binary"]

DEFAULT_THRESHOLDS: dict[str, float] = {"five_star": 3.5, "count": 3.0}


class DataError(ValueError):
    """Input data is unusable (empty, malformed, filtered away)."""


class EdgeListError(DataError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Schema:
    """Column layout of an edge list.

    ``sep=None`` splits on any whitespace. ``columns`` is 2 (no value), 3
    (value required) or ``None`` (value optional, default 1.0).
    """

    sep: str | None = None
    columns: int | None = None

    def __post_init__(self):
        if self.columns not in (None, 2, 3):
            raise ValueError("columns must be 2, 3 or None")


@dataclass
class Interactions:
    """Raw (user, item, value) triples over string key spaces.

    ``users``/``items`` index into ``user_keys``/``item_keys``. Key lists may
    contain keys no longer referenced after filtering; :func:`build_graph`
    drops them.
    """

    users: np.ndarray
    items: np.ndarray
    values: np.ndarray
    user_keys: list[str]
    item_keys: list[str]

    def __len__(self) -> int:
        return self.users.size

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.user_keys)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.item_keys)}

    def take(self, mask_or_idx) -> Interactions:
        return Interactions(self.users[mask_or_idx], self.items[mask_or_idx],
                            self.values[mask_or_idx], self.user_keys, self.item_keys)

    def triples(self) -> Iterable[tuple[str, str, float]]:
        for u, i, v in zip(self.users.tolist(), self.items.tolist(), self.values.tolist()):
            yield self.user_keys[u], self.item_keys[i], v


def load_edge_list(source: Iterable[str], schema: Schema = Schema()) -> Interactions:
    """Parse ``user <sep> item [<sep> value]`` lines.

    Blank lines and lines starting with ``#`` are skipped. Duplicate pairs
    are kept as separate rows.
    """
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users: list[int] = []
    items: list[int] = []
    values: list[float] = []
    for lineno, raw in enumerate(source, 1):
        line = raw.strip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split(schema.sep) if schema.sep else line.split()
        n = len(fields)
        if schema.columns is None:
            if n not in (2, 3):
                raise EdgeListError(lineno, f"expected 2 or 3 columns, got {n}")
        elif n != schema.columns:
            raise EdgeListError(lineno, f"expected {schema.columns} columns, got {n}")
        user, item = fields[0].strip(), fields[1].strip()
        if not user or not item:
            raise EdgeListError(lineno, "empty key")
        if n == 3:
            try:
                value = float(fields[2])
            except ValueError:
                raise EdgeListError(lineno, f"value {fields[2]!r} is not a number") from None
            if not math.isfinite(value) or value < 0:
                raise EdgeListError(lineno, f"value {value} must be finite and >= 0")
        else:
            value = 1.0
        users.append(user_ids.setdefault(user, len(user_ids)))
        items.append(item_ids.setdefault(item, len(item_ids)))
        values.append(value)
    if not users:
        raise DataError("edge list is empty")
    return Interactions(np.asarray(users, np.int64), np.asarray(items, np.int64),
                        np.asarray(values, np.float64), list(user_ids), list(item_ids))


def read_edge_list(path, schema: Schema = Schema()) -> Interactions:
    with open(path, encoding="utf-8") as f:
        return load_edge_list(f, schema)


def write_edge_list(table: Interactions, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for u, i, v in table.triples():
            f.write(f"{u}\t{i}\t{v:g}\n")


def merge_duplicates(table: Interactions) -> Interactions:
    """Collapse repeated (user, item) rows by summing their values."""
    n_items = max(len(table.item_keys), 1)
    pair = table.users * n_items + table.items
    uniq, inverse = np.unique(pair, return_inverse=True)
    summed = np.bincount(inverse, weights=table.values, minlength=uniq.size)
    return Interactions(uniq // n_items, uniq % n_items, summed,
                        table.user_keys, table.item_keys)


def binarize(table: Interactions, edge_type: EdgeType,
             threshold: float | None = None) -> Interactions:
    """Map values >= threshold to 1 and drop the rest; ``binary`` is identity."""
    if edge_type == "binary":
        return table
    if edge_type not in DEFAULT_THRESHOLDS:
        raise ValueError(f"unknown edge type {edge_type!r}")
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS[edge_type]
    keep = table.values >= threshold
    out = table.take(keep)
    out.values = np.ones(out.users.size, np.float64)
    return out


def filter_min_degree(table: Interactions, min_user_degree: int) -> Interactions:
    """Drop every interaction of users with fewer than ``min_user_degree``
    distinct items. Applied once; item degrees are not re-checked."""
    if min_user_degree < 0:
        raise ValueError("min_user_degree must be >= 0")
    if min_user_degree == 0:
        return table
    n_items = max(len(table.item_keys), 1)
    distinct = np.unique(table.users * n_items + table.items) // n_items
    degree = np.bincount(distinct, minlength=len(table.user_keys))
    out = table.take(degree[table.users] >= min_user_degree)
    if len(out) == 0:
        raise DataError("no users survive filtering")
    return out


def preprocess(table: Interactions, edge_type: EdgeType = "binary",
               threshold: float | None = None, min_user_degree: int = 0) -> Interactions:
    """Merge duplicates, binarize, then apply the user degree filter."""
    return filter_min_degree(binarize(merge_duplicates(table), edge_type, threshold),
                             min_user_degree)


def canonical(table: Interactions) -> Interactions:
    """Drop unreferenced keys, sort both key lists and the rows.

    Two tables holding the same pairs become identical regardless of line
    order, which makes downstream seeded runs independent of it.
    """
    ukeys = np.asarray(table.user_keys, dtype=object)
    ikeys = np.asarray(table.item_keys, dtype=object)
    used_u = np.unique(table.users)
    used_i = np.unique(table.items)
    u_order = used_u[np.argsort(ukeys[used_u].astype(str), kind="stable")]
    i_order = used_i[np.argsort(ikeys[used_i].astype(str), kind="stable")]
    u_map = np.empty(len(table.user_keys), np.int64)
    i_map = np.empty(len(table.item_keys), np.int64)
    u_map[u_order] = np.arange(u_order.size)
    i_map[i_order] = np.arange(i_order.size)
    users, items = u_map[table.users], i_map[table.items]
    rows = np.lexsort((items, users))
    return Interactions(users[rows], items[rows], table.values[rows],
                        ukeys[u_order].tolist(), ikeys[i_order].tolist())


@dataclass(eq=False)
class BipartiteGraph:
    """Immutable weighted bipartite graph with alias samplers.

    Safe to share between threads for sampling; each caller owns its RNG.
    """

    n_users: int
    n_items: int
    user_keys: list[str]
    item_keys: list[str]
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    nbr_prob: np.ndarray
    nbr_alias: np.ndarray
    edge_user: np.ndarray
    edge_item: np.ndarray
    edge_weight: np.ndarray
    edge_sampler: AliasTable
    negative_samplers: dict[str, AliasTable] = field(repr=False)
    # Packed copies for compiled loops: one row read per draw.
    nbr_packed: np.ndarray = field(repr=False, default=None)
    edge_packed: np.ndarray = field(repr=False, default=None)

    @property
    def vertex_count(self) -> int:
        return self.n_users + self.n_items

    @property
    def edge_count(self) -> int:
        return self.edge_user.size

    @property
    def density(self) -> float:
        return self.edge_count / (self.n_users * self.n_items)

    @property
    def nbytes(self) -> int:
        arrays = (self.indptr, self.indices, self.weights, self.nbr_prob,
                  self.nbr_alias, self.edge_user, self.edge_item, self.edge_weight,
                  self.nbr_packed, self.edge_packed)
        return (sum(a.nbytes for a in arrays) + self.edge_sampler.nbytes
                + sum(t.nbytes for t in self.negative_samplers.values()))

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.user_keys)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {k: self.n_users + i for i, k in enumerate(self.item_keys)}

    def side_of(self, v: int) -> Side:
        if not 0 <= v < self.vertex_count:
            raise IndexError(v)
        return "user" if v < self.n_users else "item"

    def key_of(self, v: int) -> str:
        if v < self.n_users:
            return self.user_keys[v]
        return self.item_keys[v - self.n_users]

    def side_offset(self, side: Side) -> int:
        return 0 if side == "user" else self.n_users

    def side_size(self, side: Side) -> int:
        return self.n_users if side == "user" else self.n_items

    def neighbors(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return self.indices[lo:hi], self.weights[lo:hi]

    def degree(self, v: int) -> int:
        return int(self.indptr[v + 1] - self.indptr[v])

    def strength(self) -> np.ndarray:
        """Total incident edge weight of every vertex."""
        return np.add.reduceat(self.weights, self.indptr[:-1])

    def neighbor_probabilities(self, v: int) -> np.ndarray:
        lo, hi = self.indptr[v], self.indptr[v + 1]
        n = hi - lo
        prob, alias = self.nbr_prob[lo:hi], self.nbr_alias[lo:hi]
        out = prob / n
        np.add.at(out, alias, (1.0 - prob) / n)
        return out

    def stats(self) -> dict[str, float]:
        return {"users": self.n_users, "items": self.n_items,
                "vertices": self.vertex_count, "edges": self.edge_count,
                "density": self.density}

    def format_stats(self) -> str:
        s = self.stats()
        return "".join(f"{k}\t{v:.6g}\n" if k == "density" else f"{k}\t{v}\n"
                       for k, v in s.items())


def build_graph(table: Interactions) -> BipartiteGraph:
    """Build the sampled graph; duplicates merge by summing, zero-weight
    pairs and vertices without edges are dropped."""
    merged = merge_duplicates(table)
    merged = merged.take(merged.values > 0)
    if len(merged) == 0:
        raise DataError("no positive-weight interactions")

    used_users = np.unique(merged.users)
    used_items = np.unique(merged.items)
    n_users, n_items = used_users.size, used_items.size
    u = np.searchsorted(used_users, merged.users).astype(np.int64)
    i = (np.searchsorted(used_items, merged.items) + n_users).astype(np.int64)
    w = merged.values.astype(np.float64)
    n_vertices = n_users + n_items

    src = np.concatenate([u, i])
    dst = np.concatenate([i, u])
    wt = np.concatenate([w, w])
    order = np.lexsort((dst, src))
    src, dst, wt = src[order], dst[order], wt[order]
    indptr = np.zeros(n_vertices + 1, np.int64)
    np.cumsum(np.bincount(src, minlength=n_vertices), out=indptr[1:])

    if np.any(u >= n_users) or np.any(i < n_users):
        raise AssertionError("edge does not cross the user/item partition")

    nbr_prob = np.empty(dst.size, np.float64)
    nbr_alias = np.empty(dst.size, np.int64)
    _kernels.build_alias_rows(indptr, wt, nbr_prob, nbr_alias)

    strength = np.add.reduceat(wt, indptr[:-1])
    row_start = np.repeat(indptr[:-1], np.diff(indptr))
    edge_sampler = AliasTable(w)
    return BipartiteGraph(
        n_users=n_users, n_items=n_items,
        user_keys=[merged.user_keys[k] for k in used_users.tolist()],
        item_keys=[merged.item_keys[k] for k in used_items.tolist()],
        indptr=indptr, indices=dst, weights=wt,
        nbr_prob=nbr_prob, nbr_alias=nbr_alias,
        edge_user=u, edge_item=i, edge_weight=w,
        edge_sampler=edge_sampler,
        negative_samplers={"user": AliasTable(strength[:n_users]),
                           "item": AliasTable(strength[n_users:])},
        nbr_packed=_kernels.pack_alias(nbr_prob, row_start + nbr_alias, dst[:, None]),
        edge_packed=_kernels.pack_alias(edge_sampler.prob, edge_sampler.alias,
                                        np.stack([u, i], axis=1)),
    )


def sample_edge(graph: BipartiteGraph, rng: np.random.Generator) -> tuple[int, int]:
    e = graph.edge_sampler.draw(rng)
    return int(graph.edge_user[e]), int(graph.edge_item[e])


def sample_neighbor(graph: BipartiteGraph, v: int, rng: np.random.Generator) -> int:
    lo = graph.indptr[v]
    n = graph.indptr[v + 1] - lo
    slot = int(rng.integers(n))
    if rng.random() >= graph.nbr_prob[lo + slot]:
        slot = int(graph.nbr_alias[lo + slot])
    return int(graph.indices[lo + slot])


def random_walk(graph: BipartiteGraph, start: int, k: int,
                rng: np.random.Generator) -> list[int]:
    """Weighted walk of exactly ``k`` steps; returns W^1..W^k (start excluded).

    Entries at even offsets (W^2, W^4, ...) lie on the start's side.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if graph.degree(start) == 0:
        raise ValueError(f"vertex {start} has no neighbors")
    walk = []
    cur = start
    for _ in range(k):
        cur = sample_neighbor(graph, cur, rng)
        walk.append(cur)
    return walk


def sample_negative(graph: BipartiteGraph, side: Side, rng: np.random.Generator,
                    distribution: str = "degree") -> int:
    """Draw a vertex of ``side`` from the whole side; observed pairs are not
    rejected."""
    offset = graph.side_offset(side)
    if distribution == "uniform":
        return offset + int(rng.integers(graph.side_size(side)))
    if distribution != "degree":
        raise ValueError(f"unknown negative distribution {distribution!r}")
    return offset + graph.negative_samplers[side].draw(rng)
