"""Synthetic interaction generators and the bundled sample data."""

from __future__ import annotations

from importlib import resources

import numpy as np

from .graph import Interactions, read_edge_list


def _table(users, items, n_users: int, n_items: int) -> Interactions:
    return Interactions(np.asarray(users, np.int64), np.asarray(items, np.int64),
                        np.ones(len(users), np.float64),
                        [f"u{k}" for k in range(n_users)], [f"i{k}" for k in range(n_items)])


def two_block(n_users: int = 200, n_items: int = 200, p_in: float = 0.3,
              p_out: float = 0.0, seed: int = 0) -> Interactions:
    """Two communities: the first half of users and items form block 0.

    Each (user, item) pair is an edge independently with probability
    ``p_in`` inside a block and ``p_out`` across blocks.
    """
    rng = np.random.default_rng(seed)
    ub = np.arange(n_users) >= n_users // 2
    ib = np.arange(n_items) >= n_items // 2
    p = np.where(ub[:, None] == ib[None, :], p_in, p_out)
    users, items = np.nonzero(rng.random((n_users, n_items)) < p)
    return _table(users, items, n_users, n_items)


def block_of(key: str, count: int) -> int:
    """Block index of a ``two_block`` key such as ``u17`` or ``i150``."""
    return int(int(key[1:]) >= count // 2)


def community_graph(n_edges: int, seed: int = 0, users_per_edge: float = 1 / 25,
                    items_per_edge: float = 1 / 50, community_items: int = 200,
                    in_community: float = 0.85, skew: float = 0.8) -> Interactions:
    """Sparse graph with planted communities and Zipf-like item popularity.

    Users and items are split into communities of about ``community_items``
    items. A user's edge goes to an item of its own community with
    probability ``in_community`` and to a globally popular item otherwise.
    Exactly ``n_edges`` distinct pairs are returned.
    """
    rng = np.random.default_rng(seed)
    n_users = max(20, int(round(n_edges * users_per_edge)))
    n_items = max(20, int(round(n_edges * items_per_edge)))
    n_comm = max(2, n_items // community_items)
    if n_edges > n_users * n_items // 4:
        raise ValueError("graph too dense for the requested edge count")

    item_comm = rng.permutation(np.arange(n_items) % n_comm)
    user_comm = rng.integers(n_comm, size=n_users)
    members = [np.flatnonzero(item_comm == c) for c in range(n_comm)]
    # Popularity rank is random within each community.
    weight = np.empty(n_items)
    for m in members:
        weight[rng.permutation(m)] = 1.0 / np.arange(1, m.size + 1) ** skew
    global_p = weight / weight.sum()

    activity = rng.lognormal(0.0, 0.6, size=n_users)
    activity /= activity.sum()
    pairs = np.empty(0, np.int64)
    while pairs.size < n_edges:
        draw = int((n_edges - pairs.size) * 1.3) + 64
        users = rng.choice(n_users, size=draw, p=activity)
        local = rng.random(draw) < in_community
        items = rng.choice(n_items, size=draw, p=global_p)
        for c in range(n_comm):
            pick = local & (user_comm[users] == c)
            m = members[c]
            p = weight[m] / weight[m].sum()
            items[pick] = m[rng.choice(m.size, size=int(pick.sum()), p=p)]
        pairs = np.unique(np.concatenate([pairs, users * n_items + items]))
    pairs = np.sort(rng.choice(pairs, size=n_edges, replace=False))
    return _table(pairs // n_items, pairs % n_items, n_users, n_items)


def sample_path():
    """Path of the bundled ~1k-edge synthetic edge list."""
    return resources.files("csembed") / "data" / "synthetic_1k.tsv"


def load_sample() -> Interactions:
    with resources.as_file(sample_path()) as path:
        return read_edge_list(path)
