import numpy as np
import pytest

from csembed.graph import build_graph, load_edge_list


def graph_from(text: str):
    return build_graph(load_edge_list(text.strip().splitlines()))


@pytest.fixture
def small_graph():
    # u1-{i1,i2}, u2-{i1}: the walk example with a weighted twist on u1.
    return graph_from("u1 i1 1\nu1 i2 3\nu2 i1 1")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def walk_marginals(pairs, start, k):
    """Exact P(W^j = v) for j = 1..k by enumerating every weighted path.

    ``pairs`` is a list of (a, b, weight) undirected edges over any labels;
    works from the raw list, not from the graph's samplers.
    """
    adj = {}
    for a, b, w in pairs:
        adj.setdefault(a, []).append((b, w))
        adj.setdefault(b, []).append((a, w))
    out = [dict() for _ in range(k)]

    def extend(v, p, depth):
        if depth == k:
            return
        total = sum(w for _, w in adj[v])
        for n, w in adj[v]:
            q = p * w / total
            out[depth][n] = out[depth].get(n, 0.0) + q
            extend(n, q, depth + 1)

    extend(start, 1.0, 0)
    return out
