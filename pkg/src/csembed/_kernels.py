"""Compiled hot paths: PRNG, alias tables, per-sample SGD updates.

Everything here is ``nopython`` and ``nogil`` so trainer threads can run
concurrently over shared embedding arrays (lock-free, lost updates allowed).

Random state is a ``uint64[1]`` array advanced by splitmix64; one state per
worker keeps streams private and reproducible.

A training sample is split into a draw phase (edge, walks, negatives) and an
apply phase (gradient updates). Every row the apply phase touches is
prefetched in between, which overlaps the cache misses of ~30 random rows.
"""

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

# No nnan/ninf: the trainer relies on isfinite() to catch divergence.
_FM = {"nsz", "arcp", "contract", "afn", "reassoc"}

SIGMOID_BOUND = 6.0

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 9007199254740992.0
_TWO53_INV = 1.0 / _TWO53


# ── random numbers ───────────────────────────────────────────────────────────

@njit(nogil=True, cache=True, inline="always")
def next_u64(state):
    z = state[0] + _GOLDEN
    state[0] = z
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(nogil=True, cache=True, inline="always")
def next_uniform(state):
    """Uniform double in [0, 1) with 53 random bits."""
    return np.float64(next_u64(state) >> np.uint64(11)) * _TWO53_INV


@njit(nogil=True, cache=True, inline="always")
def next_index(state, n):
    i = np.int64(next_uniform(state) * n)
    if i >= n:
        i = n - 1
    return i


@njit(nogil=True, cache=True)
def uniforms(count, state):
    out = np.empty(count, np.float64)
    for t in range(count):
        out[t] = next_uniform(state)
    return out


# ── prefetch ─────────────────────────────────────────────────────────────────

@intrinsic
def _prefetch(typingctx, arr, row, offset):
    """Hint the cache about byte ``offset`` of row ``row`` of a 2-D array."""
    sig = types.void(arr, row, offset)

    def codegen(context, builder, signature, args):
        aryty = signature.args[0]
        ary = context.make_array(aryty)(context, builder, args[0])
        strides = cgutils.unpack_tuple(builder, ary.strides, aryty.ndim)
        i64 = ir.IntType(64)
        base = builder.ptrtoint(ary.data, i64)
        row_v = context.cast(builder, args[1], signature.args[1], types.int64)
        off_v = context.cast(builder, args[2], signature.args[2], types.int64)
        addr = builder.add(base, builder.add(builder.mul(row_v, strides[0]), off_v))
        i8p = ir.IntType(8).as_pointer()
        i32 = ir.IntType(32)
        fnty = ir.FunctionType(ir.VoidType(), [i8p, i32, i32, i32])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.prefetch.p0i8")
        # read, high locality, data cache
        builder.call(fn, [builder.inttoptr(addr, i8p), i32(0), i32(3), i32(1)])
        return context.get_dummy_value()

    return sig, codegen


@njit(nogil=True, cache=True, inline="always")
def prefetch_row(a, r):
    for off in range(0, a.strides[0], 64):
        _prefetch(a, r, off)


# ── alias tables ─────────────────────────────────────────────────────────────

@njit(nogil=True, cache=True)
def build_alias(weights, prob, alias):
    """Vose's method for one row. ``alias`` holds row-local slot indices."""
    n = weights.shape[0]
    total = 0.0
    for i in range(n):
        total += weights[i]
    scaled = np.empty(n, np.float64)
    small = np.empty(n, np.int64)
    large = np.empty(n, np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        scaled[i] = weights[i] * n / total
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        g = large[nl]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    # Leftovers are 1.0 up to rounding.
    while nl > 0:
        nl -= 1
        prob[large[nl]] = 1.0
        alias[large[nl]] = large[nl]
    while ns > 0:
        ns -= 1
        prob[small[ns]] = 1.0
        alias[small[ns]] = small[ns]


@njit(nogil=True, cache=True)
def build_alias_rows(indptr, weights, prob, alias):
    """Build one alias row per CSR segment (compressed sparse alias rows)."""
    for v in range(indptr.shape[0] - 1):
        lo = indptr[v]
        hi = indptr[v + 1]
        if hi > lo:
            build_alias(weights[lo:hi], prob[lo:hi], alias[lo:hi])


def pack_alias(prob, alias, outcomes):
    """Packed rows ``[threshold, outcomes[slot]..., outcomes[alias[slot]]...]``.

    ``threshold = ceil(p * 2**53)``: comparing it with 53 random bits is the
    same test as ``uniform < p``, and a draw reads a single row. ``alias``
    must index ``outcomes`` directly.
    """
    w = outcomes.shape[1]
    table = np.empty((prob.shape[0], 1 + 2 * w), np.int64)
    table[:, 0] = np.ceil(prob * _TWO53).astype(np.int64)
    table[:, 1:1 + w] = outcomes
    table[:, 1 + w:] = outcomes[alias]
    return table


@njit(nogil=True, cache=True, inline="always")
def alias_draw(prob, alias, offset, size, state):
    """Row-local outcome: one slot pick, one coin, one comparison."""
    slot = next_index(state, size)
    if next_uniform(state) < prob[offset + slot]:
        return slot
    return alias[offset + slot]


@njit(nogil=True, cache=True, inline="always")
def packed_draw(table, lo, size, state):
    """Pick a slot of a packed table; returns (slot, keep primary outcome)."""
    slot = lo + next_index(state, size)
    return slot, np.int64(next_u64(state) >> np.uint64(11)) < table[slot, 0]


@njit(nogil=True, cache=True)
def alias_draw_many(prob, alias, count, state):
    out = np.empty(count, np.int64)
    n = prob.shape[0]
    for t in range(count):
        out[t] = alias_draw(prob, alias, 0, n, state)
    return out


# ── graph sampling ───────────────────────────────────────────────────────────

@njit(nogil=True, cache=True, inline="always")
def edge_draw(edges, state):
    slot, keep = packed_draw(edges, 0, edges.shape[0], state)
    if keep:
        return edges[slot, 1], edges[slot, 2]
    return edges[slot, 3], edges[slot, 4]


@njit(nogil=True, cache=True, inline="always")
def hop(indptr, nbr, cur, state):
    lo = indptr[cur]
    slot, keep = packed_draw(nbr, lo, indptr[cur + 1] - lo, state)
    return nbr[slot, 1] if keep else nbr[slot, 2]


@njit(nogil=True, cache=True, inline="always")
def walk_into(indptr, nbr, start, out, state):
    """Fill ``out`` with W^1..W^k of a weighted walk from ``start``."""
    cur = start
    for j in range(out.shape[0]):
        cur = hop(indptr, nbr, cur, state)
        out[j] = cur


@njit(nogil=True, cache=True)
def edge_draw_many(edges, count, state):
    out = np.empty((count, 2), np.int64)
    for t in range(count):
        out[t, 0], out[t, 1] = edge_draw(edges, state)
    return out


@njit(nogil=True, cache=True)
def walk_many(indptr, nbr, start, k, count, state):
    out = np.empty((count, k), np.int64)
    for t in range(count):
        walk_into(indptr, nbr, start, out[t], state)
    return out


@njit(nogil=True, cache=True, inline="always")
def draw_side(neg_prob, neg_alias, side_size, uniform, state):
    """Side-local vertex index drawn degree-proportionally or uniformly."""
    if uniform:
        return next_index(state, side_size)
    return alias_draw(neg_prob, neg_alias, 0, side_size, state)


@njit(nogil=True, cache=True)
def draw_side_into(neg_prob, neg_alias, side_offset, side_size, uniform, out, state):
    """Fill a 1-D or 2-D buffer with absolute vertex ids of one side."""
    flat = out.reshape(-1)
    for m in range(flat.shape[0]):
        flat[m] = side_offset + draw_side(neg_prob, neg_alias, side_size, uniform, state)


@njit(nogil=True, cache=True)
def draw_side_many(neg_prob, neg_alias, side_size, uniform, count, state):
    out = np.empty(count, np.int64)
    for t in range(count):
        out[t] = draw_side(neg_prob, neg_alias, side_size, uniform, state)
    return out


# ── scalar math ──────────────────────────────────────────────────────────────

@njit(nogil=True, cache=True, fastmath=_FM, inline="always")
def sigmoid(x):
    if x > SIGMOID_BOUND:
        x = SIGMOID_BOUND
    elif x < -SIGMOID_BOUND:
        x = -SIGMOID_BOUND
    return 1.0 / (1.0 + np.exp(-x))


@njit(nogil=True, cache=True, fastmath=_FM, inline="always")
def row_dot(a, ra, b, rb):
    acc = np.float32(0.0)
    for t in range(a.shape[1]):
        acc += a[ra, t] * b[rb, t]
    return acc


# ── loss terms and their gradients (float64 vectors; used by tests) ──────────
# Each returns (loss, grad wrt first, grad wrt second[, grad wrt third]) of the
# term as written: no learning rate, no regularization.

@njit(cache=True)
def pair_term(a, b, label):
    """-log sigma(a.b) for label 1, -log sigma(-a.b) for label 0."""
    p = sigmoid(np.dot(a, b))
    if label:
        return -np.log(p), -(1.0 - p) * b, -(1.0 - p) * a
    return -np.log(1.0 - p), p * b, p * a


@njit(cache=True)
def triple_term(u, j, k):
    """-log sigma(u.j - u.k)."""
    p = sigmoid(np.dot(u, j) - np.dot(u, k))
    g = -(1.0 - p)
    return -np.log(p), g * (j - k), g * u, -g * u


# ── SGD updates on shared matrices ───────────────────────────────────────────

@njit(nogil=True, cache=True, fastmath=_FM, inline="always")
def pair_update(phi, a, b, label, alpha, reg):
    """One step on a vertex-vertex pair of ``phi``; L2 decay on both rows."""
    p = sigmoid(row_dot(phi, a, phi, b))
    step = np.float32(alpha * (label - p))
    decay = np.float32(alpha * reg)
    for t in range(phi.shape[1]):
        xa = phi[a, t]
        xb = phi[b, t]
        phi[a, t] = xa + step * xb - decay * xa
        phi[b, t] = xb + step * xa - decay * xb
    if label > 0.5:
        return -np.log(p)
    return -np.log(1.0 - p)


@njit(nogil=True, cache=True, fastmath=_FM)
def ds_rate_apply(phi, u, i, neg_u, neg_i, alpha, reg):
    """Positive (u, i) plus one negative pair per (neg_u[m], neg_i[m])."""
    loss = pair_update(phi, u, i, 1.0, alpha, reg)
    for m in range(neg_u.shape[0]):
        loss += pair_update(phi, neg_u[m], neg_i[m], 0.0, alpha, reg)
    return loss


@njit(nogil=True, cache=True, fastmath=_FM)
def ds_rank_apply(phi, u, j, k, alpha, reg):
    """Step on -log sigma(u.j - u.k) with L2 decay on the three rows."""
    if k == j:
        # Constant loss; only the decay survives.
        keep = np.float32(1.0 - alpha * reg)
        for t in range(phi.shape[1]):
            phi[u, t] *= keep
            phi[j, t] *= keep
        return np.log(2.0)
    p = sigmoid(row_dot(phi, u, phi, j) - row_dot(phi, u, phi, k))
    step = np.float32(alpha * (1.0 - p))
    decay = np.float32(alpha * reg)
    for t in range(phi.shape[1]):
        xu = phi[u, t]
        xj = phi[j, t]
        xk = phi[k, t]
        phi[u, t] = xu + step * (xj - xk) - decay * xu
        phi[j, t] = xj + step * xu - decay * xj
        phi[k, t] = xk - step * xu - decay * xk
    return -np.log(p)


@njit(nogil=True, cache=True, fastmath=_FM, inline="always")
def context_update(phi, center, ctx, c, label, scale, alpha, acc):
    """Update context row ``c``; accumulate the center's gradient in ``acc``."""
    p = sigmoid(row_dot(phi, center, ctx, c))
    g = np.float32(scale * (label - p))
    step = np.float32(alpha) * g
    for t in range(phi.shape[1]):
        acc[t] += g * ctx[c, t]
        ctx[c, t] += step * phi[center, t]
    if label > 0.5:
        return -np.log(p)
    return -np.log(1.0 - p)


@njit(nogil=True, cache=True, fastmath=_FM)
def ns_apply(phi, ctx, center, contexts, negs, lam, alpha, reg, acc):
    """Train (center, contexts[a]) positives and (center, negs[a, m]) negatives.

    Gradients are scaled by ``lam``; the center row takes one accumulated
    step plus decay, and is left alone when there is no context.
    Returns the unscaled loss.
    """
    for t in range(acc.shape[0]):
        acc[t] = np.float32(0.0)
    loss = 0.0
    for a in range(contexts.shape[0]):
        loss += context_update(phi, center, ctx, contexts[a], 1.0, lam, alpha, acc)
        for m in range(negs.shape[1]):
            loss += context_update(phi, center, ctx, negs[a, m], 0.0, lam, alpha, acc)
    if contexts.shape[0] > 0:
        a32 = np.float32(alpha)
        decay = np.float32(alpha * reg)
        for t in range(phi.shape[1]):
            x = phi[center, t]
            phi[center, t] = x + a32 * acc[t] - decay * x
    return loss


@njit(nogil=True, cache=True, inline="always")
def same_side(ids, side_offset, side_size):
    for a in range(ids.shape[0]):
        if ids[a] < side_offset or ids[a] >= side_offset + side_size:
            return False
    return True


@njit(nogil=True, cache=True, fastmath=_FM)
def train_range(edges, indptr, nbr,
                neg_u_prob, neg_u_alias, neg_i_prob, neg_i_alias,
                phi, phi_uc, phi_ic, n_users, n_items,
                rank, negatives, k, lam, reg, uniform_neg,
                alpha0, linear, begin, end, share,
                state, ema, status):
    """Run samples ``begin..end`` of a worker's ``share``.

    ``ema`` = [value, initialised flag]; ``status`` = [code, sample index]
    with code 1 for a non-finite loss and 2 for a parity violation.
    """
    ns_on = lam > 0.0 and k >= 2
    n_ctx = k // 2
    neg_u = np.empty(negatives, np.int64)
    neg_i = np.empty(negatives, np.int64)
    walk_u = np.empty(k, np.int64)
    walk_i = np.empty(k, np.int64)
    ns_neg_u = np.empty((n_ctx, negatives), np.int64)
    ns_neg_i = np.empty((n_ctx, negatives), np.int64)
    acc = np.zeros(phi.shape[1], np.float32)
    # walk[j] is W^(j+1): odd j are the even-offset, same-side vertices.
    ctx_u = walk_u[1::2]
    ctx_i = walk_i[1::2]
    for t in range(begin, end):
        alpha = alpha0
        if linear and share > 0:
            alpha = alpha0 * (1.0 - 0.9 * t / share)

        # draw
        u, i = edge_draw(edges, state)
        neg_k = 0
        if rank:
            neg_k = n_users + draw_side(neg_i_prob, neg_i_alias, n_items, uniform_neg, state)
        else:
            draw_side_into(neg_u_prob, neg_u_alias, 0, n_users, uniform_neg, neg_u, state)
            draw_side_into(neg_i_prob, neg_i_alias, n_users, n_items, uniform_neg, neg_i, state)
        if ns_on:
            walk_into(indptr, nbr, u, walk_u, state)
            walk_into(indptr, nbr, i, walk_i, state)
            draw_side_into(neg_u_prob, neg_u_alias, 0, n_users, uniform_neg, ns_neg_u, state)
            draw_side_into(neg_i_prob, neg_i_alias, n_users, n_items, uniform_neg, ns_neg_i, state)

        # prefetch
        prefetch_row(phi, u)
        prefetch_row(phi, i)
        if rank:
            prefetch_row(phi, neg_k)
        else:
            for m in range(negatives):
                prefetch_row(phi, neg_u[m])
                prefetch_row(phi, neg_i[m])
        if ns_on:
            for a in range(n_ctx):
                prefetch_row(phi_uc, ctx_u[a])
                prefetch_row(phi_ic, ctx_i[a])
                for m in range(negatives):
                    prefetch_row(phi_uc, ns_neg_u[a, m])
                    prefetch_row(phi_ic, ns_neg_i[a, m])

        # apply
        if rank:
            loss = ds_rank_apply(phi, u, i, neg_k, alpha, reg)
        else:
            loss = ds_rate_apply(phi, u, i, neg_u, neg_i, alpha, reg)
        if ns_on:
            if not (same_side(ctx_u, 0, n_users) and same_side(ctx_i, n_users, n_items)):
                status[0] = 2
                status[1] = t
                return t
            lu = ns_apply(phi, phi_uc, u, ctx_u, ns_neg_u, lam, alpha, reg, acc)
            li = ns_apply(phi, phi_ic, i, ctx_i, ns_neg_i, lam, alpha, reg, acc)
            loss += lam * (lu + li)

        if not np.isfinite(loss):
            status[0] = 1
            status[1] = t
            return t
        if ema[1] == 0.0:
            ema[0] = loss
            ema[1] = 1.0
        else:
            ema[0] = 0.999 * ema[0] + 0.001 * loss
    return end
