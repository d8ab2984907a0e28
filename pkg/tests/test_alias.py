import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csembed import _kernels
from csembed.alias import AliasTable

weights = st.lists(st.floats(0.0, 1e6, allow_nan=False), min_size=1, max_size=60).filter(
    lambda w: sum(w) > 0)


@settings(max_examples=200, deadline=None)
@given(weights)
def test_encoded_distribution_is_exact(w):
    table = AliasTable(w)
    target = np.asarray(w) / np.sum(w)
    assert np.allclose(table.probabilities(), target, atol=1e-12)
    assert np.all((table.prob >= 0) & (table.prob <= 1))
    assert np.all((table.alias >= 0) & (table.alias < len(w)))


def test_scale_invariant():
    a = AliasTable([1, 2, 3])
    b = AliasTable([10, 20, 30])
    assert np.allclose(a.probabilities(), b.probabilities())


@pytest.mark.parametrize("bad", [[], [0, 0], [1, -1], [np.nan], [[1, 2]]])
def test_rejects_bad_weights(bad):
    with pytest.raises(ValueError):
        AliasTable(bad)


def test_frequencies_over_a_million_draws(rng):
    w = rng.uniform(0, 1, size=25)
    w[3] = 0.0
    counts = np.bincount(AliasTable(w).sample(rng, 10**6), minlength=25)
    assert np.max(np.abs(counts / 1e6 - w / w.sum())) < 0.01
    assert counts[3] == 0


def test_compiled_draws_match(rng):
    w = np.array([1.0, 0.0, 5.0, 2.0])
    t = AliasTable(w)
    out = _kernels.alias_draw_many(t.prob, t.alias, 10**6, np.array([1], np.uint64))
    assert np.max(np.abs(np.bincount(out, minlength=4) / 1e6 - w / w.sum())) < 0.01


def test_draw_is_one_lookup(rng):
    # One slot pick and one comparison, whatever the support size.
    for n in (2, 1000, 100000):
        t = AliasTable(rng.uniform(0.1, 1, size=n))
        calls = []
        lookup = t._lookup

        class Probe(AliasTable):
            __slots__ = ()

            def _lookup(self, slot):
                calls.append(slot)
                return lookup(slot)

        t.__class__ = Probe
        for _ in range(10):
            t.draw(rng)
        assert len(calls) == 10


def test_single_outcome(rng):
    assert set(AliasTable([3.0]).sample(rng, 100).tolist()) == {0}


def test_uniform_stream_is_in_unit_interval():
    u = _kernels.uniforms(100000, np.array([0], np.uint64))
    assert u.min() >= 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.005
