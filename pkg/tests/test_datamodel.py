import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_session, sessions
from neuclick.datamodel import Session, Slate, build_batch, split_dataset, unbatch, validate_catalog
from neuclick.errors import CatalogError, DataError, EmptyBatchError


def test_mask_rows_for_uneven_sessions():
    batch = build_batch([make_session([3]), make_session([2, 3], seed=1)], max_len=5)
    np.testing.assert_array_equal(batch.mask, [[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]])
    assert (batch.item_ids[~batch.mask] == -1).all()


def test_truncation_drops_oldest_slate_whole():
    sess = make_session([4, 3, 2])
    batch = build_batch([sess], max_len=5)
    (back,) = unbatch(batch)
    assert back.slates == sess.slates[1:]


def test_truncation_never_splits():
    with pytest.raises(DataError):
        build_batch([make_session([6])], max_len=5)
    with pytest.raises(DataError):
        build_batch([make_session([3, 3])], max_len=5, truncate=False)


def test_empty_batch():
    with pytest.raises(EmptyBatchError):
        build_batch([])


@settings(max_examples=60, deadline=None)
@given(st.lists(sessions(), min_size=1, max_size=5))
def test_batch_round_trip(sess):
    assert unbatch(build_batch(sess, max_len=64)) == sess


@settings(max_examples=40, deadline=None)
@given(st.lists(sessions(), min_size=1, max_size=5))
def test_every_unmasked_position_maps_to_one_impression(sess):
    batch = build_batch(sess, max_len=64)
    seen = set()
    for b, t in zip(*np.nonzero(batch.mask)):
        key = (b, batch.slate_index[b, t], batch.positions[b, t])
        assert key not in seen
        seen.add(key)
        imp = sess[b].slates[key[1]].impressions[key[2]]
        assert imp.item_id == batch.item_ids[b, t] and imp.clicked == batch.clicks[b, t]
    assert len(seen) == sum(s.n_impressions for s in sess)


@settings(max_examples=30, deadline=None)
@given(st.lists(sessions(), min_size=1, max_size=4))
def test_slate_gather_scatter_are_inverse(sess):
    batch = build_batch(sess, max_len=64)
    gather, scatter = batch.slate_gather(), batch.slate_scatter()
    flat_g = gather.reshape(-1)
    for b, t in zip(*np.nonzero(batch.mask)):
        assert flat_g[scatter[b, t]] == b * batch.length + t


def test_click_order_validation():
    Slate.from_lists([4, 5, 6], [0, 1, 1], [2, 1])
    with pytest.raises(DataError):
        Slate.from_lists([4, 5, 6], [0, 1, 0], [0])
    with pytest.raises(DataError):
        Slate.from_lists([4, 5, 6], [0, 1, 1], [1])
    with pytest.raises(DataError):
        Slate.from_lists([4, 5, 6], [0, 1, 1], [1, 1])


def test_empty_slate_and_session_rejected():
    with pytest.raises(DataError):
        Slate((), None)
    with pytest.raises(DataError):
        Session("u", ())


def test_catalog_validation():
    with pytest.raises(CatalogError):
        validate_catalog([make_session([3], n_items=20)], n_items=2)


class TestSplit:
    data = [make_session([2], sid=f"s{i}", seed=i) for i in range(10)]

    def test_sizes(self):
        assert tuple(map(len, split_dataset(self.data, (0.8, 0.1, 0.1), seed=3))) == (8, 1, 1)

    def test_deterministic(self):
        assert split_dataset(self.data, seed=5) == split_dataset(self.data, seed=5)

    def test_too_few_sessions(self):
        with pytest.raises(DataError):
            split_dataset(self.data[:2])

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(3, 40), seed=st.integers(0, 1000))
    def test_partition_property(self, n, seed):
        data = [make_session([1], sid=f"s{i}", seed=i) for i in range(n)]
        parts = split_dataset(data, seed=seed)
        ids = sorted(s.session_id for p in parts for s in p)
        assert ids == sorted(s.session_id for s in data)
        assert all(len(p) >= 1 for p in parts)
