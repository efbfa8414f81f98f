import itertools

import numpy as np
import pytest

from pathfbsde.pathcore import TimeGrid
from pathfbsde.sampling import (SampleKey, batch_increments, child_ids, sample_increments,
                                standard_normals, suffix_ids, suffix_key)


def test_same_key_bit_identical():
    g = TimeGrid.uniform(0, 1, 16)
    k = SampleKey(123, (4, 5))
    a = sample_increments(k, g, 2).dW
    b = sample_increments(SampleKey(123, (4, 5)), g, 2).dW
    assert a.shape == (16, 2)
    assert np.array_equal(a, b)


def test_key_validation():
    with pytest.raises(ValueError):
        SampleKey(-1)
    with pytest.raises(ValueError):
        SampleKey(0, (-2,))


def test_first_step_moments():
    g = TimeGrid([0.0, 0.25])
    N = 10 ** 6
    dW = batch_increments(SampleKey(9).batch_ids(N), g, 1)[0, :, 0]
    assert abs(dW.mean()) < 4 * 0.5 / 1e3
    assert abs(dW.var() / 0.25 - 1) < 0.01


def test_sibling_keys_uncorrelated():
    g = TimeGrid([0.0, 0.25])
    N = 10 ** 5
    parents = SampleKey(42).batch_ids(N)
    a = standard_normals(child_ids(parents, 0), [0], 1)[0, :, 0]
    b = standard_normals(child_ids(parents, 1), [0], 1)[0, :, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / np.sqrt(N)


def test_suffix_keys():
    k = SampleKey(7, (3,))
    assert suffix_key(k, 0, 0) != k
    assert suffix_key(k, 1, 2) == suffix_key(k, 1, 2)
    assert suffix_key(k, 1, 2).stream_id == suffix_ids([k.stream_id], 1, [2])[0, 0]
    with pytest.raises(ValueError):
        suffix_key(k, -1, 0)


def test_suffix_streams_pairwise_uncorrelated():
    k = SampleKey(11)
    pairs = list(itertools.product(range(10), range(10)))
    ids = np.array([suffix_key(k, i, j).stream_id for i, j in pairs], dtype=np.uint64)
    assert len(set(ids.tolist())) == 100
    z = standard_normals(ids, np.arange(2000), 1)[:, :, 0]
    c = np.corrcoef(z.T)
    off = c[~np.eye(100, dtype=bool)]
    # 4950 pairs; a 5-sigma bound keeps the family-wise false alarm rate tiny
    assert np.max(np.abs(off)) < 5 / np.sqrt(2000)


def test_refined_grid_variance_halves():
    N = 10 ** 5
    ids = SampleKey(5).batch_ids(N)
    v1 = batch_increments(ids, TimeGrid.uniform(0, 1, 8), 1).var(axis=1).mean()
    v2 = batch_increments(ids, TimeGrid.uniform(0, 1, 16), 1).var(axis=1).mean()
    assert v2 / v1 == pytest.approx(0.5, rel=0.02)


def test_chunk_invariance_and_offsets():
    g = TimeGrid.uniform(0, 1, 5)
    k = SampleKey(1)
    whole = batch_increments(k.batch_ids(10), g, 2)
    parts = np.concatenate([batch_increments(k.batch_ids(4), g, 2),
                            batch_increments(k.batch_ids(6, 4), g, 2)], axis=1)
    assert np.array_equal(whole, parts)
    single = sample_increments(k.child(7), g, 2).dW
    assert np.array_equal(whole[:, 7], single)


def test_start_offset_matches_full():
    g = TimeGrid.uniform(0, 1, 6)
    ids = SampleKey(2).batch_ids(3)
    assert np.array_equal(batch_increments(ids, g, 1, start=2),
                          batch_increments(ids, g, 1)[2:])


def test_antithetic_doubles_batch():
    g = TimeGrid.uniform(0, 1, 4)
    ids = SampleKey(3).batch_ids(5)
    plain = batch_increments(ids, g, 1)
    anti = batch_increments(ids, g, 1, antithetic=True)
    assert anti.shape == (4, 10, 1)
    assert np.array_equal(anti[:, :5], plain)
    assert np.array_equal(anti[:, 5:], -plain)
