import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathfbsde.pathcore import (DiscretePath, PathError, PathView, TimeGrid, concat,
                                d_infinity, step_stats, sup_distance)


def example_path():
    # history 1.0 on [0, 1), grid values 2.0 at t=1 and 3.0 at t=2
    return DiscretePath.from_breakpoints([0.0, 1.0, 2.0], [[1.0], [2.0], [3.0]], split=1.0)


def test_grid_invariants():
    g = TimeGrid.uniform(0.0, 1.0, 8)
    assert g.n == 8 and g.mesh() == pytest.approx(0.125)
    assert g.index_of(0.3) == 2
    assert g.index_of(1.0) == 8
    with pytest.raises(PathError):
        TimeGrid([0.0, 0.5, 0.5])
    with pytest.raises(PathError):
        TimeGrid([0.0])


def test_refinement_positions():
    fine = TimeGrid.uniform(0, 1, 16)
    assert list(fine.refinement_factor(TimeGrid.uniform(0, 1, 4))) == [0, 4, 8, 12, 16]
    with pytest.raises(PathError):
        TimeGrid.uniform(0, 1, 3).refinement_factor(TimeGrid.uniform(0, 1, 2))


def test_evaluate_examples():
    zero = DiscretePath.constant(0.0, end=2.0)
    assert zero.evaluate(1.3)[0] == 0.0
    p = example_path()
    assert p.grid == TimeGrid([1.0, 2.0])
    assert p.evaluate(1.5)[0] == 2.0
    assert p.evaluate(10.0)[0] == 3.0
    assert p.evaluate(0.5)[0] == 1.0


def test_splice_value_must_match_history():
    with pytest.raises(PathError):
        DiscretePath([0.0], [[1.0]], TimeGrid([1.0, 2.0]), [[1.5], [3.0]])


def test_sup_norm_examples():
    assert DiscretePath.constant(0.0, end=1.0).sup_norm() == 0.0
    p = DiscretePath.from_breakpoints([0, 1, 2], [[1.0], [-3.0], [2.0]])
    assert p.sup_norm() == 3.0
    assert DiscretePath.constant([3.0, 4.0], end=1.0).sup_norm() == 5.0


def test_d_infinity_examples():
    c = DiscretePath.constant(1.0, end=1.0)
    assert d_infinity(c.stopped(0.5), c.stopped(0.5)) == 0.0
    assert d_infinity(c.stopped(0.2), c.stopped(0.5)) == pytest.approx(0.3)
    z = DiscretePath.constant(0.0, end=1.0)
    assert d_infinity(z.stopped(0.7), c.stopped(0.7)) == 1.0


def test_concat_examples():
    rng = np.random.default_rng(3)
    w = DiscretePath.from_breakpoints(np.linspace(0, 2, 9), rng.normal(size=(9, 1)))
    om = DiscretePath.from_breakpoints([0, 0.5, 1.5], [[1.0], [2.0], [-1.0]], end=2.0)
    c0 = concat(om, w, 0.0)
    u = np.linspace(0, 2, 41)
    assert np.allclose(c0.evaluate(u), w.evaluate(u) - w.evaluate(0.0) + om.evaluate(0.0))
    for s in (0.0, 0.3, 1.0, 2.0):
        assert concat(om, om, s) == om
    two = DiscretePath.constant(2.0, end=1.0)
    c = concat(two, w, 1.0)
    assert c.T == 2.0
    assert np.all(c.evaluate(u[u < 1]) == 2.0)
    assert np.allclose(c.evaluate(u[u >= 1]), 2.0 + w.evaluate(u[u >= 1]) - w.evaluate(1.0))


def test_concat_dimension_mismatch():
    with pytest.raises(PathError):
        concat(DiscretePath.constant(0.0, end=1.0), DiscretePath.constant([0.0, 1.0], end=1.0), 0.5)


def test_json_round_trip():
    p = DiscretePath([0.0, 0.25], [[0.0], [2.0]], TimeGrid([0.5, 0.75, 1.0]),
                     [[2.0], [1.0], [1.5]])
    q = DiscretePath.from_json(json.dumps(p.to_json()))
    assert q == p and q.grid == p.grid
    h = DiscretePath([0.0, 0.3], [[1.0], [2.0]], end=0.5)
    assert DiscretePath.from_json(h.to_json()) == h


def test_truncate_and_history_part():
    p = DiscretePath([0.0], [[0.0]], TimeGrid.uniform(0, 1, 4), [[0], [1], [2], [3], [4]])
    assert p.truncate(2).T == 0.5
    assert p.truncate(2).evaluate(0.9)[0] == 2.0
    assert p.truncate(0).grid is None


def test_step_stats():
    mx, mn, ab, integral = step_stats([0.0, 0.5], [[1.0], [-2.0]], 1.0)
    assert mx[0] == 1.0 and mn[0] == -2.0 and ab == 2.0
    assert integral[0] == pytest.approx(0.5 - 1.0)


def test_path_view_from_path():
    p = DiscretePath.from_breakpoints([0.0, 0.25, 0.5], [[0.0], [2.0], [1.0]])
    v = PathView.from_path(p)
    assert v.value[0, 0] == 1.0
    assert v.running_max[0, 0] == 2.0
    assert v.running_mean[0, 0] == pytest.approx((0.25 * 0 + 0.25 * 2.0) / 0.5)
    assert v.at(0.3)[0, 0] == 2.0


# -- property tests ------------------------------------------------------------------

@st.composite
def step_paths(draw, T=2.0, d=1):
    k = draw(st.integers(1, 6))
    times = sorted(set(draw(st.lists(st.floats(0.0, T), min_size=k, max_size=k))) | {0.0})
    vals = draw(st.lists(st.floats(-5, 5), min_size=len(times), max_size=len(times)))
    return DiscretePath.from_breakpoints(times, np.array(vals)[:, None], end=T)


@settings(max_examples=60, deadline=None)
@given(step_paths(), step_paths(), step_paths(), st.floats(0, 2), st.floats(0, 2))
def test_concat_associative(a, b, c, s1, s2):
    s, s_ = min(s1, s2), max(s1, s2)
    left = concat(concat(a, b, s), c, s_)
    right = concat(a, concat(b, c, s_), s)
    u = np.union1d(np.linspace(0, 2, 33), np.union1d(left.breakpoints()[0],
                                                      right.breakpoints()[0]))
    assert np.allclose(left.evaluate(u), right.evaluate(u), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(step_paths(), step_paths(), st.floats(0, 2))
def test_concat_splice_value_and_sup_bound(a, b, s):
    c = concat(a, b, s)
    assert np.array_equal(c.evaluate(s), a.evaluate(s))
    assert c.sup_norm() <= a.sup_norm() + 2 * b.sup_norm() + 1e-12


@settings(max_examples=60, deadline=None)
@given(step_paths(), step_paths(), step_paths(), st.floats(0, 2), st.floats(0, 2),
       st.floats(0, 2))
def test_d_infinity_triangle(a, b, c, s1, s2, s3):
    va, vb, vc = a.stopped(s1), b.stopped(s2), c.stopped(s3)
    assert d_infinity(va, vc) <= d_infinity(va, vb) + d_infinity(vb, vc) + 1e-12
    assert d_infinity(va, vb) == pytest.approx(d_infinity(vb, va))


@settings(max_examples=40, deadline=None)
@given(step_paths(), st.floats(0, 2), st.floats(0, 3))
def test_stopped_view_freezes(a, s, u):
    assert np.array_equal(a.stopped(s).evaluate(u), a.evaluate(min(u, s)))
    assert sup_distance(a.stopped(s), a.stopped(s)) == 0.0
