import numpy as np
import pytest

from pathfbsde.coefficients import CoefficientSet, problem_zoo
from pathfbsde.euler import (NonFiniteError, moment_ratio, run_euler, simulate,
                             simulate_batch, strong_error, strong_errors)
from pathfbsde.pathcore import DiscretePath, PathError, TimeGrid
from pathfbsde.sampling import SampleKey


def zero():
    return DiscretePath.constant(0.0, end=0.0)


def test_constant_drift_is_exact():
    cs, _ = problem_zoo("drift-only", rate=1.0)
    g = TimeGrid.uniform(0, 1, 4)
    tr = simulate(cs, zero(), g, SampleKey(0))
    assert np.allclose(tr.path.values[:, 0], g.nodes, atol=1e-15)


def test_brownian_shift():
    cs, _ = problem_zoo("bm-terminal")
    g = TimeGrid.uniform(0, 1, 8)
    tr = simulate(cs, DiscretePath.constant(3.0, end=0.0), g, SampleKey(4, (1,)))
    assert tr.path.values[0, 0] == 3.0
    expected = [3.0]
    for dw in tr.dW[:, 0]:
        expected.append(expected[-1] + dw)
    assert np.array_equal(tr.path.values[:, 0], expected)


def test_geometric_scheme_is_martingale():
    cs, _ = problem_zoo("geometric", vol=0.2)
    g = TimeGrid.uniform(0, 1, 16)
    N = 10 ** 6
    xT = np.concatenate([simulate_batch(cs, DiscretePath.constant(1.0, end=0.0), g,
                                        SampleKey(8), 250_000, off).X[-1, :, 0]
                         for off in range(0, N, 250_000)])
    assert abs(xT.mean() - 1.0) <= 3 * xT.std(ddof=1) / np.sqrt(N)


def test_simulate_matches_batch_and_is_deterministic():
    cs, _ = problem_zoo("path-sigma")
    g = TimeGrid.uniform(0, 1, 10)
    b = simulate_batch(cs, zero(), g, SampleKey(2), 5)
    tr = simulate(cs, zero(), g, SampleKey(2).child(3))
    assert np.array_equal(b.X[:, 3], tr.path.values)
    assert np.array_equal(simulate_batch(cs, zero(), g, SampleKey(2), 5).X, b.X)


def test_chunking_does_not_change_paths():
    cs, _ = problem_zoo("path-sigma")
    g = TimeGrid.uniform(0, 1, 6)
    whole = simulate_batch(cs, zero(), g, SampleKey(1), 9).X
    part = simulate_batch(cs, zero(), g, SampleKey(1), 4, offset=5).X
    assert np.array_equal(whole[:, 5:], part)


def test_history_enters_coefficients():
    cs, _ = problem_zoo("path-sigma")
    hist = DiscretePath.from_breakpoints([0.0, 0.2, 0.4], [[0.0], [5.0], [0.0]], end=0.5)
    g = TimeGrid.uniform(0.5, 1.0, 4)
    tr = simulate(cs, hist, g, SampleKey(0))
    vol = 0.2 + 0.1 * np.tanh(5.0)
    # running sup of |X| is 5 from the history until X leaves [-5, 5]
    assert np.allclose(np.diff(tr.path.values[:, 0]), vol * tr.dW[:, 0])


def test_non_finite_coefficient_reports_name_and_index():
    cs = CoefficientSet(b=lambda t, v: np.where(t > 0.3, np.nan, 0.0) * np.ones(1),
                        sigma=lambda t, v: np.ones((1, 1)), g=lambda v: v.value[:, 0])
    with pytest.raises(NonFiniteError, match="drift b.*index 2"):
        simulate_batch(cs, zero(), TimeGrid.uniform(0, 1, 4), SampleKey(0), 3)


def test_history_must_end_at_grid_start():
    cs, _ = problem_zoo("bm-terminal")
    with pytest.raises(ValueError):
        simulate(cs, DiscretePath.constant(0.0, end=0.2), TimeGrid.uniform(0, 1, 4),
                 SampleKey(0))


def test_partial_run_leaves_later_nodes_unset():
    cs, _ = problem_zoo("bm-terminal")
    g = TimeGrid.uniform(0, 1, 4)
    dW = np.ones((2, 3, 1))
    b = run_euler(cs, zero(), g, dW, stop=2)
    assert np.all(b.X[2] == 2.0) and np.all(np.isnan(b.X[3:]))


def test_strong_error_zero_for_exact_schemes():
    fine, coarse = TimeGrid.uniform(0, 1, 64), TimeGrid.uniform(0, 1, 8)
    cs, _ = problem_zoo("drift-only", rate=2.0)
    assert strong_error(cs, zero(), coarse, fine, 200, seed=1) < 1e-28
    cs, _ = problem_zoo("bm-terminal")
    # summation order differs between the coupled schemes: round-off only
    assert strong_error(cs, zero(), coarse, fine, 2000, seed=1) < 1e-28


def test_strong_error_requires_nested_grids():
    cs, _ = problem_zoo("bm-terminal")
    with pytest.raises(PathError):
        strong_error(cs, zero(), TimeGrid.uniform(0, 1, 3), TimeGrid.uniform(0, 1, 8),
                     200, seed=0)
    with pytest.raises(ValueError):
        strong_error(cs, zero(), TimeGrid.uniform(0, 1, 4), TimeGrid.uniform(0, 1, 8),
                     50, seed=0)


def test_strong_error_decreases_under_refinement():
    cs, _ = problem_zoo("path-sigma")
    ns = [4, 8, 16, 32]
    errs = strong_errors(cs, zero(), [TimeGrid.uniform(0, 1, n) for n in ns],
                         TimeGrid.uniform(0, 1, 256), 20_000, seed=3)
    assert all(a > b for a, b in zip(errs, errs[1:]))
    single = strong_error(cs, zero(), TimeGrid.uniform(0, 1, 8), TimeGrid.uniform(0, 1, 256),
                          20_000, seed=3)
    assert single == errs[1]


def test_moment_ratio_stable_across_n():
    cs, _ = problem_zoo("geometric", vol=0.3)
    h = DiscretePath.constant(1.0, end=0.0)
    r = [moment_ratio(cs, h, TimeGrid.uniform(0, 1, n), 20_000, seed=5) for n in (8, 32, 128)]
    assert max(r) / min(r) < 1.2
