import math

import numpy as np
import pytest

from pathfbsde.coefficients import (CoefficientSet, check_bounds, check_lipschitz,
                                    check_non_anticipative, lookback_value, problem_zoo,
                                    register_problem, registered_problems)
from pathfbsde.pathcore import DiscretePath, PathView

REQUIRED = ["bm-terminal", "abm-linear", "bm-lookback", "discounted-terminal",
            "z-driver", "path-sigma"]

# E[max_{[0,1]} W] by quadrature of the reflection density 2 phi(s), s > 0
SQRT_2_OVER_PI = 0.7978845608028654
# E[max(2, 1 + max_{[0, 0.5]} W)] by the same quadrature
LOOKBACK_WITH_HISTORY = 2.050254541660012


def zero_history():
    return DiscretePath.constant(0.0, end=0.0)


def test_registry():
    for name in REQUIRED:
        assert name in registered_problems()
    with pytest.raises(KeyError, match="bm-terminal"):
        problem_zoo("no-such-problem")


def test_terminal_value_example():
    cs, _ = problem_zoo("bm-terminal")
    p = DiscretePath.from_breakpoints([0.0, 0.4, 1.0], [[0.0], [-1.0], [1.7]])
    assert cs.terminal(PathView.from_path(p))[0] == 1.7


def test_reference_values():
    _, ref = problem_zoo("abm-linear", mu=0.5)
    assert ref.value_at(0.0, zero_history()) == 0.5
    _, ref = problem_zoo("bm-lookback")
    assert ref.value_at(0.0, zero_history()) == pytest.approx(SQRT_2_OVER_PI, abs=1e-12)
    _, ref = problem_zoo("discounted-terminal")
    assert ref.value_at(0.0, zero_history()) == pytest.approx(math.exp(-0.5), abs=1e-15)
    _, ref = problem_zoo("z-driver")
    assert ref.value_at(0.0, zero_history()) == pytest.approx(0.3)


def test_lookback_with_history_matches_quadrature():
    h = DiscretePath.from_breakpoints([0, 0.25, 0.5], [[0.0], [2.0], [1.0]])
    _, ref = problem_zoo("bm-lookback")
    assert ref.value_at(0.5, h) == pytest.approx(LOOKBACK_WITH_HISTORY, abs=1e-12)
    assert lookback_value(2.0, 1.0, 0.0) == 2.0


@pytest.mark.parametrize("name", REQUIRED + ["geometric", "drift-only"])
def test_zoo_non_anticipative(name):
    cs, _ = problem_zoo(name)
    rep = check_non_anticipative(cs, probes=100, seed=1)
    assert rep.passed
    assert all(v == 0.0 for v in rep.values.values())


@pytest.mark.parametrize("name", REQUIRED + ["geometric", "drift-only"])
def test_zoo_lipschitz_and_bounds(name):
    cs, _ = problem_zoo(name)
    rep = check_lipschitz(cs, probes=200, seed=2)
    assert rep.passed, rep.values
    b = check_bounds(cs)
    assert b["passed"], b


def test_anticipating_functional_is_flagged():
    cs = CoefficientSet(b=lambda t, v: v.base.evaluate(v.base.T)[None, :],
                        sigma=lambda t, v: np.ones((1, 1)), g=lambda v: v.value[:, 0])
    rep = check_non_anticipative(cs, probes=20, seed=0)
    assert not rep.passed and rep["b"] > 0


def test_lipschitz_ratios_known_cases():
    cs, _ = problem_zoo("bm-terminal")
    rep = check_lipschitz(cs, probes=100, seed=3)
    assert rep["b"] == 0.0 and rep["sigma"] == 0.0
    cs, _ = problem_zoo("discounted-terminal", r=0.1)
    assert check_lipschitz(cs, probes=300, seed=4)["f"] <= 0.1 + 1e-12
    cs, _ = problem_zoo("path-sigma")
    assert check_lipschitz(cs, probes=300, seed=5)["sigma"] <= 0.1 + 1e-12


def test_path_sigma_uses_running_sup():
    cs, _ = problem_zoo("path-sigma")
    p = DiscretePath.from_breakpoints([0, 0.3, 0.6], [[0.0], [-2.0], [0.5]])
    v = PathView.from_path(p, 0.7)
    assert cs.diffusion(0.7, v)[0, 0, 0] == pytest.approx(0.2 + 0.1 * math.tanh(2.0))


def test_register_custom_problem(monkeypatch):
    from pathfbsde import coefficients
    monkeypatch.setattr(coefficients, "_ZOO", dict(coefficients._ZOO))

    def factory(k=1.0):
        cs = CoefficientSet(b=lambda t, v: np.zeros(1), sigma=lambda t, v: np.full((1, 1), k),
                            g=lambda v: v.value[:, 0], name="custom-k")
        return cs, None
    register_problem("custom-k", factory)
    cs, _ = problem_zoo("custom-k", k=2.0)
    v = PathView.from_path(DiscretePath.constant(0.0, end=1.0))
    assert cs.diffusion(0.0, v)[0, 0, 0] == 2.0


def test_broadcasting_shapes():
    cs, _ = problem_zoo("discounted-terminal")
    v = PathView.from_path(DiscretePath.constant(1.0, end=1.0))
    assert cs.drift(0.0, v).shape == (1, 1)
    assert cs.diffusion(0.0, v).shape == (1, 1, 1)
    assert cs.driver(0.0, v, np.array([2.0]), np.zeros((1, 1)))[0] == -1.0
