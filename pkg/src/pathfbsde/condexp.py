"""Conditional expectations ``E[xi(omega (+)_{t_i} W) | prefix]``.

Two estimators:

* nested Monte Carlo -- draw fresh Brownian suffixes after ``t_i``,
  continue the Euler recursion and average.  Exact up to MC error; used as
  the oracle.
* least-squares regression of simulated targets on non-anticipative path
  features (``fit_regression`` + :class:`FeatureMap`).

A *path functional* ``xi`` is any callable mapping a
:class:`~pathfbsde.euler.PathBatch` (whole simulated paths) to an array of
shape ``(N,)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .coefficients import CoefficientSet
from .euler import HistoryStats, NonFiniteError, PathBatch, run_euler
from .pathcore import DiscretePath, PathError, TimeGrid
from .sampling import SampleKey, batch_increments, suffix_ids

log = logging.getLogger(__name__)

PathFunctional = Callable[[PathBatch], np.ndarray]

DEFAULT_FEATURES = ("const", "value", "max", "min", "mean")
_KNOWN = {"const", "value", "max", "min", "mean", "abs_max"}


def terminal_functional(cs: CoefficientSet) -> PathFunctional:
    """``xi = g(X_T)``."""
    return lambda batch: cs.terminal(batch.terminal_view())


@dataclass(frozen=True)
class FeatureMap:
    """Regression basis evaluated on path prefixes.

    ``names`` picks from ``const``, ``value``, ``max``, ``min``, ``mean``
    (running time-average) and ``abs_max``; ``lags`` appends the last
    ``lags`` node increments of ``X`` (zero before ``t_0``).
    """

    names: tuple = DEFAULT_FEATURES
    lags: int = 0

    def __post_init__(self):
        unknown = set(self.names) - _KNOWN
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}; "
                             f"choose from {sorted(_KNOWN)}")
        object.__setattr__(self, "names", tuple(self.names))

    def size(self, d: int) -> int:
        per = {"const": 1, "abs_max": 1}
        return sum(per.get(nm, d) for nm in self.names) + self.lags * d

    def __call__(self, batch: PathBatch, i: int) -> np.ndarray:
        N = batch.n_samples
        cols = []
        for nm in self.names:
            if nm == "const":
                cols.append(np.ones((N, 1)))
            elif nm == "value":
                cols.append(batch.X[i])
            elif nm == "max":
                cols.append(batch.run_max[i])
            elif nm == "min":
                cols.append(batch.run_min[i])
            elif nm == "mean":
                cols.append(batch.run_mean[i])
            elif nm == "abs_max":
                cols.append(batch.run_abs[i][:, None])
        for k in range(1, self.lags + 1):
            if i - k >= 0:
                cols.append(batch.X[i - k + 1] - batch.X[i - k])
            else:
                cols.append(np.zeros((N, batch.d)))
        return np.concatenate(cols, axis=1)


class RegressionError(ValueError):
    pass


def fit_regression(features: np.ndarray, targets: np.ndarray, lam: float = 0.0):
    """Ridge least squares ``argmin |t - F beta|^2 + lam |beta|^2``.

    Solved through the normal equations with a Cholesky factorisation.  When
    the Gram matrix is singular at ``lam = 0`` the fit is retried with
    ``lam = 1e-8 * trace / p``.

    Returns
    -------
    beta : ndarray, shape (p,) or (p, q)
    lam : float
        The ridge parameter actually used.
    """
    F = np.asarray(features, dtype=float)
    t = np.asarray(targets, dtype=float)
    N, p = F.shape
    if N < p:
        raise RegressionError(f"{N} samples cannot determine {p} coefficients")
    if not np.all(np.isfinite(t)):
        raise RegressionError("non-finite regression targets")
    return fit_moments(F.T @ F, F.T @ t, N, lam)


def fit_moments(gram: np.ndarray, rhs: np.ndarray, count: int, lam: float = 0.0):
    """:func:`fit_regression` from accumulated ``F^T F`` and ``F^T t``.

    Lets callers stream samples in chunks and solve once.
    """
    p = gram.shape[0]
    if count < p:
        raise RegressionError(f"{count} samples cannot determine {p} coefficients")
    if not np.all(np.isfinite(rhs)):
        raise RegressionError("non-finite regression targets")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    beta = _solve_spd(gram, rhs, lam)
    if beta is None:
        lam = 1e-8 * np.trace(gram) / p
        if lam == 0.0:
            lam = 1e-300
        beta = _solve_spd(gram, rhs, lam)
        if beta is None:
            raise RegressionError("Gram matrix is not positive definite even with ridge")
    return beta, lam


def _solve_spd(gram, rhs, lam):
    p = gram.shape[0]
    A = gram + lam * np.eye(p)
    scale = np.sqrt(np.clip(np.diag(A), 1e-300, None))
    A_s = A / np.outer(scale, scale)
    # a numerically singular Gram matrix is treated like an exactly singular one
    if np.linalg.cond(A_s) > 1e12:
        return None
    try:
        c = cho_factor(A_s, check_finite=False)
    except LinAlgError:
        return None
    rhs_s = rhs / (scale if rhs.ndim == 1 else scale[:, None])
    beta = cho_solve(c, rhs_s, check_finite=False)
    return beta / (scale if beta.ndim == 1 else scale[:, None])


@dataclass
class RegressionSurface:
    """Per-time-index coefficients ``beta_i`` of a fitted conditional expectation."""

    features: FeatureMap
    betas: list
    lams: list

    def predict(self, batch: PathBatch, i: int) -> np.ndarray:
        return self.features(batch, i) @ self.betas[i]


# -- nested Monte Carlo --------------------------------------------------------

def _prefix_arrays(prefix: DiscretePath, i: int, grid: TimeGrid):
    if i < 0 or i > grid.n:
        raise PathError(f"time index {i} outside 0..{grid.n}")
    if prefix.grid is None:
        if i != 0:
            raise PathError("a pure-history prefix only fits time index 0")
        hist = HistoryStats.of(prefix)
        return hist, hist.current[None, :]
    nodes = prefix.grid.nodes
    if nodes.size != i + 1 or not np.allclose(nodes, grid.nodes[: i + 1], rtol=0, atol=1e-12):
        raise PathError("prefix grid must equal the first i + 1 grid nodes")
    hist = HistoryStats.of(prefix.history_part())
    return hist, np.asarray(prefix.values)


def inner_batch(cs: CoefficientSet, hist: HistoryStats, grid: TimeGrid, i: int,
                prefix_X: np.ndarray, parent_ids: np.ndarray, n_inner: int,
                stop: int | None = None) -> PathBatch:
    """Continue ``B`` prefixes with ``n_inner`` fresh suffixes each.

    ``prefix_X`` has shape ``(i + 1, B, d)``; sample ``b * n_inner + k`` of
    the result continues prefix ``b`` with the suffix stream
    ``suffix_key(parent_b, i, k)``, up to node ``stop`` (default ``n``).
    """
    B = prefix_X.shape[1]
    stop = grid.n if stop is None else stop
    ids = suffix_ids(parent_ids, i, np.arange(n_inner)).reshape(B * n_inner)
    z = batch_increments(ids, TimeGrid(grid.nodes[: stop + 1]), cs.ell, start=i)
    pre = np.repeat(prefix_X, n_inner, axis=1)
    return run_euler(cs, hist, grid, z, start=i, prefix=pre, stop=stop, ids=ids)


def _evaluate(xi, batch, key):
    vals = np.asarray(xi(batch), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError(f"non-finite path functional value (sample key {key})")
    return vals


def nested_estimate(xi: PathFunctional, cs: CoefficientSet, prefix: DiscretePath,
                    i: int, grid: TimeGrid, n_inner: int, key: SampleKey):
    """Mean and standard error of ``xi`` over ``n_inner`` fresh suffixes after ``t_i``."""
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    hist, pre = _prefix_arrays(prefix, i, grid)
    batch = inner_batch(cs, hist, grid, i, pre[:, None, :],
                        np.array([key.stream_id]), n_inner)
    vals = _evaluate(xi, batch, key)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_inner))


def weighted_nested_estimate(xi: PathFunctional, cs: CoefficientSet,
                             prefix: DiscretePath, i: int, grid: TimeGrid,
                             n_inner: int, key: SampleKey):
    """``E[(dW_i / h_i) xi | prefix]`` per Brownian coordinate, with standard errors."""
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    if i >= grid.n:
        raise PathError("the weight needs a following grid step (i < n)")
    hist, pre = _prefix_arrays(prefix, i, grid)
    batch = inner_batch(cs, hist, grid, i, pre[:, None, :],
                        np.array([key.stream_id]), n_inner)
    vals = _evaluate(xi, batch, key)
    w = batch.dW[0] / grid.steps[i]
    samples = w * vals[:, None]
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / np.sqrt(n_inner)


def regression_estimate(xi: PathFunctional, cs: CoefficientSet, history,
                        grid: TimeGrid, i: int, N: int, key: SampleKey,
                        features: FeatureMap = FeatureMap(), lam: float = 0.0):
    """Fit ``E[xi | F_{t_i}]`` by regression over ``N`` outer paths.

    Returns the fitted coefficients and a predictor for new prefix batches.
    """
    from .euler import simulate_batch

    batch = simulate_batch(cs, history, grid, key, N)
    beta, lam_used = fit_regression(features(batch, i), _evaluate(xi, batch, key), lam)

    def predict(other: PathBatch) -> np.ndarray:
        return features(other, i) @ beta

    return beta, lam_used, predict


def prefix_batch(paths: Sequence[DiscretePath], grid: TimeGrid, i: int,
                 cs: CoefficientSet) -> PathBatch:
    """Stack prefixes (same history) into a batch whose nodes ``0..i`` are set."""
    hist = None
    arrs = []
    for p in paths:
        h, pre = _prefix_arrays(p, i, grid)
        hist = hist or h
        arrs.append(pre)
    X = np.stack(arrs, axis=1)
    dW = np.zeros((grid.n - i, X.shape[1], cs.ell))
    return run_euler(cs, hist, grid, dW, start=i, prefix=X)
