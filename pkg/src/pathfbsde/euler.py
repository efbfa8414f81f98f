"""Euler scheme for path-dependent SDEs on step paths.

The scheme keeps ``X`` constant on ``[t_i, t_{i+1})`` and updates

    X(t_{i+1}) = X(t_i) + b(t_i, X_{. ^ t_i}) h_i + sigma(t_i, X_{. ^ t_i}) dW_i

with the coefficients evaluated on the stopped path *including* the
history ``gamma`` on ``[0, t_0]``.  Simulation is vectorised over samples;
node values are stored time-major, ``X[i]`` has shape ``(N, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import CoefficientSet
from .pathcore import DiscretePath, PathView, TimeGrid, step_stats
from .sampling import SampleKey, batch_increments, sample_increments


class NonFiniteError(FloatingPointError):
    """A coefficient or functional returned NaN/inf."""


@dataclass(frozen=True)
class HistoryStats:
    """Running statistics of the history ``gamma`` on ``[0, t]``."""

    times: np.ndarray
    values: np.ndarray
    t: float
    max: np.ndarray
    min: np.ndarray
    abs_max: float
    integral: np.ndarray

    @classmethod
    def of(cls, history: DiscretePath, t: Optional[float] = None) -> "HistoryStats":
        t = history.T if t is None else t
        view = history.stopped(t)
        times, values = view.breakpoints()
        mx, mn, ab, integral = step_stats(times, values, t)
        return cls(times, values, t, mx, mn, ab, integral)

    @property
    def current(self) -> np.ndarray:
        return self.values[-1]


class PathBatch:
    """``N`` Euler paths sharing a history, with running statistics per node.

    Arrays are indexed ``[node, sample, coordinate]``.  ``view(i)`` gives the
    :class:`PathView` of all samples stopped at ``t_i``.
    """

    def __init__(self, grid: TimeGrid, hist: HistoryStats, X, run_max, run_min,
                 run_mean, run_abs, dW=None, ids=None):
        self.grid = grid
        self.ids = ids
        self.hist = hist
        self.X = X
        self.run_max = run_max
        self.run_min = run_min
        self.run_mean = run_mean
        self.run_abs = run_abs
        self.dW = dW

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    def view(self, i: int) -> PathView:
        grid, hist = self.grid, self.hist
        keep = hist.times < grid.start
        times = np.concatenate([hist.times[keep], grid.nodes[: i + 1]])

        def values():
            n = self.n_samples
            head = np.broadcast_to(hist.values[keep][:, None, :],
                                   (int(keep.sum()), n, self.d))
            return np.concatenate([head, self.X[: i + 1]], axis=0)

        return PathView(grid.nodes[i], self.X[i], self.run_max[i], self.run_min[i],
                        self.run_mean[i], self.run_abs[i], times, values)

    def terminal_view(self) -> PathView:
        return self.view(self.grid.n)

    def path(self, j: int) -> DiscretePath:
        """Sample ``j`` as a :class:`DiscretePath` (history plus grid values)."""
        return DiscretePath(self.hist.times, self.hist.values, self.grid,
                            self.X[:, j, :])

    def select(self, idx) -> "PathBatch":
        """Sub-batch of the samples ``idx`` (a slice gives views, not copies)."""
        dW = None if self.dW is None else self.dW[:, idx]
        ids = None if self.ids is None else self.ids[idx]
        return PathBatch(self.grid, self.hist, self.X[:, idx], self.run_max[:, idx],
                         self.run_min[:, idx], self.run_mean[:, idx],
                         self.run_abs[:, idx], dW, ids)


def _check_finite(arr, what, i):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite {what} output at time index {i}")


def run_euler(cs: CoefficientSet, history, grid: TimeGrid, dW: np.ndarray,
              start: int = 0, prefix: Optional[np.ndarray] = None,
              stop: Optional[int] = None, ids=None) -> PathBatch:
    """Run the Euler recursion for a batch of increments.

    Parameters
    ----------
    history : DiscretePath or HistoryStats
        The path ``gamma`` on ``[0, t_0]``.
    dW : ndarray, shape (stop - start, N, ell)
        Increments for steps ``start, ..., stop - 1``.
    start, prefix
        Continue from node ``start`` with node values ``prefix`` of shape
        ``(start + 1, N, d)`` or ``(start + 1, d)`` (shared prefix).
    stop : int, optional
        Last node to simulate (default ``n``); later nodes are left as NaN.
    ids : ndarray, optional
        Stream ids of the samples, carried along for nested estimators.
    """
    hist = history if isinstance(history, HistoryStats) else HistoryStats.of(history)
    if abs(hist.t - grid.start) > 1e-12 * max(1.0, abs(grid.start)):
        raise ValueError(f"history ends at {hist.t} but the grid starts at {grid.start}")
    n, d = grid.n, cs.d
    stop = n if stop is None else stop
    if dW.ndim != 3 or dW.shape[0] != stop - start or dW.shape[2] != cs.ell:
        raise ValueError(f"increments must have shape ({stop - start}, N, {cs.ell})")
    N = dW.shape[1]
    nodes, h = grid.nodes, grid.steps

    X = np.empty((n + 1, N, d)) if stop == n else np.full((n + 1, N, d), np.nan)
    if start == 0:
        X[0] = hist.current
    else:
        pre = np.asarray(prefix, dtype=float)
        if pre.ndim == 2:
            pre = pre[:, None, :]
        X[: start + 1] = pre
    run_max = np.empty_like(X)
    run_min = np.empty_like(X)
    run_mean = np.empty_like(X)
    run_abs = np.empty((n + 1, N))

    # statistics of the prefix nodes 0..start
    run_max[0] = np.maximum(hist.max, X[0])
    run_min[0] = np.minimum(hist.min, X[0])
    run_abs[0] = np.maximum(hist.abs_max, np.linalg.norm(X[0], axis=-1))
    integral = np.broadcast_to(hist.integral, (N, d)).copy()
    run_mean[0] = integral / nodes[0] if nodes[0] > 0 else X[0]
    for i in range(start):
        integral += X[i] * h[i]
        _update_stats(X, run_max, run_min, run_mean, run_abs, integral, nodes, i + 1)

    batch = PathBatch(grid, hist, X, run_max, run_min, run_mean, run_abs, dW, ids)
    scalar = d == 1 and cs.ell == 1
    for i in range(start, stop):
        view = batch.view(i)
        drift = cs.drift(nodes[i], view)
        vol = cs.diffusion(nodes[i], view)
        _check_finite(drift, "drift b", i)
        _check_finite(vol, "diffusion sigma", i)
        if scalar:
            noise = vol[:, :, 0] * dW[i - start]
        else:
            noise = np.einsum("nkl,nl->nk", vol, dW[i - start])
        X[i + 1] = X[i] + drift * h[i] + noise
        integral += X[i] * h[i]
        _update_stats(X, run_max, run_min, run_mean, run_abs, integral, nodes, i + 1)
    return batch


def _update_stats(X, run_max, run_min, run_mean, run_abs, integral, nodes, k):
    np.maximum(run_max[k - 1], X[k], out=run_max[k])
    np.minimum(run_min[k - 1], X[k], out=run_min[k])
    np.maximum(run_abs[k - 1], np.linalg.norm(X[k], axis=-1), out=run_abs[k])
    np.divide(integral, nodes[k], out=run_mean[k])


@dataclass(frozen=True)
class EulerTrajectory:
    path: DiscretePath
    grid: TimeGrid
    key: SampleKey
    dW: np.ndarray


def simulate(cs: CoefficientSet, history: DiscretePath, grid: TimeGrid,
             key: SampleKey) -> EulerTrajectory:
    """One Euler trajectory driven by the increments of ``key``."""
    inc = sample_increments(key, grid, cs.ell).dW
    batch = run_euler(cs, history, grid, inc[:, None, :])
    return EulerTrajectory(batch.path(0), grid, key, inc)


def simulate_batch(cs: CoefficientSet, history, grid: TimeGrid, key: SampleKey,
                   count: int, offset: int = 0, antithetic: bool = False) -> PathBatch:
    """Paths ``offset .. offset + count - 1`` of the outer stream family of ``key``.

    Sample ``j`` is driven by ``key.child(j)``; the result for a given
    sample does not depend on how the range is chunked.  With
    ``antithetic`` the batch holds ``2 * count`` paths, the second half
    driven by the negated increments of the first.
    """
    ids = key.batch_ids(count, offset)
    dW = batch_increments(ids, grid, cs.ell, antithetic=antithetic)
    if antithetic:
        ids = np.concatenate([ids, ids])
    return run_euler(cs, history, grid, dW, ids=ids)


def strong_error(cs: CoefficientSet, history, coarse: TimeGrid, fine: TimeGrid,
                 N: int, seed: int, chunk: int = 4096) -> float:
    """MC estimate of ``max_i E|X_fine(t_i) - X_coarse(t_i)|^2`` over coarse nodes.

    Both schemes are driven by the same Brownian path: coarse increments are
    sums of the fine ones.
    """
    return strong_errors(cs, history, [coarse], fine, N, seed, chunk)[0]


def strong_errors(cs: CoefficientSet, history, coarse: list, fine: TimeGrid,
                  N: int, seed: int, chunk: int = 4096) -> list:
    """:func:`strong_error` for several coarse grids against one fine simulation."""
    if N < 100:
        raise ValueError("N must be >= 100")
    positions = [fine.refinement_factor(c) for c in coarse]
    hist = HistoryStats.of(history) if isinstance(history, DiscretePath) else history
    key = SampleKey(seed)
    totals = [np.zeros(c.n + 1) for c in coarse]
    for offset in range(0, N, chunk):
        count = min(chunk, N - offset)
        dW = batch_increments(key.batch_ids(count, offset), fine, cs.ell)
        Xf = run_euler(cs, hist, fine, dW).X
        for c, pos, total in zip(coarse, positions, totals):
            dWc = np.add.reduceat(dW, pos[:-1], axis=0)
            Xc = run_euler(cs, hist, c, dWc).X
            total += np.sum(np.sum((Xf[pos] - Xc) ** 2, axis=-1), axis=1)
    return [float(np.max(total / N)) for total in totals]


def moment_ratio(cs: CoefficientSet, history: DiscretePath, grid: TimeGrid,
                 N: int, seed: int) -> float:
    """``E[max_i |X(t_i)|^2] / (1 + ||gamma||^2)``, the scheme-level moment ratio."""
    batch = simulate_batch(cs, history, grid, SampleKey(seed), N)
    sup2 = np.max(np.sum(batch.X ** 2, axis=-1), axis=0)
    return float(np.mean(sup2) / (1.0 + history.sup_norm() ** 2))
