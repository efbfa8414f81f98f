"""Picard-type iteration for path-dependent BSDEs and the implicit reference scheme.

Iterate ``m + 1`` is built from iterate ``m`` by

    Y^{m+1}(t_i) = E[ g(X) + sum_{j >= i} f(t_j, X, Y^m_j, Z^m_j) h_j | F_{t_i} ]
    Z^{m+1}(t_i) = E[ (dW_i / h_i) * (same) | F_{t_i} ]

starting from ``Y^0 = Z^0 = 0``.  The conditional expectations are realised
either by least-squares regression on path features (one streamed pass over
``N`` outer Euler paths per iteration) or by nested Monte Carlo (an exact
oracle, only practical for tiny grids).

The implicit scheme solves backwards

    Z(t_i) = E[(dW_i / h_i) Y(t_{i+1}) | F_{t_i}]
    Y(t_i) = E[Y(t_{i+1}) | F_{t_i}] + f(t_i, X, Y(t_i), Z(t_i)) h_i

with a fixed-point iteration for ``Y(t_i)``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .coefficients import CoefficientSet
from .condexp import FeatureMap, RegressionError, fit_moments, inner_batch
from .euler import HistoryStats, NonFiniteError, PathBatch, run_euler, simulate_batch
from .pathcore import DiscretePath, TimeGrid
from .sampling import SampleKey, batch_increments

log = logging.getLogger(__name__)

ESTIMATORS = ("regression", "nested")
# oracle-mode limits; the cost of nested evaluation grows like n_inner**m
NESTED_MAX_M = 3
NESTED_MAX_N = 16
NESTED_MAX_INNER = 256
# most simulated path-steps a nested evaluation may request
NESTED_BUDGET = 5e8
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 100


class ImplicitSolveError(ArithmeticError):
    """The implicit equation for ``Y(t_i)`` did not converge."""

    def __init__(self, index: int, residual: float):
        super().__init__(f"fixed-point iteration for Y at time index {index} did not "
                         f"converge (residual {residual:.3e})")
        self.index = index
        self.residual = residual


class SchemeError(RuntimeError):
    """An estimator failed; ``index`` is the time index involved (if known)."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message if index is None else f"time index {index}: {message}")
        self.index = index


@dataclass(frozen=True)
class SchemeConfig:
    """Discretisation and estimator settings.

    ``chunk`` is the number of outer paths simulated at once; t0 statistics
    are reduced chunk by chunk, so results are bit-reproducible for a fixed
    chunk size.  ``cache_bytes`` bounds the memory used to keep outer paths
    between passes (beyond it paths are regenerated from their keys).
    """

    grid: TimeGrid
    m: int = 4
    N: int = 10_000
    estimator: str = "regression"
    features: FeatureMap = FeatureMap()
    ridge: float = 0.0
    n_inner: int = 64
    seed: int = 0
    reuse_paths: bool = True
    chunk: int = 16_384
    cache_bytes: float = 1.5e9
    problem: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be >= 0")
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.n_inner < 2:
            raise ValueError("n_inner must be >= 2")
        if self.chunk < 1:
            raise ValueError("chunk must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")

    def check_nested_limits(self):
        if self.m > NESTED_MAX_M or self.grid.n > NESTED_MAX_N \
                or self.n_inner > NESTED_MAX_INNER:
            raise ValueError(
                f"nested mode supports m <= {NESTED_MAX_M}, n <= {NESTED_MAX_N} and "
                f"n_inner <= {NESTED_MAX_INNER} (got m={self.m}, n={self.grid.n}, "
                f"n_inner={self.n_inner})")

    def to_dict(self) -> dict:
        return {
            "problem": self.problem, "params": dict(self.params),
            "n": self.grid.n, "t0": self.grid.start, "T": self.grid.end,
            "mesh": self.grid.mesh(), "m": self.m, "N": self.N,
            "estimator": self.estimator, "features": list(self.features.names),
            "lags": self.features.lags, "ridge": self.ridge, "n_inner": self.n_inner,
            "seed": self.seed, "reuse_paths": self.reuse_paths, "chunk": self.chunk,
        }


# -- statistics --------------------------------------------------------------------

class _Moments:
    """Chunked mean/variance (pairwise combination, fixed order)."""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, samples: np.ndarray):
        k = samples.shape[0]
        if k == 0:
            return
        mu = samples.mean(axis=0)
        m2 = ((samples - mu) ** 2).sum(axis=0)
        tot = self.count + k
        delta = mu - self.mean
        self.mean = self.mean + delta * (k / tot)
        self.m2 = self.m2 + m2 + delta ** 2 * (self.count * k / tot)
        self.count = tot

    @property
    def stderr(self):
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


# -- outer paths -----------------------------------------------------------------------

class OuterPaths:
    """The ``N`` outer Euler paths of a key, produced in chunks.

    Chunks are cached after the first pass when they fit in ``cache_bytes``;
    otherwise each pass regenerates them (counter-based streams make the two
    identical).
    """

    def __init__(self, cs: CoefficientSet, hist: HistoryStats, grid: TimeGrid,
                 key: SampleKey, N: int, chunk: int, cache_bytes: float = 1.5e9):
        self.cs, self.hist, self.grid, self.key = cs, hist, grid, key
        self.N, self.chunk = N, chunk
        per_path = (grid.n + 1) * (4 * cs.d + 1) * 8 + grid.n * cs.ell * 8
        self._cache: Optional[list] = [] if per_path * N <= cache_bytes else None
        self._complete = False

    def __iter__(self) -> Iterator[PathBatch]:
        if self._complete:
            yield from self._cache
            return
        for offset in range(0, self.N, self.chunk):
            batch = simulate_batch(self.cs, self.hist, self.grid, self.key,
                                   min(self.chunk, self.N - offset), offset)
            if self._cache is not None:
                self._cache.append(batch)
            yield batch
        if self._cache is not None:
            self._complete = True


# -- iterates ----------------------------------------------------------------------------

Evaluator = Callable[[PathBatch, int], tuple]


@dataclass
class SchemeIterate:
    """``(Y^m, Z^m)`` at the grid nodes.

    ``kind`` is ``"zero"``, ``"regression"`` (per-node coefficient rows,
    with plain constants at ``t_0``) or ``"nested"`` (a recursive closure).
    Between nodes the iterate is constant: ``s`` in ``[t_i, t_{i+1})`` uses
    node ``i``.  ``Z(t_n)`` is 0 and ``Y(t_n) = g``.
    """

    m: int
    kind: str
    ell: int
    y0: float = 0.0
    z0: np.ndarray = None
    y0_stderr: float = 0.0
    z0_stderr: np.ndarray = None
    features: Optional[FeatureMap] = None
    y_betas: Optional[list] = None
    z_betas: Optional[list] = None
    lams: Optional[list] = None
    nested: Optional[Evaluator] = None
    cs: Optional[CoefficientSet] = None

    def __post_init__(self):
        if self.z0 is None:
            self.z0 = np.zeros(self.ell)
        if self.z0_stderr is None:
            self.z0_stderr = np.zeros(self.ell)

    @classmethod
    def zero(cls, ell: int) -> "SchemeIterate":
        return cls(0, "zero", ell)

    @property
    def has_surfaces(self) -> bool:
        return self.kind != "regression" or self.y_betas is not None

    def evaluate(self, batch: PathBatch, j: int):
        """``(Y^m(t_j), Z^m(t_j))`` on every path of ``batch``: shapes ``(N,)``, ``(N, ell)``."""
        N, n = batch.n_samples, batch.grid.n
        if self.kind == "zero":
            return np.zeros(N), np.zeros((N, self.ell))
        if j >= n:
            return self.cs.terminal(batch.terminal_view()), np.zeros((N, self.ell))
        if self.kind == "nested":
            return self.nested(batch, j)
        if j == 0:
            return np.full(N, self.y0), np.broadcast_to(self.z0, (N, self.ell)).copy()
        if self.y_betas is None:
            raise SchemeError("iterate was built without regression surfaces", j)
        F = self.features(batch, j)
        return F @ self.y_betas[j], F @ self.z_betas[j]

    def evaluate_at(self, path: DiscretePath, j: int, grid: TimeGrid):
        """Single-prefix evaluation; ``path`` must carry nodes ``0..j`` of ``grid``."""
        from .condexp import prefix_batch
        batch = prefix_batch([path], grid, j, self.cs)
        if self.kind == "nested":
            raise SchemeError("nested iterates need stream ids; use evaluate()", j)
        y, z = self.evaluate(batch, j)
        return float(y[0]), z[0]


def _driver_targets(it: SchemeIterate, cs: CoefficientSet, batch: PathBatch,
                    start: int = 0, first=None) -> np.ndarray:
    """``xi_i = g + sum_{j >= i} f(t_j, X, Y_j, Z_j) h_j`` for ``i = start..n-1``.

    Returns shape ``(n - start, N)``.  ``first`` optionally supplies the
    iterate's values at ``t_start`` (shared by all paths of a nested block).
    """
    grid = batch.grid
    n, h, nodes = grid.n, grid.steps, grid.nodes
    g = cs.terminal(batch.terminal_view())
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite terminal functional g")
    if cs.driver_free:
        return np.broadcast_to(g, (n - start, g.size))
    D = np.empty((n - start, batch.n_samples))
    for j in range(start, n):
        if j == start and first is not None:
            y, z = first
        else:
            y, z = it.evaluate(batch, j)
        D[j - start] = cs.driver(nodes[j], batch.view(j), y, z) * h[j]
    if not np.all(np.isfinite(D)):
        bad = int(np.argmax(~np.all(np.isfinite(D), axis=1))) + start
        raise NonFiniteError(f"non-finite driver f output at time index {bad}")
    return g + np.cumsum(D[::-1], axis=0)[::-1]


def _path_key(config: SchemeConfig, iteration: int) -> SampleKey:
    key = SampleKey(config.seed)
    return key if config.reuse_paths else key.child(iteration)


def picard_step(prev: SchemeIterate, cs: CoefficientSet, history, grid: TimeGrid,
                config: SchemeConfig, paths: Optional[OuterPaths] = None,
                surfaces: bool = True) -> SchemeIterate:
    """One Picard update ``(Y^m, Z^m) -> (Y^{m+1}, Z^{m+1})``.

    In regression mode the ``N`` outer paths of ``paths`` (by default those
    of ``config.seed``) are swept once: targets are built from ``prev``'s
    predictions on the same paths and regressed on features at every node
    ``1..n-1``; node 0 gets plain Monte Carlo means.  ``surfaces=False``
    skips the regressions when only the ``t_0`` values are needed.
    """
    hist = history if isinstance(history, HistoryStats) else HistoryStats.of(history)
    if config.estimator == "nested":
        return _nested_step(prev, cs, hist, grid, config)
    if paths is None:
        paths = OuterPaths(cs, hist, grid, _path_key(config, prev.m + 1), config.N,
                           config.chunk, config.cache_bytes)
    n, ell, h = grid.n, cs.ell, grid.steps
    feats = config.features
    p = feats.size(cs.d)
    if surfaces and n > 1:
        gram = np.zeros((n, p, p))
        rhs_y = np.zeros((n, p))
        rhs_z = np.zeros((n, p, ell))
    y_mom, z_mom = _Moments(), _Moments((ell,))
    for batch in paths:
        xi = _driver_targets(prev, cs, batch)
        y_mom.add(xi[0])
        z_mom.add(batch.dW[0] / h[0] * xi[0][:, None])
        if surfaces:
            for i in range(1, n):
                F = feats(batch, i)
                gram[i] += F.T @ F
                rhs_y[i] += F.T @ xi[i]
                rhs_z[i] += F.T @ (batch.dW[i] / h[i] * xi[i][:, None])
    it = SchemeIterate(prev.m + 1, "regression", ell, float(y_mom.mean), z_mom.mean,
                       float(y_mom.stderr), z_mom.stderr, feats, cs=cs)
    if surfaces:
        it.y_betas, it.z_betas, it.lams = [None], [None], [None]
        for i in range(1, n):
            try:
                by, ly = fit_moments(gram[i], rhs_y[i], config.N, config.ridge)
                bz, lz = fit_moments(gram[i], rhs_z[i], config.N, config.ridge)
            except RegressionError as exc:
                raise SchemeError(f"regression failed: {exc}", i) from exc
            it.y_betas.append(by)
            it.z_betas.append(bz)
            it.lams.append(max(ly, lz))
    return it


# -- nested mode -----------------------------------------------------------------------

def _nested_cap(n_inner: int) -> int:
    # parents per block so that one inner batch stays around 2**16 paths
    return max(1, 65_536 // n_inner)


def _nested_evaluator(level: int, cs: CoefficientSet, hist: HistoryStats,
                      grid: TimeGrid, n_inner: int) -> Evaluator:
    """Evaluator of the nested iterate ``level`` at ``(t_j, prefix of each path)``.

    The paths of the batch must carry stream ids; inner suffixes at node
    ``j`` of the path with id ``q`` use ``suffix_key(q, j, k)``.
    """
    h = grid.steps
    prev = (SchemeIterate.zero(cs.ell) if level == 1 else
            SchemeIterate(level - 1, "nested", cs.ell, cs=cs,
                          nested=_nested_evaluator(level - 1, cs, hist, grid, n_inner)))

    def evaluate(batch: PathBatch, j: int):
        if batch.ids is None:
            raise SchemeError("nested evaluation needs stream ids on the batch", j)
        B = batch.n_samples
        y_out, z_out = np.empty(B), np.empty((B, cs.ell))
        # values of the previous level at t_j only depend on the prefix
        first_all = prev.nested(batch, j) if prev.kind == "nested" else None
        cap = _nested_cap(n_inner)
        for lo in range(0, B, cap):
            blk = slice(lo, min(B, lo + cap))
            inner = inner_batch(cs, hist, grid, j, batch.X[: j + 1, blk],
                                batch.ids[blk], n_inner)
            first = None
            if first_all is not None:
                first = (np.repeat(first_all[0][blk], n_inner),
                         np.repeat(first_all[1][blk], n_inner, axis=0))
            xi = _driver_targets(prev, cs, inner, start=j, first=first)[0]
            nb = xi.size // n_inner
            y_out[blk] = xi.reshape(nb, n_inner).mean(axis=1)
            w = inner.dW[0] / h[j] * xi[:, None]
            z_out[blk] = w.reshape(nb, n_inner, cs.ell).mean(axis=1)
        return y_out, z_out

    return evaluate


def _nested_step(prev: SchemeIterate, cs, hist, grid, config) -> SchemeIterate:
    config.check_nested_limits()
    level = prev.m + 1
    ev = _nested_evaluator(level, cs, hist, grid, config.n_inner)
    it = SchemeIterate(level, "nested", cs.ell, cs=cs, nested=ev)
    # t_0 value: plain Monte Carlo over the N outer paths
    paths = OuterPaths(cs, hist, grid, _path_key(config, level), config.N,
                       config.chunk, 0)
    y_mom, z_mom = _Moments(), _Moments((cs.ell,))
    first0 = None
    for batch in paths:
        if first0 is None and prev.kind == "nested":
            y, z = prev.nested(batch.select(slice(0, 1)), 0)
            first0 = (float(y[0]), z[0])
        first = None
        if first0 is not None:
            N = batch.n_samples
            first = (np.full(N, first0[0]), np.broadcast_to(first0[1], (N, cs.ell)))
        xi = _driver_targets(prev, cs, batch, first=first)[0]
        y_mom.add(xi)
        z_mom.add(batch.dW[0] / grid.steps[0] * xi[:, None])
    it.y0, it.z0 = float(y_mom.mean), z_mom.mean
    it.y0_stderr, it.z0_stderr = float(y_mom.stderr), z_mom.stderr
    return it


def _nested_cost(config: SchemeConfig) -> float:
    # path-steps: each level multiplies by n_inner suffixes at up to n nodes
    n, k, m = config.grid.n, config.n_inner, config.m
    if m == 0:
        return 0.0
    return float(config.N) * n * float(k * n) ** (m - 1) * n


# -- drivers ---------------------------------------------------------------------------

@dataclass
class SolveResult:
    y0: float
    y0_stderr: float
    z0: np.ndarray
    z0_stderr: np.ndarray
    trace: list
    wall_ms: float
    config: dict
    nodes: Optional[list] = None
    iterate: Optional[SchemeIterate] = None

    def to_json(self) -> dict:
        out = {
            "Y0": self.y0, "Y0_stderr": self.y0_stderr,
            "Z0": [float(v) for v in self.z0],
            "Z0_stderr": [float(v) for v in self.z0_stderr],
            "trace": [{"m": k, "Y0": y, "Z0": [float(v) for v in z]}
                      for k, (y, z) in enumerate(self.trace)],
            "wall_ms": self.wall_ms, "config": self.config,
        }
        if self.nodes is not None:
            out["nodes"] = self.nodes
        return out


def _check_grid(hist: HistoryStats, grid: TimeGrid, cs: CoefficientSet):
    if abs(grid.end - cs.T) > 1e-12 * max(1.0, cs.T):
        raise ValueError(f"grid ends at {grid.end} but the problem horizon is {cs.T}")


def solve_picard(cs: CoefficientSet, history, grid: TimeGrid,
                 config: SchemeConfig) -> SolveResult:
    """Apply ``m`` Picard steps from zero and report ``(Y^m, Z^m)`` at ``t_0``.

    The trace holds the ``t_0`` values of every iterate ``0..m``.  Outer
    paths are shared by all iterations unless ``config.reuse_paths`` is off.
    """
    t_start = time.perf_counter()
    hist = history if isinstance(history, HistoryStats) else HistoryStats.of(history)
    _check_grid(hist, grid, cs)
    if config.estimator == "nested":
        config.check_nested_limits()
        if _nested_cost(config) > NESTED_BUDGET:
            raise ValueError("nested evaluation too expensive for this configuration; "
                             "reduce N, n_inner, n or m")
    it = SchemeIterate.zero(cs.ell)
    trace = [(0.0, np.zeros(cs.ell))]
    shared = None
    if config.estimator == "regression" and config.reuse_paths:
        shared = OuterPaths(cs, hist, grid, SampleKey(config.seed), config.N,
                            config.chunk, config.cache_bytes if config.m > 1 else 0)
    for k in range(1, config.m + 1):
        it = picard_step(it, cs, hist, grid, config, paths=shared,
                         surfaces=k < config.m)
        trace.append((it.y0, np.array(it.z0, dtype=float)))
        log.debug("picard iterate %d: Y0=%.10g", k, it.y0)
    wall = (time.perf_counter() - t_start) * 1e3
    return SolveResult(it.y0, it.y0_stderr, np.array(it.z0, dtype=float),
                       np.array(it.z0_stderr, dtype=float), trace, wall,
                       config.to_dict(), iterate=it)


def _fixed_point(c, z, t, view, cs, h, index):
    y = np.array(c, dtype=float)
    for _ in range(FIXED_POINT_MAX_ITER):
        y_new = c + cs.driver(t, view, y, z) * h
        if not np.all(np.isfinite(y_new)):
            raise NonFiniteError(f"non-finite driver f output at time index {index}")
        res = float(np.max(np.abs(y_new - y))) if y.size else 0.0
        y = y_new
        if res <= FIXED_POINT_TOL * max(1.0, float(np.max(np.abs(y)))):
            return y
    raise ImplicitSolveError(index, res)


def solve_implicit(cs: CoefficientSet, history, grid: TimeGrid,
                   config: SchemeConfig) -> SolveResult:
    """Backward implicit scheme ``(Y^inf, Z^inf)`` with the configured estimator.

    ``nodes`` in the result lists, per time index, Monte Carlo means and
    standard errors of the weighted targets ``(dW_i / h_i) Y(t_{i+1})``
    (estimates of ``E[Z(t_i)]``) and of ``Y(t_i)``.
    """
    t_start = time.perf_counter()
    hist = history if isinstance(history, HistoryStats) else HistoryStats.of(history)
    _check_grid(hist, grid, cs)
    if not cs.K * grid.mesh() < 1:
        raise ValueError(f"implicit scheme needs K*|pi| < 1 (K={cs.K}, |pi|={grid.mesh()})")
    if config.estimator == "nested":
        res = _implicit_nested(cs, hist, grid, config)
    else:
        res = _implicit_regression(cs, hist, grid, config)
    y0, y0_se, z0, z0_se, nodes = res
    wall = (time.perf_counter() - t_start) * 1e3
    cfg = config.to_dict()
    cfg["implicit"] = True
    return SolveResult(y0, y0_se, z0, z0_se, [(y0, z0)], wall, cfg, nodes=nodes)


def _implicit_regression(cs, hist, grid, config):
    n, ell, h, nodes = grid.n, cs.ell, grid.steps, grid.nodes
    feats = config.features
    p = feats.size(cs.d)
    paths = OuterPaths(cs, hist, grid, SampleKey(config.seed), config.N, config.chunk,
                       config.cache_bytes)
    # Y(t_{i+1}) on every path, chunk by chunk
    y_next = [cs.terminal(b.terminal_view()).copy() for b in paths]
    if not all(np.all(np.isfinite(y)) for y in y_next):
        raise NonFiniteError("non-finite terminal functional g")
    # pathwise g + sum_{j >= 1} f_j h_j: its spread is the Monte Carlo error of Y(t_0)
    # (the regressed Y(t_1) values are much smoother than the estimator itself)
    pathwise = [y.copy() for y in y_next]
    node_stats = [None] * n
    for i in range(n - 1, -1, -1):
        z_mom, y_mom = _Moments((ell,)), _Moments()
        if i > 0:
            gram = np.zeros((p, p))
            rhs_y = np.zeros(p)
            rhs_z = np.zeros((p, ell))
        for batch, yn in zip(paths, y_next):
            w = batch.dW[i] / h[i] * yn[:, None]
            z_mom.add(w)
            y_mom.add(yn)
            if i > 0:
                F = feats(batch, i)
                gram += F.T @ F
                rhs_y += F.T @ yn
                rhs_z += F.T @ w
        if i == 0:
            c0, z0 = float(y_mom.mean), z_mom.mean
            batch0 = next(iter(paths)).select(slice(0, 1))
            y0 = float(_fixed_point(np.array([c0]), z0[None, :], nodes[0], batch0.view(0),
                                    cs, h[0], 0)[0])
            node_stats[0] = {"i": 0, "y_mean": y0, "z_mean": z0.tolist(),
                             "z_se": z_mom.stderr.tolist()}
            xi_mom = _Moments()
            for xi in pathwise:
                xi_mom.add(xi)
            return y0, float(xi_mom.stderr), z0, z_mom.stderr, node_stats
        try:
            by, _ = fit_moments(gram, rhs_y, config.N, config.ridge)
            bz, _ = fit_moments(gram, rhs_z, config.N, config.ridge)
        except RegressionError as exc:
            raise SchemeError(f"regression failed: {exc}", i) from exc
        y_mean = _Moments()
        for k, batch in enumerate(paths):
            F = feats(batch, i)
            zi = F @ bz
            view = batch.view(i)
            y = _fixed_point(F @ by, zi, nodes[i], view, cs, h[i], i)
            y_next[k] = y
            if not cs.driver_free:
                pathwise[k] += cs.driver(nodes[i], view, y, zi) * h[i]
            y_mean.add(y)
        node_stats[i] = {"i": i, "y_mean": float(y_mean.mean),
                         "z_mean": z_mom.mean.tolist(), "z_se": z_mom.stderr.tolist()}
    raise AssertionError("unreachable")


def _implicit_nested(cs, hist, grid, config):
    n, ell, h, nodes = grid.n, cs.ell, grid.steps, grid.nodes
    k = config.n_inner
    cost = config.N * float(k) ** (n - 1) * n
    if cost > NESTED_BUDGET / 10:
        raise ValueError("nested implicit scheme costs N * n_inner**(n-1) paths; "
                         "reduce n, n_inner or N")

    def values(batch: PathBatch, i: int) -> np.ndarray:
        # Y(t_i) on each path of batch (nodes 0..i valid)
        if i == n:
            return cs.terminal(batch.view(n))
        B = batch.n_samples
        c, z = np.empty(B), np.empty((B, ell))
        cap = _nested_cap(k)
        for lo in range(0, B, cap):
            blk = slice(lo, min(B, lo + cap))
            inner = inner_batch(cs, hist, grid, i, batch.X[: i + 1, blk], batch.ids[blk],
                                k, stop=i + 1)
            yn = values(inner, i + 1)
            nb = yn.size // k
            c[blk] = yn.reshape(nb, k).mean(axis=1)
            z[blk] = (inner.dW[0] / h[i] * yn[:, None]).reshape(nb, k, ell).mean(axis=1)
        return _fixed_point(c, z, nodes[i], batch.view(i), cs, h[i], i)

    ids = SampleKey(config.seed).batch_ids(config.N)
    dW = batch_increments(ids, TimeGrid(nodes[:2]), ell)
    batch = run_euler(cs, hist, grid, dW, stop=1, ids=ids)
    yn = values(batch, 1)
    w = batch.dW[0] / h[0] * yn[:, None]
    y_mom, z_mom = _Moments(), _Moments((ell,))
    y_mom.add(yn)
    z_mom.add(w)
    first = batch.select(slice(0, 1))
    y0 = float(_fixed_point(np.array([float(y_mom.mean)]), z_mom.mean[None, :], nodes[0],
                            first.view(0), cs, h[0], 0)[0])
    stats = [{"i": 0, "y_mean": y0, "z_mean": z_mom.mean.tolist(),
              "z_se": z_mom.stderr.tolist()}]
    return y0, float(y_mom.stderr), z_mom.mean, z_mom.stderr, stats


@dataclass(frozen=True)
class PPDEValue:
    """``u(t, gamma)`` with its Monte Carlo standard error."""

    t: float
    value: float
    stderr: float
    result: SolveResult


def evaluate_ppde(cs: CoefficientSet, history: DiscretePath, grid: TimeGrid,
                  config: SchemeConfig) -> PPDEValue:
    """Solution of the path-dependent PDE at ``(t, gamma)``, ``t`` = end of ``history``.

    Computed as ``Y^m(t_0)`` of :func:`solve_picard` on a grid starting at ``t``.
    """
    if abs(history.T - grid.start) > 1e-12 * max(1.0, abs(grid.start)):
        raise ValueError("the grid must start where the history ends")
    res = solve_picard(cs, history, grid, config)
    return PPDEValue(grid.start, res.y0, res.y0_stderr, res)
