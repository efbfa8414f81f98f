"""Stopped cadlag step paths, time grids and the concatenation operator.

Every path in this package is piecewise constant and right-continuous.  A
:class:`DiscretePath` is made of a *history* segment on ``[0, t]`` (a list
of breakpoints) followed by values at the nodes of a :class:`TimeGrid`
``t = t_0 < ... < t_n = T``.  Evaluating past the last breakpoint returns
the terminal value, so every path is also a stopped path.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class PathError(ValueError):
    """Raised for malformed paths, grids or incompatible operands."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing partition ``t_0 < t_1 < ... < t_n``."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        if nodes.size < 2:
            raise PathError("a time grid needs at least two nodes (n >= 1)")
        if not np.all(np.isfinite(nodes)):
            raise PathError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            raise PathError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, start: float, end: float, n: int) -> "TimeGrid":
        if n < 1:
            raise PathError("n must be >= 1")
        return cls(np.linspace(start, end, n + 1))

    @property
    def n(self) -> int:
        return self.nodes.size - 1

    @property
    def start(self) -> float:
        return float(self.nodes[0])

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        """Step sizes ``h_i = t_{i+1} - t_i``."""
        return np.diff(self.nodes)

    def mesh(self) -> float:
        return float(np.max(self.steps))

    def index_of(self, s: float) -> int:
        """Index ``i`` with ``t_i <= s < t_{i+1}`` (clamped to ``[0, n]``)."""
        i = int(np.searchsorted(self.nodes, s, side="right")) - 1
        return min(max(i, 0), self.n)

    def refinement_factor(self, coarse: "TimeGrid") -> np.ndarray:
        """Positions of ``coarse`` nodes inside this grid.

        Raises :class:`PathError` unless every coarse node is a node of
        ``self``.
        """
        pos = np.searchsorted(self.nodes, coarse.nodes)
        pos = np.clip(pos, 0, self.n)
        tol = 1e-12 * max(1.0, abs(self.end))
        if not np.all(np.abs(self.nodes[pos] - coarse.nodes) <= tol):
            raise PathError("fine grid does not contain every coarse node")
        return pos

    def sub(self, start_index: int) -> "TimeGrid":
        return TimeGrid(self.nodes[start_index:])

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.nodes.shape == other.nodes.shape and bool(
            np.all(self.nodes == other.nodes))

    def __hash__(self):
        return hash(self.nodes.tobytes())


def _as_values(values, d: Optional[int] = None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if d in (None, 1) else arr.reshape(-1, d)
    if arr.ndim != 2:
        raise PathError("path values must be a (k, d) array")
    if d is not None and arr.shape[1] != d:
        raise PathError(f"expected dimension {d}, got {arr.shape[1]}")
    return arr


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """Piecewise-constant right-continuous path in ``R^d``.

    Parameters
    ----------
    history_times, history_values : array_like
        Breakpoints of the history segment on ``[0, t]``.  Times must be
        strictly increasing and not exceed ``t``.
    grid : TimeGrid, optional
        Grid starting at ``t``.  Without a grid the path is pure history
        and ends at ``end`` (default: the last history breakpoint).
    values : array_like, optional
        ``(n + 1, d)`` values at the grid nodes; ``values[0]`` must equal
        the history value at ``t``.
    """

    history_times: np.ndarray
    history_values: np.ndarray
    grid: Optional[TimeGrid] = None
    values: Optional[np.ndarray] = None
    end: Optional[float] = None
    _bp: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ht = np.array(self.history_times, dtype=float).ravel()
        hv = _as_values(self.history_values)
        if ht.size == 0 or ht.size != hv.shape[0]:
            raise PathError("history needs one value per breakpoint (>= 1)")
        if np.any(np.diff(ht) <= 0.0) or ht[0] < 0.0:
            raise PathError("history times must be >= 0 and strictly increasing")
        d = hv.shape[1]
        if self.grid is not None:
            t = self.grid.start
            if self.values is None:
                raise PathError("grid given without node values")
            vals = _as_values(self.values, d)
            if vals.shape[0] != self.grid.n + 1:
                raise PathError("need one value per grid node")
            if ht[-1] > t:
                raise PathError("history breakpoints must not exceed the grid start")
            j = np.searchsorted(ht, t, side="right") - 1
            if not np.array_equal(hv[j], vals[0]):
                raise PathError("grid value at t_0 must equal the history value at t_0")
            keep = ht < t
            bt = np.concatenate([ht[keep], self.grid.nodes])
            bv = np.concatenate([hv[keep], vals])
            end = self.grid.end
        else:
            vals = None
            end = float(ht[-1]) if self.end is None else float(self.end)
            if end < ht[-1]:
                raise PathError("end precedes the last history breakpoint")
            bt, bv = ht, hv
        for arr in (ht, hv, bt, bv):
            arr.setflags(write=False)
        if vals is not None:
            vals.setflags(write=False)
        object.__setattr__(self, "history_times", ht)
        object.__setattr__(self, "history_values", hv)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "end", end)
        object.__setattr__(self, "_bp", (bt, bv))

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, x, end: float = 0.0, d: Optional[int] = None) -> "DiscretePath":
        x = np.atleast_1d(np.array(x, dtype=float))
        if d is not None and x.size == 1:
            x = np.full(d, x[0])
        return cls([0.0], x[None, :], end=end)

    @classmethod
    def from_breakpoints(cls, times, values, split: Optional[float] = None,
                         end: Optional[float] = None) -> "DiscretePath":
        """Build a path from a step function given by breakpoints.

        Breakpoints at or before ``split`` form the history; later ones (and
        ``split`` and ``end`` themselves) become grid nodes.  Without
        ``split`` the result is pure history.
        """
        times = np.array(times, dtype=float).ravel()
        values = _as_values(values)
        order = np.argsort(times, kind="stable")
        times, values = times[order], values[order]
        # later duplicates win (right-continuity)
        _, last = np.unique(times[::-1], return_index=True)
        idx = np.sort(times.size - 1 - last)
        times, values = times[idx], values[idx]
        end = float(times[-1]) if end is None else float(end)
        keep = times <= end
        times, values = times[keep], values[keep]
        if split is None:
            return cls(times, values, end=end)
        hist = times <= split
        step = _StepFn(times, values)
        ht = np.append(times[hist & (times < split)], split)
        hv = step(ht)
        if end <= split:
            return cls(ht, hv, end=max(end, split))
        nodes = np.unique(np.concatenate([[split], times[times > split], [end]]))
        return cls(ht, hv, TimeGrid(nodes), step(nodes))

    # -- basic properties ---------------------------------------------------
    @property
    def d(self) -> int:
        return self.history_values.shape[1]

    @property
    def t(self) -> float:
        """End of the history segment (``t_0`` of the grid)."""
        return self.grid.start if self.grid is not None else self.end

    @property
    def T(self) -> float:
        return self.end

    def breakpoints(self):
        """``(times, values)`` of the whole step function."""
        return self._bp

    def evaluate(self, s) -> np.ndarray:
        """Value at time(s) ``s``; the path is stopped at ``T``."""
        return _StepFn(*self._bp)(s)

    __call__ = evaluate

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self._bp[1], axis=1)))

    def stopped(self, s: float) -> "StoppedView":
        return StoppedView(self, float(s))

    def history_part(self) -> "DiscretePath":
        """The history segment on ``[0, t]`` as a pure-history path."""
        ht, hv = self.history_times, self.history_values
        if self.grid is None:
            return self
        keep = ht < self.t
        return DiscretePath(np.append(ht[keep], self.t),
                            np.vstack([hv[keep], self.values[:1]]), end=self.t)

    def truncate(self, index: int) -> "DiscretePath":
        """Prefix up to grid node ``index`` (grid keeps nodes ``0..index``)."""
        if self.grid is None:
            raise PathError("pure-history path has no grid nodes")
        if index == 0:
            return self.history_part()
        return DiscretePath(self.history_times, self.history_values,
                            TimeGrid(self.grid.nodes[:index + 1]),
                            self.values[:index + 1])

    # -- serialisation ------------------------------------------------------
    def to_json(self) -> dict:
        grid = [] if self.grid is None else self.grid.nodes.tolist()
        vals = [] if self.values is None else self.values.tolist()
        return {"d": self.d,
                "history": [[float(t), v.tolist()] for t, v in
                            zip(self.history_times, self.history_values)],
                "grid": grid, "values": vals,
                **({"end": self.end} if self.grid is None else {})}

    @classmethod
    def from_json(cls, obj) -> "DiscretePath":
        if isinstance(obj, (str, bytes)):
            obj = json.loads(obj)
        d = int(obj["d"])
        hist = obj["history"]
        ht = [h[0] for h in hist]
        hv = np.array([h[1] for h in hist], dtype=float).reshape(len(hist), d)
        if obj.get("grid"):
            vals = np.array(obj["values"], dtype=float).reshape(-1, d)
            return cls(ht, hv, TimeGrid(obj["grid"]), vals)
        return cls(ht, hv, end=obj.get("end"))

    def __eq__(self, other):
        # pointwise equality of the step functions, not of representations
        if not isinstance(other, DiscretePath):
            return NotImplemented
        if self.end != other.end or self.d != other.d:
            return False
        pts = np.union1d(self._bp[0], other._bp[0])
        return bool(np.array_equal(self.evaluate(pts), other.evaluate(pts)))

    __hash__ = None


class _StepFn:
    """Right-continuous step evaluation; constant before the first point."""

    def __init__(self, times, values):
        self.times = times
        self.values = values

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.times, s_arr, side="right") - 1
        idx = np.clip(idx, 0, self.times.size - 1)
        return self.values[idx]


@dataclass(frozen=True)
class StoppedView:
    """The path ``omega(s ^ .)`` of ``base`` frozen at ``stop_time``."""

    base: DiscretePath
    stop_time: float

    def evaluate(self, u):
        return self.base.evaluate(np.minimum(u, self.stop_time))

    __call__ = evaluate

    def breakpoints(self):
        bt, bv = self.base.breakpoints()
        keep = bt <= self.stop_time
        if not np.any(keep):
            keep[0] = True
        return bt[keep], bv[keep]

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.breakpoints()[1], axis=1)))

    def as_path(self) -> DiscretePath:
        bt, bv = self.breakpoints()
        return DiscretePath(bt, bv, end=self.stop_time)


def sup_norm(path) -> float:
    return path.sup_norm()


def sup_distance(a, b) -> float:
    """``sup_u |a(u) - b(u)|`` for two step paths (or stopped views)."""
    ta = a.breakpoints()[0]
    tb = b.breakpoints()[0]
    pts = np.union1d(ta, tb)
    ends = [getattr(x, "stop_time", getattr(x, "end", 0.0)) for x in (a, b)]
    pts = np.union1d(pts, ends)
    return float(np.max(np.linalg.norm(a.evaluate(pts) - b.evaluate(pts), axis=1)))


def d_infinity(a: StoppedView, b: StoppedView) -> float:
    """``|s - s'| + ||omega_s - omega'_s'||_inf``."""
    if a.base.d != b.base.d:
        raise PathError("dimension mismatch")
    return abs(a.stop_time - b.stop_time) + sup_distance(a, b)


def concat(prefix: DiscretePath, suffix: DiscretePath, s: float) -> DiscretePath:
    """Concatenation ``prefix (+)_s suffix``.

    Equal to ``prefix`` on ``[0, s)`` and to
    ``suffix(u) - suffix(s) + prefix(s)`` on ``[s, T]`` where ``T`` is the
    later of the two horizons.  The result keeps ``prefix``'s history/grid
    split.
    """
    if prefix.d != suffix.d:
        raise PathError(f"dimension mismatch: {prefix.d} vs {suffix.d}")
    T = max(prefix.T, suffix.T)
    if not 0.0 <= s <= T:
        raise PathError(f"splice time {s} outside [0, {T}]")
    pt, _ = prefix.breakpoints()
    st, _ = suffix.breakpoints()
    times = np.unique(np.concatenate([pt[pt < s], [s], st[(st > s) & (st <= T)]]))
    shift = prefix.evaluate(s) - suffix.evaluate(s)
    vals = np.where((times < s)[:, None], prefix.evaluate(times),
                    suffix.evaluate(times) + shift)
    vals[times == s] = prefix.evaluate(s)
    split = prefix.t if prefix.grid is not None else None
    return DiscretePath.from_breakpoints(times, vals, split=split, end=T)


def step_stats(times, values, s: float):
    """Running statistics of a step path on ``[0, s]``.

    Returns ``(max, min, abs_max, integral)`` where max/min are per
    coordinate, ``abs_max`` is the sup of the Euclidean norm and
    ``integral`` is ``int_0^s omega(u) du`` (the path is constant before
    its first breakpoint).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = times <= s
    keep[0] = True
    t, v = times[keep], values[keep]
    left = np.concatenate([[0.0], t[1:]])
    right = np.append(t[1:], max(s, t[-1]))
    integral = (np.clip(right, None, s) - np.clip(left, None, s)) @ v
    return (v.max(axis=0), v.min(axis=0),
            float(np.max(np.linalg.norm(v, axis=1))), integral)


class PathView:
    """A batch of ``N`` stopped paths observed at a common time.

    This is the argument handed to coefficient functionals.  Besides the
    current value it carries running statistics of the stopped paths (which
    most path-dependent functionals need) and lazy access to the full
    stopped step function.  ``base`` is the unstopped object the view was
    cut from; well-behaved functionals never look at it.
    """

    __slots__ = ("time", "value", "running_max", "running_min",
                 "running_mean", "running_abs_max", "_times", "_values",
                 "_path", "base")

    def __init__(self, time, value, running_max, running_min, running_mean,
                 running_abs_max, times, values, base=None):
        self.time = float(time)
        self.value = value
        self.running_max = running_max
        self.running_min = running_min
        self.running_mean = running_mean
        self.running_abs_max = running_abs_max
        self._times = times
        self._values = values  # array (k, N, d) or a zero-arg callable
        self._path = None
        self.base = base

    @property
    def n_samples(self) -> int:
        return self.value.shape[0]

    @property
    def d(self) -> int:
        return self.value.shape[1]

    def path(self):
        """``(times, values)`` of the stopped step paths, values ``(k, N, d)``."""
        if self._path is None:
            vals = self._values() if callable(self._values) else self._values
            self._path = (self._times, vals)
        return self._path

    def at(self, u: float) -> np.ndarray:
        """Values of the stopped paths at time ``u`` (``(N, d)``)."""
        times, vals = self.path()
        if u >= self.time:
            return self.value
        j = int(np.searchsorted(times, u, side="right")) - 1
        return vals[max(j, 0)]

    @classmethod
    def from_stopped(cls, view: StoppedView) -> "PathView":
        """Single-sample view of a stopped :class:`DiscretePath`."""
        bt, bv = view.breakpoints()
        s = view.stop_time
        mx, mn, ab, integral = step_stats(bt, bv, s)
        value = view.base.evaluate(s)
        mean = integral / s if s > 0 else value
        return cls(s, value[None, :], mx[None, :], mn[None, :], mean[None, :],
                   np.array([ab]), bt, bv[:, None, :], base=view.base)

    @classmethod
    def from_path(cls, path: DiscretePath, s: Optional[float] = None) -> "PathView":
        return cls.from_stopped(path.stopped(path.T if s is None else s))
