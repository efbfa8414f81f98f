"""Non-anticipative coefficient functionals and a small problem zoo.

A :class:`CoefficientSet` bundles the drift ``b``, diffusion ``sigma``,
driver ``f`` and terminal functional ``g`` of a path-dependent FBSDE.  All
four are vectorised over a batch of stopped paths (a
:class:`~pathfbsde.pathcore.PathView`):

* ``b(t, view) -> (N, d)`` (a ``(d,)`` constant is broadcast)
* ``sigma(t, view) -> (N, d, ell)`` (a ``(d, ell)`` constant is broadcast)
* ``f(t, view, y, z) -> (N,)`` with ``y`` of shape ``(N,)``, ``z`` ``(N, ell)``
* ``g(view) -> (N,)`` where ``view`` is stopped at the horizon ``T``

``f=None`` means the zero driver.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .pathcore import DiscretePath, PathView, TimeGrid, d_infinity, sup_distance


@dataclass(frozen=True)
class CoefficientSet:
    b: Callable
    sigma: Callable
    g: Callable
    f: Optional[Callable] = None
    d: int = 1
    ell: int = 1
    K: float = 1.0
    C: float = 1.0
    T: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def driver_free(self) -> bool:
        return self.f is None

    def drift(self, t, view) -> np.ndarray:
        out = np.asarray(self.b(t, view), dtype=float)
        return np.broadcast_to(out, (view.n_samples, self.d))

    def diffusion(self, t, view) -> np.ndarray:
        out = np.asarray(self.sigma(t, view), dtype=float)
        return np.broadcast_to(out, (view.n_samples, self.d, self.ell))

    def driver(self, t, view, y, z) -> np.ndarray:
        if self.f is None:
            return np.zeros(view.n_samples)
        out = np.asarray(self.f(t, view, y, z), dtype=float)
        return np.broadcast_to(out, (view.n_samples,))

    def terminal(self, view) -> np.ndarray:
        out = np.asarray(self.g(view), dtype=float)
        return np.broadcast_to(out, (view.n_samples,))


@dataclass(frozen=True)
class ReferenceSolution:
    """Reference values for a zoo problem.

    ``value_at(t, history)`` and ``z_at(t, history)`` give the solution at
    the start of the grid for a history ``gamma`` on ``[0, t]`` (a
    :class:`DiscretePath`).  ``kind`` is ``"exact"`` when these are closed
    forms and ``"oracle"`` when ``value_at`` is a brute-force Monte Carlo
    recipe returning a ``(value, stderr)`` pair.
    """

    kind: str
    value_at: Optional[Callable] = None
    z_at: Optional[Callable] = None
    tolerance: float = 0.0
    note: str = ""


# -- zoo ---------------------------------------------------------------------

def _current(history: DiscretePath) -> float:
    return float(history.evaluate(history.T)[0])


def _bm_terminal(T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.zeros(1),
        sigma=lambda t, v: np.ones((1, 1)),
        g=lambda v: v.value[:, 0],
        K=1.0, C=1.0, T=T, name="bm-terminal")
    ref = ReferenceSolution("exact", lambda t, h: _current(h),
                            lambda t, h: np.ones(1))
    return cs, ref


def _abm_linear(mu=0.5, s0=2.0, T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.full(1, mu),
        sigma=lambda t, v: np.full((1, 1), s0),
        g=lambda v: v.value[:, 0],
        K=1.0, C=abs(mu) + abs(s0), T=T, name="abm-linear",
        params={"mu": mu, "s0": s0})
    ref = ReferenceSolution("exact", lambda t, h: _current(h) + mu * (T - t),
                            lambda t, h: np.full(1, s0))
    return cs, ref


def lookback_value(M: float, x: float, tau: float) -> float:
    """``E[max(M, x + max_{[0, tau]} W)]`` by the reflection principle."""
    if tau <= 0:
        return max(M, x)
    a = max(M - x, 0.0)
    r = a / math.sqrt(tau)
    M = max(M, x)
    return (M * (2 * norm.cdf(r) - 1) + 2 * x * norm.sf(r)
            + 2 * math.sqrt(tau) * norm.pdf(r))


def _bm_lookback(T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.zeros(1),
        sigma=lambda t, v: np.ones((1, 1)),
        g=lambda v: v.running_max[:, 0],
        K=1.0, C=1.0, T=T, name="bm-lookback")

    def value(t, h):
        return lookback_value(float(np.max(h.breakpoints()[1])), _current(h), T - t)

    def z(t, h):
        # d/dx E[max(M, x + S)] = P(x + S > M)
        M, x, tau = float(np.max(h.breakpoints()[1])), _current(h), T - t
        if tau <= 0:
            return np.array([float(x >= M)])
        return np.array([2 * norm.sf(max(M - x, 0.0) / math.sqrt(tau))])

    ref = ReferenceSolution("exact", value, z,
                            note="continuous-time running max; discrete grids "
                                 "underestimate it by O(sqrt(|pi|))")
    return cs, ref


def _discounted_terminal(r=0.5, c=1.0, T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.zeros(1),
        sigma=lambda t, v: np.ones((1, 1)),
        f=lambda t, v, y, z: -r * y,
        g=lambda v: v.value[:, 0] + c,
        K=max(1.0, r), C=max(1.0, abs(c)), T=T, name="discounted-terminal",
        params={"r": r, "c": c})
    ref = ReferenceSolution(
        "exact", lambda t, h: (_current(h) + c) * math.exp(-r * (T - t)),
        lambda t, h: np.full(1, math.exp(-r * (T - t))))
    return cs, ref


def _z_driver(a=0.3, T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.zeros(1),
        sigma=lambda t, v: np.ones((1, 1)),
        f=lambda t, v, y, z: a * z[:, 0],
        g=lambda v: v.value[:, 0],
        K=max(1.0, abs(a)), C=1.0, T=T, name="z-driver", params={"a": a})
    ref = ReferenceSolution("exact", lambda t, h: _current(h) + a * (T - t),
                            lambda t, h: np.ones(1))
    return cs, ref


def _path_sigma_fn(base=0.2, scale=0.1):
    def sigma(t, v):
        return (base + scale * np.tanh(v.running_abs_max))[:, None, None]
    return sigma


def _path_sigma(base=0.2, scale=0.1, T=1.0):
    sigma = _path_sigma_fn(base, scale)
    cs = CoefficientSet(
        b=lambda t, v: np.zeros(1), sigma=sigma,
        g=lambda v: v.value[:, 0],
        K=1.0, C=base, T=T, name="path-sigma",
        params={"base": base, "scale": scale})

    def z(t, h):
        view = PathView.from_path(h, t)
        return cs.diffusion(t, view)[0, 0, :].copy()

    # b = 0 makes X a martingale, hence Y = X and Z = sigma along the path
    ref = ReferenceSolution("exact", lambda t, h: _current(h), z)
    return cs, ref


def _geometric(vol=0.2, T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.zeros(1),
        sigma=lambda t, v: (vol * v.value)[:, :, None],
        g=lambda v: v.value[:, 0],
        K=max(vol, 1.0), C=1.0, T=T, name="geometric", params={"vol": vol})
    ref = ReferenceSolution("exact", lambda t, h: _current(h),
                            lambda t, h: np.full(1, vol * _current(h)))
    return cs, ref


def _drift_only(rate=1.0, T=1.0):
    cs = CoefficientSet(
        b=lambda t, v: np.full(1, rate),
        sigma=lambda t, v: np.zeros((1, 1)),
        g=lambda v: v.value[:, 0],
        K=1.0, C=abs(rate), T=T, name="drift-only", params={"rate": rate})
    ref = ReferenceSolution("exact", lambda t, h: _current(h) + rate * (T - t),
                            lambda t, h: np.zeros(1))
    return cs, ref


_ZOO = {
    "bm-terminal": _bm_terminal,
    "abm-linear": _abm_linear,
    "bm-lookback": _bm_lookback,
    "discounted-terminal": _discounted_terminal,
    "z-driver": _z_driver,
    "path-sigma": _path_sigma,
    "geometric": _geometric,
    "drift-only": _drift_only,
}


def registered_problems() -> list[str]:
    return sorted(_ZOO)


def register_problem(name: str, factory: Callable) -> None:
    """Register ``factory(**params) -> (CoefficientSet, ReferenceSolution)``."""
    _ZOO[name] = factory


def problem_zoo(name: str, **params):
    """Return ``(CoefficientSet, ReferenceSolution)`` for a registered problem."""
    try:
        factory = _ZOO[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; registered: "
                       f"{', '.join(registered_problems())}") from None
    return factory(**params)


# -- empirical checks ----------------------------------------------------------

@dataclass
class CheckReport:
    """Per-functional maxima from a probe check; ``passed`` is the verdict."""

    values: dict
    passed: bool
    threshold: float
    probes: int

    def __getitem__(self, key):
        return self.values[key]


def random_step_path(rng, T=1.0, n=None, d=1, scale=1.0) -> DiscretePath:
    """A random walk sampled on a random grid of ``[0, T]`` (test probe)."""
    n = int(rng.integers(2, 12)) if n is None else n
    cuts = np.sort(rng.uniform(0.0, T, n - 1))
    nodes = np.unique(np.concatenate([[0.0], cuts, [T]]))
    vals = np.cumsum(rng.normal(0.0, scale, (nodes.size, d)), axis=0)
    return DiscretePath([0.0], vals[:1], TimeGrid(nodes), vals)


def _perturb_after(rng, path: DiscretePath, s: float) -> DiscretePath:
    bt, bv = path.breakpoints()
    extra = np.sort(rng.uniform(s, path.T, 3))
    extra = extra[extra > s]
    times = np.concatenate([bt, extra])
    vals = np.concatenate([bv, np.zeros((extra.size, path.d))])
    vals = vals + np.where((times > s)[:, None],
                           rng.normal(0.0, 5.0, vals.shape), 0.0)
    return DiscretePath.from_breakpoints(times, vals, split=0.0, end=path.T)


def _functional_outputs(cs: CoefficientSet, s, view, y, z):
    return {"b": cs.drift(s, view).ravel(),
            "sigma": cs.diffusion(s, view).ravel(),
            "f": cs.driver(s, view, y, z).ravel()}


def check_non_anticipative(cs: CoefficientSet, probes: int = 100, seed: int = 0) -> CheckReport:
    """Compare ``b, sigma, f`` on a path and on copies altered after the stop time."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {"b": 0.0, "sigma": 0.0, "f": 0.0}
    for _ in range(probes):
        path = random_step_path(rng, cs.T, d=cs.d)
        s = float(rng.uniform(0.0, cs.T)) if rng.random() < 0.5 else \
            float(rng.choice(path.grid.nodes[:-1]))
        other = _perturb_after(rng, path, s)
        y = rng.normal(size=1)
        z = rng.normal(size=(1, cs.ell))
        a = _functional_outputs(cs, s, PathView.from_path(path, s), y, z)
        b = _functional_outputs(cs, s, PathView.from_path(other, s), y, z)
        for key in worst:
            worst[key] = max(worst[key], float(np.max(np.abs(a[key] - b[key]))))
    return CheckReport(worst, all(v == 0.0 for v in worst.values()), 0.0, probes)


def check_lipschitz(cs: CoefficientSet, probes: int = 200, seed: int = 0) -> CheckReport:
    """Largest empirical Lipschitz ratio of each functional over random probe pairs.

    The denominators are ``sqrt|s - s'| + ||omega_s - omega'_s'||`` for
    ``b`` and ``sigma`` (Frobenius norm), the same plus ``|y - y'| +
    |z - z'|`` for ``f``, and ``||omega - omega'||`` for ``g``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {"b": 0.0, "sigma": 0.0, "f": 0.0, "g": 0.0}
    for p in range(probes):
        path = random_step_path(rng, cs.T, d=cs.d)
        # half the probes are close pairs, the rest far apart
        eps = 10.0 ** rng.uniform(-4, 0) if p % 2 == 0 else 1.0
        bt, bv = path.breakpoints()
        other = DiscretePath.from_breakpoints(
            bt, bv + rng.normal(0.0, eps, bv.shape), split=0.0, end=cs.T)
        s = float(rng.uniform(0.0, cs.T))
        s2 = float(np.clip(s + rng.normal(0.0, eps * 0.1), 0.0, cs.T))
        va, vb = PathView.from_path(path, s), PathView.from_path(other, s2)
        dist = d_infinity(path.stopped(s), other.stopped(s2))
        dpath = math.sqrt(abs(s - s2)) + dist - abs(s - s2)
        y, y2 = rng.normal(size=1), rng.normal(size=1)
        z, z2 = rng.normal(size=(1, cs.ell)), rng.normal(size=(1, cs.ell))
        if rng.random() < 0.3:
            y2, z2 = y.copy(), z.copy()
        if dpath > 0:
            db = np.linalg.norm(cs.drift(s, va) - cs.drift(s2, vb))
            ds = np.linalg.norm(cs.diffusion(s, va) - cs.diffusion(s2, vb))
            worst["b"] = max(worst["b"], float(db / dpath))
            worst["sigma"] = max(worst["sigma"], float(ds / dpath))
        dyz = dpath + abs(y - y2).item() + float(np.abs(z - z2).sum())
        if dyz > 0:
            df = abs(cs.driver(s, va, y, z) - cs.driver(s2, vb, y2, z2)).item()
            worst["f"] = max(worst["f"], df / dyz)
        dfull = sup_distance(path, other)
        if dfull > 0:
            ga = cs.terminal(PathView.from_path(path))
            gb = cs.terminal(PathView.from_path(other))
            worst["g"] = max(worst["g"], abs(ga - gb).item() / dfull)
    passed = all(v <= cs.K * (1 + 1e-9) for v in worst.values())
    return CheckReport(worst, passed, cs.K, probes)


def check_bounds(cs: CoefficientSet, n_times: int = 33) -> dict:
    """``sup_u |b|+|sigma|`` and ``sup_u |f| + |g|`` along the zero path."""
    zero = DiscretePath.constant(np.zeros(cs.d), end=cs.T)
    y0, z0 = np.zeros(1), np.zeros((1, cs.ell))
    sde = bsde = 0.0
    g0 = abs(cs.terminal(PathView.from_path(zero))).item()
    for u in np.linspace(0.0, cs.T, n_times):
        v = PathView.from_path(zero, u)
        sde = max(sde, float(np.linalg.norm(cs.drift(u, v))
                             + np.linalg.norm(cs.diffusion(u, v))))
        bsde = max(bsde, abs(cs.driver(u, v, y0, z0)).item() + g0)
    return {"sde": sde, "bsde": bsde, "passed": sde <= cs.C and bsde <= cs.C}
