"""Convergence sweeps, rate fits and their CSV/JSON persistence."""
from __future__ import annotations

import csv
import json
import logging
import math
import subprocess
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .coefficients import problem_zoo
from .condexp import FeatureMap
from .pathcore import DiscretePath, TimeGrid
from .picard import SchemeConfig, solve_implicit, solve_picard

log = logging.getLogger(__name__)

REFERENCE_MODES = ("closed-form", "implicit", "oracle")
# a Picard-axis point is usable while it is below this fraction of its predecessor
PICARD_DECAY_CUT = 0.9


@dataclass(frozen=True)
class SweepSpec:
    """A grid of ``(n, m)`` cells on one problem.

    ``reference`` selects what ``sq_err`` is measured against: the problem's
    closed form, the implicit scheme at the same ``n`` (same seed and ``N``),
    or a value ``oracle`` (a float, or a mapping from ``n`` to float).
    """

    problem: str
    n_values: tuple
    m_values: tuple
    N: int
    seed: int = 0
    estimator: str = "regression"
    features: tuple = ("const", "value", "max", "min", "mean")
    lags: int = 0
    ridge: float = 0.0
    n_inner: int = 64
    reference: str = "closed-form"
    oracle: object = None
    params: dict = field(default_factory=dict)
    history: Optional[dict] = None
    chunk: int = 16_384

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(v) for v in self.n_values))
        object.__setattr__(self, "m_values", tuple(int(v) for v in self.m_values))
        object.__setattr__(self, "features", tuple(self.features))
        if not self.n_values or not self.m_values:
            raise ValueError("n_values and m_values must be non-empty")
        if list(self.n_values) != sorted(set(self.n_values)):
            raise ValueError("n_values must be distinct and sorted")
        if self.reference not in REFERENCE_MODES:
            raise ValueError(f"reference must be one of {REFERENCE_MODES}")
        if self.reference == "oracle" and self.oracle is None:
            raise ValueError("reference 'oracle' needs an oracle value")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        if "oracle_file" in data:
            with open(data.pop("oracle_file")) as fh:
                data["oracle"] = json.load(fh)
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        base = Path(path).parent
        with open(path) as fh:
            data = json.load(fh)
        if "oracle_file" in data:
            data["oracle_file"] = str(base / data["oracle_file"])
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_values"] = list(self.n_values)
        out["m_values"] = list(self.m_values)
        out["features"] = list(self.features)
        return out

    def problem_setup(self):
        cs, ref = problem_zoo(self.problem, **self.params)
        if self.history is None:
            history = DiscretePath.constant(0.0, 0.0, cs.d)
        else:
            history = DiscretePath.from_json(self.history)
        return cs, ref, history

    def config(self, n: int, m: int, cs) -> SchemeConfig:
        history = self.problem_setup()[2]
        grid = TimeGrid.uniform(history.T, cs.T, n)
        return SchemeConfig(grid, m=m, N=self.N, estimator=self.estimator,
                            features=FeatureMap(self.features, self.lags),
                            ridge=self.ridge, n_inner=self.n_inner, seed=self.seed,
                            chunk=self.chunk, problem=self.problem,
                            params=dict(self.params))

    def oracle_value(self, n: int) -> float:
        if isinstance(self.oracle, dict):
            for k in (n, str(n)):
                if k in self.oracle:
                    return float(self.oracle[k])
            if "ref" in self.oracle:
                return float(self.oracle["ref"])
            raise KeyError(f"oracle has no value for n={n}")
        return float(self.oracle)


@dataclass
class ConvergenceRecord:
    problem: str
    n: int
    mesh: float
    m: int
    N: int
    estimator: str
    seed: int
    y0: float
    y0_stderr: float
    z0: list
    ref: float
    sq_err: float
    wall_ms: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.sq_err)


def run_cell(spec: SweepSpec, n: int, m: int, ref_value: Optional[float] = None):
    """Solve one ``(n, m)`` cell; ``ref_value`` overrides the reference."""
    cs, ref, history = spec.problem_setup()
    config = spec.config(n, m, cs)
    if ref_value is None:
        ref_value = reference_value(spec, n)
    res = solve_picard(cs, history, config.grid, config)
    return ConvergenceRecord(spec.problem, n, config.grid.mesh(), m, spec.N,
                             spec.estimator, spec.seed, res.y0, res.y0_stderr,
                             [float(v) for v in res.z0], ref_value,
                             (res.y0 - ref_value) ** 2, res.wall_ms)


def reference_value(spec: SweepSpec, n: int) -> float:
    cs, ref, history = spec.problem_setup()
    if spec.reference == "oracle":
        return spec.oracle_value(n)
    if spec.reference == "closed-form":
        if ref.kind != "exact" or ref.value_at is None:
            raise ValueError(f"problem {spec.problem!r} has no closed-form reference")
        return float(ref.value_at(history.T, history))
    config = spec.config(n, 1, cs)
    return solve_implicit(cs, history, config.grid, config).y0


def run_sweep(spec: SweepSpec) -> list[ConvergenceRecord]:
    """One record per ``(n, m)`` in spec order; failures are recorded, not raised."""
    records = []
    for n in spec.n_values:
        try:
            ref_value = reference_value(spec, n)
            ref_error = None
        except Exception as exc:  # recorded per cell
            ref_value, ref_error = float("nan"), f"reference: {type(exc).__name__}: {exc}"
        for m in spec.m_values:
            if ref_error is not None:
                records.append(_failed(spec, n, m, ref_value, ref_error))
                continue
            try:
                records.append(run_cell(spec, n, m, ref_value))
            except Exception as exc:
                log.warning("cell n=%d m=%d failed: %s", n, m, exc)
                records.append(_failed(spec, n, m, ref_value,
                                       f"{type(exc).__name__}: {exc}"))
    return records


def _failed(spec, n, m, ref_value, message):
    mesh = (spec.problem_setup()[0].T - (spec.problem_setup()[2].T)) / n
    return ConvergenceRecord(spec.problem, n, mesh, m, spec.N, spec.estimator, spec.seed,
                             float("nan"), float("nan"), [], ref_value, float("nan"),
                             0.0, message)


# -- persistence ---------------------------------------------------------------------

def csv_header(ell: int) -> list[str]:
    return (["problem", "n", "mesh", "m", "N", "estimator", "seed", "y0", "y0_stderr"]
            + [f"z0_{k}" for k in range(ell)] + ["ref", "sq_err", "wall_ms"])


def write_records(records: Sequence[ConvergenceRecord], path) -> None:
    """CSV with ``repr`` floats so every value round-trips exactly."""
    ell = max([len(r.z0) for r in records] + [1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(ell))
        for r in records:
            z = list(r.z0) + [float("nan")] * (ell - len(r.z0))
            w.writerow([r.problem, r.n, repr(float(r.mesh)), r.m, r.N, r.estimator, r.seed,
                        repr(float(r.y0)), repr(float(r.y0_stderr))]
                       + [repr(float(v)) for v in z]
                       + [repr(float(r.ref)), repr(float(r.sq_err)), repr(float(r.wall_ms))])


def read_records(path) -> list[ConvergenceRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            z = [float(row[k]) for k in sorted((k for k in row if k.startswith("z0_")),
                                                key=lambda k: int(k[3:]))]
            out.append(ConvergenceRecord(
                row["problem"], int(row["n"]), float(row["mesh"]), int(row["m"]),
                int(row["N"]), row["estimator"], int(row["seed"]), float(row["y0"]),
                float(row["y0_stderr"]), z, float(row["ref"]), float(row["sq_err"]),
                float(row["wall_ms"])))
    return out


def _git_hash() -> Optional[str]:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             timeout=5, cwd=Path(__file__).parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None


def write_manifest(spec: SweepSpec, records, path, wall_s: float) -> dict:
    failures = [{"n": r.n, "m": r.m, "error": r.error} for r in records if r.error]
    manifest = {"git_hash": _git_hash(), "spec": spec.to_dict(), "seed": spec.seed,
                "cells": len(records), "failures": failures,
                "wall_s": wall_s, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def sweep_to_dir(spec: SweepSpec, out_dir) -> tuple[list, dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records = run_sweep(spec)
    write_records(records, out / "records.csv")
    manifest = write_manifest(spec, records, out / "manifest.json",
                              time.perf_counter() - t0)
    return records, manifest


# -- rate fits ---------------------------------------------------------------------------

class RateFitError(ValueError):
    pass


@dataclass(frozen=True)
class RateFit:
    axis: str
    x: tuple
    y: tuple
    slope: float
    intercept: float
    r2: float
    slope_stderr: float
    slope_ci: tuple

    @property
    def ratio(self) -> float:
        """Per-step factor ``exp(slope)`` (the contraction ratio on the Picard axis)."""
        return math.exp(self.slope)

    def to_json(self) -> dict:
        out = asdict(self)
        out["x"], out["y"], out["slope_ci"] = list(self.x), list(self.y), list(self.slope_ci)
        out["ratio"] = self.ratio
        return out


def _ols(axis, x, y, level=0.95) -> RateFit:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3:
        raise RateFitError(f"need at least 3 usable points, got {x.size}")
    res = stats.linregress(x, y)
    df = x.size - 2
    if df > 0 and np.isfinite(res.stderr):
        half = stats.t.ppf(0.5 + level / 2, df) * res.stderr
    else:
        half = float("nan")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    resid = y - (res.intercept + res.slope * x)
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    if not math.isfinite(res.slope):
        raise RateFitError("non-finite slope")
    return RateFit(axis, tuple(x.tolist()), tuple(y.tolist()), float(res.slope),
                   float(res.intercept), r2, float(res.stderr),
                   (float(res.slope - half), float(res.slope + half)))


def picard_usable(points: Sequence[tuple]) -> list[tuple]:
    """Leading run of ``(m, sq_err)`` points, sorted by ``m``, before the noise floor.

    A point is kept while it is positive and at most ``PICARD_DECAY_CUT``
    times the previous one; the first point that fails this ends the run.
    """
    pts = sorted(points)
    out = []
    for m, e in pts:
        if not (e > 0 and math.isfinite(e)):
            break
        if out and e > PICARD_DECAY_CUT * out[-1][1]:
            break
        out.append((m, e))
    return out


def fit_rate(records: Sequence[ConvergenceRecord], axis: str) -> RateFit:
    """OLS fit of ``log sq_err`` against ``log |pi|`` or ``m``.

    ``mesh``: cells at the largest ``m``.  ``picard``: cells at the largest
    ``n``, truncated at the noise floor by :func:`picard_usable`; the slope
    is ``log rho``.
    """
    good = [r for r in records if r.ok]
    if not good:
        raise RateFitError("no usable records")
    if axis == "mesh":
        m_max = max(r.m for r in good)
        pts = sorted((r.mesh, r.sq_err) for r in good if r.m == m_max and r.sq_err > 0)
        return _ols("mesh", [math.log(p) for p, _ in pts], [math.log(e) for _, e in pts])
    if axis == "picard":
        n_max = max(r.n for r in good)
        pts = picard_usable([(r.m, r.sq_err) for r in good if r.n == n_max])
        return _ols("picard", [m for m, _ in pts], [math.log(e) for _, e in pts])
    raise ValueError("axis must be 'mesh' or 'picard'")


@dataclass(frozen=True)
class TwoFactorFit:
    c1: float
    c2: float
    rho: float
    rms_log_residual: float


def fit_two_factor(records: Sequence[ConvergenceRecord]) -> TwoFactorFit:
    """Fit ``sq_err ~ c1 |pi| + c2 rho^m`` in log space (``c1, c2 >= 0``, ``0 < rho < 1``)."""
    good = [r for r in records if r.ok and r.sq_err > 0]
    if len(good) < 4:
        raise RateFitError("need at least 4 usable records")
    mesh = np.array([r.mesh for r in good])
    m = np.array([r.m for r in good], dtype=float)
    ly = np.log([r.sq_err for r in good])

    def model(theta):
        c1, c2 = np.exp(theta[0]), np.exp(theta[1])
        rho = 1.0 / (1.0 + np.exp(-theta[2]))
        return np.log(c1 * mesh + c2 * rho ** m)

    start = np.array([np.log(max(np.min(np.exp(ly)) / mesh.min(), 1e-300)),
                      np.log(np.max(np.exp(ly))), 0.0])
    sol = optimize.least_squares(lambda th: model(th) - ly, start, method="lm")
    c1, c2 = float(np.exp(sol.x[0])), float(np.exp(sol.x[1]))
    rho = float(1.0 / (1.0 + np.exp(-sol.x[2])))
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    return TwoFactorFit(c1, c2, rho, rms)
