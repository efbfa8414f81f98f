"""Counter-based, splittable Gaussian increments.

Every normal variate is a pure function of ``(root seed, stream path,
step index, coordinate)``: the stream path is folded into a 64-bit stream
id and each variate is ``ndtri(uniform(mix(id ^ mix(counter))))`` where
``mix`` is the SplitMix64 finaliser.  No generator state is carried
around, so outer paths, nested suffixes and chunks of a batch can be
produced in any order (or in parallel) with bit-identical results.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .pathcore import TimeGrid

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_ROOT_SALT = np.uint64(0x6A09E667F3BCC909)
_PATH_SALT = np.uint64(0xBB67AE8584CAA73B)
_CTR_SALT = np.uint64(0x3C6EF372FE94F82B)
_S30, _S27, _S31, _S11 = (np.uint64(k) for k in (30, 27, 31, 11))
_TWO_M53 = 2.0 ** -53

# stream-path tag separating nested suffix keys from user-chosen paths
SUFFIX_TAG = 0x5F5F


def _mix(z):
    """SplitMix64 finaliser on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _fold(ids, element):
    el = np.asarray(element, dtype=np.uint64)
    with np.errstate(over="ignore"):
        salted = el + _PATH_SALT
    return _mix(np.asarray(ids, dtype=np.uint64) ^ _mix(salted))


def root_id(root_seed: int) -> np.uint64:
    return _mix(np.uint64(root_seed & 0xFFFFFFFFFFFFFFFF) ^ _ROOT_SALT)


def child_ids(parent_ids, *indices) -> np.ndarray:
    """Vectorised stream ids of ``parent.child(*indices)``; indices broadcast."""
    ids = np.asarray(parent_ids, dtype=np.uint64)
    for idx in indices:
        ids = _fold(ids, idx)
    return ids


@dataclass(frozen=True)
class SampleKey:
    """Address of one Brownian stream: ``(root_seed, stream_path)``."""

    root_seed: int
    stream_path: tuple = ()

    def __post_init__(self):
        if not 0 <= self.root_seed < 2 ** 64:
            raise ValueError("root_seed must be an unsigned 64-bit integer")
        path = tuple(int(p) for p in self.stream_path)
        if any(p < 0 for p in path):
            raise ValueError("stream path entries must be non-negative")
        object.__setattr__(self, "stream_path", path)

    def child(self, *indices: int) -> "SampleKey":
        return SampleKey(self.root_seed, self.stream_path + tuple(indices))

    @property
    def stream_id(self) -> np.uint64:
        return np.uint64(child_ids(root_id(self.root_seed), *self.stream_path))

    def batch_ids(self, count: int, offset: int = 0) -> np.ndarray:
        """Stream ids of the children ``self.child(j)`` for ``j`` in a range."""
        j = np.arange(offset, offset + count, dtype=np.uint64)
        return child_ids(self.stream_id, j)


def suffix_key(parent: SampleKey, time_index: int, inner_index: int) -> SampleKey:
    """Key of the ``inner_index``-th fresh suffix drawn at ``time_index``."""
    if time_index < 0 or inner_index < 0:
        raise ValueError("indices must be >= 0")
    return parent.child(SUFFIX_TAG, time_index, inner_index)


def suffix_ids(parent_ids, time_index: int, inner) -> np.ndarray:
    """Vectorised :func:`suffix_key` ids, shape ``parent_ids.shape + inner.shape``."""
    parent = np.asarray(parent_ids, dtype=np.uint64)
    inner = np.asarray(inner, dtype=np.uint64)
    base = child_ids(parent, SUFFIX_TAG, time_index)
    return child_ids(base[..., None], inner)


def standard_normals(ids, steps: Sequence[int] | np.ndarray, ell: int) -> np.ndarray:
    """Standard normals of shape ``(len(steps), len(ids), ell)``.

    The variate for stream ``id``, grid step ``i`` and coordinate ``k`` uses
    counter ``i * ell + k``.
    """
    ids = np.asarray(ids, dtype=np.uint64).ravel()
    steps = np.asarray(steps, dtype=np.uint64).ravel()
    k = np.arange(ell, dtype=np.uint64)
    with np.errstate(over="ignore"):
        ctr = steps[:, None] * np.uint64(ell) + k[None, :] + np.uint64(1)
        ctr = _mix(ctr * _GOLDEN + _CTR_SALT)
    bits = _mix(ids[None, :, None] ^ ctr[:, None, :])
    u = ((bits >> _S11).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


@dataclass(frozen=True)
class BrownianIncrements:
    grid: TimeGrid
    dW: np.ndarray  # (n, ell) for one key, (n, N, ell) for a batch


def sample_increments(key: SampleKey, grid: TimeGrid, ell: int) -> BrownianIncrements:
    """Increments ``dW[i] ~ N(0, h_i I)`` on ``grid`` for a single key."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    z = standard_normals([key.stream_id], np.arange(grid.n), ell)[:, 0, :]
    return BrownianIncrements(grid, z * np.sqrt(grid.steps)[:, None])


def batch_increments(ids, grid: TimeGrid, ell: int, start: int = 0,
                     antithetic: bool = False) -> np.ndarray:
    """Increments for steps ``start..n-1`` of many streams.

    Returns an array of shape ``(n - start, N, ell)``.  With ``antithetic``
    the batch is doubled: sample ``N + j`` is the negation of sample ``j``.
    """
    ids = np.asarray(ids, dtype=np.uint64).ravel()
    z = standard_normals(ids, np.arange(start, grid.n), ell)
    if antithetic:
        z = np.concatenate([z, -z], axis=1)
    return z * np.sqrt(grid.steps[start:])[:, None, None]
