"""Counter-based Gaussian noise for reproducible trajectory ensembles.

Every variate is a pure function of ``(key, counter)``, so a trajectory's
noise does not depend on how trajectories are batched or distributed
across workers.

Construction
------------
* ``mix64`` is the SplitMix64 finaliser; arithmetic wraps modulo 2**64.
* Trajectory ``i`` under master seed ``s`` gets the 64-bit key
  ``mix64(mix64(s + G) + (i + 1) * G)`` with ``G = 0x9E3779B97F4A7C15``.
* Uniform number ``c`` of a key is ``(mix64(key + (c + 1) * G) >> 11) / 2**53``
  in ``[0, 1)``.
* Normal number ``c`` uses uniforms ``2c`` and ``2c + 1`` through the
  Box-Muller transform ``sqrt(-2 log1p(-u1)) cos(2 pi u2)``.
* The Wiener increment of generator ``k`` at step ``n`` of a model with
  ``K`` generators is ``sqrt(dt)`` times normal number ``n K + k``.

Bit-for-bit reproduction across machines additionally needs the same
``log1p``/``cos`` results from the platform math library.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

_G = np.uint64(GOLDEN)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_ONE = np.uint64(1)
_TWO = np.uint64(2)
_INV_2_53 = 1.0 / (1 << 53)
_TWO_PI = 2.0 * math.pi


@njit(cache=True)
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def uniform(key, counter):
    """Uniform variate in [0, 1) at position ``counter`` of stream ``key``."""
    c = np.uint64(counter)
    bits = mix64(np.uint64(key) + (c + _ONE) * _G) >> np.uint64(11)
    return float(bits) * _INV_2_53


@njit(cache=True)
def normal(key, counter):
    """Standard normal variate at position ``counter`` of stream ``key``."""
    c = np.uint64(counter)
    u1 = uniform(key, _TWO * c)
    u2 = uniform(key, _TWO * c + _ONE)
    return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(_TWO_PI * u2)


@njit(cache=True)
def fill_normals(key, first, out):
    """Write normal numbers ``first, first + 1, ...`` of stream ``key`` into ``out``."""
    for j in range(out.shape[0]):
        out[j] = normal(key, first + np.uint64(j))


@njit(cache=True)
def _derive_keys(master_seed, indices):
    base = mix64(np.uint64(master_seed) + _G)
    out = np.empty(indices.shape[0], dtype=np.uint64)
    for i in range(indices.shape[0]):
        out[i] = mix64(base + (np.uint64(indices[i]) + _ONE) * _G)
    return out


def trajectory_seeds(master_seed: int, indices) -> np.ndarray:
    """Stream keys for trajectories ``indices`` under ``master_seed``."""
    idx = np.asarray(indices, dtype=np.uint64).reshape(-1)
    return _derive_keys(np.uint64(int(master_seed) & MASK64), idx)


def trajectory_seed(master_seed: int, index: int) -> int:
    return int(trajectory_seeds(master_seed, [index])[0])


@njit(cache=True)
def _normals(keys, counter):
    out = np.empty(keys.shape[0])
    for i in range(keys.shape[0]):
        out[i] = normal(keys[i], counter)
    return out


def normals(keys, counter: int) -> np.ndarray:
    """One normal variate per key at position ``counter``."""
    return _normals(np.asarray(keys, dtype=np.uint64).reshape(-1), np.uint64(counter))


def wiener_increments(key: int, step: int, n_generators: int, dt: float) -> np.ndarray:
    """Increments dW_k, k = 0..K-1, used by a trajectory at ``step``."""
    key = np.uint64(int(key) & MASK64)
    base = step * n_generators
    return np.array([math.sqrt(dt) * normal(key, np.uint64(base + k)) for k in range(n_generators)])
