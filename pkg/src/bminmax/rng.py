"""Counter-based uniforms keyed by ``(seed, site_id, trial, key)``.

Every uniform is a pure function of its four coordinates, so any single
trial (or any single key of a trial) can be regenerated in isolation and
parallel workers never need to coordinate.  The mixer is the SplitMix64
finalizer applied to a Weyl sequence indexed by the key.
"""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TO_UNIT = 2.0**-53


def _mix(z: npt.NDArray[np.uint64]) -> npt.NDArray[np.uint64]:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(value) -> npt.NDArray[np.uint64]:
    if isinstance(value, (int, np.integer)):
        return np.array([int(value) & _MASK64], dtype=np.uint64)
    arr = np.asarray(value)
    if arr.dtype.kind == "i":
        return arr.astype(np.int64).view(np.uint64)
    return arr.astype(np.uint64)


def stream_base(seed: int, site_id: int, trial) -> npt.NDArray[np.uint64]:
    """Per-(seed, site, trial) stream offsets; ``trial`` may be an array."""
    with np.errstate(over="ignore"):
        h = _mix(_u64(seed) + _GOLDEN)
        h = _mix(h ^ (_u64(site_id) * _GOLDEN + _GOLDEN))
        return _mix(h ^ _mix(_u64(trial) + _GOLDEN))


def uniforms(seed: int, site_id: int, trial, keys) -> npt.NDArray[np.float64]:
    """Uniform variates on [0, 1), one per key.

    Args:
        seed: experiment seed (any 64-bit integer, negative values wrap).
        site_id: index of the site drawing the sample.
        trial: a trial index, or a 1-d array of them.
        keys: non-negative integer keys.

    Returns:
        Shape ``(len(keys),)`` for a scalar trial, otherwise
        ``(len(trial), len(keys))``.
    """
    scalar_trial = np.ndim(trial) == 0
    base = stream_base(seed, site_id, trial).reshape(-1, 1)
    k = _u64(np.asarray(keys, dtype=np.uint64)).reshape(1, -1)
    with np.errstate(over="ignore"):
        z = _mix(base + (k + np.uint64(1)) * _GOLDEN)
    u = (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT
    return u[0] if scalar_trial else u
