"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, index, counter)``: the
triple ``(seed, stream, index)`` is hashed into a SplitMix64 starting state
and ``counter`` advances it. Batches of trajectories can therefore be
generated in any order, chunking or thread layout with identical results.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, stream: int, index) -> np.ndarray:
    """SplitMix64 starting states for the trajectories in ``index``."""
    with np.errstate(over="ignore"):
        s = _mix(np.array([seed & _MASK], dtype=np.uint64))
        s = _mix(s + np.uint64(stream & _MASK) * _GOLDEN)
        return _mix(s + np.asarray(index, dtype=np.uint64))


def uniform(keys: np.ndarray, counter) -> np.ndarray:
    """Uniform variates in the open interval (0, 1)."""
    with np.errstate(over="ignore"):
        x = _mix(keys + (np.asarray(counter, dtype=np.uint64) + np.uint64(1)) * _GOLDEN)
    return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def normal(keys: np.ndarray, counter) -> np.ndarray:
    return ndtri(uniform(keys, counter))


def exponential(keys: np.ndarray, counter) -> np.ndarray:
    return -np.log(uniform(keys, counter))
