"""Counter-based random numbers.

Every random draw is a pure function of ``(seed, stream, counter)``, so
parallel kernels produce the same numbers regardless of scheduling.
"""
import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def stream_key(seed, stream):
    """Key for one independent stream (e.g. one texel or one pixel)."""
    return _mix(_mix(np.uint64(seed)) ^ np.uint64(stream))


@numba.njit(cache=True, inline="always")
def uniform(key, counter):
    """Uniform double in [0, 1) for draw ``counter`` of stream ``key``."""
    z = _mix(key ^ _mix(np.uint64(counter)))
    return np.float64(z >> _S11) * _INV53


def derive_seed(*parts: int) -> int:
    """Combine integers into one 63-bit seed (used for per-step reseeding)."""
    key = np.uint64(0)
    for p in parts:
        key = np.uint64(stream_key(np.uint64(key), np.uint64(p)))
    return int(key >> np.uint64(1))
