"""Counter-based random streams.

Every random number is a pure function of a 64-bit key and a position
counter, ``u = mix(key, counter)``. This gives three properties the
experiment code relies on:

* a run's randomness depends only on its own key, so adding runs to a
  campaign never perturbs earlier runs;
* many independent streams can be advanced in one vectorized numpy call
  (one lane per stream), with results identical to advancing them one at
  a time;
* a lazily-drawn i.i.d. sample is a well-defined virtual array: the j-th
  example of a stream is fixed before anything reads it.

The mixer is the SplitMix64 finalizer applied to ``key ^ counter * gamma``.
Uniforms keep the top 53 bits.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SPAWN_SALT = np.uint64(0x5851F42D4C957F2D)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53


def _mix_inplace(z: np.ndarray) -> np.ndarray:
    z += _GOLDEN
    z ^= z >> _S30
    z *= _M1
    z ^= z >> _S27
    z *= _M2
    z ^= z >> _S31
    return z


def hash64(keys, counters) -> np.ndarray:
    """Mix key/counter pairs (broadcast) into 64-bit words."""
    keys = np.asarray(keys, dtype=np.uint64)
    # wraparound is the point; numpy only warns about it for 0-d inputs
    with np.errstate(over="ignore"):
        z = keys ^ (np.asarray(counters).astype(np.uint64) * _GOLDEN)
        return _mix_inplace(z)


def uniforms(keys, starts, count: int) -> np.ndarray:
    """Uniforms in [0, 1) at positions ``starts .. starts+count-1`` per lane.

    Returns an array of shape ``(len(keys), count)``.
    """
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1, 1)
    starts = np.asarray(starts, dtype=np.uint64).reshape(-1, 1)
    z = hash64(keys, starts + np.arange(count, dtype=np.uint64))
    z >>= _S11
    out = z.astype(np.float64)
    out *= _TWO_M53
    return out


def child_keys(keys, indices) -> np.ndarray:
    """Keys of the children ``indices`` of ``keys`` (broadcast split).

    ``Stream(key=k).spawn()`` returns child ``0`` of ``k``, the next spawn
    child ``1``, and so on; this function computes the same keys for many
    parents or indices at once.
    """
    return hash64(np.asarray(keys, dtype=np.uint64) ^ _SPAWN_SALT, np.asarray(indices))


def seed_key(seed: int, *labels) -> int:
    """Derive a 64-bit key from an integer seed and optional labels."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(16, "little", signed=True))
    for label in labels:
        h.update(b"\x00" + str(label).encode())
    return int.from_bytes(h.digest(), "little")


class Stream:
    """A single seeded stream: a key plus a read position.

    ``Stream(seed)`` is the usual entry point; ``spawn()`` hands out
    independent child streams and advances this one, so two consecutive
    spawns never coincide.
    """

    __slots__ = ("key", "counter")

    def __init__(self, seed: int = 0, *, key: int | None = None, counter: int = 0):
        self.key = seed_key(seed) if key is None else int(key)
        self.counter = int(counter)

    def __repr__(self):
        return f"Stream(key={self.key:#018x}, counter={self.counter})"

    def uniforms(self, count: int) -> np.ndarray:
        out = uniforms([self.key], [self.counter], count)[0]
        self.counter += count
        return out

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def spawn(self) -> Stream:
        child = int(child_keys(self.key, [self.counter])[0])
        self.counter += 1
        return Stream(key=child)

    def lane_keys(self, count: int) -> np.ndarray:
        """Keys for ``count`` lanes; advances past them."""
        keys = child_keys(self.key, np.arange(self.counter, self.counter + count, dtype=np.uint64))
        self.counter += count
        return keys


def as_stream(rng) -> Stream:
    if isinstance(rng, Stream):
        return rng
    if rng is None:
        return Stream(0)
    if isinstance(rng, (int, np.integer)):
        return Stream(int(rng))
    raise TypeError(f"expected a Stream or an integer seed, got {type(rng).__name__}")
