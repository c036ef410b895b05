"""Counter-based random streams.

Every random number in the library is a pure function of
``(master_seed, labels, counter)``.  A stream is addressed by a chain of
``(purpose, index)`` labels, hashed into a 64-bit key with the splitmix64
finalizer; the n-th 64-bit draw of a stream is ``mix64(key + (n + 1) * GAMMA)``.
Because no generator state is shared, draws can be produced in any order or
in parallel and the results never change.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_PI = 2.0 * np.pi


def mix64(z):
    """splitmix64 finalizer on a Python int or a ``uint64`` array."""
    if isinstance(z, np.ndarray):
        z = z.astype(np.uint64, copy=True)
        z ^= z >> 30
        z *= np.uint64(_M1)
        z ^= z >> 27
        z *= np.uint64(_M2)
        z ^= z >> 31
        return z
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def tag_hash(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode(), digest_size=8).digest(), "little")


def _bits(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    # keys and counters broadcast against each other
    with np.errstate(over="ignore"):
        z = keys + (counters.astype(np.uint64) + np.uint64(1)) * np.uint64(GAMMA)
    return mix64(z)


def _to_unit(bits: np.ndarray) -> np.ndarray:
    """Top 53 bits to a double in [0, 1)."""
    return (bits >> 11).astype(np.float64) * (1.0 / 9007199254740992.0)


def _box_muller(keys: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Standard normals ``offset .. offset+n-1`` of each stream in ``keys``.

    Normal ``k`` comes from the uniform pair ``(2*(k//2), 2*(k//2)+1)``: even
    ``k`` takes the cosine branch, odd ``k`` the sine branch.
    """
    keys = np.asarray(keys, dtype=np.uint64)[..., None]
    first_pair = offset // 2
    last_pair = (offset + n + 1) // 2
    pairs = np.arange(first_pair, last_pair, dtype=np.uint64)
    u1 = 1.0 - _to_unit(_bits(keys, 2 * pairs))  # (0, 1]
    u2 = _to_unit(_bits(keys, 2 * pairs + 1))
    r = np.sqrt(-2.0 * np.log(u1))
    out = np.empty(keys.shape[:-1] + (2 * len(pairs),))
    out[..., 0::2] = r * np.cos(_TWO_PI * u2)
    out[..., 1::2] = r * np.sin(_TWO_PI * u2)
    start = offset - 2 * first_pair
    return out[..., start:start + n]


@dataclass(frozen=True)
class SeedSpec:
    """Address of one random stream: a master seed plus a path of labels."""

    master_seed: int
    labels: tuple = ()

    def child(self, purpose: str, index: int = 0) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.labels + ((purpose, int(index)),))

    @property
    def key(self) -> int:
        k = mix64(self.master_seed & MASK64)
        for tag, idx in self.labels:
            k = mix64(k ^ tag_hash(tag))
            k = mix64(k + (idx + 1) * GAMMA)
        return k

    def child_keys(self, purpose: str, count: int, start: int = 0) -> np.ndarray:
        """Keys of ``child(purpose, i)`` for ``i = start .. start+count-1``, vectorised."""
        base = mix64(self.key ^ tag_hash(purpose))
        idx = np.arange(start, start + count, dtype=np.uint64)
        return _bits(np.uint64(base), idx)

    def bits(self, n: int, offset: int = 0) -> np.ndarray:
        return _bits(np.uint64(self.key), np.arange(offset, offset + n, dtype=np.uint64))

    def uniform(self, n: int, offset: int = 0) -> np.ndarray:
        return _to_unit(self.bits(n, offset))

    def normal(self, n: int, offset: int = 0) -> np.ndarray:
        return _box_muller(np.uint64(self.key), n, offset)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def to_dict(self) -> dict:
        return {"master_seed": self.master_seed, "labels": [list(lab) for lab in self.labels]}

    @classmethod
    def from_dict(cls, d) -> "SeedSpec":
        if isinstance(d, int):
            return cls(d)
        return cls(int(d["master_seed"]), tuple((str(t), int(i)) for t, i in d.get("labels", [])))


def normals_for_keys(keys: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Array of shape ``keys.shape + (n,)`` with standard normals per stream."""
    return _box_muller(keys, n, offset)


def as_seed(seed) -> SeedSpec:
    """Accept a ``SeedSpec``, a master seed integer or a ``to_dict()`` record."""
    if isinstance(seed, SeedSpec):
        return seed
    if isinstance(seed, (int, np.integer)):
        return SeedSpec(int(seed))
    return SeedSpec.from_dict(seed)
