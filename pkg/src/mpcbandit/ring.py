"""Fixed-point encoding and wrapping arithmetic over Z/2^64.

Ring elements are stored as ``numpy.uint64`` arrays; numpy's unsigned
integer arithmetic already wraps modulo 2^64, so the ring operations are thin
wrappers that normalise their inputs. Negative reals are mapped with two's
complement, which makes the most significant bit the sign bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Q = 1 << 64
HALF_Q = 1 << 63
RING_DTYPE = np.uint64
RING_BITS = 64


class EncodingRangeError(ValueError):
    """Raised when a real value does not fit the signed fixed-point range."""


@dataclass(frozen=True)
class FixedPointConfig:
    precision_bits: int = 20
    # Pre-add half a unit per party before local truncation shifts so the
    # rounding error is zero-mean; False keeps plain flooring.
    unbiased_truncation: bool = True

    def __post_init__(self):
        if not 0 < self.precision_bits < 32:
            raise ValueError(f"precision_bits must be in (0, 32), got {self.precision_bits}")

    @property
    def scale(self) -> int:
        return 1 << self.precision_bits


DEFAULT_CONFIG = FixedPointConfig()


def as_ring(x) -> np.ndarray:
    """Coerce integers (Python ints may be negative or >= 2^63) to a uint64 array."""
    arr = np.asarray(x)
    if arr.dtype == RING_DTYPE:
        return arr
    if arr.dtype == np.int64:
        return arr.view(RING_DTYPE)
    if arr.dtype == object or arr.dtype.kind in "iu":
        flat = [int(v) % Q for v in arr.reshape(-1).tolist()]
        return np.array(flat, dtype=RING_DTYPE).reshape(arr.shape)
    raise TypeError(f"cannot interpret dtype {arr.dtype} as ring elements")


def to_signed(x) -> np.ndarray:
    """Two's-complement reinterpretation as int64 (no copy)."""
    return as_ring(x).view(np.int64)


def encode(x, cfg: FixedPointConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Round ``x * 2^L`` to the nearest integer (ties to even) and map into the ring."""
    scaled = np.rint(np.asarray(x, dtype=np.float64) * cfg.scale)
    if not np.all(np.isfinite(scaled)) or np.any(np.abs(scaled) >= float(HALF_Q)):
        raise EncodingRangeError("value magnitude exceeds the signed fixed-point range")
    return scaled.astype(np.int64).view(RING_DTYPE)


def decode(x, cfg: FixedPointConfig = DEFAULT_CONFIG) -> np.ndarray:
    return to_signed(x).astype(np.float64) / cfg.scale


def ring_add(a, b) -> np.ndarray:
    return as_ring(a) + as_ring(b)


def ring_sub(a, b) -> np.ndarray:
    return as_ring(a) - as_ring(b)


def ring_mul(a, b) -> np.ndarray:
    return as_ring(a) * as_ring(b)


def ring_neg(a) -> np.ndarray:
    return np.zeros_like(as_ring(a)) - as_ring(a)


def ring_matmul(a, b) -> np.ndarray:
    """``numpy.matmul`` semantics (batched), wrapping modulo 2^64."""
    return np.matmul(as_ring(a), as_ring(b))


def msb(x) -> np.ndarray:
    return (as_ring(x) >> np.uint64(63)).astype(np.uint64)


def random_ring(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniform elements of Z/2^64 taken straight from the raw 64-bit generator output."""
    shape = (int(shape),) if np.isscalar(shape) else tuple(shape)
    return rng.bit_generator.random_raw(math.prod(shape)).reshape(shape)


def wrap_count(shares, signed: bool = True) -> np.ndarray:
    """Number of times the integer sum of ``shares`` passes the modulus.

    ``sum(shares) == reconstruct(shares) + wrap_count * Q`` over the integers,
    where shares and the reconstructed value use the signed representatives
    in [-Q/2, Q/2) when ``signed`` and [0, Q) otherwise.
    """
    shares = [as_ring(s) for s in shares]
    total = np.zeros_like(shares[0])
    carries = np.zeros(total.shape, dtype=np.int64)
    for s in shares:
        nxt = total + s
        carries += (nxt < total).astype(np.int64)
        total = nxt
    if not signed:
        return carries
    negatives = sum((s >= np.uint64(HALF_Q)).astype(np.int64) for s in shares)
    return carries - negatives + (total >= np.uint64(HALF_Q)).astype(np.int64)
