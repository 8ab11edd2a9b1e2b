"""Trusted dealer for the offline phase.

The dealer produces every piece of correlated randomness the online
protocols consume: Beaver triples and square pairs, binary AND triples,
random bits shared both ways ("dabits" with products for multi-bit
conversion), wrap-count helpers for truncation, and the exploration samples
of the bandit (Bernoulli draws, uniforms, permutations).

Parties pull items through a :class:`DealerView`. Items are indexed; every
party consumes index ``i`` for the same protocol step, and the first request
for an index materialises it from the seeded generator. Since the consumption
schedule of an oblivious protocol does not depend on the data, this is
equivalent to generating the whole schedule up front, and the request log can
be replayed with :meth:`Dealer.materialize` to write per-party files.
"""

from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ring import DEFAULT_CONFIG, FixedPointConfig, RING_DTYPE, encode, random_ring, ring_matmul, wrap_count
from .sharing import share_arithmetic, share_binary
from .transport import decode_frame, encode_frame


class DealerError(RuntimeError):
    pass


class DealerExhausted(DealerError):
    pass


class MaterialReuseError(DealerError):
    pass


class MaterialMismatchError(DealerError):
    """Parties asked for different material at the same schedule position."""


@dataclass(frozen=True)
class Request:
    kind: str
    params: tuple

    def to_json(self) -> str:
        return json.dumps([self.kind, _jsonable(self.params)])

    @classmethod
    def from_json(cls, text: str) -> "Request":
        kind, params = json.loads(text)
        return cls(kind, _tupled(params))


def _jsonable(x):
    if isinstance(x, tuple):
        return [_jsonable(v) for v in x]
    return x


def _tupled(x):
    if isinstance(x, list):
        return tuple(_tupled(v) for v in x)
    return x


class Material:
    """One party's share of a dealer item; consumable exactly once."""

    __slots__ = ("request", "arrays", "_used")

    def __init__(self, request: Request, arrays: tuple[np.ndarray, ...]):
        self.request = request
        self.arrays = arrays
        self._used = False

    def consume(self) -> tuple[np.ndarray, ...]:
        if self._used:
            raise MaterialReuseError(f"{self.request.kind} material consumed twice")
        self._used = True
        return self.arrays


@dataclass
class BeaverTriple:
    """Shares of ``a``, ``b`` and ``c = a*b`` (or ``a @ b``) for every party."""

    a: list
    b: list
    c: list
    op: str = "mul"


@dataclass
class BeaverSquarePair:
    a: list
    b: list


@dataclass
class WrapHelper:
    r: list
    theta_r: list
    signed: bool = True


def _shape(s) -> tuple[int, ...]:
    return (int(s),) if np.isscalar(s) else tuple(int(v) for v in s)


def _split(values: np.ndarray, n: int, rng, binary=False) -> list[np.ndarray]:
    shares = (share_binary if binary else share_arithmetic)(values, n, rng)
    return [s.data for s in shares]


def _monomial_masks(k: int) -> list[int]:
    return list(range(1, 1 << k))


class Dealer:
    """Seeded generator of correlated randomness for ``n_parties`` compute parties.

    ``seed=None`` draws from OS entropy. ``capacity`` bounds the number of
    items that may be handed out; going past it raises :class:`DealerExhausted`.
    """

    def __init__(self, n_parties: int, seed: int | None = None, cfg: FixedPointConfig = DEFAULT_CONFIG,
                 capacity: int | None = None):
        if n_parties < 2:
            raise ValueError("need at least two compute parties")
        self.n_parties = n_parties
        self.seed = seed
        self.cfg = cfg
        self.capacity = capacity
        self.rng = np.random.default_rng(seed)
        self.request_log: list[Request] = []
        self.sample_log: list[tuple[str, np.ndarray]] = []
        self._pending: dict[int, tuple[Request, list[tuple], set]] = {}
        self._cursor = [0] * n_parties
        self._lock = threading.Lock()

    @property
    def seed_commitment(self) -> bytes:
        return hashlib.sha256(repr(self.seed).encode()).digest()

    # -- generators, all parties at once --------------------------------------

    def generate_triples(self, count: int, shape_a, shape_b=None, op: str = "mul") -> list[BeaverTriple]:
        if count <= 0:
            raise ValueError("count must be positive")
        out = []
        for _ in range(count):
            a, b, c = self._triple(_shape(shape_a), _shape(shape_b if shape_b is not None else shape_a), op)
            out.append(BeaverTriple(a, b, c, op))
        return out

    def generate_square_pairs(self, count: int, shape) -> list[BeaverSquarePair]:
        return [BeaverSquarePair(*self._square(_shape(shape))) for _ in range(count)]

    def generate_bernoulli(self, epsilon: float, count: int) -> list[np.ndarray]:
        """Shares of encoded Bernoulli(epsilon) draws (values 0 or 2^L)."""
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        draws = (self.rng.random(count) < epsilon).astype(np.float64)
        self.sample_log.append(("bernoulli", draws))
        return _split(encode(draws, self.cfg), self.n_parties, self.rng)

    def generate_uniform(self, count) -> list[np.ndarray]:
        """Shares of encoded Uniform[0, 1) draws on the 2^-L grid."""
        shape = _shape(count)
        ints = self.rng.integers(0, self.cfg.scale, size=shape, dtype=np.int64)
        self.sample_log.append(("uniform", ints / self.cfg.scale))
        return _split(ints.view(RING_DTYPE), self.n_parties, self.rng)

    def generate_permutation(self, n: int, batch=()) -> list[np.ndarray]:
        """Shares of random permutations of 1..n (plain integers), one per batch entry."""
        if n < 1:
            raise ValueError("n must be at least 1")
        batch = _shape(batch) if batch != () else ()
        keys = self.rng.random((*batch, n))
        perm = np.argsort(keys, axis=-1).astype(np.int64) + 1
        self.sample_log.append(("permutation", perm))
        return _split(perm.view(RING_DTYPE), self.n_parties, self.rng)

    def generate_wrap_helpers(self, count, signed: bool = True) -> WrapHelper:
        shape = _shape(count)
        r = [random_ring(self.rng, shape) for _ in range(self.n_parties)]
        theta = wrap_count(r, signed=signed)
        theta_sh = _split(theta.view(RING_DTYPE), self.n_parties, self.rng)
        return WrapHelper(r, theta_sh, signed)

    def generate_binary_triples(self, n: int) -> tuple[list, list, list]:
        a = random_ring(self.rng, n)
        b = random_ring(self.rng, n)
        return (_split(a, self.n_parties, self.rng, True), _split(b, self.n_parties, self.rng, True),
                _split(a & b, self.n_parties, self.rng, True))

    def generate_dabits(self, k: int, n: int) -> tuple[list, list]:
        """Random bits shared by XOR plus arithmetic shares of all their nonempty products."""
        bits = (random_ring(self.rng, (k, n)) & np.uint64(1))
        prods = np.empty((len(_monomial_masks(k)), n), dtype=RING_DTYPE)
        for idx, mask in enumerate(_monomial_masks(k)):
            prod = np.ones(n, dtype=RING_DTYPE)
            for j in range(k):
                if mask >> j & 1:
                    prod = prod & bits[j]
            prods[idx] = prod
        return _split(bits, self.n_parties, self.rng, True), _split(prods, self.n_parties, self.rng)

    def _triple(self, sa, sb, op):
        a = random_ring(self.rng, sa)
        b = random_ring(self.rng, sb)
        if op == "mul":
            c = a * b
        elif op == "matmul":
            c = ring_matmul(a, b)
        else:
            raise ValueError(f"unknown triple op {op!r}")
        n = self.n_parties
        return _split(a, n, self.rng), _split(b, n, self.rng), _split(c, n, self.rng)

    def _square(self, shape):
        a = random_ring(self.rng, shape)
        n = self.n_parties
        return _split(a, n, self.rng), _split(a * a, n, self.rng)

    def _generate(self, req: Request) -> list[tuple]:
        """Per-party tuples of arrays for one scheduled item."""
        kind, p = req.kind, req.params
        n = self.n_parties
        if kind == "triple":
            op, sa, sb = p
            parts = self._triple(sa, sb, op)
        elif kind == "square":
            parts = self._square(p[0])
        elif kind == "btriple":
            parts = self.generate_binary_triples(p[0])
        elif kind == "dabits":
            parts = self.generate_dabits(*p)
        elif kind == "wrap":
            shape, signed = p
            h = self.generate_wrap_helpers(shape, signed)
            parts = (h.r, h.theta_r)
        elif kind == "bernoulli":
            parts = (self.generate_bernoulli(*p),)
        elif kind == "uniform":
            parts = (self.generate_uniform(p[0]),)
        elif kind == "permutation":
            parts = (self.generate_permutation(*p),)
        else:
            raise DealerError(f"unknown material kind {kind!r}")
        return [tuple(part[q] for part in parts) for q in range(n)]

    # -- on-demand serving ----------------------------------------------------

    def take(self, party: int, req: Request) -> Material:
        with self._lock:
            idx = self._cursor[party]
            entry = self._pending.get(idx)
            if entry is None:
                if idx < len(self.request_log):
                    raise MaterialReuseError(f"item {idx} already released")
                if self.capacity is not None and idx >= self.capacity:
                    raise DealerExhausted(f"dealer capacity of {self.capacity} items exhausted")
                entry = (req, self._generate(req), set(range(self.n_parties)))
                self._pending[idx] = entry
                self.request_log.append(req)
            stored, per_party, waiting = entry
            if stored != req:
                raise MaterialMismatchError(
                    f"party {party} requested {req} at position {idx}, schedule holds {stored}")
            if party not in waiting:
                raise MaterialReuseError(f"party {party} already consumed item {idx}")
            waiting.discard(party)
            if not waiting:
                del self._pending[idx]
            self._cursor[party] = idx + 1
            return Material(req, per_party[party])

    def view(self, party: int) -> "DealerView":
        return DealerView(lambda req: self.take(party, req))

    def views(self) -> dict[int, "DealerView"]:
        return {p: self.view(p) for p in range(self.n_parties)}

    def materialize(self, requests: list[Request]) -> list[list[Material]]:
        """Generate a fixed schedule up front; returns one list of items per party."""
        per_party: list[list[Material]] = [[] for _ in range(self.n_parties)]
        for req in requests:
            for q, arrays in enumerate(self._generate(req)):
                per_party[q].append(Material(req, arrays))
        return per_party

    def export(self, requests: list[Request], directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for q, items in enumerate(self.materialize(requests)):
            path = directory / f"party{q}.dealer"
            write_party_file(path, q, self.n_parties, self.seed_commitment, items)
            paths.append(path)
        return paths


class DealerView:
    """Typed request API used by the protocols; backed by a dealer or a material file."""

    def __init__(self, take):
        self._take = take

    def triple(self, shape_a, shape_b, op: str = "mul") -> Material:
        return self._take(Request("triple", (op, _shape(shape_a), _shape(shape_b))))

    def square(self, shape) -> Material:
        return self._take(Request("square", (_shape(shape),)))

    def binary_triple(self, n: int) -> Material:
        return self._take(Request("btriple", (int(n),)))

    def dabits(self, k: int, n: int) -> Material:
        return self._take(Request("dabits", (int(k), int(n))))

    def wrap(self, shape, signed: bool = True) -> Material:
        return self._take(Request("wrap", (_shape(shape), bool(signed))))

    def bernoulli(self, epsilon: float, count: int) -> Material:
        return self._take(Request("bernoulli", (float(epsilon), int(count))))

    def uniform(self, shape) -> Material:
        return self._take(Request("uniform", (_shape(shape),)))

    def permutation(self, n: int, batch=()) -> Material:
        return self._take(Request("permutation", (int(n), _shape(batch) if batch != () else ())))


# -- per-party files ----------------------------------------------------------

FILE_MAGIC = b"MPCDLR01"
FILE_VERSION = 1
_FILE_HEADER = struct.Struct("<8sHHHQ32s")


def write_party_file(path, party: int, n_parties: int, commitment: bytes, items: list[Material]) -> None:
    with open(path, "wb") as fh:
        fh.write(_FILE_HEADER.pack(FILE_MAGIC, FILE_VERSION, party, n_parties, len(items), commitment))
        for item in items:
            meta = item.request.to_json().encode()
            frame = encode_frame(0, 0, item.request.kind, list(item.arrays))
            fh.write(struct.pack("<I", len(meta)) + meta + struct.pack("<Q", len(frame)) + frame)


@dataclass
class MaterialFile:
    party: int
    n_parties: int
    commitment: bytes
    items: list[Material] = field(default_factory=list)
    cursor: int = 0

    def take(self, req: Request) -> Material:
        if self.cursor >= len(self.items):
            raise DealerExhausted(f"material file for party {self.party} holds {len(self.items)} items")
        item = self.items[self.cursor]
        if item.request != req:
            raise MaterialMismatchError(f"position {self.cursor}: requested {req}, file holds {item.request}")
        self.cursor += 1
        return item

    def view(self) -> DealerView:
        return DealerView(self.take)


def read_party_file(path) -> MaterialFile:
    data = Path(path).read_bytes()
    magic, version, party, n_parties, count, commitment = _FILE_HEADER.unpack_from(data, 0)
    if magic != FILE_MAGIC or version != FILE_VERSION:
        raise DealerError(f"{path}: not a dealer material file (version {version})")
    off = _FILE_HEADER.size
    out = MaterialFile(party, n_parties, commitment)
    for _ in range(count):
        (mlen,) = struct.unpack_from("<I", data, off)
        off += 4
        req = Request.from_json(data[off:off + mlen].decode())
        off += mlen
        (flen,) = struct.unpack_from("<Q", data, off)
        off += 8
        frame = decode_frame(data[off:off + flen])
        off += flen
        out.items.append(Material(req, tuple(frame.arrays)))
    return out


__all__ = [
    "BeaverSquarePair", "BeaverTriple", "Dealer", "DealerError", "DealerExhausted", "DealerView",
    "Material", "MaterialFile", "MaterialMismatchError", "MaterialReuseError", "Request", "WrapHelper",
    "read_party_file", "write_party_file",
]
