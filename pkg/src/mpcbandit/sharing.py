"""Additive and XOR secret sharing, and conversions between the two.

The centralised helpers (:func:`share_arithmetic`, :func:`reconstruct`, ...)
act on the full list of per-party shares and are used by the dealer and by
tests. The conversions :func:`a2b`, :func:`b2a` and :func:`b2a_single_bit`
are party-local protocols: each compute party calls them with its own share
and a :class:`~mpcbandit.transport.Runtime`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ring import RING_BITS, RING_DTYPE, as_ring, random_ring


class ShareMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ArithmeticShare:
    """One party's additive share of a ring tensor."""

    party_id: int
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", as_ring(self.data))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _peer(self, other: "ArithmeticShare") -> np.ndarray:
        if not isinstance(other, ArithmeticShare):
            raise TypeError("use add_public / mul_public for public operands")
        if other.party_id != self.party_id:
            raise ShareMismatchError("shares belong to different parties")
        return other.data

    def __add__(self, other: "ArithmeticShare") -> "ArithmeticShare":
        return ArithmeticShare(self.party_id, self.data + self._peer(other))

    def __sub__(self, other: "ArithmeticShare") -> "ArithmeticShare":
        return ArithmeticShare(self.party_id, self.data - self._peer(other))

    def __neg__(self) -> "ArithmeticShare":
        return ArithmeticShare(self.party_id, np.zeros_like(self.data) - self.data)

    def __getitem__(self, idx) -> "ArithmeticShare":
        return ArithmeticShare(self.party_id, self.data[idx])

    def add_public(self, value) -> "ArithmeticShare":
        """Add a public ring value; only party 0 changes its share."""
        if self.party_id != 0:
            return ArithmeticShare(self.party_id, self.data + np.zeros_like(as_ring(value)))
        return ArithmeticShare(self.party_id, self.data + as_ring(value))

    def mul_public(self, value) -> "ArithmeticShare":
        """Multiply by a public ring integer (no rescaling)."""
        return ArithmeticShare(self.party_id, self.data * as_ring(value))

    def reshape(self, *shape) -> "ArithmeticShare":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return ArithmeticShare(self.party_id, self.data.reshape(shape))

    @property
    def T(self) -> "ArithmeticShare":
        return ArithmeticShare(self.party_id, np.swapaxes(self.data, -1, -2))


@dataclass(frozen=True)
class BinaryShare:
    """One party's XOR share of 64-bit words."""

    party_id: int
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", as_ring(self.data))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __xor__(self, other: "BinaryShare") -> "BinaryShare":
        if other.party_id != self.party_id:
            raise ShareMismatchError("shares belong to different parties")
        return BinaryShare(self.party_id, self.data ^ other.data)

    def xor_public(self, value) -> "BinaryShare":
        if self.party_id != 0:
            return self
        return BinaryShare(self.party_id, self.data ^ as_ring(value))

    def and_public(self, value) -> "BinaryShare":
        return BinaryShare(self.party_id, self.data & as_ring(value))

    def __lshift__(self, k: int) -> "BinaryShare":
        return BinaryShare(self.party_id, self.data << np.uint64(k))

    def __rshift__(self, k: int) -> "BinaryShare":
        return BinaryShare(self.party_id, self.data >> np.uint64(k))

    def __getitem__(self, idx) -> "BinaryShare":
        return BinaryShare(self.party_id, self.data[idx])


# -- centralised sharing ----------------------------------------------------


def share_arithmetic(x, parties: int, rng: np.random.Generator, owner: int = 0) -> list[ArithmeticShare]:
    """Split ``x`` into ``parties`` additive shares; the owner's share is ``x`` minus the rest."""
    if parties < 2:
        raise ValueError("need at least two parties")
    x = as_ring(x)
    others = {p: random_ring(rng, x.shape) for p in range(parties) if p != owner}
    own = x - sum(others.values(), np.zeros_like(x))
    return [ArithmeticShare(p, own if p == owner else others[p]) for p in range(parties)]


def share_binary(x, parties: int, rng: np.random.Generator, owner: int = 0) -> list[BinaryShare]:
    if parties < 2:
        raise ValueError("need at least two parties")
    x = as_ring(x)
    others = {p: random_ring(rng, x.shape) for p in range(parties) if p != owner}
    own = x.copy()
    for v in others.values():
        own ^= v
    return [BinaryShare(p, own if p == owner else others[p]) for p in range(parties)]


def _check(shares: Sequence) -> None:
    if len(shares) < 1:
        raise ShareMismatchError("no shares given")
    ids = [s.party_id for s in shares]
    if sorted(ids) != list(range(len(shares))):
        raise ShareMismatchError(f"expected one share per party, got party ids {ids}")
    if len({s.shape for s in shares}) != 1:
        raise ShareMismatchError("share shapes differ")


def reconstruct(shares: Sequence[ArithmeticShare]) -> np.ndarray:
    _check(shares)
    total = np.zeros_like(shares[0].data)
    for s in shares:
        total = total + s.data
    return total


def reconstruct_binary(shares: Sequence[BinaryShare]) -> np.ndarray:
    _check(shares)
    total = np.zeros_like(shares[0].data)
    for s in shares:
        total = total ^ s.data
    return total


# -- party-side binary gates --------------------------------------------------


def open_binary(rt, values: Sequence[np.ndarray], leaf: str = "open") -> list[np.ndarray]:
    """Reveal XOR-shared arrays to all compute parties in one round."""
    got = rt.all_to_all([as_ring(v) for v in values], leaf)
    out = []
    for i, v in enumerate(values):
        acc = as_ring(v).copy()
        for arrays in got.values():
            acc ^= arrays[i]
        out.append(acc)
    return out


def and_many(rt, pairs: Sequence[tuple[BinaryShare, BinaryShare]], leaf: str = "and") -> list[BinaryShare]:
    """Bitwise AND of several pairs of XOR-shared words using one round and one binary triple batch."""
    sizes = [x.data.size for x, _ in pairs]
    xs = np.concatenate([x.data.reshape(-1) for x, _ in pairs])
    ys = np.concatenate([y.data.reshape(-1) for _, y in pairs])
    a, b, c = rt.store.binary_triple(xs.size).consume()
    d, e = open_binary(rt, [xs ^ a, ys ^ b], leaf)
    z = c ^ (d & b) ^ (e & a)
    if rt.is_leader:
        z = z ^ (d & e)
    out, off = [], 0
    for (x, _), n in zip(pairs, sizes):
        out.append(BinaryShare(rt.index, z[off:off + n].reshape(x.shape)))
        off += n
    return out


def bits_to_arith(rt, bit: BinaryShare, leaf: str = "b2a") -> ArithmeticShare:
    """XOR-shared bits (value in bit 0 of each word) to arithmetic shares of 0/1, one round."""
    return multilinear_to_arith(rt, [[bit]], [{(0,): 1}], leaf)[0]


def multilinear_to_arith(rt, groups: Sequence[Sequence[BinaryShare]], polys: Sequence[dict],
                         leaf: str = "b2a") -> list[ArithmeticShare]:
    """Evaluate integer polynomials of XOR-shared bits with arithmetic output in one round.

    ``groups[g]`` holds ``k`` bit tensors (bit 0 of each word is the value) and
    ``polys[g]`` maps monomials (tuples of variable indices) to integer
    coefficients. The dealer supplies random bits ``m`` shared both ways,
    together with arithmetic shares of every product of them. After opening
    ``d = bit ^ m`` each bit equals ``d + (1 - 2d) m``, so every monomial is a
    public linear combination of the dealer's product shares.
    """
    opened_in, mats = [], []
    for bits in groups:
        k = len(bits)
        n = bits[0].data.size
        m_bin, m_prod = rt.store.dabits(k, n).consume()
        mats.append((k, n, bits[0].shape, m_prod))
        for j, b in enumerate(bits):
            opened_in.append((b.data.reshape(-1) & np.uint64(1)) ^ m_bin[j])
    opened = open_binary(rt, opened_in, leaf)
    results, pos = [], 0
    for (k, n, shape, m_prod), poly in zip(mats, polys):
        d = opened[pos:pos + k]
        pos += k
        acc = np.zeros(n, dtype=RING_DTYPE)
        for monomial, coeff in poly.items():
            acc += _monomial_share(rt, monomial, d, m_prod, n) * as_ring(coeff)
        results.append(ArithmeticShare(rt.index, acc.reshape(shape)))
    return results


def _monomial_share(rt, monomial, d, m_prod, n) -> np.ndarray:
    # prod_{i in S} (d_i + s_i m_i) with s_i = 1 - 2 d_i, expanded over subsets T of S
    terms = tuple(sorted(set(monomial)))
    acc = np.zeros(n, dtype=RING_DTYPE)
    for mask in range(1 << len(terms)):
        public = np.ones(n, dtype=RING_DTYPE)
        subset = 0
        for pos, var in enumerate(terms):
            if mask >> pos & 1:
                public = public * (np.uint64(1) - np.uint64(2) * d[var])
                subset |= 1 << var
            else:
                public = public * d[var]
        if subset == 0:
            if rt.is_leader:
                acc += public
        else:
            acc += public * m_prod[subset - 1]
    return acc


# -- adders -------------------------------------------------------------------


def reduce_to_two(rt, addends: list[BinaryShare]) -> list[BinaryShare]:
    """Wallace-tree reduction of several XOR-shared addends to two, one round per layer."""
    with rt.scope("csa"):
        while len(addends) > 2:
            nxt = []
            full = len(addends) // 3
            # one round per layer: batch every carry-save triple of this layer
            pairs, sums = [], []
            for i in range(full):
                a, b, c = addends[3 * i:3 * i + 3]
                ab = a ^ b
                pairs += [(a, b), (c, ab)]
                sums.append(ab ^ c)
            ands = and_many(rt, pairs, "and")
            for i in range(full):
                nxt += [sums[i], (ands[2 * i] ^ ands[2 * i + 1]) << 1]
            nxt += addends[3 * full:]
            addends = nxt
    return addends


def _prefix_levels(rt, g: BinaryShare, p: BinaryShare, shifts: Sequence[int]) -> tuple[BinaryShare, BinaryShare]:
    for s in shifts:
        pg, pp = and_many(rt, [(p, g << s), (p, p << s)], f"ks{s}")
        g = g ^ pg
        p = pp
    return g, p


def binary_add(rt, a: BinaryShare, b: BinaryShare) -> BinaryShare:
    """Kogge-Stone adder on XOR-shared 64-bit words: one generate round plus six prefix rounds."""
    with rt.scope("adder"):
        p = a ^ b
        (g,) = and_many(rt, [(a, b)], "gen")
        g, _ = _prefix_levels(rt, g, p, [1, 2, 4, 8, 16, 32])
        return p ^ (g << 1)


def trivial_binary_shares(rt, x: ArithmeticShare) -> list[BinaryShare]:
    """Each arithmetic share viewed as a binary-shared addend held by its owner alone."""
    zero = np.zeros_like(x.data)
    return [BinaryShare(rt.index, x.data if q == rt.index else zero) for q in range(rt.n_parties)]


def a2b(rt, x: ArithmeticShare) -> BinaryShare:
    """Arithmetic to binary sharing: add the parties' shares with a binary circuit."""
    with rt.scope("a2b"):
        a, b = reduce_to_two(rt, trivial_binary_shares(rt, x))
        return binary_add(rt, a, b)


def b2a(rt, y: BinaryShare) -> ArithmeticShare:
    """Binary to arithmetic sharing via per-bit conversion, weights 2^0..2^63."""
    with rt.scope("b2a"):
        shape = y.shape
        flat = y.data.reshape(-1)
        positions = np.arange(RING_BITS, dtype=np.uint64)
        bits = (flat[:, None] >> positions[None, :]) & np.uint64(1)
        arith = bits_to_arith(rt, BinaryShare(rt.index, bits))
        weights = np.uint64(1) << positions
        total = (arith.data * weights[None, :]).sum(axis=1, dtype=RING_DTYPE)
        return ArithmeticShare(rt.index, total.reshape(shape))


def b2a_single_bit(rt, bit: BinaryShare) -> ArithmeticShare:
    """Arithmetic share of 0/1 from an XOR-shared bit held in bit 0 of each word."""
    with rt.scope("b2a_bit"):
        return bits_to_arith(rt, bit)


def msb_arith(rt, x: ArithmeticShare) -> ArithmeticShare:
    """Arithmetic 0/1 share of the sign bit of ``x``.

    The carry into bit 63 is the group-generate over bits 0..62. Five prefix
    rounds cover spans of 32 bits; the last combine step, the XOR with the
    top propagate bit and the conversion to arithmetic shares are merged
    into one evaluation of ``u + P*G - 2*u*P*G``.
    """
    with rt.scope("msb"):
        a, b = reduce_to_two(rt, trivial_binary_shares(rt, x))
        p = a ^ b
        (g,) = and_many(rt, [(a, b)], "gen")
        g, pp = _prefix_levels(rt, g, p, [1, 2, 4, 8, 16])
        top_p = p >> 63
        u = top_p ^ (g >> 62)          # p_63 xor G[31..62]
        prop_hi = pp >> 62             # P[31..62]
        gen_lo = g >> 30               # G[0..30]
        poly = {(0,): 1, (1, 2): 1, (0, 1, 2): -2}
        return multilinear_to_arith(rt, [[u, prop_hi, gen_lo]], [poly], "final")[0]
