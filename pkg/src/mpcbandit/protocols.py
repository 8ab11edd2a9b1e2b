"""Secure computation kernels on arithmetic shares.

All functions are party-local: they take the calling party's
:class:`~mpcbandit.transport.Runtime` and its :class:`ArithmeticShare`
operands, and must be called by every compute party in the same order.

Two share scales appear throughout. *Fixed-point* shares carry values scaled
by ``B = 2^L``; *integer* shares (bits, permutations, one-hot vectors) are
unscaled. Multiplying two fixed-point shares needs a truncation by ``B``;
any product involving an integer share does not (``truncate=False``).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .ring import RING_BITS, RING_DTYPE, as_ring, encode, to_signed, wrap_count
from .sharing import ArithmeticShare, msb_arith

# x0 = c0 + c1*x + x^2/128, a minimax fit of 1/x on [1, 10]; |1 - x*x0| <= 0.328 there
RECIPROCAL_INIT = (0.817004, -0.152735, 7)
EXP_LIMIT_SQUARINGS = 8


def _share(rt, data) -> ArithmeticShare:
    return ArithmeticShare(rt.index, data)


def open_arith(rt, values: Sequence[np.ndarray], leaf: str = "open") -> list[np.ndarray]:
    """Reveal additively shared arrays to all compute parties in one round."""
    got = rt.all_to_all([as_ring(v) for v in values], leaf)
    out = []
    for i, v in enumerate(values):
        acc = as_ring(v).copy()
        for arrays in got.values():
            acc = acc + arrays[i]
        out.append(acc)
    return out


def open_value(rt, x: ArithmeticShare, leaf: str = "open") -> np.ndarray:
    return open_arith(rt, [x.data], leaf)[0]


def sec_add(x: ArithmeticShare, y: ArithmeticShare) -> ArithmeticShare:
    return x + y


def sec_add_public(x: ArithmeticShare, c) -> ArithmeticShare:
    return x.add_public(c)


# -- truncation ---------------------------------------------------------------


def count_wraps(rt, x: ArithmeticShare, helper=None, signed: bool = True) -> ArithmeticShare:
    """Shares of the number of wraps in the sum of the shares of ``x`` (one round).

    Masks ``x`` with the dealer's ``r`` (whose wrap count is known), opens
    ``z = x + r`` and combines the public wrap count of ``z`` with the local
    wraps of ``x_p + r_p``. The wrap of ``x + r`` itself is taken to be zero,
    which is wrong with probability about ``|x| / Q``.
    """
    return count_wraps_many(rt, [x], [helper], signed)[0]


def count_wraps_many(rt, xs: Sequence[ArithmeticShare], helpers=None, signed: bool = True) -> list[ArithmeticShare]:
    helpers = helpers or [None] * len(xs)
    masked, betas, thetas = [], [], []
    for x, helper in zip(xs, helpers):
        r, theta_r = (helper or rt.store.wrap(x.shape, signed)).consume()
        z = x.data + r
        masked.append(z)
        betas.append(wrap_count([x.data, r], signed))
        thetas.append(theta_r)
    got = rt.all_to_all(masked, "wraps")
    out = []
    for i, (z, beta, theta_r) in enumerate(zip(masked, betas, thetas)):
        shares = [z] + [arrays[i] for arrays in got.values()]
        theta_z = wrap_count(shares, signed).view(RING_DTYPE)
        local = beta.view(RING_DTYPE) - theta_r
        if rt.is_leader:
            local = local + theta_z
        out.append(_share(rt, local))
    return out


def public_div(rt, x: ArithmeticShare, divisor: int) -> ArithmeticShare:
    """Divide by a public power of two, correcting for share wrap-around (one round)."""
    return public_div_many(rt, [(x, divisor)])[0]


def public_div_many(rt, items: Sequence[tuple[ArithmeticShare, int]]) -> list[ArithmeticShare]:
    """Several public divisions sharing a single communication round."""
    shifts = []
    for _, divisor in items:
        k = int(divisor).bit_length() - 1
        if divisor <= 0 or 1 << k != divisor:
            raise ValueError(f"divisor must be a power of two, got {divisor}")
        shifts.append(k)
    # Each party's local shift floors its share, so the sum comes out low by
    # P/2 units on average; the leader pre-adds that amount. For two parties
    # an exact zero then stays exactly zero.
    biased = []
    for (x, _), k in zip(items, shifts):
        if k and rt.is_leader and rt.cfg.unbiased_truncation:
            offset = np.uint64(rt.n_parties << (k - 1))
            x = _share(rt, x.data + offset)
        biased.append(x)
    with rt.scope("trunc"):
        thetas = count_wraps_many(rt, biased)
    out = []
    for x, k, theta in zip(biased, shifts, thetas):
        if k == 0:
            out.append(x)
            continue
        shifted = (to_signed(x.data) >> np.int64(k)).view(RING_DTYPE)
        correction = theta.data * (np.uint64(1) << np.uint64(RING_BITS - k))
        out.append(_share(rt, shifted - correction))
    return out


def truncate(rt, x: ArithmeticShare, bits: int | None = None) -> ArithmeticShare:
    return public_div(rt, x, 1 << (rt.cfg.precision_bits if bits is None else bits))


# -- multiplication -------------------------------------------------------------


def _beaver(rt, x: ArithmeticShare, y: ArithmeticShare, material, op: str, leaf: str) -> ArithmeticShare:
    a, b, c = material.consume()
    if a.shape != x.shape or b.shape != y.shape:
        raise ValueError(f"triple shapes {a.shape}, {b.shape} do not match operands {x.shape}, {y.shape}")
    alpha, beta = open_arith(rt, [x.data - a, y.data - b], leaf)
    if op == "matmul":
        z = c + np.matmul(alpha, b) + np.matmul(a, beta)
        if rt.is_leader:
            z = z + np.matmul(alpha, beta)
    else:
        z = c + alpha * b + a * beta
        if rt.is_leader:
            z = z + alpha * beta
    return _share(rt, z)


def sec_mul(rt, x: ArithmeticShare, y: ArithmeticShare, triple=None, truncate: bool = True) -> ArithmeticShare:
    """Element-wise (broadcasting) product with a Beaver triple; two rounds with truncation."""
    with rt.scope("mul"):
        triple = triple or rt.store.triple(x.shape, y.shape, "mul")
        z = _beaver(rt, x, y, triple, "mul", "open")
        return public_div(rt, z, rt.cfg.scale) if truncate else z


def sec_matmul(rt, x: ArithmeticShare, y: ArithmeticShare, triple=None, truncate: bool = True) -> ArithmeticShare:
    """``numpy.matmul`` product (batched) with a shape-matched matrix triple."""
    if x.shape[-1] != y.shape[-2 if len(y.shape) > 1 else 0]:
        raise ValueError(f"shapes {x.shape} and {y.shape} are not conformable")
    with rt.scope("matmul"):
        triple = triple or rt.store.triple(x.shape, y.shape, "matmul")
        z = _beaver(rt, x, y, triple, "matmul", "open")
        return public_div(rt, z, rt.cfg.scale) if truncate else z


def sec_matvec(rt, m: ArithmeticShare, v: ArithmeticShare, triple=None) -> ArithmeticShare:
    """``m @ v`` for a (batched) matrix and a vector of matching batch shape."""
    out = sec_matmul(rt, m, v.reshape(*v.shape, 1), triple)
    return out.reshape(*out.shape[:-1])


def sec_dot(rt, u: ArithmeticShare, v: ArithmeticShare, triple=None) -> ArithmeticShare:
    """Dot product over the last axis."""
    out = sec_matmul(rt, u.reshape(*u.shape[:-1], 1, u.shape[-1]), v.reshape(*v.shape, 1), triple)
    return out.reshape(*out.shape[:-2])


def sec_square(rt, x: ArithmeticShare, pair=None, truncate: bool = True) -> ArithmeticShare:
    """``x^2`` from a square pair ``(a, a^2)``: one opening plus truncation."""
    with rt.scope("square"):
        a, b = (pair or rt.store.square(x.shape)).consume()
        (alpha,) = open_arith(rt, [x.data - a], "open")
        z = b + np.uint64(2) * alpha * a
        if rt.is_leader:
            z = z + alpha * alpha
        z = _share(rt, z)
        return public_div(rt, z, rt.cfg.scale) if truncate else z


def mul_public(rt, x: ArithmeticShare, c) -> ArithmeticShare:
    """Multiply a fixed-point share by a public real (one truncation round)."""
    with rt.scope("mul_public"):
        return public_div(rt, x.mul_public(encode(c, rt.cfg)), rt.cfg.scale)


# -- comparison and argmax ----------------------------------------------------------


def sec_ge(rt, x: ArithmeticShare, y: ArithmeticShare) -> ArithmeticShare:
    """Integer share of ``[x >= y]`` on the signed interpretation: ``1 - msb(x - y)``."""
    with rt.scope("ge"):
        sign = msb_arith(rt, x - y)
        return (-sign).add_public(np.ones(sign.shape, dtype=RING_DTYPE))


def all_maxima(rt, x: ArithmeticShare, slack: int = 0) -> ArithmeticShare:
    """Indicator (integer shares) of every maximal entry along the last axis.

    Entry i counts as maximal when ``x_i + slack >= x_j`` for every j, where
    ``slack`` is in raw ring units. All pairwise comparisons, self-comparisons
    included, are evaluated in one batch; the product over the comparison
    axis is a binary tree of integer multiplications, one round per level.
    """
    with rt.scope("allmax"):
        diffs_i = x.reshape(*x.shape, 1).data + np.zeros((1,) * x.data.ndim + (x.shape[-1],), RING_DTYPE)
        diffs_j = x.reshape(*x.shape[:-1], 1, x.shape[-1]).data + np.zeros_like(diffs_i)
        left = _share(rt, diffs_i)
        if slack:
            left = left.add_public(np.full(diffs_i.shape, slack, dtype=RING_DTYPE))
        cols = sec_ge(rt, left, _share(rt, diffs_j))
        while cols.shape[-1] > 1:
            half = cols.shape[-1] // 2
            prod = sec_mul(rt, cols[..., :half], cols[..., half:2 * half], truncate=False)
            rest = cols.data[..., 2 * half:]
            cols = _share(rt, np.concatenate([prod.data, rest], axis=-1))
        return cols.reshape(*cols.shape[:-1])


def sec_argmax(rt, x: ArithmeticShare, gamma: ArithmeticShare | None = None, slack: int = 0) -> ArithmeticShare:
    """One-hot integer shares marking a maximum of ``x`` along the last axis.

    Ties are broken by a dealer-supplied random permutation: the indicator of
    all maxima is multiplied element-wise by the permutation, whose largest
    surviving entry is unique. A positive ``slack`` (ring units) treats
    entries within ``slack`` of the maximum as tied, which absorbs the
    few-ulp truncation noise on values that are equal in exact arithmetic.
    """
    n = x.shape[-1]
    if n < 1:
        raise ValueError("argmax of an empty vector")
    with rt.scope("argmax"):
        ties = all_maxima(rt, x, slack)
        if gamma is None:
            (g,) = rt.store.permutation(n, x.shape[:-1]).consume()
            gamma = _share(rt, g)
        ranked = sec_mul(rt, ties, gamma, truncate=False)
        return all_maxima(rt, ranked)


# -- reciprocal -----------------------------------------------------------------


def sec_exp(rt, x: ArithmeticShare, squarings: int = EXP_LIMIT_SQUARINGS) -> ArithmeticShare:
    """``exp(x)`` as ``(1 + x / 2^k)^(2^k)`` using ``k`` secure squarings."""
    with rt.scope("exp"):
        y = public_div(rt, x, 1 << squarings).add_public(encode(1.0, rt.cfg))
        for _ in range(squarings):
            y = sec_square(rt, y)
        return y


def reciprocal_init(rt, x: ArithmeticShare, method: str = "poly") -> ArithmeticShare:
    if method == "exp":
        # 3 * exp(-(x - 0.5)) + 0.003
        e = sec_exp(rt, (-x).add_public(encode(0.5, rt.cfg)))
        return e.mul_public(3).add_public(encode(0.003, rt.cfg))
    if method != "poly":
        raise ValueError(f"unknown reciprocal initialiser {method!r}")
    c0, c1, k = RECIPROCAL_INIT
    L = rt.cfg.precision_bits
    sq = sec_square(rt, x, truncate=False)
    lin = x.mul_public(encode(c1, rt.cfg))
    quad, lin = public_div_many(rt, [(sq, 1 << (L + k)), (lin, 1 << L)])
    return (quad + lin).add_public(encode(c0, rt.cfg))


def sec_reciprocal(rt, x: ArithmeticShare, iterations: int = 7, init: str = "poly") -> ArithmeticShare:
    """Newton-Raphson ``x_{t+1} = 2 x_t - x x_t^2`` for inputs in [1, 10].

    Inputs outside [1, 10] are not checked; convergence there is not
    guaranteed. The default initialiser costs two rounds and each iteration
    four, so seven iterations take 30 rounds.
    """
    with rt.scope("reciprocal"):
        y = reciprocal_init(rt, x, init)
        for _ in range(iterations):
            y2 = sec_square(rt, y)
            xy2 = sec_mul(rt, x, y2)
            y = _share(rt, y.data * np.uint64(2)) - xy2
        return y


def argmax_rounds(n_arms: int, n_parties: int = 2) -> int:
    """Closed-form round count of :func:`sec_argmax` for the implemented circuits."""
    csa_layers = 0
    m = n_parties
    while m > 2:
        m = m - m // 3
        csa_layers += 1
    ge = csa_layers + 7
    tree = math.ceil(math.log2(n_arms)) if n_arms > 1 else 0
    return 2 * (ge + tree) + 1
