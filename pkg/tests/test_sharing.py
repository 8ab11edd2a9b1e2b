import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpc_util import as_int, run_kernel
from mpcbandit.ring import Q, encode
from mpcbandit.sharing import (
    ArithmeticShare,
    ShareMismatchError,
    a2b,
    b2a,
    msb_arith,
    reconstruct,
    reconstruct_binary,
    share_arithmetic,
    share_binary,
)


@settings(max_examples=50)
@given(st.integers(0, Q - 1), st.integers(2, 6), st.integers(0, 2 ** 32))
def test_share_reconstruct(value, parties, seed):
    rng = np.random.default_rng(seed)
    x = np.array([value], dtype=np.uint64)
    assert reconstruct(share_arithmetic(x, parties, rng))[0] == value
    assert reconstruct_binary(share_binary(x, parties, rng))[0] == value


def test_single_share_looks_uniform():
    rng = np.random.default_rng(0)
    shares = share_arithmetic(np.zeros(20_000, dtype=np.uint64), 2, rng)
    top = (shares[1].data >> np.uint64(60)).astype(int)
    counts = np.bincount(top, minlength=16)
    assert counts.min() > 1000 and counts.max() < 1500


def test_mismatch_errors():
    a = ArithmeticShare(0, np.zeros(3, dtype=np.uint64))
    b = ArithmeticShare(1, np.zeros(4, dtype=np.uint64))
    with pytest.raises(ShareMismatchError):
        reconstruct([a, b])
    with pytest.raises(ShareMismatchError):
        reconstruct([a, ArithmeticShare(0, np.zeros(3, dtype=np.uint64))])


def test_add_public_only_on_leader():
    rng = np.random.default_rng(1)
    shares = share_arithmetic(np.array([5], dtype=np.uint64), 3, rng)
    moved = [s.add_public(np.array([2], dtype=np.uint64)) for s in shares]
    assert reconstruct(moved)[0] == 7


@pytest.mark.parametrize("parties", [2, 3, 4])
def test_a2b_b2a_round_trip(parties):
    x = np.array([1.0, -3.0, 2.25, 0.0, -1e-6])

    def kernel(rt, s):
        return b2a(rt, a2b(rt, s))

    out, _ = run_kernel(kernel, x, parties=parties)
    assert np.array_equal(out, encode(x))


def test_a2b_reconstructs_binary():
    x = np.array([7.5, -2.0])
    from mpcbandit.dealer import Dealer
    from mpcbandit.sharing import share_arithmetic as share
    from mpcbandit.transport import make_party_ids, run_session

    rng = np.random.default_rng(3)
    sh = share(encode(x), 2, rng)
    progs = {p: (lambda rt, i=p.index: a2b(rt, sh[i])) for p in make_party_ids(2, False)}
    res = run_session(progs, 2, stores=Dealer(2, seed=0).views())
    assert np.array_equal(reconstruct_binary([res.results[0], res.results[1]]), encode(x))
    assert res.ledgers[0].total_rounds == 7


@pytest.mark.parametrize("parties", [2, 3, 5])
def test_msb(parties):
    x = np.array([-5.0, 5.0, 0.0, -1e-6, 1e5, -1e5])
    out, _ = run_kernel(msb_arith, x, parties=parties)
    assert as_int(out).tolist() == [1, 0, 0, 1, 0, 1]
