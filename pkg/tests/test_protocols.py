import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mpc_util import as_int, run_decoded, run_kernel
from mpcbandit import protocols as pr
from mpcbandit.ring import FixedPointConfig, Q, encode

ULP = 2.0 ** -20


def test_mul_example():
    out, rounds = run_decoded(pr.sec_mul, 1.5, -2.5)
    assert out == pytest.approx(-3.75, abs=4 * ULP)
    assert rounds == 2


@settings(max_examples=25, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100))
def test_mul_matches_float(a, b):
    out, _ = run_decoded(pr.sec_mul, a, b)
    assert abs(out - a * b) < 1e-4 + 1e-6 * abs(a * b)


def test_matvec_and_dot_oracle():
    rng = np.random.default_rng(0)
    M, v = rng.normal(size=(5, 4)), rng.normal(size=4)
    out, rounds = run_decoded(pr.sec_matvec, M, v)
    assert np.allclose(out, M @ v, atol=1e-4)
    assert rounds == 2
    out, _ = run_decoded(pr.sec_dot, v, v)
    assert out == pytest.approx(v @ v, abs=1e-4)


def test_square_and_public_mul():
    out, _ = run_decoded(pr.sec_square, np.array([-3.0, 0.5]))
    assert np.allclose(out, [9.0, 0.25], atol=1e-5)
    out, _ = run_decoded(lambda rt, x: pr.mul_public(rt, x, 0.25), np.array([8.0, -2.0]))
    assert np.allclose(out, [2.0, -0.5], atol=1e-5)


def test_zero_stays_zero_with_two_parties():
    out, _ = run_kernel(pr.sec_mul, np.zeros(200), np.linspace(-50, 50, 200))
    assert (out == 0).all()


def test_public_div_example():
    out, rounds = run_kernel(lambda rt, x: pr.public_div(rt, x, 4), np.array([8], dtype=np.uint64))
    assert as_int(out)[0] == 2 and rounds == 1
    with pytest.raises(Exception):
        run_kernel(lambda rt, x: pr.public_div(rt, x, 3), np.array([8], dtype=np.uint64))


def test_count_wraps_unsigned_example():
    # shares (Q-1, 2) sum to 1 with exactly one wrap
    from mpcbandit.dealer import Dealer
    from mpcbandit.sharing import ArithmeticShare
    from mpcbandit.transport import make_party_ids, run_session

    shares = [np.array([Q - 1], dtype=np.uint64), np.array([2], dtype=np.uint64)]
    programs = {pid: (lambda rt, i=pid.index: pr.count_wraps(rt, ArithmeticShare(i, shares[i]), signed=False))
                for pid in make_party_ids(2, with_outsiders=False)}
    res = run_session(programs, 2, stores=Dealer(2, seed=0).views())
    total = sum(int(np.ravel(res.results[i].data)[0]) for i in (0, 1))
    assert total % Q == 1


@pytest.mark.parametrize("parties", [2, 3])
def test_sec_ge(parties):
    x = np.array([1.0, -2.0, 3.5, 0.0])
    y = np.array([0.5, -1.0, 3.5, 1e-5])
    out, rounds = run_kernel(pr.sec_ge, x, y, parties=parties)
    assert list(as_int(out)) == [1, 0, 1, 0]
    if parties == 2:
        assert rounds == 7


@pytest.mark.parametrize("parties", [2, 3, 4])
@pytest.mark.parametrize("arms", [4, 16])
def test_argmax_one_hot_and_rounds(parties, arms):
    x = np.random.default_rng(arms).normal(size=arms)
    out, rounds = run_kernel(pr.sec_argmax, x, parties=parties)
    hot = as_int(out)
    assert hot.sum() == 1 and hot[np.argmax(x)] == 1
    assert rounds == pr.argmax_rounds(arms, parties)


def test_argmax_closed_form_values():
    assert [pr.argmax_rounds(a) for a in (4, 16, 64)] == [19, 23, 27]
    assert pr.argmax_rounds(4, 3) == 21 and pr.argmax_rounds(4, 4) == 23


def test_argmax_slack_counts_near_ties():
    x = np.array([1.0, 1.0 + 8 * ULP, 0.0])
    out, _ = run_kernel(lambda rt, v: pr.all_maxima(rt, v, slack=16), x)
    assert list(as_int(out)) == [1, 1, 0]
    out, _ = run_kernel(pr.all_maxima, x)
    assert list(as_int(out)) == [0, 1, 0]


def test_argmax_ties_uniform():
    x = np.tile([2.0, 2.0, 2.0, -1.0], (3000, 1))
    out, _ = run_kernel(pr.sec_argmax, x, seed=3)
    counts = as_int(out).sum(axis=0)
    assert counts[3] == 0 and counts.sum() == 3000
    assert stats.chisquare(counts[:3]).pvalue > 0.01


@pytest.mark.parametrize("init,iters,tol", [("poly", 7, 2e-4), ("exp", 7, 0.05), ("poly", 3, 1e-2)])
def test_reciprocal(init, iters, tol):
    x = np.linspace(1, 10, 100)
    out, rounds = run_decoded(lambda rt, v: pr.sec_reciprocal(rt, v, iters, init), x)
    assert np.max(np.abs(out * x - 1)) < tol
    if init == "poly" and iters == 7:
        assert rounds == 30


def test_truncation_failure_rate_is_small():
    cfg = FixedPointConfig(precision_bits=20)
    x = np.full(20_000, 3.0)
    out, _ = run_kernel(pr.sec_mul, x, x, cfg=cfg)
    ok = np.abs(as_int(out) - as_int(encode(9.0, cfg))) < 4
    assert ok.all()


def test_masked_opening_looks_uniform():
    # the value opened during a multiplication is masked by a uniform triple
    rng = np.random.default_rng(1)
    from mpcbandit.dealer import Dealer

    d = Dealer(2, seed=11)
    a = np.zeros(20_000)
    a_sh = d.generate_triples(1, a.shape)[0].a
    opened = (a_sh[0] + a_sh[1] + encode(a)) >> np.uint64(60)
    counts = np.bincount(opened.astype(np.int64), minlength=16)
    assert stats.chisquare(counts).pvalue > 0.001
    assert rng is not None
