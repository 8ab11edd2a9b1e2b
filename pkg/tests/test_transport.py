import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mpcbandit.dealer import Dealer
from mpcbandit.protocols import sec_mul
from mpcbandit.ring import encode
from mpcbandit.sharing import share_arithmetic
from mpcbandit.transport import (
    ProtocolDesyncError,
    RoleError,
    RoundLedger,
    TransportError,
    TransportTimeout,
    decode_frame,
    encode_frame,
    make_party_ids,
    open_to,
    receive_from,
    receive_opened,
    run_session,
    share_to_compute,
)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2**64 - 1), min_size=0, max_size=20), st.integers(0, 2**32))
def test_frame_round_trip(values, seq):
    arrays = [np.array(values, dtype=np.uint64), np.arange(6, dtype=np.float64).reshape(2, 3)]
    frame = decode_frame(encode_frame(5, seq, "op", arrays))
    assert frame.session == 5 and frame.seq == seq
    assert all(np.array_equal(a, b) for a, b in zip(arrays, frame.arrays))


def test_frame_rejects_corruption():
    buf = encode_frame(0, 0, "x", [np.zeros(2, dtype=np.uint64)])
    with pytest.raises(TransportError):
        decode_frame(b"XXXX" + buf[4:])
    with pytest.raises(TransportError):
        decode_frame(buf + b"\0")


def test_ledger_counts_scoped_labels():
    def prog(rt):
        with rt.scope("outer"):
            rt.all_to_all([np.zeros(1, dtype=np.uint64)], "a")
            rt.all_to_all([np.zeros(1, dtype=np.uint64)], "a")
        rt.all_to_all([np.zeros(3, dtype=np.uint64)], "b")

    res = run_session({p: prog for p in make_party_ids(3, False)}, 3)
    ledger = res.ledgers[1]
    assert ledger.rounds == {"outer/a": 2, "b": 1}
    assert ledger.total_rounds == 3
    assert ledger.bytes_sent["b"] > ledger.bytes_sent["outer/a"] / 2
    out = io.StringIO()
    ledger.to_csv(out)
    assert out.getvalue().splitlines()[0] == "operation,rounds,bytes"


def test_label_mismatch_is_desync():
    def prog(rt):
        rt.all_to_all([np.zeros(1, dtype=np.uint64)], f"step{rt.index}")

    with pytest.raises(ProtocolDesyncError):
        run_session({p: prog for p in make_party_ids(2, False)}, 2, timeout=5)


def test_silent_peer_times_out():
    def prog(rt):
        if rt.index == 0:
            rt.all_to_all([np.zeros(1, dtype=np.uint64)], "x")

    with pytest.raises(TransportTimeout):
        run_session({p: prog for p in make_party_ids(2, False)}, 2, timeout=0.5)


def test_open_to_reaches_only_outsider():
    ids = make_party_ids(2)
    puller = ids[2]
    secret = encode(np.array([1.0, -2.0]))
    shares = share_arithmetic(secret, 2, np.random.default_rng(0))

    def compute(rt):
        with pytest.raises(RoleError):
            open_to(rt, shares[rt.index].data, ids[1 - rt.index])
        open_to(rt, shares[rt.index].data, puller, "reveal")
        got = receive_from(rt, [puller.index], "back")[puller.index]
        return got[0]

    def outsider(rt):
        value = receive_opened(rt, 2, "reveal")
        share_to_compute(rt, [value * np.uint64(2)], 2, "back")
        return value

    def idle(rt):
        return None

    res = run_session({ids[0]: compute, ids[1]: compute, puller: outsider, ids[3]: idle}, 2,
                      capture_transcripts=True)
    assert np.array_equal(res.results[puller.index], secret)
    assert np.array_equal(res.results[0] + res.results[1], secret * np.uint64(2))
    assert res.transcripts[ids[3].index] == []
    # compute parties never received each other's shares of the secret
    for entry in res.transcripts[0]:
        assert entry.direction == "send" or entry.peer == puller.index


def _mul_session(transport, seed=0):
    x = share_arithmetic(encode(np.array([1.5, 2.0])), 2, np.random.default_rng(1))
    y = share_arithmetic(encode(np.array([-2.0, 0.25])), 2, np.random.default_rng(2))
    progs = {p: (lambda rt, i=p.index: sec_mul(rt, x[i], y[i])) for p in make_party_ids(2, False)}
    res = run_session(progs, 2, stores=Dealer(2, seed=seed).views(), transport=transport, seed=seed,
                      capture_transcripts=True)
    return res


def test_tcp_matches_local():
    a, b = _mul_session("local"), _mul_session("tcp")
    for i in (0, 1):
        assert np.array_equal(a.results[i].data, b.results[i].data)
        assert a.ledgers[i].rows() == b.ledgers[i].rows()


def test_replay_is_deterministic():
    a, b = _mul_session("local", 4), _mul_session("local", 4)
    assert [e.frame for e in a.transcripts[0]] == [e.frame for e in b.transcripts[0]]


def test_empty_ledger():
    assert RoundLedger().total_rounds == 0
