"""Walk through the secure building blocks on two simulated parties.

Each kernel runs once per party in its own thread; the round ledger shows
what it cost on the wire.
"""

import numpy as np

from mpcbandit import Dealer, decode, encode, reconstruct, run_session, share_arithmetic
from mpcbandit import protocols as pr
from mpcbandit.transport import make_party_ids


def run(fn, *values, parties=2):
    rng = np.random.default_rng(0)
    shares = [share_arithmetic(encode(np.asarray(v)), parties, rng) for v in values]
    programs = {pid: (lambda rt, i=pid.index: fn(rt, *[s[i] for s in shares]))
                for pid in make_party_ids(parties, with_outsiders=False)}
    res = run_session(programs, parties, stores=Dealer(parties, seed=1).views())
    return reconstruct([res.results[i] for i in range(parties)]), res.ledgers[0]


if __name__ == "__main__":
    x = np.array([1.5, -2.0, 3.25])
    shares = share_arithmetic(encode(x), 2, np.random.default_rng(0))
    print("secret", x)
    print("share of party 0 (looks random):", shares[0].data)

    out, ledger = run(pr.sec_mul, x, np.array([2.0, 0.5, -1.0]))
    print(f"\nproduct {decode(out)} in {ledger.total_rounds} rounds")

    out, ledger = run(pr.sec_ge, x, np.zeros(3))
    print(f"x >= 0 -> {out.view(np.int64)} in {ledger.total_rounds} rounds")

    out, ledger = run(lambda rt, v: pr.sec_reciprocal(rt, v), np.array([1.0, 4.0, 9.5]))
    print(f"1/x -> {decode(out).round(5)} in {ledger.total_rounds} rounds")

    scores = np.array([0.2, 0.9, 0.9, 0.1])
    out, ledger = run(pr.sec_argmax, scores)
    print(f"argmax of {scores} -> one-hot {out.view(np.int64)} in {ledger.total_rounds} rounds")
    print("rounds by operation:")
    for name, rounds, nbytes in ledger.rows():
        print(f"  {name:32s} {rounds:3d} rounds {nbytes:7d} bytes")
