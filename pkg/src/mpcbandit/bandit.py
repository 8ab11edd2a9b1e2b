"""Epsilon-greedy linear contextual bandit on secret shares, and its plaintext twin.

Per step, each compute party secret-shares its slice of the context. The
parties score every arm with ``w_a = W_a^{-1} b_a``, replace the scores by
uniforms when the shared exploration bit is set, and run the secure argmax.
The one-hot result is opened only to the arm puller, who pulls the arm and
re-shares the one-hot vector; the reward receiver shares the reward. All
arms are then updated obliviously with the Sherman-Morrison rank-one rule.
"""

from __future__ import annotations

import queue
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocols as pr
from .dealer import Dealer
from .envs import BanditEnv, even_split
from .ring import DEFAULT_CONFIG, FixedPointConfig, decode, encode
from .sharing import ArithmeticShare, reconstruct, share_arithmetic
from .transport import (
    PartyId,
    RoundLedger,
    make_party_ids,
    open_to,
    receive_from,
    receive_opened,
    run_session,
    share_to_compute,
)

ACTION_LABEL = "step/open_action"
FEEDBACK_LABEL = "step/feedback"
INIT_LABEL = "init/state"
DEFAULT_TIE_SLACK_ULPS = 16


@dataclass(frozen=True)
class BanditConfig:
    n_arms: int
    dim: int
    epsilon: float = 0.1
    n_parties: int = 2
    fixed_point: FixedPointConfig = DEFAULT_CONFIG
    nr_iters: int = 7
    reciprocal_init: str = "poly"
    tie_slack_ulps: int = DEFAULT_TIE_SLACK_ULPS
    party_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.n_parties < 2:
            raise ValueError("at least two compute parties are required")
        if self.n_arms < 1 or self.dim < 1:
            raise ValueError("n_arms and dim must be positive")

    @property
    def dims(self) -> list[int]:
        dims = list(self.party_dims) if self.party_dims else even_split(self.dim, self.n_parties)
        if len(dims) != self.n_parties or sum(dims) != self.dim:
            raise ValueError(f"party dims {dims} do not split {self.dim} features over {self.n_parties} parties")
        return dims

    @property
    def tie_slack(self) -> float:
        return self.tie_slack_ulps / self.fixed_point.scale


@dataclass
class PolicyState:
    """One compute party's shares of the per-arm inverse covariances and biases."""

    W_inv: ArithmeticShare  # (A, D, D)
    b: ArithmeticShare  # (A, D)
    epsilon: float

    @property
    def n_arms(self) -> int:
        return self.b.shape[0]

    @property
    def dim(self) -> int:
        return self.b.shape[1]


@dataclass
class StepRecord:
    t: int
    arm: int
    reward: float
    explore: bool | None = None
    scores: np.ndarray | None = None


def initial_state_values(n_arms: int, dim: int, cfg: FixedPointConfig = DEFAULT_CONFIG) -> tuple[np.ndarray, np.ndarray]:
    W = np.broadcast_to(np.eye(dim), (n_arms, dim, dim))
    return encode(W, cfg), encode(np.zeros((n_arms, dim)), cfg)


# -- secure step pieces (compute-party side) ------------------------------------------


def share_context(rt, x_local: np.ndarray, dims: list[int]) -> ArithmeticShare:
    """Every party shares its feature slice with all others; shares are concatenated (one round)."""
    mine = share_arithmetic(encode(x_local, rt.cfg), rt.n_parties, rt.rng)
    got = rt.exchange({q: [mine[q].data] for q in rt.peers}, rt.peers, "features")
    parts = [mine[rt.index].data if p == rt.index else got[p][0] for p in range(rt.n_parties)]
    for p, part in enumerate(parts):
        if part.shape != (dims[p],):
            raise ValueError(f"party {p} contributed {part.shape[0]} features, expected {dims[p]}")
    return ArithmeticShare(rt.index, np.concatenate(parts))


def score_arms(rt, state: PolicyState, x: ArithmeticShare) -> ArithmeticShare:
    if x.shape != (state.dim,):
        raise ValueError(f"context has shape {x.shape}, state expects ({state.dim},)")
    with rt.scope("score"):
        w = pr.sec_matvec(rt, state.W_inv, state.b)
        xs = ArithmeticShare(rt.index, np.broadcast_to(x.data, w.shape).copy())
        return pr.sec_dot(rt, w, xs)


def dp_blend(rt, scores: ArithmeticShare, y: ArithmeticShare, v: ArithmeticShare) -> ArithmeticShare:
    """``s + y (v - s)``, i.e. the uniforms ``v`` when ``y = 1`` and ``s`` when ``y = 0``."""
    with rt.scope("blend"):
        return scores + pr.sec_mul(rt, y, v - scores)


def select_and_open_action(rt, scores: ArithmeticShare, gamma: ArithmeticShare, puller: PartyId,
                           slack: int = 0) -> None:
    one_hot = pr.sec_argmax(rt, scores, gamma, slack)
    open_to(rt, one_hot.data, puller, ACTION_LABEL)


def receive_feedback(rt, puller: PartyId, rewarder: PartyId) -> tuple[ArithmeticShare, ArithmeticShare]:
    """One-hot action shares from the puller and reward shares from the receiver (one round)."""
    got = receive_from(rt, [puller.index, rewarder.index], FEEDBACK_LABEL)
    return ArithmeticShare(rt.index, got[puller.index][0]), ArithmeticShare(rt.index, got[rewarder.index][0])


def update(rt, state: PolicyState, x: ArithmeticShare, o: ArithmeticShare, r: ArithmeticShare,
           iterations: int = 7, init: str = "poly") -> PolicyState:
    """Oblivious Sherman-Morrison update of every arm, weighted by the one-hot ``o``."""
    A, D = state.n_arms, state.dim
    with rt.scope("update"):
        xs = ArithmeticShare(rt.index, np.broadcast_to(x.data, (A, D)).copy())
        u = pr.sec_matvec(rt, state.W_inv, xs)  # W^-1 x, and x^T W^-1 by symmetry
        den = pr.sec_dot(rt, xs, u).add_public(encode(np.ones(A), rt.cfg))
        inv = pr.sec_reciprocal(rt, den, iterations, init)
        outer = pr.sec_matmul(rt, u.reshape(A, D, 1), u.reshape(A, 1, D))
        step = pr.sec_mul(rt, inv.reshape(A, 1, 1), outer)
        step = pr.sec_mul(rt, o.reshape(A, 1, 1), step, truncate=False)
        o_r = pr.sec_mul(rt, o, r, truncate=False)
        db = pr.sec_mul(rt, o_r.reshape(A, 1), xs)
    return PolicyState(state.W_inv - step, state.b + db, state.epsilon)


# -- party programs ---------------------------------------------------------------


class EnvLink:
    """The environment's path from the arm puller to the reward receiver."""

    def __init__(self, env: BanditEnv, timeout: float = 60.0, channel=None):
        self.env = env
        self.timeout = timeout
        self._rewards = channel if channel is not None else queue.Queue()

    def pull(self, t: int, arm: int) -> None:
        self._rewards.put((t, self.env.reward(t, arm)))

    def next_reward(self, t: int) -> float:
        step, r = self._rewards.get(timeout=self.timeout)
        if step != t:
            raise RuntimeError(f"reward for step {step} arrived while expecting step {t}")
        return r


@dataclass
class _Plan:
    config: BanditConfig
    env: BanditEnv
    T: int
    link: EnvLink
    puller: PartyId
    rewarder: PartyId
    snapshot_steps: frozenset = frozenset()


def _compute_program(plan: _Plan):
    cfg = plan.config
    dims = cfg.dims

    def program(rt):
        A = cfg.n_arms
        lo = sum(dims[:rt.index])
        got = receive_from(rt, [plan.puller.index], INIT_LABEL)[plan.puller.index]
        state = PolicyState(ArithmeticShare(rt.index, got[0]), ArithmeticShare(rt.index, got[1]), cfg.epsilon)
        slack = cfg.tie_slack_ulps
        snapshots, step_rounds, step_seconds = {}, [], []
        for t in range(plan.T):
            start, rounds0 = time.perf_counter(), rt.ledger.total_rounds
            with rt.scope("step"):
                (y,) = rt.store.bernoulli(cfg.epsilon, 1).consume()
                (v,) = rt.store.uniform((A,)).consume()
                (g,) = rt.store.permutation(A).consume()
                x_local = plan.env.context(t)[lo:lo + dims[rt.index]]
                x = share_context(rt, x_local, dims)
                s = score_arms(rt, state, x)
                s = dp_blend(rt, s, ArithmeticShare(rt.index, y.reshape(())), ArithmeticShare(rt.index, v))
                select_and_open_action(rt, s, ArithmeticShare(rt.index, g), plan.puller, slack)
                o, r = receive_feedback(rt, plan.puller, plan.rewarder)
                state = update(rt, state, x, o, r, cfg.nr_iters, cfg.reciprocal_init)
            step_rounds.append(rt.ledger.total_rounds - rounds0)
            step_seconds.append(time.perf_counter() - start)
            if t in plan.snapshot_steps:
                snapshots[t] = (state.W_inv.data.copy(), state.b.data.copy())
        return {"snapshots": snapshots, "step_rounds": step_rounds, "step_seconds": step_seconds}

    return program


def _puller_program(plan: _Plan):
    cfg = plan.config
    P = cfg.n_parties

    def program(rt):
        W0, b0 = initial_state_values(cfg.n_arms, cfg.dim, cfg.fixed_point)
        share_to_compute(rt, [W0, b0], P, INIT_LABEL)
        arms = []
        for t in range(plan.T):
            one_hot = receive_opened(rt, P, ACTION_LABEL).view(np.int64)
            if not (np.all((one_hot == 0) | (one_hot == 1)) and one_hot.sum() == 1):
                raise RuntimeError(f"step {t}: opened action vector {one_hot} is not one-hot")
            arm = int(one_hot.argmax())
            arms.append(arm)
            plan.link.pull(t, arm)
            share_to_compute(rt, [one_hot.astype(np.uint64)], P, FEEDBACK_LABEL)
        return arms

    return program


def _rewarder_program(plan: _Plan):
    P = plan.config.n_parties

    def program(rt):
        rewards = []
        for t in range(plan.T):
            r = plan.link.next_reward(t)
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"step {t}: reward {r} outside [0, 1]")
            rewards.append(r)
            share_to_compute(rt, [encode(r, rt.cfg)], P, FEEDBACK_LABEL)
        return rewards

    return program


@dataclass
class EpisodeResult:
    arms: np.ndarray
    rewards: np.ndarray
    ledger: RoundLedger | None = None
    wall_seconds: float = 0.0
    step_rounds: list[int] = field(default_factory=list)
    step_seconds: list[float] = field(default_factory=list)
    dealer: Dealer | None = None
    records: list[StepRecord] = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    transcripts: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)

    @property
    def average_reward(self) -> np.ndarray:
        """Running average reward after each step."""
        if len(self.rewards) == 0:
            return np.zeros(0)
        return np.cumsum(self.rewards) / np.arange(1, len(self.rewards) + 1)


def run_episode(env: BanditEnv, config: BanditConfig, T: int, seed: int = 0, transport: str = "local",
                snapshot_steps=(), capture_transcripts: bool = False, timeout: float = 60.0,
                party_mode: str = "threads", addresses=None) -> EpisodeResult:
    """Run the secure learner for ``T`` steps of ``env``.

    ``snapshot_steps`` makes every compute party keep a copy of its state
    shares after those steps; the harness reconstructs them for diagnostics.
    This is a debugging aid outside the protocol.

    ``party_mode="processes"`` runs every party in its own OS process over
    TCP. The dealer's request schedule does not depend on the data, so it is
    recorded by an in-process dry run and each party then reads its own
    pre-generated material.
    """
    if party_mode == "processes":
        return _run_episode_processes(env, config, T, seed, snapshot_steps, capture_transcripts, timeout, addresses)
    if party_mode != "threads":
        raise ValueError(f"unknown party mode {party_mode!r}")
    if T > len(env):
        raise ValueError(f"environment provides {len(env)} steps, {T} requested")
    if env.dim != config.dim or env.n_arms != config.n_arms:
        raise ValueError("environment and bandit config disagree on arms or dimension")
    P = config.n_parties
    ids = make_party_ids(P)
    puller, rewarder = ids[P], ids[P + 1]
    plan = _Plan(config, env, T, EnvLink(env, timeout), puller, rewarder, frozenset(snapshot_steps))
    programs = {pid: _compute_program(plan) for pid in ids[:P]}
    programs[puller] = _puller_program(plan)
    programs[rewarder] = _rewarder_program(plan)
    dealer = Dealer(P, seed=seed, cfg=config.fixed_point)
    res = run_session(programs, P, stores=dealer.views(), transport=transport, seed=seed, cfg=config.fixed_point,
                      timeout=timeout, capture_transcripts=capture_transcripts, addresses=addresses)
    return _collect(res, config, ids, dealer)


def _run_episode_processes(env, config, T, seed, snapshot_steps, capture_transcripts, timeout, addresses):
    import multiprocessing as mp

    from .dealer import MaterialFile

    dry = run_episode(env, config, T, seed=seed, timeout=timeout)
    P = config.n_parties
    ids = make_party_ids(P)
    dealer = Dealer(P, seed=seed, cfg=config.fixed_point)
    per_party = dealer.materialize(dry.dealer.request_log)
    stores = {q: MaterialFile(q, P, dealer.seed_commitment, items).view() for q, items in enumerate(per_party)}
    link = EnvLink(env, timeout, channel=mp.get_context("fork").Queue())
    plan = _Plan(config, env, T, link, ids[P], ids[P + 1], frozenset(snapshot_steps))
    programs = {pid: _compute_program(plan) for pid in ids[:P]}
    programs[ids[P]] = _puller_program(plan)
    programs[ids[P + 1]] = _rewarder_program(plan)
    res = run_session(programs, P, stores=stores, transport="tcp", seed=seed, cfg=config.fixed_point,
                      timeout=timeout, capture_transcripts=capture_transcripts, addresses=addresses,
                      processes=True)
    return _collect(res, config, ids, dealer)


def _collect(res, config: BanditConfig, ids, dealer) -> EpisodeResult:
    P = config.n_parties
    puller, rewarder = ids[P], ids[P + 1]
    arms = np.array(res.results[puller.index], dtype=np.int64)
    rewards = np.array(res.results[rewarder.index], dtype=np.float64)
    lead = res.results[0]
    snapshots = {}
    for t in lead["snapshots"]:
        W = reconstruct([ArithmeticShare(q, res.results[q]["snapshots"][t][0]) for q in range(P)])
        b = reconstruct([ArithmeticShare(q, res.results[q]["snapshots"][t][1]) for q in range(P)])
        snapshots[t] = (decode(W, config.fixed_point), decode(b, config.fixed_point))
    records = [StepRecord(t, int(a), float(r)) for t, (a, r) in enumerate(zip(arms, rewards))]
    return EpisodeResult(arms, rewards, res.ledgers[0], res.wall_seconds, lead["step_rounds"], lead["step_seconds"],
                         dealer, records, snapshots, res.transcripts)


# -- plaintext reference ------------------------------------------------------------


@dataclass
class ExplorationSchedule:
    """Per-step exploration bit, arm uniforms and tie-break permutation."""

    y: np.ndarray  # (T,)
    v: np.ndarray  # (T, A)
    gamma: np.ndarray  # (T, A)

    @classmethod
    def from_dealer(cls, dealer: Dealer) -> "ExplorationSchedule":
        y, v, g = [], [], []
        for kind, values in dealer.sample_log:
            {"bernoulli": y, "uniform": v, "permutation": g}[kind].append(values)
        return cls(np.concatenate(y) if y else np.zeros(0), np.array(v), np.array(g))

    @classmethod
    def draw(cls, rng: np.random.Generator, T: int, n_arms: int, epsilon: float,
             cfg: FixedPointConfig = DEFAULT_CONFIG) -> "ExplorationSchedule":
        y = (rng.random(T) < epsilon).astype(np.float64)
        v = rng.integers(0, cfg.scale, size=(T, n_arms)) / cfg.scale
        g = np.argsort(rng.random((T, n_arms)), axis=1) + 1
        return cls(y, v, g)


class PlaintextLearner:
    """Floating-point epsilon-greedy linear bandit with the same update rule."""

    def __init__(self, n_arms: int, dim: int, epsilon: float, tie_slack: float = 0.0):
        self.n_arms, self.dim, self.epsilon = n_arms, dim, epsilon
        self.tie_slack = tie_slack
        self.W_inv = np.tile(np.eye(dim), (n_arms, 1, 1))
        self.b = np.zeros((n_arms, dim))

    def scores(self, x: np.ndarray) -> np.ndarray:
        w = np.einsum("aij,aj->ai", self.W_inv, self.b)
        return w @ x

    def select(self, x: np.ndarray, y: float, v: np.ndarray, gamma: np.ndarray) -> tuple[int, np.ndarray]:
        s = self.scores(x)
        blended = v if y else s
        near_max = blended + self.tie_slack >= blended.max()
        return int(np.argmax(np.where(near_max, gamma, 0))), s

    def update(self, x: np.ndarray, arm: int, reward: float) -> None:
        u = self.W_inv[arm] @ x
        self.W_inv[arm] -= np.outer(u, u) / (1.0 + x @ u)
        self.b[arm] += reward * x

    def copy(self) -> "PlaintextLearner":
        other = PlaintextLearner(self.n_arms, self.dim, self.epsilon, self.tie_slack)
        other.W_inv, other.b = self.W_inv.copy(), self.b.copy()
        return other


def plaintext_reference(env: BanditEnv, T: int, epsilon: float, seed: int = 0,
                        schedule: ExplorationSchedule | None = None, tie_slack: float = 0.0,
                        checkpoints=(), keep_scores: bool = False) -> EpisodeResult:
    """Run the plaintext learner; ``schedule`` injects exploration draws for lockstep checks.

    ``checkpoints`` lists step counts after which a copy of the learner is kept.
    """
    if T > len(env):
        raise ValueError(f"environment provides {len(env)} steps, {T} requested")
    if schedule is None:
        schedule = ExplorationSchedule.draw(np.random.default_rng(seed), T, env.n_arms, epsilon)
    learner = PlaintextLearner(env.n_arms, env.dim, epsilon, tie_slack)
    wanted = set(checkpoints)
    saved = {0: learner.copy()} if 0 in wanted else {}
    arms, rewards, records = np.zeros(T, dtype=np.int64), np.zeros(T), []
    for t in range(T):
        x = env.context(t)
        arm, s = learner.select(x, schedule.y[t], schedule.v[t], schedule.gamma[t])
        r = env.reward(t, arm)
        if not 0.0 <= r <= 1.0:
            raise ValueError(f"step {t}: reward {r} outside [0, 1]")
        learner.update(x, arm, r)
        arms[t], rewards[t] = arm, r
        records.append(StepRecord(t, arm, r, bool(schedule.y[t]), s if keep_scores else None))
        if t + 1 in wanted:
            saved[t + 1] = learner.copy()
    result = EpisodeResult(arms, rewards, records=records)
    result.checkpoints = saved
    return result
