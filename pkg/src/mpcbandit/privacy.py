"""Privacy accounting for the epsilon-greedy action channel and a membership attack.

The released action of an epsilon-greedy learner is the greedy arm with
probability ``1 - eps + eps/|A|`` and any other arm with probability
``eps/|A|``, so changing the training data can move the log-probability of
any action by at most ``log(|A| / eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bandit import PlaintextLearner, plaintext_reference
from .envs import MnistBanditEnv


def privacy_loss(epsilon: float, arms: int) -> float:
    """Per-action privacy loss ``log(|A| / eps)``; infinite for the greedy learner."""
    if arms < 2:
        raise ValueError("the privacy loss needs at least two arms")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return math.inf if epsilon == 0 else math.log(arms / epsilon)


def greedy_probability(epsilon: float, arms: int) -> float:
    return 1.0 - epsilon + epsilon / arms


def epsilon_greedy_actions(greedy_arm: int, epsilon: float, arms: int, trials: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Sample the action channel the way the secure learner realises it.

    Exploring steps take the argmax of i.i.d. uniform scores; exploiting
    steps return the greedy arm.
    """
    explore = rng.random(trials) < epsilon
    uniform_choice = rng.random((trials, arms)).argmax(axis=1)
    return np.where(explore, uniform_choice, greedy_arm)


@dataclass
class DpCheck:
    epsilon: float
    arms: int
    bound: float
    max_log_ratio: float
    sigma: float  # delta-method standard error of the maximising log-ratio
    cross_log_ratio: float  # largest ratio between two non-greedy outputs
    greedy_frequency: float
    greedy_ci: tuple[float, float]

    @property
    def within_bound(self) -> bool:
        return self.max_log_ratio <= self.bound + 3 * self.sigma


def _log_ratio(p: np.ndarray, q: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.abs(np.log(p) - np.log(q))
        se = np.sqrt((1 - p) / (n * p) + (1 - q) / (n * q))
    return lr, se


def verify_dp_ratio(epsilon: float, arms: int, trials: int = 100_000, seed: int | None = 0) -> DpCheck:
    """Monte-Carlo check of the log-probability ratio between neighbouring inputs.

    The neighbouring inputs differ in which arm is greedy (arm 0 versus arm
    1). For every output arm the empirical ratio of the two channels is
    compared; ``sigma`` is the standard error of the largest one.
    """
    if trials < 10_000:
        raise ValueError("use at least 10^4 trials")
    rng = np.random.default_rng(seed)
    a = np.bincount(epsilon_greedy_actions(0, epsilon, arms, trials, rng), minlength=arms) / trials
    b = np.bincount(epsilon_greedy_actions(1, epsilon, arms, trials, rng), minlength=arms) / trials
    lr, se = _log_ratio(a, b, trials)
    lr = np.where(np.isnan(lr), 0.0, lr)  # both channels never produced this output
    worst = int(np.argmax(lr))
    cross = float(lr[2:].max()) if arms > 2 else 0.0
    p_hat = a[0]
    half = 1.96 * math.sqrt(max(p_hat * (1 - p_hat), 1e-12) / trials)
    return DpCheck(epsilon, arms, privacy_loss(epsilon, arms), float(lr[worst]),
                   float(se[worst]) if np.isfinite(se[worst]) else math.inf, cross,
                   float(p_hat), (p_hat - half, p_hat + half))


# -- membership inference ---------------------------------------------------------


@dataclass
class AttackEstimate:
    p_train: np.ndarray  # (arms, 2) smoothed conditional distribution of r given a
    p_test: np.ndarray
    tpr: float
    fpr: float

    @property
    def advantage(self) -> float:
        return self.tpr - self.fpr


def evaluate_policy(model: PlaintextLearner, X: np.ndarray, labels: np.ndarray,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Actions and rewards of one epsilon-greedy pass over a batch of examples."""
    w = np.einsum("aij,aj->ai", model.W_inv, model.b)
    scores = X @ w.T
    explore = rng.random(len(X)) < model.epsilon
    arms = np.where(explore, rng.integers(model.n_arms, size=len(X)), scores.argmax(axis=1))
    return arms, (arms == labels).astype(np.int64)


def conditional_table(arms: np.ndarray, rewards: np.ndarray, n_arms: int) -> np.ndarray:
    """``p(r | a)`` over r in {0, 1} with add-one smoothing for empty cells."""
    counts = np.ones((n_arms, 2))
    np.add.at(counts, (arms, rewards), 1)
    return counts / counts.sum(axis=1, keepdims=True)


def attack_checkpoint(model: PlaintextLearner, members: tuple[np.ndarray, np.ndarray],
                      nonmembers: tuple[np.ndarray, np.ndarray], n_probe: int,
                      rng: np.random.Generator) -> AttackEstimate:
    """Estimate both conditionals, then classify fresh probe evaluations."""
    p_train = conditional_table(*evaluate_policy(model, *members, rng), model.n_arms)
    p_test = conditional_table(*evaluate_policy(model, *nonmembers, rng), model.n_arms)

    def guess_member(X, y):
        idx = rng.choice(len(y), size=min(n_probe, len(y)), replace=False)
        a, r = evaluate_policy(model, X[idx], y[idx], rng)
        return float(np.mean(p_train[a, r] > p_test[a, r]))

    return AttackEstimate(p_train, p_test, guess_member(*members), guess_member(*nonmembers))


def membership_attack(checkpoints: dict, train_env: MnistBanditEnv, test_env: MnistBanditEnv,
                      n_probe: int = 500, seed: int | None = 0) -> dict[int, AttackEstimate]:
    """Attack every checkpoint; the members at step ``c`` are the first ``c`` training examples."""
    rng = np.random.default_rng(seed)
    test = (test_env.features[test_env.order], test_env.labels[test_env.order])
    out = {}
    for step, model in sorted(checkpoints.items()):
        if step == 0:
            continue
        seen = train_env.order[:step]
        out[step] = attack_checkpoint(model, (train_env.features[seen], train_env.labels[seen]), test, n_probe, rng)
    return out


@dataclass
class AdvantageRow:
    checkpoint: int
    epsilon: float
    advantage: float
    ci: float  # half-width of a normal 95% interval over runs
    runs: int
    probes: int


def advantage_curve(train_env: MnistBanditEnv, test_env: MnistBanditEnv, epsilon: float, T: int,
                    checkpoints, runs: int = 20, n_probe: int = 500, seed: int = 0):
    """Repeat training plus attack ``runs`` times; returns summary rows and the raw advantages."""
    per_run = []
    for run in range(runs):
        env = MnistBanditEnv(train_env.features, train_env.labels, seed=seed + run)
        result = plaintext_reference(env, T, epsilon, seed=seed + run, checkpoints=checkpoints)
        attacks = membership_attack(result.checkpoints, env, test_env, n_probe, seed=seed + 1000 + run)
        per_run.append([attacks[c].advantage for c in sorted(attacks)])
    adv = np.array(per_run)
    steps = sorted(c for c in checkpoints if c > 0)
    rows = [AdvantageRow(c, epsilon, float(adv[:, i].mean()),
                         float(1.96 * adv[:, i].std(ddof=1) / math.sqrt(runs)) if runs > 1 else math.nan,
                         runs, n_probe)
            for i, c in enumerate(steps)]
    return rows, adv
