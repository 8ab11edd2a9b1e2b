"""Run the secure learner and the plaintext learner side by side.

The plaintext run replays the dealer's exploration draws, so the two
learners should pick the same arm at every step.
"""

import numpy as np

from mpcbandit.bandit import BanditConfig, ExplorationSchedule, plaintext_reference, run_episode
from mpcbandit.envs import build_kmeans_env, synthetic_contexts

if __name__ == "__main__":
    T = 200
    env = build_kmeans_env(synthetic_contexts(T, dim=8, clusters=5, seed=0), K=5, seed=0)
    config = BanditConfig(n_arms=5, dim=8, epsilon=0.1)
    mpc = run_episode(env, config, T, seed=0)
    ref = plaintext_reference(env, T, config.epsilon, schedule=ExplorationSchedule.from_dealer(mpc.dealer),
                              tie_slack=config.tie_slack)
    print(f"identical arms: {int(np.sum(mpc.arms == ref.arms))}/{T}")
    print(f"average reward: secure {mpc.rewards.mean():.3f}, plaintext {ref.rewards.mean():.3f}")
    print(f"rounds per step: {mpc.step_rounds[0]}, wall clock {mpc.wall_seconds:.1f}s")
    print(f"a uniformly random policy would average {env.nu[:T].mean():.3f}")
