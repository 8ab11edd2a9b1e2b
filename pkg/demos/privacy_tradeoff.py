"""Exploration rate against reward and against a membership-inference attack.

Needs the MNIST files, e.g. from demos/prepare_mnist.py:

    python demos/privacy_tradeoff.py data/mnist
"""

import sys

import numpy as np

from mpcbandit.bandit import plaintext_reference
from mpcbandit.envs import MnistBanditEnv, load_mnist_pca
from mpcbandit.privacy import advantage_curve, privacy_loss

if __name__ == "__main__":
    path = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    train = load_mnist_pca(path, 20)
    test = load_mnist_pca(path, split="test", projection=train.projection)
    print("epsilon  eta    mean reward (5 seeds)  final attack advantage")
    for eps in (0.0, 0.01, 0.05, 0.1, 0.2, 0.5):
        rewards = [plaintext_reference(MnistBanditEnv(train.features, train.labels, seed=s), 2000, eps,
                                       seed=s).rewards.mean() for s in range(5)]
        rows, _ = advantage_curve(train, test, eps, 2000, (100, 2000), runs=5)
        eta = privacy_loss(eps, 10)
        print(f"{eps:7.2f}  {eta:5.2f}  {np.mean(rewards):.3f} +- {np.std(rewards):.3f}"
              f"          {rows[-1].advantage:.3f}")
