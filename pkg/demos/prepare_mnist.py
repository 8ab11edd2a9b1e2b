"""Write the 5000-image MNIST sample shipped with mlxtend as IDX files.

    python demos/prepare_mnist.py data/mnist
    export MPCBANDIT_MNIST=data/mnist

The learner and the CLI read the standard IDX file names, so the full
dataset can be dropped into the same directory instead.
"""

import sys

from mpcbandit.envs import read_mnist, prepare_mnist_subset

if __name__ == "__main__":
    path = prepare_mnist_subset(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
    for split in ("train", "test"):
        X, y = read_mnist(path, split)
        print(f"{split}: {X.shape[0]} images, label counts {list(map(int, (y[:, None] == range(10)).sum(0)))}")
    print(f"written to {path}")
