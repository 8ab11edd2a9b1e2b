"""Bandit environments: MNIST digits projected by PCA, and a K-means reward model.

An environment is a finite, seeded stream. ``context(t)`` returns the unit
feature vector of step ``t`` and ``reward(t, arm)`` the reward of pulling
``arm`` at that step; both are pure functions of the seed, so runs replay
bit-exactly.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: np.dtype(">i2"), 0x0C: np.dtype(">i4"),
              0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8")}
_IDX_CODES = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
PCA_MAGIC = b"MPCPCA01"


class DatasetError(ValueError):
    pass


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX file (optionally gzip-compressed)."""
    path = Path(path)
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] not in IDX_DTYPES:
        raise DatasetError(f"{path}: not an IDX file")
    dtype, ndim = np.dtype(IDX_DTYPES[raw[2]]), raw[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - header != expected:
        raise DatasetError(f"{path}: expected {expected} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype not in _IDX_CODES:
        raise TypeError("only uint8/int8 arrays are supported")
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, _IDX_CODES[array.dtype], array.ndim]))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise DatasetError(f"missing dataset file {name} in {directory}")


def read_mnist(directory, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """Images as float pixels in [0, 1] with shape (N, rows*cols), and integer labels."""
    directory = Path(directory)
    img_name, lbl_name = MNIST_FILES[split]
    images = read_idx(_find(directory, img_name))
    labels = read_idx(_find(directory, lbl_name))
    if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
        raise DatasetError(f"{directory}: image/label files do not match")
    return images.reshape(len(images), -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def prepare_mnist_subset(directory, n_test: int = 1000, seed: int = 0) -> Path:
    """Write the 5000-image MNIST sample shipped with ``mlxtend`` as IDX files.

    Used when the full dataset is unavailable. The images are shuffled with
    ``seed`` and the last ``n_test`` become the held-out (t10k) split.
    """
    from mlxtend.data import mnist_data  # optional dependency

    X, y = mnist_data()
    order = np.random.default_rng(seed).permutation(len(y))
    X = X[order].astype(np.uint8).reshape(-1, 28, 28)
    y = y[order].astype(np.uint8)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cut = len(y) - n_test
    for split, sl in (("train", slice(0, cut)), ("test", slice(cut, None))):
        img_name, lbl_name = MNIST_FILES[split]
        write_idx(directory / img_name, X[sl])
        write_idx(directory / lbl_name, y[sl])
    return directory


@dataclass
class PCAProjection:
    mean: np.ndarray
    components: np.ndarray  # (k, pixels)
    explained_variance_ratio: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, k: int) -> "PCAProjection":
        if not 0 < k <= X.shape[1]:
            raise DatasetError(f"components={k} must be in [1, {X.shape[1]}]")
        mean = X.mean(axis=0)
        _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
        var = s ** 2
        # fix the sign of each component so the projection is deterministic
        signs = np.sign(vt[np.arange(len(vt)), np.abs(vt).argmax(axis=1)])
        vt = vt * signs[:, None]
        return cls(mean, vt[:k].copy(), var[:k] / var.sum())

    def transform(self, X: np.ndarray, normalize: bool = True) -> np.ndarray:
        Z = (X - self.mean) @ self.components.T
        if normalize:
            Z = Z / np.linalg.norm(Z, axis=1, keepdims=True)
        return Z

    def save(self, path) -> None:
        k, d = self.components.shape
        with open(path, "wb") as fh:
            fh.write(PCA_MAGIC + struct.pack("<II", k, d))
            for arr in (self.mean, self.components, self.explained_variance_ratio):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "PCAProjection":
        raw = Path(path).read_bytes()
        if raw[:8] != PCA_MAGIC:
            raise DatasetError(f"{path}: not a PCA projection file")
        k, d = struct.unpack_from("<II", raw, 8)
        flat = np.frombuffer(raw, dtype="<f8", offset=16)
        if len(flat) != d + k * d + k:
            raise DatasetError(f"{path}: truncated PCA projection file")
        return cls(flat[:d].copy(), flat[d:d + k * d].reshape(k, d).copy(), flat[d + k * d:].copy())


class BanditEnv:
    """Finite stream of contexts with a deterministic reward table."""

    n_arms: int
    dim: int

    def __len__(self) -> int:
        raise NotImplementedError

    def context(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def reward(self, t: int, arm: int) -> float:
        raise NotImplementedError

    def expected_reward(self, t: int, arm: int) -> float:
        return self.reward(t, arm)


class MnistBanditEnv(BanditEnv):
    """Each step shows one digit; pulling the arm of its class pays 1."""

    def __init__(self, features: np.ndarray, labels: np.ndarray, seed: int | None = 0, n_arms: int = 10):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_arms = n_arms
        self.dim = self.features.shape[1]
        n = len(self.labels)
        self.order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)

    def __len__(self) -> int:
        return len(self.order)

    def context(self, t: int) -> np.ndarray:
        return self.features[self.order[t]]

    def label(self, t: int) -> int:
        return int(self.labels[self.order[t]])

    def reward(self, t: int, arm: int) -> float:
        return float(arm == self.label(t))


def load_mnist_pca(path, components: int = 20, limit: int | None = None, split: str = "train",
                   seed: int | None = 0, projection: PCAProjection | None = None) -> MnistBanditEnv:
    """MNIST bandit over unit-normalised PCA features.

    The projection is fit on the training images unless one is supplied,
    so the held-out split can be projected consistently.
    """
    if projection is None:
        train_X, _ = read_mnist(path, "train")
        projection = PCAProjection.fit(train_X, components)
    X, y = read_mnist(path, split)
    env = MnistBanditEnv(projection.transform(X), y, seed=seed)
    env.projection = projection
    if limit is not None:
        env.order = env.order[:limit]
    return env


# -- K-means environment -----------------------------------------------------


def kmeans(data: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding. Returns (centers, assignment)."""
    n = len(data)
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    centers = [data[rng.integers(n)]]
    d2 = ((data - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        idx = rng.choice(n, p=d2 / d2.sum()) if d2.sum() > 0 else rng.integers(n)
        centers.append(data[idx])
        d2 = np.minimum(d2, ((data - data[idx]) ** 2).sum(axis=1))
    centers = np.array(centers)
    assign = None
    for _ in range(max_iter):
        dist = ((data[:, None, :] - centers[None]) ** 2).sum(axis=-1)
        new = dist.argmin(axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = data[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return centers, assign


def kernel_probabilities(centers: np.ndarray, x: np.ndarray, sigma: float) -> np.ndarray:
    """nu_a = exp(-|c_a - x| / (2 sigma)), scaled so the best arm has nu = 1."""
    dist = np.linalg.norm(centers - x, axis=-1)
    return np.exp(-(dist - dist.min(axis=-1, keepdims=True)) / (2 * sigma))


@dataclass
class SyntheticEnvConfig:
    n_arms: int
    centers: np.ndarray
    sigma: float = 0.5


class KMeansBanditEnv(BanditEnv):
    """Arm a pays 1 with probability nu_a(x); one uniform per step decides all arms."""

    def __init__(self, config: SyntheticEnvConfig, contexts: np.ndarray, seed: int = 0):
        self.config = config
        self.n_arms = config.n_arms
        self.contexts = np.asarray(contexts, dtype=np.float64)
        self.dim = self.contexts.shape[1]
        self.nu = kernel_probabilities(config.centers[None], self.contexts[:, None, :], config.sigma)
        self.draws = np.random.default_rng(seed).random(len(self.contexts))

    def __len__(self) -> int:
        return len(self.contexts)

    def context(self, t: int) -> np.ndarray:
        return self.contexts[t]

    def reward(self, t: int, arm: int) -> float:
        return float(self.draws[t] < self.nu[t, arm])

    def expected_reward(self, t: int, arm: int) -> float:
        return float(self.nu[t, arm])


def build_kmeans_env(data: np.ndarray, K: int, sigma: float = 0.5, seed: int = 0, T: int | None = None,
                     max_iter: int = 300) -> KMeansBanditEnv:
    """Cluster ``data`` into ``K`` arms and stream ``T`` points drawn from it."""
    if K < 2:
        raise ValueError("K must be at least 2")
    rng = np.random.default_rng(seed)
    centers, _ = kmeans(np.asarray(data, dtype=np.float64), K, rng, max_iter)
    T = len(data) if T is None else T
    idx = rng.permutation(len(data)) if T <= len(data) else rng.integers(len(data), size=T)
    return KMeansBanditEnv(SyntheticEnvConfig(K, centers, sigma), data[idx[:T]], seed=seed + 1)


def synthetic_contexts(n: int, dim: int = 20, clusters: int = 10, seed: int = 0, spread: float = 0.35) -> np.ndarray:
    """Unit vectors scattered around random directions, a stand-in when MNIST is absent."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(clusters, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs[rng.integers(clusters, size=n)] + spread * rng.normal(size=(n, dim)) / np.sqrt(dim)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def split_features(x: np.ndarray, party_dims: Sequence[int]) -> list[np.ndarray]:
    """Contiguous split of the last axis into one block per party."""
    x = np.asarray(x)
    if any(d < 0 for d in party_dims) or sum(party_dims) != x.shape[-1]:
        raise ValueError(f"party dims {list(party_dims)} do not sum to {x.shape[-1]}")
    return np.split(x, np.cumsum(party_dims)[:-1], axis=-1)


def even_split(dim: int, parties: int) -> list[int]:
    base, extra = divmod(dim, parties)
    return [base + (p < extra) for p in range(parties)]
