import gzip

import numpy as np
import pytest

from mpcbandit import envs


def test_idx_round_trip(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    envs.write_idx(tmp_path / "a.idx", arr)
    assert np.array_equal(envs.read_idx(tmp_path / "a.idx"), arr)
    raw = (tmp_path / "a.idx").read_bytes()
    (tmp_path / "b.idx.gz").write_bytes(gzip.compress(raw))
    assert np.array_equal(envs.read_idx(tmp_path / "b.idx.gz"), arr)


def test_idx_rejects_bad_files(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x01\x02\x03")
    with pytest.raises(envs.DatasetError):
        envs.read_idx(tmp_path / "bad")
    envs.write_idx(tmp_path / "ok", np.zeros((2, 2), dtype=np.uint8))
    (tmp_path / "short").write_bytes((tmp_path / "ok").read_bytes()[:-1])
    with pytest.raises(envs.DatasetError):
        envs.read_idx(tmp_path / "short")
    with pytest.raises(envs.DatasetError):
        envs.read_mnist(tmp_path)


def test_pca_round_trip(tmp_path):
    X = np.random.default_rng(0).normal(size=(200, 12)) * np.arange(1, 13)
    p = envs.PCAProjection.fit(X, 4)
    assert np.all(np.diff(p.explained_variance_ratio) <= 0)
    Z = p.transform(X)
    assert np.allclose(np.linalg.norm(Z, axis=1), 1)
    p.save(tmp_path / "p.bin")
    q = envs.PCAProjection.load(tmp_path / "p.bin")
    assert np.allclose(q.transform(X), Z)
    with pytest.raises(envs.DatasetError):
        envs.PCAProjection.fit(X, 20)


def test_mnist_env_rewards():
    feats = np.eye(5)
    env = envs.MnistBanditEnv(feats, np.array([0, 1, 2, 3, 4]), seed=None, n_arms=5)
    assert len(env) == 5 and env.dim == 5
    assert env.reward(2, 2) == 1.0 and env.reward(2, 3) == 0.0


def test_kernel_probabilities():
    centers = np.array([[0.0, 0.0], [1.0, 0.0]])
    nu = envs.kernel_probabilities(centers, np.array([0.0, 0.0]), 0.5)
    assert nu[0] == 1.0 and nu[1] == pytest.approx(np.exp(-1.0))


def test_kmeans_recovers_clusters():
    rng = np.random.default_rng(0)
    pts = np.concatenate([rng.normal(c, 0.05, size=(50, 2)) for c in ([0, 0], [5, 5], [0, 5])])
    centers, assign = envs.kmeans(pts, 3, rng)
    assert len(np.unique(assign)) == 3
    found = sorted(map(tuple, np.round(centers)))
    assert found == [(0.0, 0.0), (0.0, 5.0), (5.0, 5.0)]


def test_kmeans_env_reward_frequency():
    env = envs.build_kmeans_env(envs.synthetic_contexts(3000, 5, seed=1), 4, seed=2)
    t_best = np.argmax(env.nu, axis=1)
    assert all(env.reward(t, t_best[t]) == 1.0 for t in range(50))
    rewards = np.array([env.reward(t, 0) for t in range(len(env))])
    assert rewards.mean() == pytest.approx(env.nu[:, 0].mean(), abs=0.03)
    with pytest.raises(ValueError):
        envs.build_kmeans_env(np.zeros((5, 2)), 1)


def test_split_features():
    parts = envs.split_features(np.arange(7), [3, 4])
    assert [len(p) for p in parts] == [3, 4]
    assert envs.even_split(7, 3) == [3, 2, 2]
    with pytest.raises(ValueError):
        envs.split_features(np.arange(7), [3, 3])


def test_mnist_subset(mnist_dir):
    X, y = envs.read_mnist(mnist_dir, "train")
    Xt, yt = envs.read_mnist(mnist_dir, "test")
    assert X.shape == (4000, 784) and Xt.shape == (1000, 784)
    assert 0 <= X.min() and X.max() <= 1
    env = envs.load_mnist_pca(mnist_dir, 20, limit=100)
    assert len(env) == 100 and env.dim == 20
    test_env = envs.load_mnist_pca(mnist_dir, split="test", projection=env.projection)
    assert len(test_env) == 1000
