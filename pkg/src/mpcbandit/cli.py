"""Command-line experiment runner writing CSV artifacts and a manifest.

Config files are flat ``key = value`` text; command-line flags override them.
A sweep grid is given as ``key=v1,v2 key2=w1,w2`` (or ``sweep.key = v1,v2``
lines in the config file) and expands to the Cartesian product.

Exit codes: 0 success, 2 invalid configuration, 3 protocol or transport failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import protocols as pr
from .bandit import BanditConfig, ExplorationSchedule, plaintext_reference, run_episode
from .dealer import Dealer, DealerError
from .envs import DatasetError, build_kmeans_env, load_mnist_pca, synthetic_contexts
from .privacy import privacy_loss
from .ring import FixedPointConfig, encode
from .sharing import share_arithmetic
from .transport import TransportError, make_party_ids, run_session

CSV_SCHEMA_VERSION = 1
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "synthetic"
    steps: int = 2000
    epsilon: float = 0.1
    arms: int = 10
    parties: int = 2
    dim: int = 20
    precision_bits: int = 20
    nr_iters: int = 7
    transport: str = "local"
    party_mode: str = "threads"
    learner: str = "mpc"
    seed: int = 0
    repeats: int = 1
    sigma: float = 0.5
    mnist_dir: str = ""
    tcp_addresses: str = ""
    out: str = "results"
    sweep: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.env not in ("mnist", "synthetic"):
            raise ConfigError(f"env must be mnist or synthetic, got {self.env!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if not 0 < self.precision_bits < 32:
            raise ConfigError("precision_bits must lie in (0, 32)")
        if self.parties < 2:
            raise ConfigError("at least two parties are required")
        if self.arms < 2 or self.dim < 1 or self.steps < 0 or self.nr_iters < 0 or self.repeats < 1:
            raise ConfigError("arms >= 2, dim >= 1, steps >= 0, nr_iters >= 0 and repeats >= 1 are required")
        if self.transport not in ("local", "tcp"):
            raise ConfigError(f"transport must be local or tcp, got {self.transport!r}")
        if self.party_mode not in ("threads", "processes"):
            raise ConfigError(f"party_mode must be threads or processes, got {self.party_mode!r}")
        if self.learner not in ("mpc", "plaintext"):
            raise ConfigError(f"learner must be mpc or plaintext, got {self.learner!r}")
        if self.env == "mnist" and self.arms != 10:
            raise ConfigError("the MNIST environment has exactly 10 arms")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        return self

    def manifest_items(self) -> list[tuple[str, str]]:
        items = [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self) if f.name != "sweep"]
        items += [(f"sweep.{k}", ",".join(map(str, v))) for k, v in self.sweep.items()]
        return [(k, str(v)) for k, v in items]


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, text: str):
    key = key.replace("-", "_")
    if key not in _FIELDS or key == "sweep":
        raise ConfigError(f"unknown config key {key!r}")
    kind = type(getattr(ExperimentConfig(), key))
    try:
        return key, kind(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r}") from exc


def parse_grid(spec: str) -> dict[str, list]:
    grid = {}
    for token in spec.replace(";", " ").split():
        if "=" not in token:
            raise ConfigError(f"sweep entry {token!r} is not key=v1,v2")
        key, values = token.split("=", 1)
        parsed = [_coerce(key, v)[1] for v in values.split(",") if v]
        if not parsed:
            raise ConfigError(f"sweep entry {token!r} has no values")
        grid[key.replace("-", "_")] = parsed
    return grid


def read_config(path) -> ExperimentConfig:
    values, grid = {}, {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("sweep."):
            grid.update(parse_grid(f"{key[6:]}={value.replace(' ', '')}"))
        else:
            k, v = _coerce(key, value)
            values[k] = v
    return ExperimentConfig(**values, sweep=grid)


def write_manifest(path, items) -> None:
    with open(path, "w") as fh:
        for key, value in items:
            fh.write(f"{key} = {value}\n")


# -- experiment pieces ------------------------------------------------------------


def _mnist_dir(cfg: ExperimentConfig) -> str:
    return cfg.mnist_dir or os.environ.get("MPCBANDIT_MNIST", "")


def build_env(cfg: ExperimentConfig, seed: int):
    mnist = _mnist_dir(cfg)
    if cfg.env == "mnist":
        if not mnist:
            raise ConfigError("the MNIST environment needs mnist_dir (or MPCBANDIT_MNIST)")
        env = load_mnist_pca(mnist, components=cfg.dim, seed=seed)
        if cfg.steps > len(env):
            raise ConfigError(f"{cfg.steps} steps requested, the dataset has {len(env)} examples")
        env.order = env.order[:cfg.steps]
        return env, "mnist-pca"
    if mnist:
        data, source = load_mnist_pca(mnist, components=cfg.dim, seed=None).features, "mnist-pca"
    else:
        data, source = synthetic_contexts(max(cfg.steps, 20 * cfg.arms), cfg.dim, cfg.arms, seed=seed), "unit-gaussian"
    return build_kmeans_env(data, cfg.arms, cfg.sigma, seed=seed, T=cfg.steps), source


def _addresses(cfg: ExperimentConfig):
    if not cfg.tcp_addresses:
        return None
    out = []
    for item in cfg.tcp_addresses.split(","):
        host, port = item.rsplit(":", 1)
        out.append((host, int(port)))
    if len(out) != cfg.parties + 2:
        raise ConfigError(f"tcp_addresses needs {cfg.parties + 2} entries (compute parties, puller, receiver)")
    return out


def run_once(cfg: ExperimentConfig, seed: int):
    env, source = build_env(cfg, seed)
    if cfg.learner == "plaintext":
        bcfg = BanditConfig(cfg.arms, cfg.dim, cfg.epsilon, cfg.parties, FixedPointConfig(cfg.precision_bits))
        schedule = ExplorationSchedule.draw(np.random.default_rng(seed), cfg.steps, cfg.arms, cfg.epsilon,
                                            bcfg.fixed_point)
        return plaintext_reference(env, cfg.steps, cfg.epsilon, seed, schedule, bcfg.tie_slack), source
    bcfg = BanditConfig(cfg.arms, cfg.dim, cfg.epsilon, cfg.parties, FixedPointConfig(cfg.precision_bits),
                        cfg.nr_iters)
    return run_episode(env, bcfg, cfg.steps, seed=seed, transport=cfg.transport, party_mode=cfg.party_mode,
                       addresses=_addresses(cfg)), source


def run_experiment(cfg: ExperimentConfig) -> Path:
    """One episode per repeat; writes reward, timing and ledger CSVs plus ``manifest.txt``."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    source = ""
    # wall-clock times live in their own file so reward.csv is reproducible byte for byte
    with open(out / "reward.csv", "w", newline="") as fh, open(out / "timing.csv", "w", newline="") as th:
        writer, timer = csv.writer(fh), csv.writer(th)
        writer.writerow(["repeat", "step", "avg_reward", "rounds"])
        timer.writerow(["repeat", "step", "wall_clock"])
        for rep in range(cfg.repeats):
            result, source = run_once(cfg, cfg.seed + rep)
            rounds = np.cumsum(result.step_rounds) if result.step_rounds else np.zeros(len(result.rewards), int)
            clock = np.cumsum(result.step_seconds) if result.step_seconds else np.zeros(len(result.rewards))
            for t, avg in enumerate(result.average_reward):
                writer.writerow([rep, t + 1, f"{avg:.6f}", int(rounds[t])])
                timer.writerow([rep, t + 1, f"{clock[t]:.4f}"])
            if result.ledger is not None and rep == 0:
                result.ledger.to_csv(out / "ledger.csv")
    items = cfg.manifest_items() + [
        ("eta", privacy_loss(cfg.epsilon, cfg.arms)),
        ("context_source", source),
        ("party_execution", cfg.party_mode if cfg.learner == "mpc" else "none"),
        ("dealer_commitment", Dealer(cfg.parties, seed=cfg.seed).seed_commitment.hex()),
        ("csv_schema_version", CSV_SCHEMA_VERSION),
        ("package_version", __version__),
    ]
    write_manifest(out / "manifest.txt", items)
    return out


SWEEP_COLUMNS = ["env", "learner", "epsilon", "eta", "steps", "arms", "parties", "precision_bits", "nr_iters",
                 "repeats", "mean_reward", "std_reward", "status"]


def run_sweep(cfg: ExperimentConfig, grid: dict | None = None) -> Path:
    """Mean and standard deviation of the final average reward per grid cell."""
    grid = grid if grid is not None else cfg.sweep
    if not grid:
        raise ConfigError("the sweep grid is empty")
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(grid)
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for combo in itertools.product(*(grid[k] for k in keys)):
            cell = dataclasses.replace(cfg, sweep={}, **dict(zip(keys, combo)))
            finals, status = [], "ok"
            try:
                cell.validate()
                for rep in range(cell.repeats):
                    finals.append(float(np.mean(run_once(cell, cell.seed + rep)[0].rewards)))
            except (ConfigError, TransportError, DealerError, RuntimeError, ValueError) as exc:
                status = f"failed: {type(exc).__name__}: {exc}".replace(",", ";")
            mean = f"{np.mean(finals):.6f}" if finals else ""
            std = f"{np.std(finals, ddof=1):.6f}" if len(finals) > 1 else ("0.000000" if finals else "")
            eta = privacy_loss(cell.epsilon, cell.arms) if 0 <= cell.epsilon <= 1 and cell.arms >= 2 else math.nan
            writer.writerow([cell.env, cell.learner, cell.epsilon, f"{eta:.6f}", cell.steps, cell.arms, cell.parties,
                             cell.precision_bits, cell.nr_iters, cell.repeats, mean, std, status])
            fh.flush()
    write_manifest(out / "manifest.txt", cfg.manifest_items() + [("csv_schema_version", CSV_SCHEMA_VERSION)])
    return out


# -- micro benchmark ----------------------------------------------------------------


def _time_plain(fn, reps: int) -> float:
    start = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - start) / reps


def measure_op(op: str, parties: int = 2, arms: int = 10, cfg: FixedPointConfig | None = None, seed: int = 0):
    """Rounds and wall-clock seconds of one secure operation on fresh random inputs."""
    cfg = cfg or FixedPointConfig()
    rng = np.random.default_rng(seed)
    n = arms if op == "argmax" else 1
    x = rng.uniform(1, 10, size=n)
    y = rng.uniform(1, 10, size=n)
    xs = share_arithmetic(encode(x, cfg), parties, rng)
    ys = share_arithmetic(encode(y, cfg), parties, rng)
    kernels = {
        "addition": lambda rt, a, b: pr.sec_add(a, b),
        "multiplication": lambda rt, a, b: pr.sec_mul(rt, a, b),
        "reciprocal": lambda rt, a, b: pr.sec_reciprocal(rt, a),
        "comparison": lambda rt, a, b: pr.sec_ge(rt, a, b),
        "argmax": lambda rt, a, b: pr.sec_argmax(rt, a),
    }
    kernel = kernels[op]
    programs = {pid: (lambda rt, i=pid.index: kernel(rt, xs[i], ys[i])) for pid in make_party_ids(parties, False)}
    res = run_session(programs, parties, stores=Dealer(parties, seed=seed, cfg=cfg).views(), cfg=cfg)
    return res.ledgers[0].total_rounds, res.wall_seconds


PLAINTEXT_OPS = {
    "addition": lambda x, y: x + y,
    "multiplication": lambda x, y: x * y,
    "reciprocal": lambda x, y: 1.0 / x,
    "comparison": lambda x, y: x >= y,
    "argmax": lambda x, y: int(np.argmax(x)),
}


def run_bench(cfg: ExperimentConfig, reps: int = 5) -> Path:
    """Rounds per operation and slowdown against plain numpy; also argmax rounds by arm count."""
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fp = FixedPointConfig(cfg.precision_bits)
    rng = np.random.default_rng(cfg.seed)
    with open(out / "bench.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["operation", "parties", "arms", "rounds", "mpc_seconds", "plain_seconds", "slowdown"])
        for op in ("addition", "multiplication", "reciprocal", "comparison", "argmax"):
            n = cfg.arms if op == "argmax" else 1
            x, y = rng.uniform(1, 10, n), rng.uniform(1, 10, n)
            plain = _time_plain(lambda: PLAINTEXT_OPS[op](x, y), 2000)
            timings = [measure_op(op, cfg.parties, cfg.arms, fp, cfg.seed + r) for r in range(reps)]
            rounds, secs = timings[0][0], float(np.median([t for _, t in timings]))
            writer.writerow([op, cfg.parties, n, rounds, f"{secs:.6f}", f"{plain:.9f}", f"{secs / plain:.1f}"])
    with open(out / "argmax_rounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parties", "arms", "rounds", "closed_form"])
        for parties in (2, 3, 4):
            for arms in (4, 16, 64):
                rounds, _ = measure_op("argmax", parties, arms, fp, cfg.seed)
                writer.writerow([parties, arms, rounds, pr.argmax_rounds(arms, parties)])
    write_manifest(out / "manifest.txt", cfg.manifest_items() + [("csv_schema_version", CSV_SCHEMA_VERSION)])
    return out


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpcbandit", description=__doc__.split("\n")[0])
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--transport", choices=["local", "tcp"])
    p.add_argument("--party-mode", choices=["threads", "processes"])
    p.add_argument("--parties", type=int)
    p.add_argument("--arms", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--precision-bits", type=int)
    p.add_argument("--nr-iters", type=int)
    p.add_argument("--env", choices=["mnist", "synthetic"])
    p.add_argument("--steps", type=int, help="episode length T")
    p.add_argument("--learner", choices=["mpc", "plaintext"])
    p.add_argument("--repeats", type=int)
    p.add_argument("--mnist-dir")
    p.add_argument("--sweep", nargs="?", const="", default=None,
                   help="run a grid, e.g. 'epsilon=0.01,0.1 precision_bits=18,20'; bare flag uses the config grid")
    p.add_argument("--bench", action="store_true", help="measure rounds and slowdown per operation")
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = read_config(args.config) if args.config else ExperimentConfig()
    env_transport = os.environ.get("MPCBANDIT_TRANSPORT")
    if env_transport:
        cfg.transport = env_transport
    for key in ("out", "seed", "transport", "party_mode", "parties", "arms", "epsilon", "precision_bits",
                "nr_iters", "env", "steps", "learner", "repeats", "mnist_dir"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if args.sweep:
        cfg.sweep = parse_grid(args.sweep)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args).validate()
        if args.bench:
            out = run_bench(cfg)
        elif args.sweep is not None:
            out = run_sweep(cfg)
        else:
            out = run_experiment(cfg)
    except (ConfigError, DatasetError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, DealerError, RuntimeError) as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
