import csv
import subprocess
import sys
import time

import pytest

from mpcbandit import cli


def _manifest(path):
    return dict(line.split(" = ", 1) for line in path.read_text().splitlines())


def test_smoke_run(tmp_path):
    start = time.perf_counter()
    code = cli.main(["--steps", "20", "--arms", "4", "--out", str(tmp_path), "--seed", "1"])
    assert code == 0
    assert time.perf_counter() - start < 60
    rows = list(csv.DictReader(open(tmp_path / "reward.csv")))
    assert len(rows) == 20 and rows[-1]["step"] == "20"
    assert 0 <= float(rows[-1]["avg_reward"]) <= 1
    manifest = _manifest(tmp_path / "manifest.txt")
    assert manifest["steps"] == "20" and manifest["arms"] == "4" and manifest["seed"] == "1"
    assert float(manifest["eta"]) == pytest.approx(3.6888794541)
    assert (tmp_path / "ledger.csv").exists() and (tmp_path / "timing.csv").exists()


def test_reward_csv_reproducible(tmp_path):
    args = ["--steps", "15", "--arms", "3", "--seed", "4"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/reward.csv").read_bytes() == (tmp_path / "b/reward.csv").read_bytes()


def test_config_file_and_overrides(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# demo\nsteps = 12\nepsilon = 0.2\nlearner = plaintext\nsweep.epsilon = 0.05, 0.5\n")
    cfg = cli.read_config(conf)
    assert cfg.steps == 12 and cfg.epsilon == 0.2 and cfg.sweep == {"epsilon": [0.05, 0.5]}
    args = cli.build_parser().parse_args(["--config", str(conf), "--steps", "30"])
    assert cli.config_from_args(args).steps == 30
    conf.write_text("bogus = 1\n")
    with pytest.raises(cli.ConfigError):
        cli.read_config(conf)


def test_bad_config_exit_code(tmp_path):
    assert cli.main(["--epsilon", "1.5", "--out", str(tmp_path)]) == 2
    assert cli.main(["--env", "mnist", "--arms", "5", "--out", str(tmp_path)]) == 2


def test_sweep_has_eta_column(tmp_path):
    code = cli.main(["--learner", "plaintext", "--steps", "40", "--arms", "4", "--out", str(tmp_path),
                     "--sweep", "epsilon=0.1,0.5 precision_bits=20"])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert list(rows[0]) == cli.SWEEP_COLUMNS
    assert [r["epsilon"] for r in rows] == ["0.1", "0.5"]
    assert all(r["status"] == "ok" and r["eta"] for r in rows)


def test_sweep_records_failures(tmp_path):
    cli.main(["--learner", "plaintext", "--steps", "10", "--arms", "4", "--out", str(tmp_path),
              "--sweep", "epsilon=0.1,2.0"])
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert rows[0]["status"] == "ok" and rows[1]["status"].startswith("failed")


def test_measure_op_rounds():
    assert cli.measure_op("multiplication")[0] == 2
    assert cli.measure_op("argmax", 2, 16)[0] == 23


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mpcbandit.cli", "--steps", "5", "--arms", "3",
                           "--learner", "plaintext", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "wrote" in proc.stdout


def test_bench_outputs(tmp_path):
    assert cli.main(["--bench", "--arms", "8", "--out", str(tmp_path)]) == 0
    rows = {r["operation"]: r for r in csv.DictReader(open(tmp_path / "bench.csv"))}
    rounds = {op: int(r["rounds"]) for op, r in rows.items()}
    assert rounds == {"addition": 0, "multiplication": 2, "reciprocal": 30, "comparison": 7, "argmax": 21}
    slow = {op: float(r["slowdown"]) for op, r in rows.items()}
    assert slow["addition"] < slow["multiplication"] < slow["reciprocal"]
    for r in csv.DictReader(open(tmp_path / "argmax_rounds.csv")):
        assert r["rounds"] == r["closed_form"]
