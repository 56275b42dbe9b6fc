import csv
import math
import statistics
from pathlib import Path

import numpy as np
import pytest

from pbrl import config as C
from pbrl.cli import main
from pbrl.experiments import surrogate_config
from pbrl.orchestrator import BASE_COLUMNS, run_training
from pbrl.plotting import MetricError, aggregate, plot_runs


def write_run(run_dir, table, hypers=("h1", "h2")):
    """table[agent] = list of (env_steps, mean_return_window)."""
    metrics = Path(run_dir) / "metrics"
    metrics.mkdir(parents=True)
    for k, rows in enumerate(table):
        with open(metrics / f"agent_{k}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(BASE_COLUMNS + list(hypers))
            for i, (step, ret) in enumerate(rows):
                w.writerow([i + 1, step, k, ret, "nan", 0.01, 1.0, 1.0])
    return run_dir


def test_band_matches_hand_std(tmp_path):
    table = [[(10, 1.0), (20, 2.0), (30, -4.0)],
             [(10, 3.0), (20, 2.0), (30, 0.0)],
             [(10, 5.0), (20, 2.5), (30, 1.0)],
             [(10, 7.0), (20, 1.5), (30, 11.0)]]
    run = write_run(tmp_path / "r", table)
    pts = aggregate(run, "mean_return_window")
    for (step, mean, std, count), j in zip(pts, range(3)):
        vals = [table[k][j][1] for k in range(4)]
        assert step == table[0][j][0] and count == 4
        assert mean == pytest.approx(sum(vals) / 4, abs=1e-12)
        assert std == pytest.approx(statistics.stdev(vals), abs=1e-12)
    # first point by hand: values 1,3,5,7 -> sample std sqrt(20/3)
    assert pts[0][2] == pytest.approx(math.sqrt(20 / 3), abs=1e-12)
    svg, csv_path = plot_runs([run], tmp_path / "p.svg")
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["std"]) == pytest.approx(math.sqrt(20 / 3), abs=1e-12)
    assert svg.read_text().startswith("<svg")


def test_single_agent_zero_band(tmp_path):
    run = write_run(tmp_path / "r", [[(10, 1.0), (20, 3.0)]])
    assert all(std == 0.0 for _, _, std, _ in aggregate(run, "mean_return_window"))


def test_nan_points_skipped(tmp_path):
    run = write_run(tmp_path / "r", [[(10, "nan"), (20, 3.0)], [(10, 2.0), (20, 5.0)]])
    pts = aggregate(run, "mean_return_window")
    assert pts[0] == (10, 2.0, 0.0, 1)
    assert pts[1][3] == 2


def test_identical_runs_overlap(tmp_path):
    table = [[(10, 1.0), (20, 3.0)], [(10, 2.0), (20, 4.0)]]
    a = write_run(tmp_path / "a", table)
    b = write_run(tmp_path / "b", table)
    assert aggregate(a, "mean_return_window") == aggregate(b, "mean_return_window")


def test_missing_metric_lists_columns(tmp_path):
    run = write_run(tmp_path / "r", [[(10, 1.0)]])
    with pytest.raises(MetricError, match="available columns: iteration, env_steps"):
        aggregate(run, "reward")


def test_missing_run_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        aggregate(tmp_path / "none", "lr")


# --- CLI --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Surrogate run, n=4, 5k steps, trained through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "tiny.toml"
    C.save(surrogate_config(total_steps=5000), cfg_path)
    code = main(["train", "--config", str(cfg_path), "--seed", "3", "--out", str(root / "run"),
                 "--deterministic"])
    assert code == 0
    ckpts = sorted((root / "run" / "checkpoints").glob("ckpt_5000.bin"))
    return root, ckpts[0]


def test_missing_config_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_bad_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["eval", "--checkpoint", "x", "--agent", "middle"])
    assert info.value.code == 2


def test_train_smoke(trained):
    root, ckpt = trained
    assert all((root / "run" / "metrics" / f"agent_{k}.csv").exists() for k in range(4))
    assert ckpt.exists()
    snap = C.load(root / "run" / "config.snapshot")
    assert snap.seed == 3


def test_train_records_entropy_seed(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    C.save(surrogate_config(mode="baseline", total_steps=50), cfg_path)
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r")]) == 0
    snap = C.load(tmp_path / "r" / "config.snapshot")
    assert isinstance(snap.seed, int)
    assert f"seed {snap.seed}" in capsys.readouterr().out


def test_train_bad_config_exits_1(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text("[run]\npopulaton = 3\n")
    assert main(["train", "--config", str(path)]) == 1
    assert "run.populaton" in capsys.readouterr().err


def test_eval_best_and_worst(trained, capsys):
    _, ckpt = trained
    assert main(["eval", "--checkpoint", str(ckpt), "--agent", "best", "--episodes", "3"]) == 0
    best = capsys.readouterr().out
    assert main(["eval", "--checkpoint", str(ckpt), "--agent", "worst", "--episodes", "3"]) == 0
    worst = capsys.readouterr().out

    def mean(line):
        return float(line.split(":")[1].split("±")[0])

    assert mean(best) >= mean(worst)
    assert "over 3 episodes" in best


def test_eval_deterministic(trained, capsys):
    _, ckpt = trained
    outs = []
    for _ in range(2):
        assert main(["eval", "--checkpoint", str(ckpt), "--agent", "1", "--seed", "4"]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]


def test_eval_errors(trained, capsys):
    _, ckpt = trained
    assert main(["eval", "--checkpoint", str(ckpt), "--episodes", "0"]) == 1
    assert "episodes must be ≥ 1" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(ckpt), "--agent", "9"]) == 1
    assert "n=4" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(ckpt.parent / "missing.bin")]) == 1


def test_eval_corrupt_checkpoint(trained, tmp_path, capsys):
    _, ckpt = trained
    bad = tmp_path / "bad.bin"
    data = bytearray(ckpt.read_bytes())
    data[100] ^= 1
    bad.write_bytes(bytes(data))
    assert main(["eval", "--checkpoint", str(bad)]) == 1
    assert "offset" in capsys.readouterr().err


def test_inspect(trained, capsys):
    _, ckpt = trained
    assert main(["inspect", "--checkpoint", str(ckpt)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1].split() == ["agent", "env_steps", "fitness", "h1", "h2"]
    assert len(out) == 2 + 4


def test_plot_command(trained, tmp_path, capsys):
    root, _ = trained
    assert main(["plot", "--runs", str(root / "run"), "--out", str(tmp_path / "p.svg"),
                 "--per-agent"]) == 0
    assert (tmp_path / "p.svg").exists() and (tmp_path / "p.csv").exists()
    assert main(["plot", "--runs", str(root / "run"), "--out", str(tmp_path / "q.svg"),
                 "--metric", "reward"]) == 1
    assert "available columns" in capsys.readouterr().err


def test_defaults_round_trip(capsys):
    assert main(["defaults", "--algorithm", "sac", "--env", "pointmass"]) == 0
    cfg = C.loads(capsys.readouterr().out)
    assert cfg.algorithm == "sac" and cfg.env == "pointmass"


def test_output_root_applies_to_relative_out(tmp_path, monkeypatch):
    monkeypatch.setenv("PBRL_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg_path = tmp_path / "c.toml"
    C.save(surrogate_config(mode="baseline", total_steps=50), cfg_path)
    assert main(["train", "--config", str(cfg_path), "--out", "rel", "--seed", "1"]) == 0
    assert (tmp_path / "root" / "rel" / "config.snapshot").exists()


def test_train_nan_halt_exit_code(tmp_path, monkeypatch, capsys):
    cfg_path = tmp_path / "c.toml"
    C.save(surrogate_config(total_steps=400), cfg_path)
    import pbrl.agents.surrogate as sur

    original = sur.SurrogateLearner.train_iteration

    def poisoned(self):
        if self.agent_id == 1 and self.env_steps >= 50:
            self.theta.values[:] = np.nan
        return original(self)

    monkeypatch.setattr(sur.SurrogateLearner, "train_iteration", poisoned)
    assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "r"),
                 "--seed", "0"]) == 3
    assert "_halt.bin" in capsys.readouterr().err


def test_compare_command(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    C.save(surrogate_config(total_steps=600), cfg_path)
    assert main(["compare", "--out", str(tmp_path / "cmp"), "--config", str(cfg_path),
                 "--seed", "2"]) == 0
    out = capsys.readouterr().out
    for scheme in ("perturb", "dexpbt", "resample"):
        assert scheme in out
    assert (tmp_path / "cmp" / "summary.csv").exists()


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("train", "eval", "plot", "inspect", "PBRL_OUTPUT_ROOT"):
        assert cmd in out


def test_run_training_result_matches_cli(trained):
    root, _ = trained
    cfg = C.load(root / "run" / "config.snapshot")
    cfg.out_dir = str(root / "again")
    run_training(cfg)
    for k in range(4):
        a = (root / "run" / "metrics" / f"agent_{k}.csv").read_bytes()
        b = (root / "again" / "metrics" / f"agent_{k}.csv").read_bytes()
        assert a == b
