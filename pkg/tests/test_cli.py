import json

import pytest
import yaml

from autorl.cli import default_config_path, main, split_config
from autorl.exp import load_config, read_metrics_csv

TINY = {
    "max_frames": 150, "population_size": 3, "tournament_size": 2, "min_eval_frames": 20, "batch_size": 16,
    "start_network_size": [8], "replay_memory_size": 5000,
    "pbt": {"population_size": 3, "generations": 2, "frames_per_member": 60, "warmup_frames": 20,
            "replay_memory_size": 500},
    "random_search": {"n_trials": 2, "frames_per_trial": 100},
}


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


def test_default_config_parses():
    searl, pbt, rs = split_config(load_config(default_config_path()))
    assert searl.population_size == 20 and searl.start_network_size == (128,)
    assert pbt["generations"] == 100 and rs["n_trials"] == 20


@pytest.mark.parametrize("method", ["searl", "pbt", "random"])
def test_run_plot_compare(tmp_path, config_file, method, capsys):
    out = tmp_path / method
    assert main(["run", "--method", method, "--env", "pointmass1d", "--config", str(config_file),
                 "--seed", "1", "--out", str(out)]) == 0
    rows = read_metrics_csv(out / "metrics.csv")
    assert rows and {r["method"] for r in rows} == {"random_search" if method == "random" else method}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["total_frames"] == sum(int(r["eval_frames"]) for r in rows)
    assert (out / "best_agent.json").exists() and (out / "curve.csv").exists()
    assert main(["plot", "--inputs", str(out), "--out", str(tmp_path / "p.png")]) == 0
    assert (tmp_path / "p.png").stat().st_size > 0
    flag = {"searl": "--searl", "pbt": "--pbt", "random": "--random"}[method]
    assert main(["compare", flag, str(out), "--out", str(tmp_path / "c.png"), "--threshold", "-50"]) == 0
    assert "median frames" in capsys.readouterr().out


def test_run_is_reproducible(tmp_path, config_file):
    for d in ("a", "b"):
        main(["run", "--method", "searl", "--env", "pointmass1d", "--config", str(config_file),
              "--seed", "4", "--out", str(tmp_path / d)])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_bad_arguments(tmp_path, config_file):
    with pytest.raises(SystemExit):
        main(["run", "--method", "grid", "--env", "pendulum", "--out", str(tmp_path)])
    bad = tmp_path / "bad.yaml"
    bad.write_text("populaton_size: 3\n")
    with pytest.raises(ValueError, match="populaton_size"):
        main(["run", "--method", "searl", "--env", "pendulum", "--config", str(bad), "--out", str(tmp_path)])
    with pytest.raises(FileNotFoundError):
        main(["plot", "--inputs", str(tmp_path / "nothing"), "--out", str(tmp_path / "x.png")])
