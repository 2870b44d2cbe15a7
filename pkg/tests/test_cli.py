import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from fairpatrol import io
from fairpatrol.cli import main
from fairpatrol.config import RunConfig, apply_overrides, desk_preset

TINY = [
    "--set", "synth.nx=3",
    "--set", "synth.ny=2",
    "--set", "synth.T=600",
    "--set", "stgnn.hidden=4",
    "--set", "stgnn.embed=4",
    "--set", "train.epochs=1",
    "--set", "sim.cycles=2",
    "--set", "sim.retrain_epochs=1",
]
CHAIN = ["ingest", "build-graph", "train", "allocate", "simulate", "report"]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert main(["synth", "--out", str(out), *TINY]) == 0
    for cmd in CHAIN:
        assert main([cmd, "--out", str(out)]) == 0, cmd
    return out


def test_chain_writes_every_artefact(tiny_run):
    for name in [
        "config.json", "manifest.json", "counts.npy", "features.npy", "splits.json", "graph.json",
        "checkpoint.npz", "training_log.csv", "allocation.csv", "history.json", "metrics_table.md",
        "figures/detection_rates.csv",
    ]:
        assert (tiny_run / name).exists(), name


def test_reingested_synthetic_counts_match_generator(tiny_run):
    np.testing.assert_array_equal(np.load(tiny_run / "counts.npy"), np.load(tiny_run / "inputs" / "true_counts.npy"))


def test_manifest_hashes_and_config(tiny_run):
    manifest = io.read_json(tiny_run / "manifest.json")
    cfg = RunConfig.load(tiny_run / "config.json")
    assert manifest["seed"] == cfg.seed == 42 and manifest["mode"] == "synthetic"
    assert cfg.synth.T == 600 and cfg.train.epochs == 1
    entry = manifest["files"]["history.json"]
    assert entry["command"] == "simulate"
    assert entry["bytes"] == (tiny_run / "history.json").stat().st_size


def test_commands_are_idempotent(tiny_run, capsys):
    before = {p: (tiny_run / p).read_bytes() for p in ("counts.npy", "graph.json", "allocation.csv", "history.json")}
    for cmd in ("ingest", "build-graph", "allocate", "simulate"):
        assert main([cmd, "--out", str(tiny_run)]) == 0
    for p, data in before.items():
        assert (tiny_run / p).read_bytes() == data, p
    assert "simulate:" in capsys.readouterr().out


def test_missing_artefact_exits_nonzero_naming_file(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "missing required artefact" in err and "counts.npy" in err


def test_report_without_history_names_it(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 2
    assert "history.json" in capsys.readouterr().err


def test_bad_override_is_a_clean_error(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--set", "train.nope=1"]) == 1
    assert "error" in capsys.readouterr().err


def test_env_var_sets_default_out(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FAIRPATROL_OUT", str(tmp_path / "envrun"))
    assert main(["allocate"]) == 2
    assert str(tmp_path / "envrun") in capsys.readouterr().err


def test_report_reproduces_shipped_sample_byte_identically(tmp_path):
    sample = resources.files("fairpatrol") / "data" / "sample"
    with resources.as_file(sample) as src:
        src = Path(src)
        out = tmp_path / "report"
        assert main(["report", "--out", str(out), "--history", str(src / "history.json"),
                     "--training-log", str(src / "training_log.csv")]) == 0
        expected = sorted(p.relative_to(src / "figures") for p in (src / "figures").glob("*.csv"))
        assert expected and sorted(p.relative_to(out / "figures") for p in (out / "figures").glob("*.csv")) == expected
        for rel in expected:
            assert (out / "figures" / rel).read_bytes() == (src / "figures" / rel).read_bytes(), rel
        assert (out / "metrics_table.md").read_bytes() == (src / "metrics_table.md").read_bytes()


def test_config_round_trip_and_overrides(tmp_path):
    cfg = desk_preset(seed=9)
    path = cfg.save(tmp_path / "c.json")
    back = RunConfig.load(path)
    assert back.to_dict() == cfg.to_dict()
    assert back.train.seed == 9
    changed = apply_overrides(back, ["allocation.epsilon=0.1", "sim.detection.p_max=0.8", "seed=5"])
    assert changed.allocation.epsilon == 0.1 and changed.sim.detection.p_max == 0.8
    assert changed.seed == 5 and changed.train.seed == 5


def test_default_config_carries_reference_hyperparameters():
    d = RunConfig().to_dict()
    assert d["stgnn"]["hidden"] == 64 and d["stgnn"]["embed"] == 32
    assert d["stgnn"]["dilations"] == [1, 2, 4, 8] and d["stgnn"]["dropout"] == 0.2
    assert d["train"]["epochs"] == 100 and d["train"]["lr"] == 1e-3 and d["train"]["batch"] == 32
    assert d["allocation"]["budget"] == 60.0 and d["allocation"]["epsilon"] == 0.05
    assert d["sim"]["cycles"] == 6 and d["sim"]["retrain_epochs"] == 50
    assert d["graph"] == {"alpha_geo": 0.6, "alpha_feat": 0.4, "theta_sim": 0.5}
    json.dumps(d)


def test_infinite_epsilon_serialises(tmp_path):
    cfg = apply_overrides(RunConfig(), ['allocation.epsilon="inf"'])
    back = RunConfig.load(cfg.save(tmp_path / "c.json"))
    assert back.allocation.epsilon == float("inf")
