import json

import pytest
from typer.testing import CliRunner

from minehaul.errors import InvalidInputError
from minehaul.main import cli
from minehaul.schemas.driving import DatasetManifest
from minehaul.services.dataset_service import write_dataset
from tests.test_training import _samples

runner = CliRunner()

SMALL_CONFIG = """
seed = 3

[sensors]
beams = 8

[data]
k_lookahead = 3

[model]
scan_hidden = [10]
meas_hidden = [6]
fusion_hidden = [12]
speed_hidden = 5
branch_hidden = 7

[training]
epochs = 1
batch_size = 4
checkpoint_every = 1
"""


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    # The CLI loads .env from the working directory.
    monkeypatch.chdir(tmp_path)


def test_map_gen(tmp_path):
    result = runner.invoke(cli, ["map-gen", "--out", str(tmp_path / "maps")])
    assert result.exit_code == 0, result.output
    for name in ("loop_map.json", "network_map.json", "run_config.json"):
        assert (tmp_path / "maps" / name).exists()


def test_bad_config_exits_2(tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("[training]\nepochz = 3\n")
    result = runner.invoke(cli, ["map-gen", "--config", str(config), "--out", str(tmp_path / "maps")])
    assert result.exit_code == 2
    assert not (tmp_path / "maps").exists()


def test_missing_config_exits_3(tmp_path):
    result = runner.invoke(cli, ["map-gen", "--config", str(tmp_path / "absent.toml")])
    assert result.exit_code == 3


def test_gradcheck_writes_report(tmp_path):
    out = tmp_path / "gradcheck.json"
    result = runner.invoke(cli, ["gradcheck", "--probes", "8", "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads(out.read_text())
    assert all(r["passed"] for r in payload["results"])


def test_gradcheck_failure_exits_4():
    result = runner.invoke(cli, ["gradcheck", "--probes", "4", "--tolerance", "1e-300"])
    assert result.exit_code == 4


def test_filter_without_demos_exits_3(tmp_path):
    result = runner.invoke(cli, ["filter", str(tmp_path / "demos.jsonl"), "--out", str(tmp_path / "ds")])
    assert result.exit_code == 3


def test_eval_needs_a_checkpoint(tmp_path):
    result = runner.invoke(cli, ["eval", "--out", str(tmp_path / "eval")])
    assert result.exit_code == 3


def test_unknown_policy(tmp_path):
    result = runner.invoke(cli, ["eval", "--policy", "autopilot", "--out", str(tmp_path / "eval")])
    assert result.exit_code == InvalidInputError.exit_code


def test_train_from_dataset(tmp_path):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_CONFIG)
    samples = _samples()
    dataset = tmp_path / "train.jsonl"
    manifest = DatasetManifest(kind="training", seed=3, config_hash="x", count=len(samples), k_lookahead=3)
    write_dataset(dataset, samples, manifest)
    result = runner.invoke(cli, ["train", str(dataset), "--config", str(config), "--out", str(tmp_path / "run")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "run" / "checkpoint_final.npz").exists()
    assert (tmp_path / "run" / "loss_trace.csv").exists()
    assert json.loads((tmp_path / "run" / "run_config.json").read_text())["seed"] == 3


def test_train_rejects_other_lookahead(tmp_path):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_CONFIG.replace("k_lookahead = 3", "k_lookahead = 5"))
    dataset = tmp_path / "train.jsonl"
    samples = _samples()
    write_dataset(dataset, samples, DatasetManifest(kind="training", seed=0, config_hash="x", count=12, k_lookahead=3))
    result = runner.invoke(cli, ["train", str(dataset), "--config", str(config), "--out", str(tmp_path / "run")])
    assert result.exit_code == 2


@pytest.mark.parametrize("epochs", ["0", "-3"])
def test_train_rejects_invalid_epochs(tmp_path, epochs):
    config = tmp_path / "small.toml"
    config.write_text(SMALL_CONFIG)
    dataset = tmp_path / "train.jsonl"
    samples = _samples()
    write_dataset(dataset, samples, DatasetManifest(kind="training", seed=0, config_hash="x", count=12, k_lookahead=3))
    out = tmp_path / "run"
    result = runner.invoke(cli, ["train", str(dataset), "--config", str(config), "--epochs", epochs, "--out", str(out)])
    assert result.exit_code == 2
    assert not (out / "checkpoint_final.npz").exists()
