import json

import pytest

from more_offline_rl.cli import main
from more_offline_rl.metrics_io import read_csv

TINY_CONFIG = {
    "env": {"episode_length": 20},
    "dataset": {"num_transitions": 200, "seed": 1},
    "dynamics": {"hidden_dims": [8], "learning_rate": 0.001, "training_epochs": 2, "batch_size": 32},
    "sensitivity": {"num_perturbations": 3},
    "vae": {"encoder_hidden": [8], "decoder_hidden": [8], "learning_rate": 0.001, "training_epochs": 2, "batch_size": 32},
    "filter": {"rollout_length": 2},
    "agent": {"actor_hidden": [8], "critic_hidden": [8], "batch_size": 8},
    "pretrain": {"bc_steps": 5, "td_steps": 5, "batch_size": 8},
    "training": {"steps": 100, "eval_interval": 50, "eval_episodes": 1},
    "seed": 0,
}


def _write_config(path, **overrides):
    data = json.loads(json.dumps(TINY_CONFIG))
    for section, values in overrides.items():
        data[section].update(values)
    path.write_text(json.dumps(data))
    return str(path)


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture
def workspace(tmp_path, capsys):
    """Dataset, models and thresholds produced through the command line."""
    config = _write_config(tmp_path / "config.json")
    data = str(tmp_path / "data.jsonl")
    models = tmp_path / "models"
    assert main(["gen-data", "--config", config, "--out", data]) == 0
    assert main(["train-dynamics", "--config", config, "--data", data, "--out", str(models)]) == 0
    assert main(["train-vae", "--config", config, "--data", data, "--out", str(models)]) == 0
    assert (
        main(
            [
                "pretrain-thresholds",
                "--config", config,
                "--data", data,
                "--dynamics", str(models / "dynamics.json"),
                "--vae", str(models / "vae.json"),
                "--beta-u", "70",
                "--beta-p", "40",
                "--out", str(tmp_path / "thresholds"),
            ]
        )
        == 0
    )
    capsys.readouterr()
    return {
        "root": tmp_path,
        "config": config,
        "data": data,
        "dynamics": str(models / "dynamics.json"),
        "vae": str(models / "vae.json"),
        "thresholds": str(tmp_path / "thresholds" / "thresholds.json"),
    }


def test_gen_data_summary(tmp_path, capsys):
    config = _write_config(tmp_path / "config.json")
    out = tmp_path / "data.jsonl"
    assert main(["gen-data", "--config", config, "--kind", "mixed", "--n", "60", "--out", str(out)]) == 0
    summary = _last_json(capsys)
    assert summary["count"] == 60
    assert summary["noise_tiers"] == [1.0, 0.6, 0.3, 0.1]
    assert len(out.read_text().strip().splitlines()) == 61


def test_gen_data_explicit_stds(tmp_path, capsys):
    out = tmp_path / "data.jsonl"
    config = _write_config(tmp_path / "config.json")
    args = ["gen-data", "--config", config, "--kind", "mixed", "--n", "40", "--exploration-std", "0.5,0.2", "--out", str(out)]
    assert main(args) == 0
    assert _last_json(capsys)["noise_tiers"] == [0.5, 0.2]


def test_model_training_writes_reports(workspace):
    models = workspace["root"] / "models"
    assert len(read_csv(models / "dynamics_report.csv")) == 2
    assert [row["epoch"] for row in read_csv(models / "vae_report.csv")] == ["1", "2"]
    assert (models / "config.json").exists()
    thresholds = json.loads((workspace["root"] / "thresholds" / "thresholds.json").read_text())
    assert thresholds["beta_u"] == 70.0 and thresholds["count"] == 200


def test_train_more_and_evaluate(workspace, capsys):
    out = workspace["root"] / "run"
    args = [
        "train-more",
        "--config", workspace["config"],
        "--data", workspace["data"],
        "--dynamics", workspace["dynamics"],
        "--vae", workspace["vae"],
        "--thresholds", workspace["thresholds"],
        "--out", str(out),
    ]
    assert main(args) == 0
    rows = read_csv(out / "metrics.csv")
    assert len(rows) == 100
    assert [row["step"] for row in rows if row["eval_return"]] == ["50", "100"]

    assert (
        main(
            [
                "evaluate",
                "--config", workspace["config"],
                "--agent", str(out / "agent.json"),
                "--episodes", "2",
                "--data", workspace["data"],
                "--cost-limit-sweep", "1,100",
                "--out", str(out),
            ]
        )
        == 0
    )
    summary = _last_json(capsys)
    assert summary["cost_limit"] == 5.0
    assert "relative_improvement" in summary
    assert [row["cost_limit"] for row in summary["sweep"]] == [1.0, 100.0]
    assert len(read_csv(out / "sweep.csv")) == 2


def test_ablation_grid(workspace, tmp_path):
    config = _write_config(tmp_path / "ablate.json", training={"steps": 2, "eval_interval": 0})
    out = tmp_path / "ablation"
    args = [
        "ablate",
        "--config", config,
        "--data", workspace["data"],
        "--dynamics", workspace["dynamics"],
        "--vae", workspace["vae"],
        "--variants", "full",
        "--out", str(out),
    ]
    assert main(args) == 0
    rows = read_csv(out / "ablation.csv")
    assert len(rows) == 6
    assert {(row["beta_u"], row["beta_p"]) for row in rows} == {
        (u, p) for u in ("40.0", "70.0") for p in ("10.0", "40.0", "70.0")
    }
    assert len({row["dataset_hash"] for row in rows}) == 1


def test_tampered_thresholds_are_a_usage_error(workspace):
    path = workspace["root"] / "thresholds" / "thresholds.json"
    data = json.loads(path.read_text())
    data["sensitivity_threshold"] *= 2.0
    path.write_text(json.dumps(data))
    args = [
        "train-more",
        "--config", workspace["config"],
        "--data", workspace["data"],
        "--dynamics", workspace["dynamics"],
        "--vae", workspace["vae"],
        "--thresholds", str(path),
        "--out", str(workspace["root"] / "run"),
    ]
    assert main(args) == 2


def test_checkpoint_from_another_config_is_a_data_error(workspace, tmp_path):
    other = _write_config(tmp_path / "other.json", dynamics={"hidden_dims": [4]})
    args = [
        "pretrain-thresholds",
        "--config", other,
        "--data", workspace["data"],
        "--dynamics", workspace["dynamics"],
        "--vae", workspace["vae"],
        "--out", str(tmp_path / "t2"),
    ]
    assert main(args) == 3


def test_wrong_checkpoint_kind_is_a_data_error(workspace, tmp_path):
    args = [
        "pretrain-thresholds",
        "--data", workspace["data"],
        "--dynamics", workspace["vae"],
        "--vae", workspace["vae"],
        "--out", str(tmp_path / "t3"),
    ]
    assert main(args) == 3


def test_unknown_config_key_is_a_usage_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"agent": {"gama": 0.9}}))
    assert main(["gen-data", "--config", str(path), "--out", str(tmp_path / "d.jsonl")]) == 2


def test_missing_dataset_is_a_data_error(tmp_path):
    assert main(["train-dynamics", "--data", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "m")]) == 3


def test_bad_magic_is_a_data_error(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(json.dumps({"magic": "NOPE"}) + "\n")
    assert main(["train-vae", "--data", str(path), "--out", str(tmp_path / "m")]) == 3


def test_telemetry_without_license_key_is_a_usage_error(tmp_path, monkeypatch):
    monkeypatch.delenv("NEW_RELIC_LICENSE_KEY", raising=False)
    monkeypatch.delenv("NEW_RELIC_INSERT_KEY", raising=False)
    assert main(["--telemetry", "gen-data", "--out", str(tmp_path / "d.jsonl")]) == 2


def test_missing_subcommand_exits_with_usage():
    with pytest.raises(SystemExit) as err:
        main([])
    assert err.value.code == 2


def test_command_line_overrides_are_recorded(workspace, tmp_path):
    out = tmp_path / "seeded"
    args = ["train-dynamics", "--config", workspace["config"], "--data", workspace["data"], "--seed", "7"]
    assert main(args + ["--out", str(out)]) == 0
    assert json.loads((out / "config.json").read_text())["seed"] == 7

    thresholds = tmp_path / "betas"
    args = [
        "pretrain-thresholds",
        "--config", workspace["config"],
        "--data", workspace["data"],
        "--dynamics", workspace["dynamics"],
        "--vae", workspace["vae"],
        "--beta-u", "55",
        "--beta-p", "25",
        "--out", str(thresholds),
    ]
    assert main(args) == 0
    recorded = json.loads((thresholds / "config.json").read_text())["filter"]
    assert (recorded["beta_u"], recorded["beta_p"]) == (55.0, 25.0)

    rerun = tmp_path / "betas-rerun"
    args = args[:2] + [str(thresholds / "config.json")] + args[3:9] + ["--out", str(rerun)]
    assert main(args) == 0
    assert (rerun / "thresholds.json").read_bytes() == (thresholds / "thresholds.json").read_bytes()


def test_rerun_from_recorded_config_reproduces_artifacts(tmp_path, monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    config = _write_config(tmp_path / "input.json")
    first = tmp_path / "first"
    first.mkdir()
    data = first / "data.jsonl"
    assert main(["gen-data", "--config", config, "--kind", "mixed", "--n", "60", "--seed", "4", "--out", str(data)]) == 0
    recorded = first / "data.config.json"
    assert main(["gen-data", "--config", str(recorded), "--out", str(tmp_path / "again.jsonl")]) == 0
    assert (tmp_path / "again.jsonl").read_bytes() == data.read_bytes()

    models = first / "models"
    assert main(["train-dynamics", "--config", config, "--data", str(data), "--seed", "7", "--out", str(models)]) == 0
    rerun = tmp_path / "rerun"
    assert main(["train-dynamics", "--config", str(models / "config.json"), "--data", str(data), "--out", str(rerun)]) == 0
    for name in ("config.json", "dynamics.json", "dynamics_report.csv"):
        assert (rerun / name).read_bytes() == (models / name).read_bytes(), name


def test_non_numeric_dataset_field_is_a_data_error(workspace, tmp_path):
    lines = open(workspace["data"], encoding="utf-8").read().split("\n")
    record = json.loads(lines[3])
    record["s"][0] = "oops"
    lines[3] = json.dumps(record)
    broken = tmp_path / "broken.jsonl"
    broken.write_text("\n".join(lines))
    args = ["train-dynamics", "--config", workspace["config"], "--data", str(broken), "--out", str(tmp_path / "m")]
    assert main(args) == 3
