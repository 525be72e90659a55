"""Experiment config validation, CLI commands, exit codes, and reports."""

import csv
import json
from pathlib import Path

import pytest
import yaml

from powerpm.cli import main
from powerpm.errors import ConfigError
from powerpm.experiment import (
    apply_overrides,
    default_config,
    derive_seed,
    dump_config,
    load_experiment,
    validate_config,
)

TINY_CONFIG = {
    "seed": 11,
    "dataset": {
        "synth": {
            "n_cities": 1,
            "districts_per_city": 2,
            "users_per_district": 2,
            "num_points": 96 * 8,
            "frequency_seconds": 900,
        }
    },
    "windows": {"window_len": 48, "stride": 48},
    "clustering": {"num_clusters": 2, "restarts": 2},
    "model": {"scale": "custom", "rgcn_layers": 1,
              "custom": {"model_dim": 16, "num_layers": 1, "ffn_dim": 32, "num_heads": 2}},
    "patch": {"patch_len": 16, "stride": 8},
    "pretrain": {"steps": 4, "accumulation": 2, "learning_rate": 1e-3,
                 "groups_per_batch": 2, "contrastive_groups": 1},
    "contrastive": {"shift_points": 48, "batch_size": 4},
    "finetune": {"epochs": 1, "target_level": "district"},
    "tasks": [{"family": "forecast", "horizon": 4, "regime": "frozen", "data_fraction": 1.0}],
}


def write_config(tmp_path, tree=None) -> Path:
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(tree if tree is not None else TINY_CONFIG))
    return path


class TestExperimentConfig:
    def test_defaults_follow_published_table(self):
        cfg = default_config()
        assert cfg["pretrain"]["mask_ratio"] == 0.4
        assert cfg["contrastive"]["shift_points"] == 96
        assert cfg["clustering"]["num_clusters"] == 12
        assert cfg["patch"] == {"patch_len": 48, "stride": 24}
        assert cfg["windows"]["ratios"] == [0.6, 0.2, 0.2]

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"pretrain": {"stesp": 10}})
        assert err.value.key_path == "pretrain.stesp"

    def test_type_errors_name_key(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"pretrain": {"steps": "ten"}})
        assert err.value.key_path == "pretrain.steps"

    def test_round_trip(self):
        config = validate_config(TINY_CONFIG)
        again = validate_config(yaml.safe_load(dump_config(config)))
        assert config == again

    def test_override_wins(self):
        config = validate_config(TINY_CONFIG)
        out = apply_overrides(config, ["pretrain.steps=9", "model.scale=tiny"])
        assert out["pretrain"]["steps"] == 9
        assert out["model"]["scale"] == "tiny"

    def test_override_unknown_key(self):
        config = validate_config({})
        with pytest.raises(ConfigError):
            apply_overrides(config, ["pretrain.nope=def"])

    def test_bad_task_rejected(self):
        with pytest.raises(ConfigError) as err:
            validate_config({"tasks": [{"family": "forecast", "horizon": 5}]})
        assert "tasks[0]" in err.value.key_path

    def test_derive_seed_stable_and_distinct(self):
        assert derive_seed(3, "synth") == derive_seed(3, "synth")
        assert derive_seed(3, "synth") != derive_seed(3, "pretrain")
        assert derive_seed(3, "synth") != derive_seed(4, "synth")

    def test_load_experiment_missing_iso_path(self, tmp_path):
        path = write_config(tmp_path, {"dataset": {"kind": "iso"}})
        with pytest.raises(ConfigError) as err:
            load_experiment(path)
        assert err.value.key_path == "dataset.iso_schema"


class TestCliExitCodes:
    def test_bad_config_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path, {"bogus_key": 1})
        code = main(["pretrain", "--config", str(path)])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["type"] == "ConfigError"
        assert err["key_path"] == "bogus_key"

    def test_missing_checkpoint_exits_3(self, tmp_path, capsys):
        path = write_config(tmp_path)
        code = main([
            "finetune", "--config", str(path),
            "--checkpoint", str(tmp_path / "missing.ckpt"),
            "--out", str(tmp_path / "out"),
        ])
        assert code == 3
        err = json.loads(capsys.readouterr().err.strip())
        assert err["type"] == "CheckpointError"

    def test_override_flag_wins(self, tmp_path, capsys):
        path = write_config(tmp_path, {"bogus_key": 1})
        # the override is applied after file validation, so file errors win
        code = main(["pretrain", "--config", str(path), "--set", "seed=2"])
        assert code == 2


class TestCliSynth:
    def test_byte_identical_runs(self, tmp_path):
        path = write_config(tmp_path)
        out1, out2 = tmp_path / "d1", tmp_path / "d2"
        assert main(["synth", "--config", str(path), "--out", str(out1)]) == 0
        assert main(["synth", "--config", str(path), "--out", str(out2)]) == 0
        files1 = sorted(p.name for p in out1.iterdir())
        files2 = sorted(p.name for p in out2.iterdir())
        assert files1 == files2
        for name in files1:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_cache_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("POWERPM_CACHE", str(tmp_path / "cache"))
        path = write_config(tmp_path)
        assert main(["synth", "--config", str(path)]) == 0
        assert (tmp_path / "cache" / "synth" / "manifest.csv").exists()


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    """One tiny synth->pretrain->finetune chain shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli_run")
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(TINY_CONFIG))
    assert main(["pretrain", "--config", str(config_path), "--out", str(root / "pre")]) == 0
    ckpt = root / "pre" / "checkpoint.ckpt"
    assert ckpt.exists()
    assert main([
        "finetune", "--config", str(config_path),
        "--checkpoint", str(ckpt), "--out", str(root / "ft"),
    ]) == 0
    return root


class TestCliPipeline:
    def test_pretrain_outputs(self, pipeline_run):
        trace = pipeline_run / "pre" / "trace.csv"
        assert trace.exists()
        with open(trace) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == TINY_CONFIG["pretrain"]["steps"]
        assert (pipeline_run / "pre" / "graph.tsv").exists()
        assert (pipeline_run / "pre" / "assignment.csv").exists()

    def test_finetune_metrics_json(self, pipeline_run):
        files = list((pipeline_run / "ft").glob("metrics_*.json"))
        assert len(files) == 1
        payload = json.loads(files[0].read_text())
        assert payload["task"]["family"] == "forecast"
        assert payload["encoder_unchanged"] is True
        assert "MSE" in payload["metrics"]
        assert "persistence" in payload["baselines"]

    def test_frozen_log_line(self, pipeline_run, capsys, tmp_path):
        config_path = pipeline_run / "config.yaml"
        ckpt = pipeline_run / "pre" / "checkpoint.ckpt"
        main([
            "finetune", "--config", str(config_path),
            "--checkpoint", str(ckpt), "--out", str(tmp_path / "ft2"),
        ])
        out = capsys.readouterr().out
        assert "encoder frozen: checksum unchanged" in out

    def test_ingest_outputs(self, pipeline_run, tmp_path):
        config_path = pipeline_run / "config.yaml"
        assert main(["ingest", "--config", str(config_path), "--out", str(tmp_path / "ing")]) == 0
        plan = json.loads((tmp_path / "ing" / "split_plan.json").read_text())
        assert plan["ratios"] == [0.6, 0.2, 0.2]
        assert (tmp_path / "ing" / "train.npz").exists()

    def test_report_single_file_single_row(self, pipeline_run, tmp_path):
        metrics_file = next((pipeline_run / "ft").glob("metrics_*.json"))
        out = tmp_path / "report"
        assert main(["report", str(metrics_file), "--out", str(out)]) == 0
        with open(out / "aggregate.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["family"] == "forecast"

    def test_report_with_trace_plots(self, pipeline_run, tmp_path):
        metrics_file = next((pipeline_run / "ft").glob("metrics_*.json"))
        trace = pipeline_run / "pre" / "trace.csv"
        out = tmp_path / "report2"
        assert main(["report", str(metrics_file), str(trace), "--out", str(out)]) == 0
        assert (out / "loss_curves.png").exists()
