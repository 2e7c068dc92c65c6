"""Run-config parsing and the command-line pipeline end to end."""

import json
import os

import numpy as np
import pytest

from icurisk.cli import main
from icurisk.config import ConfigError, load_run_config

SMALL_RUN = {
    "seed": 4,
    "model": {
        "hidden_size": 8,
        "gcn_dim1": 8,
        "gcn_dim2": 4,
        "kan_hidden": 4,
        "kan_out": 4,
        "kan_grid_size": 4,
    },
    "train": {"max_epochs": 2, "folds": 3, "batch_size": 16},
    "synth": {
        "n_episodes": 60,
        "n_temporal_features": 5,
        "n_informative_temporal": 3,
        "n_constant_continuous": 3,
        "n_informative_constant": 2,
        "categorical_vocab_sizes": [2],
        "code_vocab_size": 8,
        "n_code_groups": 2,
    },
}


@pytest.fixture()
def run_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL_RUN))
    return str(path)


class TestRunConfig:
    def test_defaults_without_file(self):
        rc = load_run_config(None)
        assert rc.train.learning_rate == 1e-3
        assert rc.train.batch_size == 64
        assert rc.model.hidden_size == 64
        assert rc.synth.positive_rate == 0.12

    def test_seed_propagates_to_sections(self, run_config):
        rc = load_run_config(run_config)
        assert rc.train.seed == 4 and rc.synth.seed == 4

    def test_explicit_section_seed_wins(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 4, "train": {"seed": 11}}))
        rc = load_run_config(path)
        assert rc.train.seed == 11 and rc.synth.seed == 4

    def test_overrides_beat_file(self, run_config):
        rc = load_run_config(run_config, {"train.learning_rate": 0.5})
        assert rc.train.learning_rate == 0.5

    def test_unknown_field_named_in_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"learning_rat": 0.1}}))
        with pytest.raises(ConfigError, match="train.learning_rat"):
            load_run_config(path)

    def test_unknown_section_named(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"models": {}}))
        with pytest.raises(ConfigError, match="models"):
            load_run_config(path)

    def test_invalid_value_wrapped(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"train": {"learning_rate": -1}}))
        with pytest.raises(ConfigError, match="learning_rate"):
            load_run_config(path)

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config("/nonexistent/config.json")

    def test_bad_json_is_config_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="valid JSON"):
            load_run_config(path)


class TestPipeline:
    def test_full_pipeline(self, tmp_path, run_config, capsys):
        data_dir = tmp_path / "cohort"
        assert main(["generate", "--config", run_config, "--out", str(data_dir)]) == 0
        for name in ("episodes.jsonl", "groundtruth.json", "mapping.tsv", "manifest.json"):
            assert (data_dir / name).exists()

        bundle_dir = tmp_path / "bundle"
        assert (
            main(["preprocess", "--data", str(data_dir / "episodes.jsonl"), "--out", str(bundle_dir)])
            == 0
        )
        assert (bundle_dir / "tensors.npz").exists()

        train_dir = tmp_path / "run"
        rcode = main(
            [
                "train",
                "--config",
                run_config,
                "--data",
                str(data_dir / "episodes.jsonl"),
                "--out",
                str(train_dir),
            ]
        )
        assert rcode == 0
        report = json.loads((train_dir / "report.json").read_text())
        assert report["variant"] == "full"
        assert len(report["folds"]) == 3
        assert (train_dir / "summary.txt").exists()

        out = capsys.readouterr().out
        assert "Specificity" in out and "Sensitivity" in out

        ckpt = train_dir / "checkpoint_fold0.json"
        assert ckpt.exists()
        code = main(
            ["eval", "--checkpoint", str(ckpt), "--data", str(data_dir / "episodes.jsonl")]
        )
        assert code == 0

    def test_train_variant_labeled(self, tmp_path, run_config):
        data_dir = tmp_path / "cohort"
        main(["generate", "--config", run_config, "--out", str(data_dir)])
        train_dir = tmp_path / "ablate"
        code = main(
            [
                "train", "--config", run_config,
                "--data", str(data_dir / "episodes.jsonl"),
                "--out", str(train_dir), "--variant", "no_grud",
            ]
        )
        assert code == 0
        report = json.loads((train_dir / "report.json").read_text())
        assert report["variant"] == "no_grud"
        assert set(report["aggregate"]) == {
            "auprc", "auroc", "brier", "precision", "sensitivity", "specificity",
        }

    def test_generate_is_idempotent(self, tmp_path, run_config):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["generate", "--config", run_config, "--out", str(a)])
        main(["generate", "--config", run_config, "--out", str(b)])
        assert (a / "episodes.jsonl").read_bytes() == (b / "episodes.jsonl").read_bytes()
        assert (a / "groundtruth.json").read_bytes() == (b / "groundtruth.json").read_bytes()

    def test_train_reports_bit_identical_across_runs(self, tmp_path, run_config):
        data_dir = tmp_path / "cohort"
        main(["generate", "--config", run_config, "--out", str(data_dir)])
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            main(
                [
                    "train", "--config", run_config,
                    "--data", str(data_dir / "episodes.jsonl"), "--out", str(out),
                ]
            )
            outs.append((out / "report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_eval_threshold_policy_changes_confusion_only(self, tmp_path, run_config, capsys):
        data_dir = tmp_path / "cohort"
        main(["generate", "--config", run_config, "--out", str(data_dir)])
        train_dir = tmp_path / "run"
        main(
            [
                "train", "--config", run_config,
                "--data", str(data_dir / "episodes.jsonl"), "--out", str(train_dir),
            ]
        )
        ckpt = str(train_dir / "checkpoint_fold0.json")
        data = str(data_dir / "episodes.jsonl")
        e1 = tmp_path / "eval_fixed"
        e2 = tmp_path / "eval_youden"
        main(["eval", "--checkpoint", ckpt, "--data", data, "--out", str(e1)])
        main(
            [
                "eval", "--checkpoint", ckpt, "--data", data,
                "--out", str(e2), "--threshold-policy", "youden",
            ]
        )
        r1 = json.loads((e1 / "report.json").read_text())["report"]
        r2 = json.loads((e2 / "report.json").read_text())["report"]
        assert r1["auroc"] == r2["auroc"]
        assert r1["auprc"] == r2["auprc"]
        assert r1["brier"] == r2["brier"]
        assert r1["threshold"] != r2["threshold"]

    def test_sweep_single_cell_and_row_count(self, tmp_path, run_config):
        data_dir = tmp_path / "cohort"
        main(["generate", "--config", run_config, "--out", str(data_dir)])
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep", "--config", run_config,
                "--data", str(data_dir / "episodes.jsonl"),
                "--out", str(out), "--lr", "0.001,0.01", "--batch", "16",
            ]
        )
        assert code == 0
        lines = (out / "sweep.tsv").read_text().strip().splitlines()
        assert lines[0].split("\t") == ["learning_rate", "batch_size", "auroc_mean", "auroc_std"]
        assert len(lines) == 3  # header + 2 cells


class TestExitCodes:
    def test_malformed_config_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"learning_rate": "fast"}}))
        code = main(["generate", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_unknown_flag_is_usage_error(self):
        assert main(["train", "--nonsense"]) == 1

    def test_missing_data_is_data_error(self, tmp_path, capsys):
        code = main(
            ["train", "--data", str(tmp_path / "none.jsonl"), "--out", str(tmp_path / "o")]
        )
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_schema_mismatch_is_data_error(self, tmp_path, run_config, capsys):
        data_dir = tmp_path / "cohort"
        main(["generate", "--config", run_config, "--out", str(data_dir)])
        train_dir = tmp_path / "run"
        main(
            [
                "train", "--config", run_config,
                "--data", str(data_dir / "episodes.jsonl"), "--out", str(train_dir),
            ]
        )
        other_cfg = dict(SMALL_RUN)
        other_cfg["synth"] = dict(SMALL_RUN["synth"], n_temporal_features=4)
        other_path = tmp_path / "other.json"
        other_path.write_text(json.dumps(other_cfg))
        other_dir = tmp_path / "other_cohort"
        main(["generate", "--config", str(other_path), "--out", str(other_dir)])

        code = main(
            [
                "eval",
                "--checkpoint", str(train_dir / "checkpoint_fold0.json"),
                "--data", str(other_dir / "episodes.jsonl"),
            ]
        )
        assert code == 2
        assert "schema" in capsys.readouterr().err

    def test_corrupt_episode_file_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("this is not json\n")
        assert main(["preprocess", "--data", str(bad), "--out", str(tmp_path / "o")]) == 2
