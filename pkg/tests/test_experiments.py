"""Experiment drivers and the command-line interface.

These run miniature configurations end to end, so they certify the
orchestration (seeding, report layout, byte determinism, flag plumbing)
rather than model quality. Quality bars live in the acceptance suite.
"""

import json
import os

import numpy as np
import pytest

from dualpath.cli import OUT_ENV_VAR, main
from dualpath.experiments import (ABLATION_FLAGS, ExperimentConfig,
                                  load_experiment_config, render_csv,
                                  run_ablation, run_main, run_robustness,
                                  train_single, write_json)
from dualpath.losses import LossConfig
from dualpath.metrics import Metrics
from dualpath.synthdata import DatasetConfig, dataset_digest, generate
from dualpath.trainer import TrainConfig, TrainHistory

TINY = ExperimentConfig(
    dataset=DatasetConfig(num_classes=3, feature_dim=8, n_train=96, n_val=32,
                          n_test=32, conflict_rate=0.3, seed=13),
    train=TrainConfig(max_epochs=2, batch_size=16, dropout=0.1, seed=0),
    hidden_dim=6,
    seeds=(0,),
    sigmas=(0.0, 0.5),
)


def tiny_config_json(tmp_path, **extra):
    raw = {
        "dataset": {"num_classes": 3, "feature_dim": 8, "n_train": 96,
                    "n_val": 32, "n_test": 32, "seed": 13},
        "train": {"max_epochs": 2, "batch_size": 16, "dropout": 0.1},
        "model": {"hidden_dim": 6},
        "seeds": [0],
        "sigmas": [0.0, 0.5],
    }
    raw.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


class TestConfig:
    def test_defaults_validate(self):
        ExperimentConfig().validate()

    def test_model_config_inherits_dataset_dims(self):
        mc = TINY.model_config(seed=3)
        assert mc.feature_dim == 8
        assert mc.hidden_dim == 6
        assert mc.num_classes == 3
        assert mc.init_seed == 3
        assert mc.dropout == TINY.train.dropout

    def test_hidden_dim_defaults_to_feature_dim(self):
        cfg = ExperimentConfig()
        assert cfg.model_config(0).hidden_dim == cfg.dataset.feature_dim

    def test_effective_loss_zeroes_ablated_terms(self):
        base = ExperimentConfig()
        assert base.effective_loss() == LossConfig()
        from dataclasses import replace
        assert replace(base, no_rea_loss=True).effective_loss().reasoning_weight == 0.0
        assert replace(base, no_rea=True).effective_loss().reasoning_weight == 0.0
        assert replace(base, no_uni=True).effective_loss().unimodal_weight == 0.0
        assert replace(base, no_diff=True).effective_loss().orthogonality_weight == 0.0
        assert replace(base, no_sim=True).effective_loss().alignment_weight == 0.0

    def test_ablation_only_for_pathway_flags(self):
        from dataclasses import replace
        assert ExperimentConfig().ablation() is None
        assert replace(ExperimentConfig(), no_sim=True).ablation() is None
        assert replace(ExperimentConfig(), no_rea=True).ablation().no_rea
        assert replace(ExperimentConfig(), no_int=True).ablation().no_int

    def test_conflicting_pathway_flags_rejected(self):
        from dataclasses import replace
        with pytest.raises(ValueError):
            replace(ExperimentConfig(), no_int=True, no_rea=True).validate()


class TestLoadConfig:
    def test_round_trip_from_file(self, tmp_path):
        path = tiny_config_json(tmp_path)
        cfg = load_experiment_config(path)
        assert cfg.dataset.num_classes == 3
        assert cfg.train.max_epochs == 2
        assert cfg.hidden_dim == 6
        assert cfg.seeds == (0,)
        assert cfg.sigmas == (0.0, 0.5)

    def test_accepts_dict_source(self):
        cfg = load_experiment_config({"seeds": [1, 2], "out_dir": "elsewhere"})
        assert cfg.seeds == (1, 2)
        assert cfg.out_dir == "elsewhere"

    def test_defaults_fill_missing_sections(self):
        cfg = load_experiment_config({})
        assert cfg.dataset == DatasetConfig()
        assert cfg.train == TrainConfig()
        assert cfg.loss == LossConfig()

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            load_experiment_config({"learning_rate": 0.1})

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ValueError, match="unknown dataset config keys"):
            load_experiment_config({"dataset": {"classes": 3}})
        with pytest.raises(ValueError, match="unknown train config keys"):
            load_experiment_config({"train": {"lr": 0.1}})
        with pytest.raises(ValueError, match="unknown model config keys"):
            load_experiment_config({"model": {"depth": 3}})

    def test_flag_conflict_rejected(self):
        with pytest.raises(ValueError):
            load_experiment_config({"no_int": True, "no_rea": True})


class TestReportWriting:
    def test_json_is_sorted_with_trailing_newline(self, tmp_path):
        path = tmp_path / "r.json"
        write_json(path, {"b": 1, "a": [1.5, None]})
        text = path.read_text()
        assert text == '{\n  "a": [\n    1.5,\n    null\n  ],\n  "b": 1\n}\n'

    def test_csv_floats_use_repr(self):
        text = render_csv(["x", "y"], [[1, 0.1], ["s", 1.0 / 3.0]])
        lines = text.split("\n")
        assert lines[0] == "x,y"
        assert lines[1] == "1,0.1"
        assert lines[2] == "s,0.3333333333333333"


class TestTrainSingle:
    def test_returns_all_products(self):
        model, history, metrics, gating = train_single(TINY, 0)
        assert isinstance(history, TrainHistory)
        assert isinstance(metrics, Metrics)
        assert len(history.epoch_losses) <= TINY.train.max_epochs
        assert 0.0 <= metrics.acc <= 1.0
        assert set(gating) >= {"gate_mean", "gate_mean_conflicted",
                               "gate_mean_consistent"}
        assert model.config.init_seed == 0

    def test_reuses_provided_splits(self):
        splits = generate(TINY.dataset)
        _, _, a, _ = train_single(TINY, 0, splits)
        _, _, b, _ = train_single(TINY, 0, splits)
        assert a == b


@pytest.fixture(scope="module")
def main_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("main")
    report = run_main(TINY, str(out))
    return report, out


@pytest.fixture(scope="module")
def ablation_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    report = run_ablation(TINY, str(out))
    return report, out


@pytest.fixture(scope="module")
def robustness_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("robust")
    report = run_robustness(TINY, str(out))
    return report, out


class TestRunMain:
    def test_report_structure(self, main_result):
        report, _ = main_result
        assert report["experiment"] == "main"
        assert report["n_seeds"] == 1
        assert len(report["per_seed"]) == 1
        assert 0 <= report["gate_higher_on_conflict_seeds"] <= 1
        assert report["config"]["seeds"] == [0]

    def test_aggregate_matches_recomputation(self, main_result):
        report, _ = main_result
        accs = [r["acc"] for r in report["per_seed"]]
        assert report["aggregate"]["acc"]["mean"] == pytest.approx(
            float(np.mean(accs)), abs=1e-15)
        assert report["aggregate"]["acc"]["std"] == pytest.approx(
            float(np.std(accs)), abs=1e-15)

    def test_digests_match_regeneration(self, main_result):
        report, _ = main_result
        splits = generate(TINY.dataset)
        assert report["dataset_digest"]["test"] == dataset_digest(
            splits[2], TINY.dataset)

    def test_files_written(self, main_result):
        _, out = main_result
        assert (out / "main_report.json").exists()
        assert (out / "main_metrics.csv").exists()
        assert (out / "gating.csv").exists()

    def test_gating_csv_has_one_row_per_test_sample(self, main_result):
        _, out = main_result
        lines = (out / "gating.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + len(TINY.seeds) * TINY.dataset.n_test
        header = lines[0].split(",")
        assert header[:3] == ["seed", "sample", "conflicted"]
        assert "gate" in header

    def test_written_report_matches_returned(self, main_result):
        report, out = main_result
        on_disk = json.loads((out / "main_report.json").read_text())
        assert on_disk == json.loads(json.dumps(report))


def test_run_main_is_byte_deterministic(tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run_main(TINY, str(out_a))
    run_main(TINY, str(out_b))
    for name in ("main_report.json", "main_metrics.csv", "gating.csv"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


class TestRunAblation:
    def test_variant_roster(self, ablation_result):
        report, _ = ablation_result
        names = [v["variant"] for v in report["variants"]]
        assert names == ["full"] + list(ABLATION_FLAGS)

    def test_pathway_clamps_reflected_in_gate_mean(self, ablation_result):
        report, _ = ablation_result
        by_name = {v["variant"]: v for v in report["variants"]}
        assert by_name["no_rea"]["aggregate"]["gate_mean"]["mean"] == 0.0
        assert by_name["no_int"]["aggregate"]["gate_mean"]["mean"] == 1.0
        full_gate = by_name["full"]["aggregate"]["gate_mean"]["mean"]
        assert 0.0 < full_gate < 1.0

    def test_all_variants_share_the_dataset(self, ablation_result):
        report, _ = ablation_result
        digests = {v["dataset_digest"] for v in report["variants"]}
        assert len(digests) == 1

    def test_files_written(self, ablation_result):
        _, out = ablation_result
        assert (out / "ablation_report.json").exists()
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 7 * len(TINY.seeds)


class TestRunRobustness:
    def test_zero_sigma_equals_clean_metrics(self, robustness_result):
        report, _ = robustness_result
        for ps in report["per_seed"]:
            zero_row = ps["by_sigma"][0]
            assert zero_row["sigma"] == 0.0
            assert zero_row["acc"] == ps["clean"]["acc"]
            assert zero_row["macro_f1"] == ps["clean"]["macro_f1"]

    def test_by_sigma_mean_matches_recomputation(self, robustness_result):
        report, _ = robustness_result
        row = report["by_sigma_mean"][1]
        accs = [ps["by_sigma"][1]["acc"] for ps in report["per_seed"]]
        assert row["acc"]["mean"] == pytest.approx(float(np.mean(accs)), abs=1e-15)

    def test_notes_the_noisy_modality(self, robustness_result):
        report, _ = robustness_result
        assert report["noise_modality"] == "text"

    def test_files_written(self, robustness_result):
        _, out = robustness_result
        assert (out / "robustness_report.json").exists()
        lines = (out / "robustness.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + len(TINY.seeds) * len(TINY.sigmas)


class TestCli:
    @pytest.fixture(autouse=True)
    def clean_env(self, monkeypatch):
        monkeypatch.delenv(OUT_ENV_VAR, raising=False)

    def test_gen_train_eval_flow(self, tmp_path, capsys):
        cfg = tiny_config_json(tmp_path)
        out = tmp_path / "run"
        assert main(["gen", "--config", str(cfg), "--out", str(out)]) == 0
        for name in ("train.bin", "val.bin", "test.bin", "digests.json"):
            assert (out / name).exists(), name

        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        ckpt = out / "model_seed0.ckpt"
        assert ckpt.exists()
        assert (out / "history_seed0.csv").exists()
        assert (out / "train_seed0.json").exists()
        capsys.readouterr()

        assert main(["eval", "--config", str(cfg), "--out", str(out),
                     "--checkpoint", str(ckpt)]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert "metrics" in printed

        assert main(["eval", "--config", str(cfg), "--out", str(out),
                     "--checkpoint", str(ckpt),
                     "--data", str(out / "test.bin")]) == 0

    def test_eval_rejects_mismatched_data(self, tmp_path, capsys):
        cfg = tiny_config_json(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        other_dir = tmp_path / "other"
        other_dir.mkdir()
        other_cfg = tiny_config_json(
            other_dir,
            dataset={"num_classes": 3, "feature_dim": 12, "n_train": 30,
                     "n_val": 10, "n_test": 10, "seed": 1})
        other_out = tmp_path / "other_run"
        assert main(["gen", "--config", str(other_cfg), "--out", str(other_out)]) == 0
        capsys.readouterr()
        code = main(["eval", "--config", str(cfg), "--out", str(out),
                     "--checkpoint", str(out / "model_seed0.ckpt"),
                     "--data", str(other_out / "test.bin")])
        assert code == 1
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "ValueError"

    def test_errors_are_json_records(self, tmp_path, capsys):
        cfg = tiny_config_json(tmp_path)
        code = main(["eval", "--config", str(cfg), "--out", str(tmp_path),
                     "--checkpoint", str(tmp_path / "missing.ckpt")])
        assert code == 1
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "FileNotFoundError"
        assert "message" in record

    def test_gradcheck_passes_on_tiny_config(self, tmp_path, capsys):
        cfg = tiny_config_json(tmp_path)
        assert main(["gradcheck", "--config", str(cfg)]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["passed"] is True
        assert printed["max_rel_error"] < 1e-4

    def test_env_var_overrides_out_flag(self, tmp_path, monkeypatch):
        cfg = tiny_config_json(tmp_path)
        env_dir = tmp_path / "from_env"
        flag_dir = tmp_path / "from_flag"
        monkeypatch.setenv(OUT_ENV_VAR, str(env_dir))
        assert main(["gen", "--config", str(cfg), "--out", str(flag_dir)]) == 0
        assert (env_dir / "train.bin").exists()
        assert not flag_dir.exists()

    def test_seeds_flag_is_parsed(self, tmp_path, capsys):
        cfg = tiny_config_json(tmp_path)
        out = tmp_path / "multi"
        assert main(["main", "--config", str(cfg), "--out", str(out),
                     "--seeds", "0,1"]) == 0
        report = json.loads((out / "main_report.json").read_text())
        assert report["n_seeds"] == 2
        assert [r["seed"] for r in report["per_seed"]] == [0, 1]

    def test_ablation_flag_is_plumbed(self, tmp_path, capsys):
        cfg = tiny_config_json(tmp_path)
        out = tmp_path / "norea"
        assert main(["train", "--config", str(cfg), "--out", str(out),
                     "--no-rea"]) == 0
        result = json.loads((out / "train_seed0.json").read_text())
        assert result["gating"]["gate_mean"] == 0.0

    def test_report_command_summarizes(self, tmp_path, capsys):
        out = tmp_path / "rep"
        run_main(TINY, str(out))
        capsys.readouterr()
        assert main(["report", "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "main_report.json" in text
        assert "gate higher on conflict" in text

    def test_report_command_fails_on_empty_dir(self, tmp_path, capsys):
        code = main(["report", "--out", str(tmp_path)])
        assert code == 1
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "FileNotFoundError"
