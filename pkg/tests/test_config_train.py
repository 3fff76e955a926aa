import importlib
import json
import re

import numpy as np
import pytest

from ratebp.config import ExperimentConfig, format_config, parse_config

# the package re-exports the train() function under the submodule's name, so
# fetch the module object explicitly for monkeypatching
train_mod = importlib.import_module("ratebp.train")
from ratebp.data import gen_synthetic, split_dataset
from ratebp.tensor import RngState
from ratebp.train import TrainingDiverged, evaluate, train


def small_cfg(tmp_path, **kwargs):
    defaults = dict(
        method="bptt", hidden=(16,), T=2, epochs=1, batch_size=16, lr=0.05,
        train_n=64, test_n=32, features=12, classes=3, separation=0.8, noise=0.1,
        seed=3, out_dir=str(tmp_path / "run"),
    )
    defaults.update(kwargs)
    return ExperimentConfig(**defaults)


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig(method="rate_s", hidden=(64, 32), bn="spatial",
                               T=6, lr=0.02, seed=9, out_dir="runs/x")
        assert parse_config(format_config(cfg)) == cfg

    def test_defaults_mirror_training_hyperparameters(self):
        cfg = ExperimentConfig()
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 5e-4
        assert cfg.batch_size == 128
        assert cfg.lr == 0.1

    def test_file_values_override_defaults(self):
        cfg = parse_config("epochs = 3\nhidden = 8,8\nmethod = rate_m\n")
        assert cfg.epochs == 3 and cfg.hidden == (8, 8) and cfg.method == "rate_m"
        assert cfg.batch_size == 128  # untouched default

    def test_comments_and_blank_lines_ignored(self):
        cfg = parse_config("# a comment\n\nepochs = 2\n")
        assert cfg.epochs == 2

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("nonsense = 1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="key = value"):
            parse_config("epochs\n")

    def test_validate_rejects_bad_pairings(self):
        with pytest.raises(ValueError):
            ExperimentConfig(method="rate_m", bn="spatial").validate()
        with pytest.raises(ValueError):
            ExperimentConfig(method="rate_s", bn="tdbn").validate()
        with pytest.raises(ValueError):
            ExperimentConfig(method="sgdfree").validate()


class TestTrain:
    def test_zero_lr_keeps_parameters(self, tmp_path):
        # the driver records zero-rate steps without touching the optimizer
        cfg = small_cfg(tmp_path, lr=0.0, epochs=2)
        result = train(cfg, write_artifacts=False)
        fresh = train(small_cfg(tmp_path, epochs=0), write_artifacts=False)
        for key, arr in result.model.parameters().items():
            assert np.array_equal(arr, fresh.model.parameters()[key]), key

    def test_one_step_bptt_equals_rate_at_t1(self, tmp_path):
        results = {}
        for method in ("bptt", "rate_m"):
            cfg = small_cfg(tmp_path, method=method, T=1, epochs=1, train_n=16,
                            batch_size=16, out_dir=str(tmp_path / method))
            results[method] = train(cfg, write_artifacts=False)
        pb = results["bptt"].model.parameters()
        pr = results["rate_m"].model.parameters()
        for key in pb:
            rel = np.linalg.norm(pb[key] - pr[key]) / max(np.linalg.norm(pb[key]), 1e-300)
            assert rel < 1e-10, key

    def test_determinism_byte_for_byte(self, tmp_path):
        cfg_a = small_cfg(tmp_path, out_dir=str(tmp_path / "a"))
        cfg_b = small_cfg(tmp_path, out_dir=str(tmp_path / "b"))
        train(cfg_a)
        train(cfg_b)
        strip = lambda text: re.sub(r",[^,\n]+$", "", text, flags=re.M)  # drop wall column
        a_csv = (tmp_path / "a" / "metrics.csv").read_text()
        b_csv = (tmp_path / "b" / "metrics.csv").read_text()
        assert strip(a_csv) == strip(b_csv)
        assert (tmp_path / "a" / "checkpoint.rbp").read_bytes() == (
            tmp_path / "b" / "checkpoint.rbp"
        ).read_bytes()

    def test_artifacts_written(self, tmp_path):
        cfg = small_cfg(tmp_path)
        train(cfg)
        out = tmp_path / "run"
        assert (out / "config.txt").exists()
        assert (out / "checkpoint.rbp").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["method"] == "bptt"
        header = (out / "metrics.csv").read_text().splitlines()[1]
        assert header == "epoch,split,loss,accuracy,lr,wall_seconds"

    @pytest.mark.parametrize("method", ["bptt", "rate_m", "rate_s"])
    def test_separable_synthetic_benchmark(self, tmp_path, method):
        # 2-layer stack on a linearly separable set: >= 95% within 20 epochs
        cfg = small_cfg(
            tmp_path, method=method, hidden=(64,), T=4, epochs=12, batch_size=64,
            lr=0.1, train_n=800, test_n=200, features=32, classes=4,
            separation=0.5, noise=0.1, seed=1, out_dir=str(tmp_path / method),
        )
        result = train(cfg, write_artifacts=False)
        assert result.summary["final_test_accuracy"] >= 0.95

    @pytest.mark.parametrize("bn,method,bn_rate", [
        ("tdbn", "rate_m", "exact"),
        ("spatial", "rate_s", "exact"),
        ("spatial", "rate_s", "diagonal"),
    ])
    def test_bn_variants_train(self, tmp_path, bn, method, bn_rate):
        cfg = small_cfg(
            tmp_path, method=method, bn=bn, spatial_bn_rate=bn_rate,
            hidden=(64,), T=4, epochs=8, batch_size=64, lr=0.1,
            train_n=800, test_n=200, features=32, classes=4,
            separation=0.5, noise=0.1, seed=1, out_dir=str(tmp_path / bn),
        )
        result = train(cfg, write_artifacts=False)
        assert result.summary["final_test_accuracy"] >= 0.90

    def test_divergence_aborts_with_location(self, tmp_path, monkeypatch):
        cfg = small_cfg(tmp_path, epochs=1)

        def poisoned(model, method, xb, yb, *args):
            return float("nan"), None, np.zeros((len(yb), cfg.T, 3))

        monkeypatch.setattr(train_mod, "train_step", poisoned)
        with pytest.raises(TrainingDiverged) as err:
            train(cfg, write_artifacts=False)
        assert err.value.epoch == 1 and err.value.step == 0

    def test_check_traces_flag_runs(self, tmp_path):
        cfg = small_cfg(tmp_path, method="rate_m", check_traces=True, epochs=1)
        train(cfg, write_artifacts=False)

    def test_train_from_idx_files(self, tmp_path):
        from ratebp.data import save_idx

        full = gen_synthetic(RngState(11), 80, 16, 3, separation=0.8, noise=0.1)
        tr, te = split_dataset(full, 64)
        save_idx(tr, tmp_path / "tri.idx", tmp_path / "trl.idx", rows=4, cols=4)
        save_idx(te, tmp_path / "tei.idx", tmp_path / "tel.idx", rows=4, cols=4)
        cfg = small_cfg(
            tmp_path, dataset="idx", features=16, classes=3,
            train_images=str(tmp_path / "tri.idx"), train_labels=str(tmp_path / "trl.idx"),
            test_images=str(tmp_path / "tei.idx"), test_labels=str(tmp_path / "tel.idx"),
        )
        result = train(cfg, write_artifacts=False)
        assert result.summary["train_samples"] == 64
        assert result.summary["test_samples"] == 16

    def test_evaluate_matches_summary(self, tmp_path):
        cfg = small_cfg(tmp_path, epochs=2)
        result = train(cfg, write_artifacts=False)
        full = gen_synthetic(RngState(cfg.seed).derive(101), cfg.train_n + cfg.test_n,
                             cfg.features, cfg.classes, cfg.separation, cfg.noise)
        _, test_data = split_dataset(full, cfg.train_n)
        _, acc = evaluate(result.model, test_data, cfg.batch_size)
        assert abs(acc - result.summary["final_test_accuracy"]) < 1e-12
