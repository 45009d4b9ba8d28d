"""End-to-end command-line tests: fit/evaluate/explain/simulate, model file
round-tripping, determinism, and error reporting."""

import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose

from kernelaj import SynthConfig, generate_synthetic, load_model, write_cohort_csv
from kernelaj.cli import main
from kernelaj.model import predict_cif_grid


def write_config(tmp_path, train_csv, **overrides):
    cfg = {
        "seed": 0,
        "output_dir": str(tmp_path / "out"),
        "data": {
            "train": str(train_csv),
            "time_column": "time",
            "event_column": "event",
            "schema": {"x1": "continuous", "x2": "continuous", "x3": "continuous"},
            "valid_fraction": 0.25,
        },
        "embedding": {"num_layers": 1, "hidden_units": 8, "embed_dim": 2,
                      "init_seed": 0},
        "training": {"learning_rate": 0.05, "batch_size": 32, "max_epochs": 4,
                     "patience": 4, "num_time_steps": 8, "seed": 0},
        "clustering": {"epsilon": 0.5, "min_kernel_weight": 0.01},
        "sft": {"enabled": False},
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path, cfg


@pytest.fixture
def train_csv(tmp_path):
    cohort = generate_synthetic(SynthConfig(
        n=120, p=3, w1=(0.6, 0.0, 0.0), w2=(0.0, 0.6, 0.0),
        censoring_rate=0.3, seed=1))
    path = tmp_path / "train.csv"
    write_cohort_csv(cohort, path)
    return path


@pytest.fixture
def test_csv(tmp_path):
    cohort = generate_synthetic(SynthConfig(
        n=60, p=3, w1=(0.6, 0.0, 0.0), w2=(0.0, 0.6, 0.0),
        censoring_rate=0.3, seed=2))
    path = tmp_path / "test.csv"
    write_cohort_csv(cohort, path)
    return path


class TestFit:
    def test_fit_writes_model_and_log(self, tmp_path, train_csv):
        config_path, cfg = write_config(tmp_path, train_csv)
        assert main(["fit", "--config", str(config_path)]) == 0
        out = tmp_path / "out"
        assert (out / "model.json").exists()
        log = (out / "training_log.csv").read_text().strip().splitlines()
        assert log[0] == "epoch,train_loss,valid_criterion,is_best"
        assert len(log) >= 2

    def test_model_round_trip_identical_predictions(self, tmp_path, train_csv):
        config_path, cfg = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        model_path = tmp_path / "out" / "model.json"
        model, schema = load_model(model_path)

        # save again; a reloaded model must predict bit-identically
        from kernelaj import save_model

        second = tmp_path / "model2.json"
        save_model(model, second, schema)
        model2, _ = load_model(second)
        probe = np.random.default_rng(0).normal(size=(20, 3))
        cif_a, surv_a, _ = predict_cif_grid(model, probe)
        cif_b, surv_b, _ = predict_cif_grid(model2, probe)
        assert np.array_equal(cif_a, cif_b)
        assert np.array_equal(surv_a, surv_b)
        assert (tmp_path / "out" / "model.json").read_bytes() == second.read_bytes()

    def test_fit_deterministic_bytes(self, tmp_path, train_csv):
        # identical config + seed, run twice; first artifact copied aside
        config_path, _ = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        first = (tmp_path / "out" / "model.json").read_bytes()
        main(["fit", "--config", str(config_path)])
        second = (tmp_path / "out" / "model.json").read_bytes()
        assert first == second

    def test_missing_train_path_exit_2(self, tmp_path, train_csv, capsys):
        config_path, _ = write_config(
            tmp_path, tmp_path / "does_not_exist.csv")
        assert main(["fit", "--config", str(config_path)]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "data.train" in err
        assert "\n" not in err.strip()

    def test_unknown_key_rejected(self, tmp_path, train_csv, capsys):
        config_path, cfg = write_config(tmp_path, train_csv)
        doc = json.loads(config_path.read_text())
        doc["training"]["warp_speed"] = True
        config_path.write_text(json.dumps(doc))
        assert main(["fit", "--config", str(config_path)]) == 2
        assert "training.warp_speed" in capsys.readouterr().err

    def test_sft_flag_recorded(self, tmp_path, train_csv):
        config_path, _ = write_config(
            tmp_path, train_csv,
            sft={"enabled": True, "learning_rate": 0.0, "max_epochs": 2,
                 "patience": 2})
        main(["fit", "--config", str(config_path)])
        model, _ = load_model(tmp_path / "out" / "model.json")
        # zero learning rate cannot improve validation: backtracked
        assert model.sft_rejected
        assert not model.sft_applied
        assert (tmp_path / "out" / "sft_log.csv").exists()


class TestEvaluate:
    def test_metrics_csv(self, tmp_path, train_csv, test_csv):
        config_path, _ = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        model_path = str(tmp_path / "out" / "model.json")
        rc = main(["evaluate", "--model", model_path, "--data", str(test_csv),
                   "--out", str(tmp_path / "eval")])
        assert rc == 0
        lines = (tmp_path / "eval" / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "event,metric,value"
        metrics = {(r.split(",")[0], r.split(",")[1]): float(r.split(",")[2])
                   for r in lines[1:]}
        assert ("1", "ctd") in metrics and ("2", "ibs_population") in metrics
        for (event, name), value in metrics.items():
            if name.startswith("ctd"):
                assert 0.0 <= value <= 1.0
        # a constant-risk predictor ties every comparable pair
        assert metrics[("1", "ctd_population")] == 0.5
        assert metrics[("2", "ctd_population")] == 0.5

    def test_evaluate_deterministic(self, tmp_path, train_csv, test_csv):
        config_path, _ = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        model_path = str(tmp_path / "out" / "model.json")
        main(["evaluate", "--model", model_path, "--data", str(test_csv),
              "--out", str(tmp_path / "e1")])
        main(["evaluate", "--model", model_path, "--data", str(test_csv),
              "--out", str(tmp_path / "e2")])
        assert (tmp_path / "e1" / "metrics.csv").read_bytes() == \
            (tmp_path / "e2" / "metrics.csv").read_bytes()

    def test_threads_env_does_not_change_results(self, tmp_path, train_csv,
                                                 test_csv, monkeypatch):
        config_path, _ = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        model_path = str(tmp_path / "out" / "model.json")
        main(["evaluate", "--model", model_path, "--data", str(test_csv),
              "--out", str(tmp_path / "st")])
        monkeypatch.setenv("DKAJ_THREADS", "4")
        main(["evaluate", "--model", model_path, "--data", str(test_csv),
              "--out", str(tmp_path / "mt")])
        assert (tmp_path / "st" / "metrics.csv").read_bytes() == \
            (tmp_path / "mt" / "metrics.csv").read_bytes()

    def test_missing_model_exit_2(self, tmp_path, test_csv, capsys):
        rc = main(["evaluate", "--model", str(tmp_path / "nope.json"),
                   "--data", str(test_csv), "--out", str(tmp_path / "x")])
        assert rc == 2


class TestExplain:
    def test_cluster_reports(self, tmp_path, train_csv):
        config_path, _ = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        model_path = str(tmp_path / "out" / "model.json")
        rc = main(["explain", "--model", model_path, "--clusters",
                   "--out", str(tmp_path / "rep")])
        assert rc == 0
        summary = (tmp_path / "rep" / "cluster_summary.csv").read_text()
        lines = summary.strip().splitlines()
        assert lines[0].startswith("exemplar_id,size,risk_event_1")
        risks = [float(line.split(",")[2]) for line in lines[1:]]
        assert risks == sorted(risks, reverse=True)
        assert (tmp_path / "rep" / "cluster_cifs.csv").exists()
        assert (tmp_path / "rep" / "cluster_features.csv").exists()
        assert (tmp_path / "rep" / "kernel_matrix.csv").exists()

    def test_subject_records(self, tmp_path, train_csv, test_csv):
        config_path, _ = write_config(tmp_path, train_csv)
        main(["fit", "--config", str(config_path)])
        model_path = str(tmp_path / "out" / "model.json")
        rc = main(["explain", "--model", model_path, "--data", str(test_csv),
                   "--out", str(tmp_path / "rep")])
        assert rc == 0
        records = json.loads((tmp_path / "rep" / "explanations.json").read_text())
        assert len(records) == 60
        rec = records[0]
        assert set(rec) >= {"exemplar_ids", "weights", "event_probabilities",
                            "conditional_medians", "cif"}
        if rec["weights"]:
            assert sum(rec["weights"]) == pytest.approx(1.0)
        assert sum(rec["event_probabilities"]) == pytest.approx(1.0)

    def test_single_cluster_model_reproduces_population(self, tmp_path,
                                                        train_csv):
        config_path, _ = write_config(tmp_path, train_csv,
                                      clustering={"epsilon": 1e9,
                                                  "min_kernel_weight": 0.01})
        main(["fit", "--config", str(config_path)])
        model, _ = load_model(tmp_path / "out" / "model.json")
        assert model.clusters.num_clusters == 1
        from kernelaj.model import cluster_curves

        pop = model.population_curves()
        single = cluster_curves(model, 0)
        assert_allclose(single.survival.values, pop.survival.values, atol=1e-12)


class TestSimulate:
    def test_simulate_round_trip(self, tmp_path):
        cfg = {"n": 50, "p": 2, "w1": [0.5, 0.0], "w2": [0.0, 0.5],
               "censoring_rate": 0.4, "seed": 9}
        config_path = tmp_path / "sim.json"
        config_path.write_text(json.dumps(cfg))
        out_path = tmp_path / "sim.csv"
        assert main(["simulate", "--config", str(config_path),
                     "--out", str(out_path)]) == 0
        assert out_path.exists()
        sidecar = json.loads((tmp_path / "sim.csv.config.json").read_text())
        assert sidecar["seed"] == 9
        lines = out_path.read_text().strip().splitlines()
        assert lines[0] == "x1,x2,time,event"
        assert len(lines) == 51

    def test_bad_sim_key_exit_2(self, tmp_path, capsys):
        config_path = tmp_path / "sim.json"
        config_path.write_text(json.dumps({"n": 10, "p": 1, "w1": [0.1],
                                           "w2": [0.1], "extra": 1}))
        assert main(["simulate", "--config", str(config_path),
                     "--out", str(tmp_path / "s.csv")]) == 2
        assert "extra" in capsys.readouterr().err
