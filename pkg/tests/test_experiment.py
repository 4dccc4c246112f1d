"""Experiment harness: config validation, the three-way comparison
protocol, output determinism, and the self-check suite's sensitivity."""

import numpy as np
import pytest

from lastlayer.experiment import (
    ComparisonRow,
    check_suite,
    config_from_dict,
    config_to_dict,
    convexity_statistics,
    rmse,
    rows_to_csv,
    run_experiment,
)
from lastlayer.posttrain import posttrain_objective


def tiny_config_doc(**overrides):
    doc = {
        "dataset": {"kind": "synthetic", "n": 240, "seed": 11},
        "split": {"fraction": 0.7, "seed": 22},
        "standardize": True,
        "network": {
            "init_seed": 33,
            "layers": [
                {"input_dim": 10, "output_dim": 6, "activation": "tanh", "has_bias": True},
                {"input_dim": 6, "output_dim": 1, "activation": "identity", "has_bias": False},
            ],
        },
        "loss": "squared_error",
        "train": {
            "iterations": 40,
            "batch_size": 20,
            "lr0": 0.02,
            "lr_decay": 1.0,
            "dropout_keep": [1.0],
            "weight_decay": 0.001,
            "seed": 44,
            "eval_every": 20,
        },
        "posttrain": {
            "lambda": 0.001,
            "iterations": 25,
            "mode": "minibatch",
            "batch_size": 20,
            "lr": 0.05,
            "seed": 55,
        },
        "checkpoints": [20, 40],
        "metric": "rmse",
        "krr_convention": "objective_consistent",
        "seeds": [0, 1],
    }
    doc.update(overrides)
    return doc


class TestConfig:
    def test_round_trip(self):
        cfg = config_from_dict(tiny_config_doc())
        again = config_from_dict(config_to_dict(cfg))
        assert config_to_dict(cfg) == config_to_dict(again)

    def test_checkpoints_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            config_from_dict(tiny_config_doc(checkpoints=[20, 20]))

    def test_checkpoints_within_budget(self):
        with pytest.raises(ValueError, match="exceed"):
            config_from_dict(tiny_config_doc(checkpoints=[20, 80]))

    def test_metric_loss_pairing(self):
        with pytest.raises(ValueError, match="rmse"):
            config_from_dict(tiny_config_doc(loss="cross_entropy"))

    def test_needs_seeds(self):
        with pytest.raises(ValueError, match="seed"):
            config_from_dict(tiny_config_doc(seeds=[]))


class TestRunExperiment:
    def test_row_shape_and_order(self):
        cfg = config_from_dict(tiny_config_doc())
        rows = run_experiment(cfg)
        assert [(r.seed, r.iterations) for r in rows] == [
            (0, 20), (0, 40), (1, 20), (1, 40)
        ]
        for row in rows:
            assert row.classic >= 0 and row.posttrained >= 0 and row.optimal >= 0

    def test_deterministic_csv(self):
        cfg = config_from_dict(tiny_config_doc())
        first = rows_to_csv(run_experiment(cfg))
        second = rows_to_csv(run_experiment(cfg))
        assert first == second

    def test_optimal_never_worse_on_train_objective(self):
        # the closed form minimizes the regularized train objective exactly,
        # so no fine-tuned network can beat it there
        from dataclasses import replace as dc_replace

        from lastlayer.experiment import _materialize_data, _optimal_last_layer
        from lastlayer.network import build_network
        from lastlayer.posttrain import post_train
        from lastlayer.rng import derive
        from lastlayer.train import sgd_train

        cfg = config_from_dict(tiny_config_doc())
        run_seed = 0
        train_ds, _ = _materialize_data(cfg, run_seed)
        net = build_network(cfg.layer_specs, derive(cfg.init_seed, "run", run_seed))
        chunk = dc_replace(cfg.train, iterations=20, seed=derive(cfg.train.seed, "run", run_seed))
        net, _ = sgd_train(net, train_ds, chunk, cfg.loss)
        tuned, _ = post_train(net, train_ds, cfg.posttrain, cfg.loss)
        best = _optimal_last_layer(cfg, net, train_ds)
        lam = cfg.posttrain.lam
        obj_best = posttrain_objective(best, train_ds, lam, cfg.loss)
        obj_tuned = posttrain_objective(tuned, train_ds, lam, cfg.loss)
        obj_classic = posttrain_objective(net, train_ds, lam, cfg.loss)
        assert obj_best <= obj_tuned + 1e-12
        assert obj_best <= obj_classic + 1e-12

    def test_huge_lambda_collapses_to_zero_predictor(self):
        import warnings

        doc = tiny_config_doc()
        doc["posttrain"]["lambda"] = 1e9
        doc["posttrain"]["mode"] = "full_batch_backtracking"
        doc["posttrain"]["iterations"] = 300
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = config_from_dict(doc)
            rows = run_experiment(cfg)
        from lastlayer.experiment import _materialize_data

        for row in rows:
            if row.seed != 0:
                continue
            _, test_ds = _materialize_data(cfg, 0)
            zero_rmse = rmse(np.zeros_like(test_ds.y), test_ds.y)
            assert abs(row.optimal - zero_rmse) <= 0.02 * zero_rmse
            assert abs(row.posttrained - zero_rmse) <= 0.05 * zero_rmse


class TestCsvFormat:
    def test_header_and_na(self):
        rows = [
            ComparisonRow(iterations=250, classic=1.5, posttrained=1.25, optimal=None, seed=3)
        ]
        text = rows_to_csv(rows)
        lines = text.splitlines()
        assert lines[0] == "iterations,classic,posttrain,optimal,seed"
        assert lines[1] == "250,1.5,1.25,NA,3"


class TestRmse:
    def test_matches_definition(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(50, 2))
        y = rng.normal(size=(50, 2))
        expected = float(np.sqrt(np.mean(np.sum((pred - y) ** 2, axis=1))))
        assert rmse(pred, y) == pytest.approx(expected, rel=1e-12)


class TestCheckSuite:
    def test_fresh_checkout_passes(self):
        report = check_suite(seed=0)
        assert report.passed, report.summary()

    def test_detects_perturbed_gradient(self):
        report = check_suite(seed=0, gradient_perturbation=1e-2)
        failing = {c.name for c in report.checks if not c.passed}
        assert "gradient_vs_finite_differences" in failing
        assert not report.passed

    def test_report_is_machine_readable(self):
        report = check_suite(seed=1)
        doc = report.to_dict()
        assert isinstance(doc["passed"], bool)
        names = [c["name"] for c in doc["checks"]]
        assert len(names) == len(set(names))
        for check in doc["checks"]:
            assert set(check) == {"name", "passed", "max_error", "tolerance", "detail"}

    def test_summary_has_one_line_per_check(self):
        report = check_suite(seed=2)
        lines = report.summary().splitlines()
        assert len(lines) == len(report.checks) + 1
        assert lines[-1].startswith("overall:")


class TestConvexityStatistics:
    def test_statistics_pass_and_are_tiny(self):
        stats = convexity_statistics(seed=0, instances=30)
        assert stats["passed"]
        assert stats["min"] >= -1e-10
