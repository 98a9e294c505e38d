"""Metrics, comparison runs, manifests, latency bench, and figures."""

import json
from pathlib import Path

import numpy as np
import pytest

from slateauction.config import (
    ExperimentConfig,
    MarketConfig,
    ModelConfig,
    PipelineConfig,
)
from slateauction.errors import ConfigError
from slateauction.evaluator import EvaluatorNetwork, save_evaluator
from slateauction.experiment import (
    COMPARISON_COLUMNS,
    RunManifest,
    benchmark_latency,
    export_results,
    read_csv,
    rerun_from_manifest,
    run_experiment,
    serve_expected,
    write_csv,
)
from slateauction.generator import GeneratorNetwork, save_generator
from slateauction.market import MarketEnvironment
from slateauction.mechanisms import UgspFixedSlot
from slateauction.metrics import MetricsRow, OutcomeRecord, compute_metrics, psi_percent_from_terms
from slateauction import figures


def outcome(request_id, clicks, payments, k=2, objective=0.0):
    return OutcomeRecord(
        request_id=request_id,
        items=[f"x{i}" for i in range(k)],
        clicks=np.array(clicks, dtype=float),
        conversions=np.zeros(k),
        payments=np.array(payments, dtype=float),
        objective=objective,
    )


class TestComputeMetrics:
    def test_rpm_and_ctr_closed_form(self):
        # 10 impressions, two clicked slots paying 1.0 and 2.0
        records = [outcome("r0", [1, 0], [1.0, 0.0])]
        records += [outcome("r1", [1, 0], [2.0, 0.0])]
        records += [outcome(f"r{i}", [0, 0], [0.5, 0.5]) for i in range(2, 5)]
        row = compute_metrics(records, mechanism="m")
        assert row.rpm == pytest.approx(300.0)
        assert row.ctr_percent == pytest.approx(20.0)

    def test_zero_clicks_conventions(self):
        records = [outcome("r0", [0, 0], [1.0, 1.0])]
        row = compute_metrics(records)
        assert row.rpm == 0.0
        assert row.cvr_percent == 0.0

    def test_expected_float_clicks_supported(self):
        records = [outcome("r0", [0.25, 0.5], [1.0, 2.0])]
        row = compute_metrics(records)
        assert row.rpm == pytest.approx((0.25 + 1.0) / 2 * 1000)
        assert row.ctr_percent == pytest.approx(37.5)

    def test_psi_formula(self):
        # one request, one ad with regret 0.1 and utility 1.0
        assert psi_percent_from_terms([0.1 / 1.0]) == pytest.approx(10.0)

    def test_empty_log_error_names_log(self):
        with pytest.raises(ValueError, match="my-log"):
            compute_metrics([], log_name="my-log")

    def test_order_independent(self):
        records = [outcome(f"r{i}", [i % 2, 0], [0.3 * i, 0.1]) for i in range(6)]
        a = compute_metrics(records)
        b = compute_metrics(list(reversed(records)))
        assert a.rpm == b.rpm and a.ctr_percent == b.ctr_percent


class TestCsv:
    def test_header_and_roundtrip(self, tmp_path):
        rows = [
            {"mechanism": "m1", "rpm": 1.23456789, "ctr_percent": 2.0, "cvr_percent": 3.0,
             "psi_percent": None, "reward": 4.0, "rt_ms_median": None, "rt_ms_p99": None,
             "mean": 4.0, "std": 0.5},
        ]
        path = write_csv(tmp_path / "t.csv", COMPARISON_COLUMNS, rows)
        columns, back = read_csv(path)
        assert tuple(columns) == COMPARISON_COLUMNS
        assert back[0]["mechanism"] == "m1"
        assert back[0]["rpm"] == "1.234568"
        assert back[0]["psi_percent"] == ""

    def test_rewrite_is_byte_identical(self, tmp_path):
        rows = [{"mechanism": "m", "rpm": np.pi, "ctr_percent": 1.0, "cvr_percent": 2.0,
                 "psi_percent": 3.0, "reward": 4.0, "rt_ms_median": None, "rt_ms_p99": None,
                 "mean": 4.0, "std": 0.0}]
        p1 = write_csv(tmp_path / "a.csv", COMPARISON_COLUMNS, rows)
        first = p1.read_bytes()
        p2 = write_csv(tmp_path / "a.csv", COMPARISON_COLUMNS, rows)
        assert p2.read_bytes() == first


class TestExportResults:
    def test_files_written_and_stable(self, tmp_path):
        rows = [{"mechanism": "m", "rpm": 1.0, "ctr_percent": 2.0, "cvr_percent": 3.0,
                 "psi_percent": 4.0, "reward": 5.0, "rt_ms_median": None, "rt_ms_p99": None,
                 "mean": 5.0, "std": 0.1}]
        manifest = RunManifest(config={"a": 1}, seeds={"repetitions": [1]})
        csv_path, manifest_path = export_results(rows, manifest, tmp_path)
        assert csv_path.exists() and manifest_path.exists()
        first = csv_path.read_bytes()
        export_results(rows, manifest, tmp_path)
        assert csv_path.read_bytes() == first
        loaded = RunManifest.from_json(manifest_path.read_text())
        assert loaded.config == {"a": 1}


def small_pipeline_cfg(with_nga=False, reps=2):
    return PipelineConfig(
        market=MarketConfig(
            n_ads=4, n_organics=4, slots=3, feature_dim=3, min_ad_start=2, max_ads=1, seed=90,
        ),
        model=ModelConfig(d_model=8, blocks=1, heads=2, ffn_hidden=12, tower_hidden=8, alpha=2.0, seed=4),
        experiment=ExperimentConfig(
            mechanisms=["ugsp-fixed", "nga"] if with_nga else ["ugsp-fixed"],
            repetitions=reps,
            eval_requests=6,
            audit_requests=2,
            audit_grid=[0.5, 1.0, 1.5],
            serve_beam_size=3,
            base_seed=7000,
        ),
    )


class TestRunExperiment:
    def test_row_per_mechanism_and_manifest(self, tmp_path):
        cfg = small_pipeline_cfg(reps=1)
        result = run_experiment(cfg, tmp_path)
        assert len(result.rows) == 1
        columns, rows = read_csv(result.csv_path)
        assert tuple(columns) == COMPARISON_COLUMNS
        assert len(rows) == 1
        assert rows[0]["rt_ms_median"] == ""  # latency lives in bench artifacts
        manifest = RunManifest.from_json(result.manifest_path.read_text())
        assert manifest.seeds["repetitions"] == [7000]

    def test_rerun_from_manifest_byte_identical(self, tmp_path):
        cfg = small_pipeline_cfg(reps=2)
        first = run_experiment(cfg, tmp_path / "run1")
        bytes1 = first.csv_path.read_bytes()
        rep_bytes1 = first.rep_csv_path.read_bytes()
        second = rerun_from_manifest(first.manifest_path, tmp_path / "run2")
        assert second.csv_path.read_bytes() == bytes1
        assert second.rep_csv_path.read_bytes() == rep_bytes1

    def test_with_learned_mechanism_checkpoints(self, tmp_path):
        cfg = small_pipeline_cfg(with_nga=True, reps=1)
        gen = GeneratorNetwork(cfg.market.feature_dim, cfg.market.slots, cfg.model)
        ev = EvaluatorNetwork(cfg.market.feature_dim, cfg.market.slots, cfg.model)
        gpath, epath = tmp_path / "gen.json", tmp_path / "eval.json"
        save_generator(gen, gpath)
        save_evaluator(ev, epath)
        result = run_experiment(cfg, tmp_path / "out", generator_path=gpath, evaluator_path=epath)
        assert {r["mechanism"] for r in result.rows} == {"ugsp-fixed", "nga"}
        assert all(r["psi_percent"] is not None for r in result.rows)
        rerun = rerun_from_manifest(result.manifest_path, tmp_path / "out2")
        assert rerun.csv_path.read_bytes() == result.csv_path.read_bytes()

    def test_nga_without_checkpoints_is_config_error(self, tmp_path):
        cfg = small_pipeline_cfg(with_nga=True)
        with pytest.raises(ConfigError):
            run_experiment(cfg, tmp_path)


class TestServeExpected:
    def test_objective_matches_definition(self):
        cfg = small_pipeline_cfg().market
        env = MarketEnvironment(cfg)
        mech = UgspFixedSlot(alpha=2.0)
        requests = env.sample_requests(1, 4)
        records = serve_expected(mech, env, requests, alpha=2.0)
        for req, rec in zip(requests, records):
            ctr = env.true_list_ctr(rec.items, req)
            cvr = env.true_list_cvr(rec.items, req)
            expected = float(np.sum(rec.payments * ctr + 2.0 * ctr * cvr))
            assert rec.objective == pytest.approx(expected, abs=1e-12)
            np.testing.assert_allclose(rec.clicks, ctr)
            np.testing.assert_allclose(rec.conversions, ctr * cvr)


class TestBenchmarkLatency:
    def _net_and_requests(self, k, n_requests=8):
        cfg = MarketConfig(
            n_ads=5, n_organics=5, slots=k, feature_dim=3, min_ad_start=1, max_ads=k, seed=91,
        )
        env = MarketEnvironment(cfg)
        model = ModelConfig(d_model=8, blocks=1, heads=2, ffn_hidden=12, seed=6)
        net = GeneratorNetwork(cfg.feature_dim, k, model)
        return net, env.sample_requests(2, n_requests)

    def test_structural_pass_counts(self):
        net, requests = self._net_and_requests(k=4)
        report = benchmark_latency(net, requests, beam_size=1, warmup=2)
        assert report["single_pass"]["forward_passes_per_request"] == 1.0
        assert report["sequential"]["forward_passes_per_request"] == 4.0

    def test_k_equals_one_does_identical_work(self):
        net, requests = self._net_and_requests(k=1)
        report = benchmark_latency(net, requests, beam_size=1, warmup=2)
        assert report["single_pass"]["forward_passes_per_request"] == 1.0
        assert report["sequential"]["forward_passes_per_request"] == 1.0

    def test_empty_requests_rejected(self):
        net, _ = self._net_and_requests(k=2)
        with pytest.raises(ConfigError):
            benchmark_latency(net, [], beam_size=1)


class TestFigures:
    def test_comparison_figure(self, tmp_path):
        rows = [
            {"mechanism": "a", "rpm": 1.0, "ctr_percent": 2.0, "cvr_percent": 3.0,
             "psi_percent": 0.5, "reward": 4.0},
            {"mechanism": "b", "rpm": 2.0, "ctr_percent": 1.0, "cvr_percent": 2.0,
             "psi_percent": None, "reward": 5.0},
        ]
        path = figures.comparison_figure(rows, tmp_path / "cmp.png")
        assert path.exists() and path.stat().st_size > 1000

    def test_training_figures(self, tmp_path):
        eval_rows = [
            {"epoch": 0, "loss_pctr": 0.7, "loss_pcvr": 0.6, "loss_pay": -0.1,
             "loss_total": 1.2, "mean_regret": 0.2, "holdout_pctr": 0.71},
            {"epoch": 1, "loss_pctr": 0.6, "loss_pcvr": 0.5, "loss_pay": -0.2,
             "loss_total": 0.9, "mean_regret": 0.1, "holdout_pctr": 0.65},
        ]
        gen_rows = [
            {"epoch": 0, "mean_winner_reward": 1.0, "loss_pg": 0.3},
            {"epoch": 1, "mean_winner_reward": 1.2, "loss_pg": 0.2},
        ]
        p1 = figures.evaluator_training_figure(eval_rows, tmp_path / "ev.png")
        p2 = figures.generator_training_figure(gen_rows, tmp_path / "gen.png")
        assert p1.exists() and p2.exists()

    def test_latency_figure(self, tmp_path):
        report = {
            "k": 4,
            "single_pass": {"median_ms": 1.0, "p99_ms": 2.0, "forward_passes_per_request": 1.0},
            "sequential": {"median_ms": 4.0, "p99_ms": 6.0, "forward_passes_per_request": 4.0},
        }
        path = figures.latency_figure(report, tmp_path / "lat.png")
        assert path.exists()
