import dataclasses

import numpy as np
import pytest

from shiva.experiments import gradcheck
from shiva.experiments.budget_dynamics import run_budget_dynamics
from shiva.experiments.config import (BudgetDynamicsConfig, ConfigError, GradConsistencyConfig,
                                      ToyTrainConfig, VarianceDemoConfig, build_config, config_text,
                                      parse_assignments)
from shiva.experiments.grad_consistency import cosine, run_grad_consistency
from shiva.experiments.report import RunReport, histogram_svg, line_plot_svg, series_to_csv
from shiva.experiments.toy_train import run_toy_train
from shiva.experiments.variance_demo import make_profile, run_variance_demo, variance_ratio
from shiva.ratio_policy import policy_forward

TINY_TOY = dict(n_tokens=12, d_model=6, hidden=8, n_layers=4, bottleneck=8, router_freq=4,
                batch_size=4, stage1_steps=4, stage2_steps=4, stage3_steps=4, warmup_steps=2,
                lut_steps=10)


def tiny_toy(**kw):
    return ToyTrainConfig(**{**TINY_TOY, **kw})


class TestConfig:
    def test_defaults(self):
        assert build_config(GradConsistencyConfig) == GradConsistencyConfig()

    def test_file_then_overrides_then_seed(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\ntrials = 10\nratio = 0.25  # inline\nseed = 3\n")
        cfg = build_config(GradConsistencyConfig, path, ["trials=20"], seed=9)
        assert (cfg.trials, cfg.ratio, cfg.seed) == (20, 0.25, 9)

    def test_bool_coercion(self):
        assert build_config(GradConsistencyConfig, overrides=["normalized=off"]).normalized is False
        with pytest.raises(ConfigError):
            build_config(GradConsistencyConfig, overrides=["normalized=maybe"])

    def test_errors(self, tmp_path):
        with pytest.raises(ConfigError):
            build_config(GradConsistencyConfig, overrides=["nope=1"])
        with pytest.raises(ConfigError):
            build_config(GradConsistencyConfig, overrides=["trials=many"])
        with pytest.raises(ConfigError):
            build_config(GradConsistencyConfig, tmp_path / "missing.cfg")
        with pytest.raises(ConfigError):
            parse_assignments(["just words"])

    def test_text_round_trip(self, tmp_path):
        cfg = dataclasses.replace(ToyTrainConfig(), lr_policy=3e-4, sharing="global")
        path = tmp_path / "t.cfg"
        path.write_text(config_text(cfg))
        assert build_config(ToyTrainConfig, path) == cfg


class TestReport:
    def test_json_round_trip(self):
        rep = RunReport("x", {"a": 1}, {"c": [1.5, 2.0]}, {"ok": True}, 0.25)
        back = RunReport.from_json(rep.to_json())
        assert (back.command, back.config, back.series, back.summary) == ("x", {"a": 1}, {"c": [1.5, 2.0]}, {"ok": True})

    def test_bad_schema(self):
        with pytest.raises(ValueError):
            RunReport.from_json('{"schema": "other"}')

    def test_csv_floats_round_trip(self):
        vals = [0.1, 1 / 3, 1e-300]
        rows = series_to_csv({"v": vals}).split()
        assert [float(v) for v in rows[1:]] == vals

    def test_write(self, tmp_path):
        rep = RunReport("x", {}, {"c": [1]}, {}, extra_csv={"more.csv": "a\n1\n"}, svg="<svg/>")
        out = rep.write(tmp_path / "run")
        assert sorted(p.name for p in out.iterdir()) == ["more.csv", "plot.svg", "report.json", "series.csv"]

    def test_svgs(self):
        assert line_plot_svg([0, 1, 2], {"y": [1, 1, 1]}).startswith("<svg")
        assert histogram_svg([0, 1, 2], [0, 3]).count("<rect") == 3


class TestBudgetDynamics:
    def test_small_run(self):
        cfg = build_config(BudgetDynamicsConfig, overrides=["warmup_steps=20", "adapt_steps=60", "eval_samples=5"])
        rep = run_budget_dynamics(cfg)
        assert len(rep.series["step"]) == 80
        assert 1.0 <= rep.summary["final_k"] <= cfg.n_tokens
        assert 0.0 <= rep.summary["eval_accuracy"] <= 1.0

    def test_no_signal_collapses_k(self):
        rep = run_budget_dynamics(build_config(BudgetDynamicsConfig, overrides=["signal_mean=0", "eval_samples=2"]))
        assert rep.summary["final_k"] == 1.0

    def test_free_selection_grows_k(self):
        rep = run_budget_dynamics(build_config(BudgetDynamicsConfig, overrides=["lam=0", "eval_samples=2"]))
        assert rep.summary["final_k"] > 50.0

    def test_k_only_moves_after_warmup(self):
        rep = run_budget_dynamics(build_config(BudgetDynamicsConfig,
                                               overrides=["warmup_steps=10", "adapt_steps=10", "eval_samples=2"]))
        assert set(rep.series["k"][:10]) == {50.0}


class TestGradConsistency:
    def test_cosine(self):
        assert cosine(np.array([1.0, 0.0]), np.array([2.0, 0.0])) == pytest.approx(1.0)
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 0.0

    def test_small_run_positive(self):
        rep = run_grad_consistency(GradConsistencyConfig(seed=3))
        assert rep.summary["fraction_positive"] == 1.0
        assert len(rep.series["cosine"]) == 1000
        hist = rep.extra_csv["histogram.csv"].splitlines()
        assert sum(int(r.split(",")[2]) for r in hist[1:]) == 1000

    def test_too_few_trials(self):
        with pytest.raises(ValueError):
            run_grad_consistency(GradConsistencyConfig(trials=999))

    def test_zero_rejected_gradient_is_exact(self):
        rep = run_grad_consistency(GradConsistencyConfig(ratio=1.0, zero_rejected_grad=True))
        np.testing.assert_allclose(rep.series["cosine"], 1.0, atol=1e-12)

    @pytest.mark.parametrize("model", ["replace", "residual"])
    def test_path_models(self, model):
        assert run_grad_consistency(GradConsistencyConfig(path_model=model)).summary["min_cosine"] > 0

    def test_unknown_path_model(self):
        with pytest.raises(ValueError):
            run_grad_consistency(GradConsistencyConfig(path_model="other"))


class TestVarianceDemo:
    def test_profiles(self):
        cfg = VarianceDemoConfig()
        t = np.array([0.0, 500.0, 999.0])
        np.testing.assert_array_equal(make_profile("constant", cfg)(t), 0.6)
        np.testing.assert_allclose(make_profile("linear", cfg)(t), [0.0, 0.5, 0.999])
        with pytest.raises(ValueError):
            make_profile("cubic", cfg)

    def test_ratio_of_vanishing_variances(self):
        assert variance_ratio(0.0, 0.0) == 1.0
        assert variance_ratio(1.0, 2.0) == 0.5

    def test_run(self):
        rep = run_variance_demo(VarianceDemoConfig(trials=2000))
        assert rep.summary["linear"]["ratio"] < 0.05
        assert rep.summary["constant"]["ratio"] == 1.0
        assert rep.series["profile"] == ["constant", "linear", "sigmoid", "step"]


class TestToyTrain:
    def test_tiny_run(self):
        rep = run_toy_train(tiny_toy())
        assert rep.summary["budget_violations"] == 0
        assert len(rep.series["step"]) == 12
        assert rep.series["stage"][0] == "router_warmup" and rep.series["stage"][-1] == "joint"
        assert 0 < rep.summary["processed_token_fraction"] < 1

    def test_lut_matches_trained_policy(self):
        rep = run_toy_train(tiny_toy())
        stack, lut = rep.artifacts["stack"], rep.artifacts["lut"]
        for i, t in enumerate(lut.t_values):
            for layer in range(4):
                assert lut.grid[i, layer] == policy_forward(stack.policy, float(t), layer)[1]

    def test_full_ratio_matches_dense_training(self):
        a = run_toy_train(tiny_toy(ratio_override=1.0))
        b = run_toy_train(tiny_toy(dense=True))
        assert a.series["loss_task"] == b.series["loss_task"]
        assert a.series["loss_distill"] == b.series["loss_distill"]
        for pa, pb in zip(a.artifacts["stack"].blocks, b.artifacts["stack"].blocks):
            np.testing.assert_array_equal(pa.w1, pb.w1)
            np.testing.assert_array_equal(pa.w2, pb.w2)

    def test_policy_frozen_in_stage1(self):
        rep = run_toy_train(tiny_toy(stage2_steps=0, stage3_steps=0))
        assert np.all(rep.artifacts["lut"].grid == pytest.approx(0.6, rel=1e-15))

    def test_default_run_holds_budget_after_policy_stage(self, default_toy_report):
        s = default_toy_report.summary
        assert abs(s["mu_global_end_stage2"] - default_toy_report.config["r_target"]) < 0.02

    def test_needs_two_layers(self):
        with pytest.raises(ValueError):
            run_toy_train(tiny_toy(n_layers=1))


class TestGradcheck:
    def test_all_pass(self):
        results = gradcheck.run_checks(0)
        assert len(results) == len(gradcheck.CHECKS)
        assert all(r.passed for r in results), [r for r in results if not r.passed]

    def test_detects_a_broken_jacobian(self, monkeypatch):
        real = gradcheck.soft_rank_jacobian
        monkeypatch.setattr(gradcheck, "soft_rank_jacobian", lambda state: -real(state))
        (result,) = gradcheck.run_checks(0, ["soft_rank_jacobian"])
        assert not result.passed

    def test_nan_fails(self):
        assert not gradcheck.CheckResult("x", float("nan"), 1.0, "abs").passed

    def test_report(self):
        rep = gradcheck.run_gradcheck()
        assert rep.summary == {"passed": True, "n_checks": len(gradcheck.CHECKS), "failed": []}
        assert rep.extra_csv["gradcheck.csv"].startswith("check,max_error,tolerance,metric,passed")
