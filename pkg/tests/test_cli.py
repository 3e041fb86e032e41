import csv
import json

import numpy as np
import pytest

from oracles import pass_at_k_uniform
from tampo.cli import export_plots, load_params, main, save_params, sliding_stats
from tampo.config import DEFAULTS, ConfigError, ExperimentConfig, parse_text
from tampo.policy import PolicyParams

TINY = ["--set", "train.steps=1", "--set", "train.batch_size=1", "--set", "train.group_size=2"]


def run_cli(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["run", "--out", str(out), *extra]) == 0
    return out


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


class TestRun:
    def test_single_step(self, tmp_path):
        out = run_cli(tmp_path, "r", *TINY)
        assert len((out / "metrics.jsonl").read_text().splitlines()) == 1
        for name in ("config_resolved.txt", "eval_report.json", "params.json", "timings.jsonl"):
            assert (out / name).is_file()

    def test_byte_identical(self, tmp_path):
        args = ["--set", "train.steps=15", "--set", "train.batch_size=2", "--seed", "3"]
        a = run_cli(tmp_path, "a", *args)
        b = run_cli(tmp_path, "b", *args)
        assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
        assert (a / "params.json").read_bytes() == (b / "params.json").read_bytes()

    def test_schedule_override(self, tmp_path):
        out = run_cli(tmp_path, "f", "--set", "schedule=fixed:1.2", "--set", "train.steps=6", "--set",
                      "train.batch_size=2")
        assert all(rec["sampled_T"] == 1.2 for rec in read_jsonl(out / "metrics.jsonl"))

    def test_resolved_config_reproduces(self, tmp_path):
        a = run_cli(tmp_path, "a", "--set", "train.steps=8", "--set", "train.batch_size=2", "--seed", "5")
        b = tmp_path / "b"
        assert main(["run", "--config", str(a / "config_resolved.txt"), "--out", str(b)]) == 0
        assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()

    def test_metrics_fields(self, tmp_path):
        out = run_cli(tmp_path, "m", "--set", "train.steps=3", "--set", "train.batch_size=2")
        rec = read_jsonl(out / "metrics.jsonl")[0]
        assert set(rec) == {
            "step", "sampled_T", "meta_dist", "ema_adv", "mean_reward", "advantage_mean", "advantage_std",
            "fraction_zero_variance_groups", "generation_counter", "objective",
        }
        assert abs(sum(rec["meta_dist"]) - 1) < 1e-12
        timing = read_jsonl(out / "timings.jsonl")[0]
        assert set(timing) == {"step", "wall_ms"}

    def test_floats_round_trip(self, tmp_path):
        out = run_cli(tmp_path, "p", *TINY)
        line = (out / "metrics.jsonl").read_text()
        assert '"sampled_T": 1.0' in line
        p = PolicyParams(np.random.default_rng(0).normal(size=(2, 4, 3)))
        save_params(p, tmp_path / "p.json")
        np.testing.assert_array_equal(load_params(tmp_path / "p.json").table, p.table)

    def test_invalid_config_lists_everything(self, tmp_path, capsys):
        rc = main(["run", "--out", str(tmp_path / "x"), "--set", "grpo.lr=0", "--set", "tampo.top_p=2",
                   "--set", "bogus=1"])
        assert rc != 0
        err = capsys.readouterr().err
        assert "grpo.lr" in err and "tampo.top_p" in err and "bogus" in err
        assert not (tmp_path / "x").exists()

    def test_archive_writes_diagnostic(self, tmp_path):
        out = run_cli(tmp_path, "d", "--set", "train.steps=10", "--set", "train.batch_size=4",
                      "--set", "archive_rollouts=true")
        windows = read_jsonl(out / "diagnostic.jsonl")
        assert len(windows) == 2
        assert len(windows[0]["positive"]["histogram"]) == 10

    def test_mid_run_failure(self, tmp_path, monkeypatch):
        import tampo.trainer as trainer_mod
        from tampo.grpo import NonFiniteError

        real = trainer_mod.grpo_step
        calls = {"n": 0}

        def flaky(*a, **kw):
            calls["n"] += 1
            if calls["n"] == 3:
                raise NonFiniteError("boom")
            return real(*a, **kw)

        monkeypatch.setattr(trainer_mod, "grpo_step", flaky)
        out = tmp_path / "fail"
        assert main(["run", "--out", str(out), "--set", "train.steps=5", "--set", "train.batch_size=1"]) != 0
        assert len((out / "metrics.jsonl").read_text().splitlines()) == 2


class TestEval:
    def test_uniform_closed_form(self, tmp_path):
        p = tmp_path / "params.json"
        save_params(PolicyParams.zeros(4, 3), p)
        args = ["eval", "--params", str(p), "--out", str(tmp_path), "--seed", "2",
                "--set", "tasks.kind=target_exact", "--set", "tasks.num_prompts=2000",
                "--set", "tasks.vocab_size=4", "--set", "tasks.episode_len=3", "--set", "policy.max_len=3"]
        assert main(args) == 0
        rep = json.loads((tmp_path / "eval_report.json").read_text())
        assert abs(rep["pass_at_8"] - pass_at_k_uniform(4, 3, 8)) <= 0.02
        assert rep["pass_at_1"] <= rep["pass_at_8"]
        first = (tmp_path / "eval_report.json").read_bytes()
        assert main(args) == 0
        assert (tmp_path / "eval_report.json").read_bytes() == first

    def test_perfect_policy(self, tmp_path):
        p = PolicyParams.zeros(8, 6)
        p.table[..., 7] = 100.0
        save_params(p, tmp_path / "params.json")
        assert main(["eval", "--params", str(tmp_path / "params.json"), "--set", "policy.max_len=6"]) == 0
        rep = json.loads((tmp_path / "eval_report.json").read_text())
        assert rep["pass_at_1"] == 1.0 and rep["pass_at_8"] == 1.0

    def test_missing_artifact(self, tmp_path):
        assert main(["eval", "--params", str(tmp_path / "nope.json")]) != 0


class TestExportPlots:
    def test_sliding_window(self):
        mean, std, count = sliding_stats([1, 2, 3, 4], 3)
        full = count == 3
        np.testing.assert_allclose(mean[full], [2, 3])
        np.testing.assert_allclose(mean[~full], [1, 1.5])

    def test_constant_stream(self, tmp_path):
        out = run_cli(tmp_path, "c", "--set", "schedule=fixed:0.9", "--set", "train.steps=8",
                      "--set", "train.batch_size=1")
        assert main(["export-plots", "--metrics", str(out / "metrics.jsonl"), "--window", "3"]) == 0
        with open(out / "plots" / "temperature.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 8
        assert all(float(r["window_std"]) == 0.0 for r in rows)
        for name in ("reward.csv", "meta_dist.csv"):
            assert (out / "plots" / name).is_file()
        with open(out / "plots" / "meta_dist.csv") as f:
            assert next(csv.reader(f))[1] == "T=0.6"

    def test_diagnostic_table(self, tmp_path):
        out = run_cli(tmp_path, "d", "--set", "train.steps=6", "--set", "train.batch_size=4",
                      "--set", "archive_rollouts=true")
        written = export_plots(out / "metrics.jsonl", 25, tmp_path / "plots")
        assert tmp_path / "plots" / "optimal_temperature.csv" in written

    def test_empty_file(self, tmp_path):
        (tmp_path / "metrics.jsonl").write_text("")
        assert main(["export-plots", "--metrics", str(tmp_path / "metrics.jsonl"), "--out", str(tmp_path / "o")]) != 0
        assert not (tmp_path / "o").exists()

    def test_malformed_line(self, tmp_path, capsys):
        good = '{"step": 1, "sampled_T": 1.0, "mean_reward": 0.0, "meta_dist": [0.5, 0.5]}'
        (tmp_path / "metrics.jsonl").write_text(good + "\n{not json\n")
        assert main(["export-plots", "--metrics", str(tmp_path / "metrics.jsonl")]) != 0
        assert ":2:" in capsys.readouterr().err


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig.from_mapping({})
        assert cfg.grid.values == (0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5)
        assert (cfg.tampo.alpha, cfg.tampo.top_p, cfg.tampo.warmup_fraction) == (0.05, 0.7, 0.1)
        assert (DEFAULTS["train.batch_size"], DEFAULTS["train.group_size"]) == (32, 8)
        assert (cfg.grpo.clip_eps, cfg.grpo.kl_beta) == (0.2, 0.01)

    def test_parse_text(self):
        raw = parse_text("# comment\ngrpo.clip_eps = 0.3  # trailing\n\nschedule=linear:0.9:1.5\n")
        assert raw == {"grpo.clip_eps": "0.3", "schedule": "linear:0.9:1.5"}
        with pytest.raises(ConfigError):
            parse_text("no equals sign")

    def test_grid_needs_two_values(self):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_mapping({"grid.min": "1.0", "grid.max": "1.0"})
        assert any("grid" in e for e in info.value.errors)

    def test_round_trip(self):
        cfg = ExperimentConfig.from_mapping({"schedule": "fixed:1.3", "grpo.lr": "0.5", "archive_rollouts": "yes"})
        again = ExperimentConfig.from_mapping(parse_text(cfg.to_text()))
        assert again.values == cfg.values
