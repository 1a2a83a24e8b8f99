"""Experiment orchestration, statistics, activation dumps, config files and the CLI."""
import csv
import json
import math
import os

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from amrl import cli
from amrl.config import apply_overrides, build_config, load_config
from amrl.errors import ConfigurationError
from amrl.experiment import (
    TEST_LABEL, ExperimentConfig, dump_activations, lambda_sweep, moving_average, read_final_means,
    resolve_output, run_experiment, significance_test,
)
from amrl.trainer import TrainConfig, train

floats = st.floats(-1e3, 1e3, allow_nan=False)


def welch_oracle(a, b):
    """t, df and two-sided p in 50-digit arithmetic via the regularised incomplete beta."""
    mpmath.mp.dps = 50
    a = [mpmath.mpf(x) for x in a]
    b = [mpmath.mpf(x) for x in b]

    def mean_var(x):
        m = sum(x) / len(x)
        return m, sum((v - m) ** 2 for v in x) / (len(x) - 1)

    ma, sa = mean_var(a)
    mb, sb = mean_var(b)
    va, vb = sa / len(a), sb / len(b)
    t = (ma - mb) / mpmath.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    p = mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, df / (df + t ** 2), regularized=True)
    return float(t), float(df), float(p)


def toy_experiment(tmp_path, run_count=2, **train_kw):
    kw = dict(domain="toy", threaded=False, max_episodes=6, t_max=5, output_dir=str(tmp_path))
    kw.update(train_kw)
    return ExperimentConfig(TrainConfig(**kw), run_count=run_count, smoothing_window=3, summary_every=2)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestMovingAverage:
    def test_window_one_is_identity(self):
        x = np.random.default_rng(0).normal(size=50)
        assert np.array_equal(moving_average(x, 1), x)

    def test_hand_values(self):
        assert moving_average([0, 1], 2).tolist() == [0.0, 0.5]
        assert moving_average([2, 4, 6, 8], 2).tolist() == [2.0, 3.0, 5.0, 7.0]

    def test_empty(self):
        assert moving_average([], 5).size == 0

    def test_invalid_window(self):
        with pytest.raises(ConfigurationError):
            moving_average([1.0], 0)

    def test_direct_window_oracle(self):
        x = np.random.default_rng(1).normal(size=500)
        got = moving_average(x, 37)
        for i in range(500):
            assert abs(got[i] - x[max(0, i - 36): i + 1].mean()) < 1e-12

    @given(hnp.arrays(np.float64, st.integers(0, 200), elements=floats), st.integers(1, 300))
    def test_length_preserved_and_infinite_window_is_cumulative_mean(self, x, w):
        assert moving_average(x, w).shape == x.shape
        if x.size:
            cum = np.cumsum(x) / np.arange(1, x.size + 1)
            assert np.allclose(moving_average(x, math.inf), cum, rtol=0, atol=1e-9)
            if w >= x.size:
                assert np.array_equal(moving_average(x, w), moving_average(x, math.inf))


class TestSignificance:
    def test_identical_samples(self):
        res = significance_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert res.p_value == 1.0 and not res.significant and res.test == TEST_LABEL

    def test_constant_equal_samples(self):
        res = significance_test([1.0, 1.0], [1.0, 1.0])
        assert res.p_value == 1.0 and not res.significant

    def test_separated_samples(self):
        jitter = np.array([1, -1, 2, -2, 0]) * 1e-9
        res = significance_test(np.ones(5) + jitter, np.zeros(5) - jitter)
        assert res.p_value < 1e-12 and res.significant

    def test_fixed_vectors_match_oracles(self):
        a, b = [2.1, 2.0, 1.9], [1.0, 1.1, 0.9]
        res = significance_test(a, b)
        t, df, p = welch_oracle(a, b)
        ref = stats.ttest_ind(a, b, equal_var=False)
        assert abs(res.t - t) < 1e-6 and abs(res.p_value - p) < 1e-6 and abs(res.df - df) < 1e-6
        assert abs(res.t - ref.statistic) < 1e-6 and abs(res.p_value - ref.pvalue) < 1e-6
        assert res.t == pytest.approx(math.sqrt(150), abs=1e-9) and res.significant

    def test_needs_two_runs(self):
        with pytest.raises(ConfigurationError):
            significance_test([1.0], [1.0, 2.0])

    @given(hnp.arrays(np.float64, st.integers(2, 8), elements=floats),
           hnp.arrays(np.float64, st.integers(2, 8), elements=floats))
    def test_symmetric(self, a, b):
        ab, ba = significance_test(a, b), significance_test(b, a)
        assert ab.p_value == ba.p_value and ab.significant == ba.significant
        assert 0.0 <= ab.p_value <= 1.0


class TestRunExperiment:
    def test_single_run_has_zero_std(self, tmp_path):
        res = run_experiment(toy_experiment(tmp_path, run_count=1, domain_options={"reward": 0.5}))
        rows = read_csv(tmp_path / "summary.csv")
        assert [int(r["episode"]) for r in rows] == [2, 4, 6]
        assert all(float(r["std"]) == 0.0 and r["runs"] == "1" for r in rows)
        assert len(res.run_dirs) == 1 and (tmp_path / "run_00" / "metrics.jsonl").exists()

    def test_constant_reward_stub(self, tmp_path):
        cfg = toy_experiment(tmp_path, run_count=3, domain_options={"length": 1, "reward": 1.0})
        res = run_experiment(cfg)
        for row in read_csv(tmp_path / "summary.csv"):
            assert float(row["mean"]) == 1.0 and float(row["std"]) == 0.0 and row["runs"] == "3"
        assert res.final_means == [1.0, 1.0, 1.0]
        assert [int(r["seed"]) for r in read_csv(tmp_path / "runs.csv")] == [0, 1, 2]

    def test_byte_identical_summaries(self, tmp_path):
        a = run_experiment(toy_experiment(tmp_path / "a", run_count=2, lambda_schedule="anneal-0.9"))
        b = run_experiment(toy_experiment(tmp_path / "b", run_count=2, lambda_schedule="anneal-0.9"))
        for name in ("summary.csv", "runs.csv"):
            assert (a.output_dir / name).read_bytes() == (b.output_dir / name).read_bytes()

    def test_explicit_seeds(self, tmp_path):
        cfg = toy_experiment(tmp_path, run_count=2)
        cfg.seeds = [7, 9]
        run_experiment(cfg)
        assert [int(r["seed"]) for r in read_csv(tmp_path / "runs.csv")] == [7, 9]
        assert read_final_means(tmp_path) == pytest.approx([5.0, 5.0])

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(ConfigurationError, match="not writable"):
            run_experiment(toy_experiment(blocker / "sub"))

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("AMRL_OUTPUT_ROOT", str(tmp_path))
        assert resolve_output("x/y") == tmp_path / "x" / "y"
        assert resolve_output("/abs") == resolve_output("/abs")
        cfg = toy_experiment("rel", run_count=1)
        res = run_experiment(cfg)
        assert res.output_dir == tmp_path / "rel" and (tmp_path / "rel" / "summary.csv").exists()

    @pytest.mark.parametrize("kw", [{"run_count": 0}, {"smoothing_window": 0}, {"seeds": [1, 2], "run_count": 1},
                                    {"sweep": ["fixed--1"]}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(**kw)


class TestSweep:
    def test_single_setting_equals_run_experiment(self, tmp_path):
        cfg = toy_experiment(tmp_path / "plain", lambda_schedule="fixed-0.5")
        run_experiment(cfg)
        sweep_cfg = toy_experiment(tmp_path / "sweep")
        sweep_cfg.sweep = build_config({"sweep": ["fixed-0.5"]}).sweep
        rows = lambda_sweep(sweep_cfg)
        assert len(rows) == 1 and rows[0]["setting"] == "fixed-0.5"
        for name in ("summary.csv", "runs.csv"):
            assert (tmp_path / "plain" / name).read_bytes() == (tmp_path / "sweep" / "fixed-0.5" / name).read_bytes()

    def test_two_settings(self, tmp_path):
        cfg = toy_experiment(tmp_path)
        cfg.sweep = build_config({"sweep": ["fixed-0.1", "anneal-0.999"]}).sweep
        lambda_sweep(cfg)
        rows = read_csv(tmp_path / "comparison.csv")
        assert [r["setting"] for r in rows] == ["fixed-0.1", "anneal-0.999"]
        assert (tmp_path / "fixed-0.1" / "summary.csv").exists()
        assert (tmp_path / "anneal-0.999" / "run_01" / "metrics.jsonl").exists()

    def test_empty_sweep(self, tmp_path):
        with pytest.raises(ConfigurationError):
            lambda_sweep(toy_experiment(tmp_path))


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    out = {}
    for arch in ("AMS", "AMF"):
        res = train(TrainConfig(arch=arch, domain="cmotp", domain_options={"max_steps": 15, "conv_layers": 3},
                                max_episodes=0, output_dir=str(root / arch)))
        out[arch] = res.final_checkpoint
    res = train(TrainConfig(arch="AMS", domain="pommerman", max_episodes=0, output_dir=str(root / "pom")))
    out["pommerman"] = res.final_checkpoint
    return out


class TestDumpActivations:
    def test_zero_episodes_is_header_only(self, checkpoints, tmp_path):
        path = dump_activations(checkpoints["AMS"], "cmotp", 0, tmp_path / "a.csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 1 and lines[0].split(",")[:4] == ["episode", "step", "value", "h0"]

    @pytest.mark.parametrize("arch,width", [("AMS", 128), ("AMF", 64)])
    def test_vector_width(self, checkpoints, tmp_path, arch, width):
        rows = read_csv(dump_activations(checkpoints[arch], "cmotp", 2, tmp_path / "a.csv"))
        assert len(rows) == 30
        for r in rows:
            assert len(r) == 3 + width and all(math.isfinite(float(v)) for v in r.values())
        assert [int(r["step"]) for r in rows[:15]] == list(range(15))
        assert {r["episode"] for r in rows} == {"0", "1"}

    def test_domain_mismatch(self, checkpoints, tmp_path):
        with pytest.raises(ConfigurationError):
            dump_activations(checkpoints["pommerman"], "cmotp", 1, tmp_path / "a.csv")
        with pytest.raises(ConfigurationError):
            dump_activations(checkpoints["AMS"], "pommerman", 1, tmp_path / "a.csv")


class TestConfig:
    def test_overrides(self):
        data = apply_overrides({"adam": {"lr": 1e-4}}, ["adam.lr=3e-4", "domain_options.teammate=stubborn",
                                                       "n_workers=2"])
        assert data == {"adam": {"lr": 3e-4}, "domain_options": {"teammate": "stubborn"}, "n_workers": 2}

    def test_bad_override(self):
        with pytest.raises(ConfigurationError):
            apply_overrides({}, ["novalue"])

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            build_config({"learning_rate": 1})

    def test_shipped_configs_load(self):
        root = os.path.join(os.path.dirname(__file__), "..", "configs")
        for name in sorted(os.listdir(root)):
            cfg = load_config(os.path.join(root, name))
            assert cfg.run_count >= 1
        sweep = load_config(os.path.join(root, "cmotp_stubborn_sweep.yaml"))
        assert [s.label() for s in sweep.sweep] == ["fixed-0.1", "fixed-0.5", "anneal-0.999", "anneal-0.9999",
                                                    "anneal-0.99999"]

    def test_string_floats_in_sections(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("adam: {lr: 1e-4}\n")
        assert load_config(path).train.adam.lr == 1e-4


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.yaml"
    path.write_text(
        "arch: AMS\ndomain: toy\nthreaded: false\nmax_episodes: 4\nt_max: 5\n"
        "run_count: 2\nsmoothing_window: 2\nsummary_every: 2\n"
    )
    return path


class TestCli:
    def test_train_evaluate_significance_dump(self, smoke_config, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["train", "--config", str(smoke_config), "--output", str(a)]) == 0
        assert cli.main(["train", "--config", str(smoke_config), "--output", str(b), "--seed", "5",
                         "--set", "domain_options.reward=0.5"]) == 0
        assert json.loads((b / "experiment.json").read_text())["train"]["seed"] == 5
        capsys.readouterr()
        assert cli.main(["significance", "--a", str(a), "--b", str(b)]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["significant"] and res["test"] == TEST_LABEL
        ckpt = a / "run_00" / "checkpoints" / "final.json"
        assert cli.main(["evaluate", "--checkpoint", str(ckpt), "--episodes", "2"]) == 0
        stats_out = json.loads(capsys.readouterr().out)
        assert stats_out["episodes"] == 2 and stats_out["mean_return"] == 5.0
        dump = tmp_path / "acts.csv"
        assert cli.main(["dump-activations", "--checkpoint", str(ckpt), "--episodes", "1",
                         "--output", str(dump)]) == 0
        assert len(dump.read_text().splitlines()) == 6

    def test_sweep(self, smoke_config, tmp_path, capsys):
        out = tmp_path / "s"
        assert cli.main(["sweep", "--config", str(smoke_config), "--output", str(out),
                         "--set", "sweep=[fixed-0.1, fixed-0.5]", "--set", "run_count=1"]) == 0
        assert len(read_csv(out / "comparison.csv")) == 2

    def test_replay(self, tmp_path, capsys):
        from amrl.envs import PommermanDomain
        d = PommermanDomain({"replay_dir": str(tmp_path)}, rng=1)
        d.reset()
        while not d.step(0).done:
            pass
        assert cli.main(["replay", "--log", str(tmp_path / "episode_000000.jsonl")]) == 0
        assert "replayed" in capsys.readouterr().out

    @pytest.mark.parametrize("argv", [
        ["train", "--config", "/nonexistent/config.yaml"],
        ["evaluate", "--checkpoint", "/nonexistent/ckpt.json", "--episodes", "1"],
        ["significance", "--a", "/nonexistent/a", "--b", "/nonexistent/b"],
        ["replay", "--log", "/nonexistent/log.jsonl"],
    ])
    def test_errors_exit_nonzero(self, argv, capsys):
        assert cli.main(argv) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_override_exits_nonzero(self, smoke_config, capsys):
        assert cli.main(["train", "--config", str(smoke_config), "--set", "bogus_key=1"]) == 2

    def test_unwritable_output_exits_nonzero(self, smoke_config, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["train", "--config", str(smoke_config), "--output", str(blocker / "x")]) == 2

    def test_output_root_env(self, smoke_config, tmp_path, monkeypatch):
        monkeypatch.setenv("AMRL_OUTPUT_ROOT", str(tmp_path))
        assert cli.main(["train", "--config", str(smoke_config), "--output", "rel", "--episodes", "2"]) == 0
        assert (tmp_path / "rel" / "summary.csv").exists()

    def test_bit_reproducible(self, smoke_config, tmp_path):
        for name in ("x", "y"):
            assert cli.main(["train", "--config", str(smoke_config), "--output", str(tmp_path / name)]) == 0
        for f in ("summary.csv", "runs.csv"):
            assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()

    def test_every_subcommand_reproducible(self, smoke_config, tmp_path, capsys):
        def outputs(tag):
            root = tmp_path / tag
            assert cli.main(["train", "--config", str(smoke_config), "--output", str(root / "a")]) == 0
            assert cli.main(["sweep", "--config", str(smoke_config), "--output", str(root / "s"),
                             "--set", "sweep=[fixed-0.1, anneal-0.9]"]) == 0
            ckpt = root / "a" / "run_01" / "checkpoints" / "final.json"
            assert cli.main(["dump-activations", "--checkpoint", str(ckpt), "--episodes", "2",
                             "--output", str(root / "acts.csv")]) == 0
            capsys.readouterr()
            assert cli.main(["evaluate", "--checkpoint", str(ckpt), "--episodes", "3", "--seed", "4"]) == 0
            assert cli.main(["significance", "--a", str(root / "a"), "--b", str(root / "s" / "fixed-0.1")]) == 0
            printed = capsys.readouterr().out
            files = [root / "a" / "summary.csv", root / "s" / "comparison.csv", root / "acts.csv"]
            return printed, [f.read_bytes() for f in files]

        assert outputs("first") == outputs("second")
