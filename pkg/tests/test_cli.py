import csv
import hashlib
import json
import time

import numpy as np
import pytest

from hypersmc import cli, jsonio
from hypersmc.errors import DegeneratePopulationError
from hypersmc.hyper import HyperPrior
from hypersmc.smc import RunTrace


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    assert run("generate", "--model", "toy", "--seed", 3, "--out", d / "data") == 0
    assert run("run", "--dataset", d / "data" / "dataset.json", "--seed", 1,
               "--output", d / "trace.json") == 0
    return d


@pytest.fixture(scope="module")
def clg_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("clg")
    assert run("generate", "--model", "clg", "--seed", 3, "--out", d / "data") == 0
    assert run("run", "--dataset", d / "data" / "dataset.json", "--seed", 1,
               "--output", d / "trace.json") == 0
    return d


def trace_digest(path):
    doc = jsonio.load(path)
    doc.pop("run_config")
    return hashlib.sha256(jsonio.dumps(doc).encode()).hexdigest()


class TestGenerate:
    def test_same_seed_same_bytes(self, tmp_path):
        for k in ("a", "b"):
            assert run("generate", "--model", "toy", "--seed", 17, "--out", tmp_path / k) == 0
        for name in ("dataset.json", "truth.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_different_seed_different_data(self, tmp_path):
        run("generate", "--model", "toy", "--seed", 1, "--out", tmp_path / "a")
        run("generate", "--model", "toy", "--seed", 2, "--out", tmp_path / "b")
        a = jsonio.load(tmp_path / "a" / "dataset.json")["observations"]
        b = jsonio.load(tmp_path / "b" / "dataset.json")["observations"]
        assert a != b

    def test_toy_has_one_hundred_observations(self, toy_files):
        ds = jsonio.load(toy_files / "data" / "dataset.json")
        assert len(ds["observations"]) == 100
        assert len(ds["times"]) == 100
        truth = jsonio.load(toy_files / "data" / "truth.json")
        assert 0.1 <= truth["theta_true"] <= 0.2
        assert truth["mu_true"] == 0.0

    def test_clg_observation_matrix_shape(self, clg_files):
        ds = jsonio.load(clg_files / "data" / "dataset.json")
        assert np.asarray(ds["observations"]).shape == (59, 100)
        truth = jsonio.load(clg_files / "data" / "truth.json")
        assert len(truth["locations"]) == 2

    def test_unwritable_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("generate", "--model", "toy", "--seed", 1, "--out", blocker / "sub") == 1


class TestRun:
    def test_toy_defaults(self, toy_files):
        doc = jsonio.load(toy_files / "trace.json")
        trace = RunTrace.from_json(doc)
        # the initial population plus one record per tempering iteration
        assert len(trace.records) == 501
        assert trace.records[-1].alpha == 1.0
        assert doc["run_config"]["n_iterations"] == 500
        assert doc["run_config"]["n_particles"] == 100
        assert trace.records[-1].theta == pytest.approx(0.05)

    def test_clg_defaults(self, clg_files):
        trace = RunTrace.from_json(jsonio.load(clg_files / "trace.json"))
        assert len(trace.records) == 101
        assert trace.records[-1].alpha == 1.0
        assert trace.records[-1].theta == pytest.approx(0.025)

    def test_round_trip(self, toy_files):
        doc = jsonio.load(toy_files / "trace.json")
        again = RunTrace.from_json(doc).to_json()
        doc.pop("run_config")
        assert jsonio.dumps(again) == jsonio.dumps(doc), "trace changed on round trip"

    @pytest.mark.parametrize("model", ["toy", "clg"])
    def test_repeat_is_byte_identical(self, model, toy_files, clg_files, tmp_path):
        base = toy_files if model == "toy" else clg_files
        out = tmp_path / "t.json"
        first = None
        for _ in range(2):
            assert run("run", "--dataset", base / "data" / "dataset.json", "--seed", 1,
                       "--n-iterations", 60, "--output", out) == 0
            data = out.read_bytes()
            same = first is None or data == first
            assert same
            first = data

    @pytest.mark.parametrize("model", ["toy", "clg"])
    def test_thread_count_does_not_change_output(self, model, toy_files, clg_files, tmp_path):
        base = toy_files if model == "toy" else clg_files
        ds = base / "data" / "dataset.json"
        for k in (1, 8):
            assert run("run", "--dataset", ds, "--seed", 5, "--n-iterations", 40,
                       "--threads", k, "--output", tmp_path / f"t{k}.json") == 0
        assert trace_digest(tmp_path / "t1.json") == trace_digest(tmp_path / "t8.json")

    def test_flags_override_config_file(self, toy_files, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_particles": 7, "n_iterations": 9, "seed": 2}))
        out = tmp_path / "t.json"
        assert run("run", "--config", cfg, "--dataset", toy_files / "data" / "dataset.json",
                   "--n-particles", 11, "--output", out) == 0
        doc = jsonio.load(out)
        assert doc["run_config"]["n_particles"] == 11
        assert doc["run_config"]["n_iterations"] == 9
        assert len(doc["records"]) == 10

    def test_print_config(self, capsys):
        assert run("run", "--print-config", "--model", "clg") == 0
        cfg = json.loads(capsys.readouterr().out)
        assert cfg["n_iterations"] == 100
        assert cfg["theta_star"] == 0.025
        assert cfg["resample_threshold"] == 0.5
        assert cfg["hyper_prior"]["support"] == [0.025, 2.0]

    @pytest.mark.parametrize("flags, field", [
        (["--n-particles", 1], "n_particles"),
        (["--resample-threshold", 1.5], "resample_threshold"),
        (["--theta-star", -1], "theta_star"),
        (["--snapshot", "sometimes"], "snapshot"),
        (["--alpha1", 2.0], "alpha1"),
    ])
    def test_invalid_config_exit_one(self, toy_files, tmp_path, capsys, flags, field):
        code = run("run", "--dataset", toy_files / "data" / "dataset.json",
                   "--output", tmp_path / "t.json", *flags)
        assert code == 1
        assert field in capsys.readouterr().err
        assert not (tmp_path / "t.json").exists()

    def test_unknown_config_key(self, toy_files, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_partcles": 7}))
        assert run("run", "--config", cfg, "--dataset",
                   toy_files / "data" / "dataset.json") == 1
        assert "n_partcles" in capsys.readouterr().err

    def test_malformed_inputs(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run("run", "--dataset", bad) == 1
        assert run("run", "--dataset", tmp_path / "missing.json") == 1
        bad.write_text(json.dumps({"schema_version": "1", "model": "toy"}))
        assert run("run", "--dataset", bad, "--output", tmp_path / "t.json") == 1

    def test_model_mismatch(self, toy_files, tmp_path):
        assert run("run", "--dataset", toy_files / "data" / "dataset.json", "--model", "clg",
                   "--output", tmp_path / "t.json") == 1

    def test_usage_error_exit_one(self):
        with pytest.raises(SystemExit) as exc:
            run("run", "--n-particles", "many")
        assert exc.value.code == 1

    def test_degenerate_population_exit_two(self, toy_files, tmp_path, monkeypatch, capsys):
        def abort(*args, **kwargs):
            raise DegeneratePopulationError("all weights vanished", iteration=3, alpha=0.1,
                                            log_weight_spread=float("inf"))

        monkeypatch.setattr(cli, "run_sampler", abort)
        code = run("run", "--dataset", toy_files / "data" / "dataset.json",
                   "--output", tmp_path / "t.json")
        assert code == 2
        assert "iteration 3" in capsys.readouterr().err


def read_summary(path):
    return jsonio.load(path / "summary.json")


class TestAnalyze:
    def test_both_modes_share_the_objective(self, toy_files, tmp_path):
        out = tmp_path / "a"
        assert run("analyze", "--trace", toy_files / "trace.json", "--mode", "both",
                   "--out", out) == 0
        s = read_summary(out)
        assert s["eb_theta"] == s["map"]
        assert s["fb_n_samples"] > 100
        with open(out / "ledger.csv") as fh:
            assert len(list(csv.reader(fh))) == 1 + s["n_knots"]
        with open(out / "posterior.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 512
        th = np.array([float(r["theta"]) for r in rows])
        dens = np.array([float(r["density"]) for r in rows])
        np.testing.assert_allclose(np.trapezoid(dens, th), 1.0, atol=2e-3)

    def test_parameter_summaries_without_new_evaluations(self, toy_files, tmp_path):
        out = tmp_path / "a"
        assert run("analyze", "--trace", toy_files / "trace.json", "--dataset",
                   toy_files / "data" / "dataset.json", "--out", out) == 0
        s = read_summary(out)
        assert s["model_evaluations"] == 0
        assert abs(s["fb_params"]["mu_pm"]) < 0.5
        assert abs(s["eb_params"]["mu_pm"]) < 0.5

    def test_clg_summaries(self, clg_files, tmp_path):
        out = tmp_path / "a"
        assert run("analyze", "--trace", clg_files / "trace.json", "--dataset",
                   clg_files / "data" / "dataset.json", "--out", out) == 0
        s = read_summary(out)
        assert s["model_evaluations"] == 0
        fb = s["fb_params"]
        assert fb["d_hat"] == len(fb["voxels"]) == len(fb["positions"])

    def test_prior_swap_is_fast_and_repeatable(self, toy_files, tmp_path):
        prior = tmp_path / "prior.json"
        prior.write_text(json.dumps(HyperPrior.gamma(3.0, 0.1, (0.05, 10.0)).to_json()))
        args = ("analyze", "--trace", toy_files / "trace.json", "--prior", prior, "--mode", "fb")
        assert run(*args, "--out", tmp_path / "warm") == 0
        start = time.perf_counter()
        assert run(*args, "--out", tmp_path / "a") == 0
        elapsed = time.perf_counter() - start
        assert elapsed < 1.0
        assert run(*args, "--out", tmp_path / "b") == 0
        for name in ("summary.json", "ledger.csv", "posterior.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        default = tmp_path / "default"
        run("analyze", "--trace", toy_files / "trace.json", "--mode", "fb", "--out", default)
        assert read_summary(tmp_path / "a")["fb_theta_pm"] != read_summary(default)["fb_theta_pm"]

    def test_missing_snapshots(self, toy_files, tmp_path, capsys):
        trace = tmp_path / "t.json"
        assert run("run", "--dataset", toy_files / "data" / "dataset.json", "--snapshot",
                   "final", "--n-iterations", 60, "--output", trace) == 0
        assert run("analyze", "--trace", trace, "--mode", "fb", "--out", tmp_path / "a") == 1
        assert "missing snapshots" in capsys.readouterr().err
        assert run("analyze", "--trace", trace, "--mode", "eb", "--out", tmp_path / "b") == 0

    def test_support_violation(self, toy_files, tmp_path, capsys):
        prior = tmp_path / "prior.json"
        prior.write_text(json.dumps(HyperPrior.gamma(2.0, 0.2, (0.01, 10.0)).to_json()))
        assert run("analyze", "--trace", toy_files / "trace.json", "--prior", prior,
                   "--out", tmp_path / "a") == 1
        assert "support" in capsys.readouterr().err

    def test_thread_count_leaves_estimates_unchanged(self, toy_files, tmp_path):
        ds = toy_files / "data" / "dataset.json"
        for k in (1, 4):
            run("run", "--dataset", ds, "--seed", 9, "--threads", k,
                "--output", tmp_path / f"t{k}.json")
            run("analyze", "--trace", tmp_path / f"t{k}.json", "--dataset", ds,
                "--out", tmp_path / f"a{k}")
        assert ((tmp_path / "a1" / "summary.json").read_bytes()
                == (tmp_path / "a4" / "summary.json").read_bytes())


class TestStudy:
    def test_small_study(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_replicates": 2, "n_iterations": 40,
                                    "output_dir": str(tmp_path / "out")}))
        assert run("study", "--spec", spec) == 0
        assert "2/2 replicates ok" in capsys.readouterr().out
        for name in ("per_replicate.csv", "summary.csv", "timings.csv", "study.json"):
            assert (tmp_path / "out" / name).exists()

    def test_flags_override_spec(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_replicates": 2}))
        assert run("study", "--spec", spec, "--n-replicates", 5, "--model", "clg",
                   "--print-config") == 0
        cfg = json.loads(capsys.readouterr().out)
        assert cfg["n_replicates"] == 5
        assert cfg["n_iterations"] == 100

    def test_bad_spec(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_replicates": 2, "colour": "red"}))
        assert run("study", "--spec", spec) == 1
        assert "colour" in capsys.readouterr().err
