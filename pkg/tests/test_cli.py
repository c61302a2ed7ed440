"""End-to-end tests for the command line interface.

Most tests drive main() in process for speed; one subprocess test checks
the installed console script. A session fixture builds a small shared
workspace (generated data, fitted models, one faulty recording) that the
later tests reuse.
"""

import json
import os
import subprocess

import numpy as np
import pytest

import switchdiag as sd
from switchdiag.cli import (ComplexityReport, ExperimentConfig,
                            ValidationStats, main)
from switchdiag.diagnose import report_from_dict
from switchdiag.faults import THRESHOLD_FLOORS, ThresholdSet
from switchdiag.surrogates import PolyGMSD, check_dissipative, load_model


def run_cli(*argv):
    return main([str(a) for a in argv])


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def cli_env(tmp_path_factory):
    """Shared workspace: generated datasets, poly/posmap models, and a
    LeftBolt recording on the extended reference."""
    root = tmp_path_factory.mktemp("cli_env")
    out = root / "work"
    rc = run_cli("gen-data", "--out", out, "--seed", "3", "--n-train", "3",
                 "--n-val", "3", "--duration", "20", "--dt", "0.01",
                 "--omega-max", "6.0", "--quiet")
    assert rc == 0
    rc = run_cli("train", "--out", out, "--seed", "0", "--rep", "poly",
                 "--data", out / "data" / "train", "--restarts", "2",
                 "--epochs", "400", "--quiet")
    assert rc == 0
    rc = run_cli("train", "--out", out, "--seed", "0", "--rep", "posmap",
                 "--data", out / "data" / "train", "--restarts", "1",
                 "--epochs", "150", "--quiet")
    assert rc == 0
    scenario = root / "leftbolt.json"
    scenario.write_text(json.dumps(
        {"schema_version": "1", "mode": "LeftBolt",
         "theta": {"delta_gap_left": 0.05}}))
    rc = run_cli("simulate", "--out", out, "--reference", "diagnosis",
                 "--scenario", scenario, "--name", "observed", "--quiet")
    assert rc == 0
    return {"out": out, "scenario": scenario,
            "train": out / "data" / "train",
            "val": out / "data" / "validation",
            "observed": out / "data" / "observed",
            "models": out / "models"}


# ---------------------------------------------------------------------------
# simulate


class TestSimulate:
    def test_default_cycle_shape(self, tmp_path, capsys):
        rc = run_cli("simulate", "--out", tmp_path)
        assert rc == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["status"] == "ok"
        assert summary["n_samples"] == 141
        csv = tmp_path / "data" / "simulate" / "series_000.csv"
        lines = csv.read_text().strip().split("\n")
        assert len(lines) == 142  # header + 141 samples
        ts = sd.timeseries_from_csv(str(csv))
        assert ts.dt == pytest.approx(0.1)
        assert ts.times[-1] == pytest.approx(14.0)

    def test_meta_carries_config_hash_and_reference(self, tmp_path):
        assert run_cli("simulate", "--out", tmp_path, "--quiet") == 0
        meta = read_json(tmp_path / "data" / "simulate" / "meta.json")
        assert meta["command"] == "simulate"
        assert len(meta["config_hash"]) == 16
        ref = meta["reference"]
        assert ref["horizon"] == pytest.approx(14.0)
        assert len(ref["knots_t"]) == len(ref["knots_w"])
        assert meta["scenario"] is None

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("simulate", "--out", a, "--quiet") == 0
        assert run_cli("simulate", "--out", b, "--quiet") == 0
        for name in ("meta.json", "series_000.csv"):
            fa = (a / "data" / "simulate" / name).read_bytes()
            fb = (b / "data" / "simulate" / name).read_bytes()
            assert fa == fb

    def test_scenario_changes_hash_and_data(self, tmp_path, cli_env):
        assert run_cli("simulate", "--out", tmp_path, "--quiet") == 0
        assert run_cli("simulate", "--out", tmp_path, "--name", "faulty",
                       "--scenario", cli_env["scenario"], "--quiet") == 0
        m0 = read_json(tmp_path / "data" / "simulate" / "meta.json")
        m1 = read_json(tmp_path / "data" / "faulty" / "meta.json")
        assert m0["config_hash"] != m1["config_hash"]
        assert m1["scenario"]["mode"] == "LeftBolt"

    def test_quiet_suppresses_stdout(self, tmp_path, capsys):
        assert run_cli("simulate", "--out", tmp_path, "--quiet") == 0
        assert capsys.readouterr().out == ""


# ---------------------------------------------------------------------------
# gen-data


class TestGenData:
    def test_layout_and_meta(self, cli_env):
        for kind, n in (("train", 3), ("validation", 3)):
            d = cli_env["out"] / "data" / kind
            meta = read_json(d / "meta.json")
            assert meta["kind"] == kind
            assert meta["n_series"] == n
            assert len(meta["series_seeds"]) == n
            assert len(set(meta["series_seeds"])) == n
            assert len(meta["references"]) == n
            for k in range(n):
                assert (d / f"series_{k:03d}.csv").exists()

    def test_series_differ_and_start_at_rest(self, cli_env):
        d = cli_env["train"]
        ts0 = sd.timeseries_from_csv(str(d / "series_000.csv"))
        ts1 = sd.timeseries_from_csv(str(d / "series_001.csv"))
        assert not np.allclose(ts0["x"], ts1["x"])
        for ts in (ts0, ts1):
            assert abs(ts["v"][0]) < 1e-12
            assert abs(ts["omega"][0]) < 1e-12

    def test_zero_duration_rejected(self, tmp_path, capsys):
        rc = run_cli("gen-data", "--out", tmp_path, "--duration", "0")
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["status"] == "error"
        assert err["error"]["exit_code"] == 2
        assert "duration" in err["error"]["message"]

    def test_bad_counts_rejected(self, tmp_path):
        assert run_cli("gen-data", "--out", tmp_path, "--n-train", "0",
                       "--duration", "5") == 2
        assert run_cli("gen-data", "--out", tmp_path, "--n-val", "-1",
                       "--duration", "5") == 2


# ---------------------------------------------------------------------------
# train


class TestTrain:
    def test_poly_model_and_report_written(self, cli_env):
        model_path = cli_env["models"] / "poly.json"
        model = load_model(str(model_path))
        assert isinstance(model, PolyGMSD)
        assert check_dissipative(model)["ok"]
        # aggregate chain constants recovered from the recording
        assert 150 < model.m < 260
        assert 3500 < model.c[0] < 6000
        report = read_json(cli_env["models"] / "poly_report.json")
        assert report["rep"] == "poly"
        assert report["fit"]["train_mse"] >= 0.0
        assert len(report["meta"]["config_hash"]) == 16

    def test_posmap_model_written(self, cli_env):
        model = load_model(str(cli_env["models"] / "posmap.json"))
        assert check_dissipative(model)["ok"]

    def test_causal_train_path(self, cli_env, tmp_path):
        rc = run_cli("train", "--out", tmp_path, "--rep", "causal",
                     "--data", cli_env["train"], "--epochs", "40", "--quiet")
        assert rc == 0
        report = read_json(tmp_path / "models" / "causal_report.json")
        assert report["fit"]["test_mse"] > 0.0
        net = load_model(str(tmp_path / "models" / "causal.json"))
        assert net.hidden == 50

    def test_rerun_is_byte_identical(self, cli_env, tmp_path):
        rc = run_cli("train", "--out", tmp_path, "--seed", "0", "--rep",
                     "poly", "--data", cli_env["train"], "--restarts", "2",
                     "--epochs", "400", "--quiet")
        assert rc == 0
        a = (cli_env["models"] / "poly.json").read_bytes()
        b = (tmp_path / "models" / "poly.json").read_bytes()
        assert a == b

    def test_missing_data_dir_rejected(self, tmp_path):
        assert run_cli("train", "--out", tmp_path, "--rep", "poly",
                       "--data", tmp_path / "nope") == 2

    def test_bad_rep_rejected(self, tmp_path, cli_env):
        assert run_cli("train", "--out", tmp_path, "--rep", "fourier",
                       "--data", cli_env["train"]) == 2

    def test_series_index_out_of_range(self, tmp_path, cli_env):
        assert run_cli("train", "--out", tmp_path, "--rep", "poly",
                       "--data", cli_env["train"], "--series", "7") == 2


# ---------------------------------------------------------------------------
# validate


class TestValidate:
    def test_poly_stats_ordered_and_csv_written(self, cli_env):
        out = cli_env["out"]
        rc = run_cli("validate", "--out", out, "--data", cli_env["val"],
                     "--rep", "poly", "--quiet")
        assert rc == 0
        d = read_json(out / "reports" / "validation_poly.json")
        stats = ValidationStats.from_dict(d["stats"])  # re-checks invariants
        assert stats.rep == "poly"
        assert stats.n_series == 3
        for name, s in stats.per_channel.items():
            assert s["min"] <= s["q1"] <= s["median"] <= s["q3"] <= s["max"]
        csv = (out / "reports" / "validation_poly.csv").read_text().strip()
        lines = csv.split("\n")
        assert lines[0] == "series,channel,mse"
        assert len(lines) == 1 + 3 * 7  # series x channels

    def test_full_plant_matches_itself(self, cli_env):
        out = cli_env["out"]
        rc = run_cli("validate", "--out", out, "--data", cli_env["val"],
                     "--rep", "full", "--quiet")
        assert rc == 0
        d = read_json(out / "reports" / "validation_full.json")
        for name, s in d["stats"]["per_channel"].items():
            assert s["max"] == 0.0, f"channel {name} replay differs"

    def test_force_error_dominates_position_error(self, cli_env):
        d = read_json(cli_env["out"] / "reports" / "validation_poly.json")
        per = d["stats"]["per_channel"]
        assert per["F"]["median"] > per["x"]["median"]

    def test_position_error_small(self, cli_env):
        ds = sd.dataset_from_dir(str(cli_env["val"]))
        var_x = np.mean([np.var(s["x"]) for s in ds.series])
        d = read_json(cli_env["out"] / "reports" / "validation_poly.json")
        assert d["stats"]["per_channel"]["x"]["median"] < 0.01 * var_x

    def test_dataset_without_references_rejected(self, cli_env, tmp_path):
        rc = run_cli("validate", "--out", tmp_path, "--data",
                     cli_env["observed"], "--rep", "full")
        assert rc == 2


# ---------------------------------------------------------------------------
# diagnose


class TestDiagnose:
    def test_round_trip_left_bolt(self, cli_env, tmp_path, capsys):
        rc = run_cli("diagnose", "--out", tmp_path, "--data",
                     cli_env["observed"], "--model",
                     cli_env["models"] / "poly.json", "--rep", "poly",
                     "--de-pop-mult", "6", "--de-max-gen", "12",
                     "--seed", "1")
        assert rc == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["verdict"]["kind"] == "fault"
        assert summary["verdict"]["modes"] == ["LeftBolt"]
        d = read_json(tmp_path / "reports" / "diagnosis.json")
        report = report_from_dict(d["report"])
        assert set(report.rows) == {"LeftBolt", "RightBolt",
                                    "MissingBearing", "Obstacle"}
        est = report.rows["LeftBolt"].theta.as_dict()
        assert est["delta_gap_left"] == pytest.approx(0.05, rel=0.25)

    def test_single_mode_method(self, cli_env, tmp_path):
        rc = run_cli("diagnose", "--out", tmp_path, "--data",
                     cli_env["observed"], "--model",
                     cli_env["models"] / "poly.json", "--rep", "poly",
                     "--method", "LeftBolt", "--de-pop-mult", "6",
                     "--de-max-gen", "8", "--seed", "1", "--quiet")
        assert rc == 0
        d = read_json(tmp_path / "reports" / "diagnosis.json")
        assert list(d["report"]["rows"]) == ["LeftBolt"]
        assert d["report"]["verdict"]["kind"] in ("fault", "nominal")

    def test_unknown_method_rejected(self, cli_env, tmp_path):
        rc = run_cli("diagnose", "--out", tmp_path, "--data",
                     cli_env["observed"], "--method", "Gremlins")
        assert rc == 2

    def test_dataset_without_reference_rejected(self, cli_env, tmp_path):
        rc = run_cli("diagnose", "--out", tmp_path, "--data",
                     cli_env["train"])
        assert rc == 2


# ---------------------------------------------------------------------------
# bench


class TestBench:
    def test_report_structure_and_speedups(self, cli_env, tmp_path, capsys):
        rc = run_cli("bench", "--out", tmp_path, "--models",
                     cli_env["models"], "--repeats", "1",
                     "--nprobe", "5,10")
        assert rc == 0
        capsys.readouterr()
        d = read_json(tmp_path / "bench" / "complexity.json")
        report = ComplexityReport.from_dict(d["report"])  # re-checks
        assert set(report.rows) == {"full", "poly", "posmap"}
        full = report.rows["full"]
        assert full["states"] == 44
        assert full["speedup_vs_full"] == 1.0
        for rep in ("poly", "posmap"):
            row = report.rows[rep]
            assert row["states"] * 10 < full["states"]
            assert row["speedup_vs_full"] > 5.0
        assert [r["n_seg"] for r in d["nprobe"]] == [5, 10]
        assert (tmp_path / "bench" / "cycles.csv").exists()
        assert (tmp_path / "bench" / "nprobe.csv").exists()

    def test_no_models_rejected(self, tmp_path):
        os.makedirs(tmp_path / "empty")
        rc = run_cli("bench", "--out", tmp_path, "--models",
                     tmp_path / "empty", "--repeats", "1", "--nprobe", "5")
        assert rc == 2


# ---------------------------------------------------------------------------
# thresholds


class TestThresholds:
    def test_calibration_artifact(self, cli_env, tmp_path):
        rc = run_cli("thresholds", "--out", tmp_path, "--model",
                     cli_env["models"] / "poly.json", "--rep", "poly",
                     "--trials", "10", "--noise-pct", "1.0",
                     "--de-pop-mult", "5", "--de-max-gen", "6",
                     "--seed", "2", "--quiet")
        assert rc == 0
        d = read_json(tmp_path / "reports" / "thresholds.json")
        ts = ThresholdSet.from_dict(d["thresholds"])
        for name, floor in THRESHOLD_FLOORS.items():
            assert ts[name] >= floor
        assert set(d["noise_sigma"]) == {"i", "theta", "omega"}
        assert all(v > 0 for v in d["noise_sigma"].values())

    def test_model_without_rep_rejected(self, cli_env, tmp_path):
        rc = run_cli("thresholds", "--out", tmp_path, "--model",
                     cli_env["models"] / "poly.json")
        assert rc == 2


# ---------------------------------------------------------------------------
# error handling and plumbing


class TestErrors:
    def test_no_subcommand(self):
        assert main([]) == 2

    def test_unknown_subcommand(self):
        assert main(["transmogrify"]) == 2

    def test_malformed_scenario_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not valid json")
        rc = run_cli("simulate", "--out", tmp_path, "--scenario", bad)
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"]["exit_code"] == 2
        assert err["error"]["type"] == "JSONDecodeError"

    def test_scenario_with_wrong_mode(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"mode": "Poltergeist", "theta": {}}))
        assert run_cli("simulate", "--out", tmp_path, "--scenario", bad) == 2

    def test_missing_plant_file(self, tmp_path):
        assert run_cli("simulate", "--out", tmp_path, "--plant",
                       tmp_path / "ghost.json") == 2

    def test_malformed_plant_file(self, tmp_path):
        bad = tmp_path / "plant.json"
        bad.write_text(json.dumps({"no_such_field": 1.0}))
        assert run_cli("simulate", "--out", tmp_path, "--plant", bad) == 2

    def test_plant_file_round_trip(self, tmp_path):
        p = sd.PlantParams()
        pfile = tmp_path / "plant.json"
        pfile.write_text(json.dumps(p.to_dict()))
        assert run_cli("simulate", "--out", tmp_path, "--plant", pfile,
                       "--quiet") == 0
        # same physics as the built-in defaults
        builtin = tmp_path / "b"
        assert run_cli("simulate", "--out", builtin, "--quiet") == 0
        a = tmp_path / "data" / "simulate" / "series_000.csv"
        b = builtin / "data" / "simulate" / "series_000.csv"
        assert a.read_bytes() == b.read_bytes()


class TestExperimentConfig:
    def test_minimal_valid(self, tmp_path):
        cfg = ExperimentConfig(command="simulate", out=str(tmp_path))
        assert cfg.seeds == (0,)
        assert len(cfg.hash) == 16

    def test_out_excluded_from_hash(self):
        a = ExperimentConfig(command="simulate", out="one")
        b = ExperimentConfig(command="simulate", out="two")
        assert a.hash == b.hash

    def test_seed_changes_hash(self):
        a = ExperimentConfig(command="simulate", out="o", seeds=(0,))
        b = ExperimentConfig(command="simulate", out="o", seeds=(1,))
        assert a.hash != b.hash

    def test_empty_seeds_rejected(self):
        with pytest.raises(sd.ParameterError):
            ExperimentConfig(command="simulate", out="o", seeds=())

    def test_missing_referenced_file_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExperimentConfig(command="simulate", out="o",
                             plant=str(tmp_path / "ghost.json"))

    def test_bad_rep_rejected(self):
        with pytest.raises(sd.ParameterError):
            ExperimentConfig(command="train", out="o", rep="fourier")

    def test_negative_noise_rejected(self):
        with pytest.raises(sd.ParameterError):
            ExperimentConfig(command="thresholds", out="o", noise_pct=-1.0)

    def test_meta_carries_hash(self):
        cfg = ExperimentConfig(command="bench", out="o")
        meta = cfg.meta(extra_field=3)
        assert meta["config_hash"] == cfg.hash
        assert meta["extra_field"] == 3


class TestValidationStats:
    def test_from_mses_quartiles(self):
        stats = ValidationStats.from_mses(
            "poly", {"x": [4.0, 1.0, 3.0, 2.0, 5.0]})
        s = stats.per_channel["x"]
        assert s["min"] == 1.0
        assert s["q1"] == 2.0
        assert s["median"] == 3.0
        assert s["q3"] == 4.0
        assert s["max"] == 5.0
        assert s["mean"] == 3.0

    def test_round_trip(self):
        stats = ValidationStats.from_mses("full", {"x": [0.0, 0.0]})
        again = ValidationStats.from_dict(stats.to_dict())
        assert again.per_channel == stats.per_channel

    def test_disordered_quartiles_rejected(self):
        bad = {"min": 1.0, "q1": 0.5, "median": 2.0, "q3": 3.0,
               "max": 4.0, "mean": 2.0}
        with pytest.raises(sd.ParameterError):
            ValidationStats(rep="poly", n_series=4, per_channel={"x": bad})

    def test_negative_mse_rejected(self):
        with pytest.raises(sd.ParameterError):
            ValidationStats.from_mses("poly", {"x": [-1.0, 2.0]})

    def test_ragged_channels_rejected(self):
        with pytest.raises(sd.ParameterError):
            ValidationStats.from_mses("poly", {"x": [1.0], "v": [1.0, 2.0]})


class TestComplexityReport:
    def _sizes(self):
        return {"full": (44, 30, 51), "poly": (2, 8, 7)}

    def test_from_timings_speedup(self):
        rep = ComplexityReport.from_timings(
            self._sizes(), {"full": 10.0, "poly": 0.5}, 14.0, 5)
        assert rep.rows["poly"]["speedup_vs_full"] == 20.0
        assert rep.rows["full"]["speedup_vs_full"] == 1.0

    def test_round_trip(self):
        rep = ComplexityReport.from_timings(
            self._sizes(), {"full": 10.0, "poly": 0.5}, 14.0, 5)
        again = ComplexityReport.from_dict(rep.to_dict())
        assert again.rows == rep.rows

    def test_inconsistent_speedup_rejected(self):
        rows = {"full": {"states": 44, "parameters": 30, "equations": 51,
                         "wall_clock_per_cycle_s": 10.0,
                         "speedup_vs_full": 1.0},
                "poly": {"states": 2, "parameters": 8, "equations": 7,
                         "wall_clock_per_cycle_s": 0.5,
                         "speedup_vs_full": 7.0}}
        with pytest.raises(sd.ParameterError):
            ComplexityReport(rows=rows, horizon=14.0, repeats=5)

    def test_missing_full_rejected(self):
        with pytest.raises(sd.ParameterError):
            ComplexityReport(rows={"poly": {}}, horizon=14.0, repeats=5)


def test_console_script_installed(tmp_path):
    proc = subprocess.run(
        ["switchdiag", "simulate", "--out", str(tmp_path), "--quiet"],
        capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0
    assert proc.stdout == ""
    assert (tmp_path / "data" / "simulate" / "series_000.csv").exists()
