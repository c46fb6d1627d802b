import csv
import hashlib
import json
import os

import numpy as np
import pytest

import eigml.cli as cli
from eigml.config import RunConfig, build_problem
from eigml.errors import ConfigError


def _write(tmp_path, name, payload):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


def _lin_config(tmp_path, outdir, **over):
    payload = {
        "model": {"kind": "linear_gaussian", "A": [[1.0]]},
        "estimator": "mldlmc",
        "tol_list": [0.1],
        "repetitions": 1,
        "seed": 7,
        "output_dir": str(outdir),
    }
    payload.update(over)
    return _write(tmp_path, "cfg.json", payload)


def _digest(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestValidate:
    def test_ok(self, tmp_path, capsys):
        cfg = _lin_config(tmp_path, tmp_path / "out")
        assert cli.main(["validate", cfg]) == 0

    def test_missing_model_names_field(self, tmp_path, capsys):
        p = _write(tmp_path, "bad.json", {"estimator": "mldlmc", "tol_list": [0.1], "seed": 1})
        assert cli.main(["validate", p]) == 2
        assert "model" in capsys.readouterr().err

    def test_bad_estimator(self, tmp_path, capsys):
        p = _write(
            tmp_path,
            "bad.json",
            {"model": {"kind": "toy"}, "estimator": "nope", "tol_list": [0.1], "seed": 1},
        )
        assert cli.main(["validate", p]) == 2
        assert "estimator" in capsys.readouterr().err

    def test_bad_tols(self, tmp_path):
        with pytest.raises(ConfigError) as exc:
            RunConfig.from_dict(
                {"model": {"kind": "toy"}, "estimator": "mldlmc", "tol_list": [0.1, -1], "seed": 1}
            )
        assert exc.value.field == "tol_list"

    def test_unparseable_json(self, tmp_path, capsys):
        p = tmp_path / "x.json"
        p.write_text("{nope")
        assert cli.main(["validate", str(p)]) == 2


class TestRun:
    def test_linear_minimal(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = _lin_config(tmp_path, out)
        assert cli.main(["run", cfg]) == 0
        data = json.load(open(out / "results.json"))
        assert data["schema_version"] == 1
        rec = data["results"][0]
        assert abs(rec["value"] - rec["reference"]) <= 0.1
        assert rec["abs_error"] <= 0.1
        assert "wall_time" not in rec
        meta = json.load(open(out / "run_meta.json"))
        assert meta["wall_times"]

    def test_byte_identical_rerun(self, tmp_path):
        out = tmp_path / "out"
        cfg = _lin_config(tmp_path, out)
        cli.main(["run", cfg])
        d1 = _digest(out / "results.json")
        cli.main(["run", cfg])
        assert _digest(out / "results.json") == d1

    def test_csv_row_counts(self, tmp_path):
        out = tmp_path / "out"
        cfg = _lin_config(tmp_path, out, tol_list=[0.2, 0.1], repetitions=3)
        assert cli.main(["run", cfg]) == 0
        for name in ("error_vs_tol.csv", "work_vs_tol.csv", "L_vs_tol.csv"):
            rows = list(csv.reader(open(out / name)))
            assert len(rows) - 1 == 6, name
        rows = list(csv.reader(open(out / "level_decay.csv")))
        recs = json.load(open(out / "results.json"))["results"]
        assert len(rows) - 1 == sum(len(r["per_level"]) for r in recs)

    def test_worker_pool_matches_serial(self, tmp_path, monkeypatch):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg1 = _lin_config(tmp_path, out1, tol_list=[0.2, 0.1], repetitions=2)
        cli.main(["run", cfg1])
        cfg2 = _lin_config(tmp_path, out2, tol_list=[0.2, 0.1], repetitions=2)
        monkeypatch.setenv("EIGML_WORKERS", "2")
        cli.main(["run", cfg2])
        assert _digest(out1 / "results.json") == _digest(out2 / "results.json")

    def test_resource_limit_exit_code(self, tmp_path):
        out = tmp_path / "out"
        cfg = _write(
            tmp_path,
            "cfg.json",
            {
                "model": {"kind": "toy"},
                "estimator": "mldlmc",
                "tol_list": [0.002],
                "repetitions": 1,
                "seed": 3,
                "max_level": 2,
                "output_dir": str(out),
                "estimator_options": {"pilot_levels": 2, "pilot_samples": 20},
            },
        )
        assert cli.main(["run", cfg]) == 3

    def test_mldlsc_run(self, tmp_path):
        out = tmp_path / "out"
        cfg = _lin_config(tmp_path, out, estimator="mldlsc", tol_list=[0.001])
        assert cli.main(["run", cfg]) == 0
        rec = json.load(open(out / "results.json"))["results"][0]
        assert rec["abs_error"] < 1e-3

    def test_dlmc_run(self, tmp_path):
        out = tmp_path / "out"
        cfg = _lin_config(tmp_path, out, estimator="dlmc", tol_list=[0.2])
        assert cli.main(["run", cfg]) == 0

    def test_dlmcis_run(self, tmp_path):
        out = tmp_path / "out"
        cfg = _lin_config(tmp_path, out, estimator="dlmcis", tol_list=[0.1])
        assert cli.main(["run", cfg]) == 0
        rec = json.load(open(out / "results.json"))["results"][0]
        assert rec["abs_error"] <= 0.1

    def test_eit_level_decay_table(self, tmp_path):
        out = tmp_path / "out"
        cfg = _write(
            tmp_path,
            "cfg.json",
            {
                "model": {"kind": "eit"},
                "estimator": "mldlmc",
                "tol_list": [0.5, 0.25],
                "repetitions": 1,
                "seed": 21,
                "max_level": 4,
                "output_dir": str(out),
                "estimator_options": {"pilot_levels": 2, "pilot_samples": 6},
            },
        )
        assert cli.main(["run", cfg]) == 0
        recs = json.load(open(out / "results.json"))["results"]
        fine = recs[1]  # tol = 0.25
        stats = {r["level"]: r for r in fine["per_level"] if r["N"] > 0}
        levels = sorted(stats)
        assert levels[0] == 0 and len(levels) >= 2
        # telescoped means and variances decay across levels
        absE = [abs(stats[l]["E"]) for l in levels]
        Vs = [stats[l]["V"] for l in levels]
        assert all(a > b for a, b in zip(absE, absE[1:]))
        assert all(a > b for a, b in zip(Vs, Vs[1:]))
        rows = list(csv.reader(open(out / "level_decay.csv")))
        assert len(rows) - 1 == sum(len(r["per_level"]) for r in recs)


class TestRates:
    def test_toy_rates(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = _write(
            tmp_path,
            "cfg.json",
            {
                "model": {"kind": "toy"},
                "estimator": "mldlmc",
                "tol_list": [0.1],
                "seed": 11,
                "output_dir": str(out),
                "estimator_options": {"pilot_levels": 4, "pilot_samples": 30},
            },
        )
        assert cli.main(["rates", cfg]) == 0
        rates = json.load(open(out / "rates.json"))
        assert abs(rates["eta_w"] - 1.5) < 0.5
        assert rates["C2"] > 0
        assert rates["gamma_configured"] == 1.0
        assert len(rates["V"]) == 5


class TestBuildProblem:
    def test_toy(self):
        cfg = RunConfig.from_dict(
            {"model": {"kind": "toy"}, "estimator": "mldlmc", "tol_list": [0.1], "seed": 0}
        )
        model, prior, noise, ref = build_problem(cfg)
        assert ref is None and prior.dim == 1

    def test_linear_reference(self):
        cfg = RunConfig.from_dict(
            {
                "model": {"kind": "linear_gaussian", "A": [[2.0]], "noise_var": 0.5},
                "estimator": "dlmcis",
                "tol_list": [0.1],
                "seed": 0,
            }
        )
        _, _, _, ref = build_problem(cfg)
        assert abs(ref - 0.5 * np.log(1 + 4.0 / 0.5)) < 1e-12

    def test_linear_with_level_bias(self):
        cfg = RunConfig.from_dict(
            {
                "model": {
                    "kind": "linear_gaussian",
                    "A": [[1.0]],
                    "level_bias": {"eta_w": 1.5, "Ww": [[0.3]]},
                },
                "estimator": "mldlmc",
                "tol_list": [0.1],
                "seed": 0,
            }
        )
        model, _, _, ref = build_problem(cfg)
        assert ref is None
        assert model.linear_map(0)[0][0, 0] == 1.3

    def test_eit_problem(self):
        cfg = RunConfig.from_dict(
            {
                "model": {"kind": "eit", "max_level": 3},
                "estimator": "mldlmc",
                "tol_list": [0.5],
                "seed": 0,
            }
        )
        model, prior, noise, ref = build_problem(cfg)
        assert model.dim_output == 9 and prior.dim == 4
        assert model.max_level == 3

    def test_bad_matrix_field(self):
        # the validation layer accepts the shell; the builder names A
        cfg = RunConfig.from_dict(
            {"model": {"kind": "linear_gaussian"}, "estimator": "dlmc", "tol_list": [0.1], "seed": 0}
        )
        with pytest.raises(ConfigError) as exc:
            build_problem(cfg)
        assert exc.value.field == "model.A"
