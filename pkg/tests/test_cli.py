import csv
import json

import numpy as np
import pytest

from smallcausal.cli import main, read_dataset_csv
from smallcausal.data import Dataset
from smallcausal.estimators import estimate_effects, ESTIMAND_RD


def run_cli(*argv):
    return main(list(argv))


def study_counts_csv(path):
    rows = [("y", "a")]
    rows += [(1, 1)] * 14 + [(0, 1)] * 6 + [(1, 0)] * 2 + [(0, 0)] * 14
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


class TestCalibrate:
    def test_target_zero_is_immediate_and_deterministic(self, tmp_path, capsys):
        args = [
            "calibrate", "--scenario", "covid", "--target-effect", "0",
            "--oracle-datasets", "5", "--oracle-size", "1000",
            "--out", str(tmp_path / "a"),
        ]
        assert run_cli(*args) == 0
        first = (tmp_path / "a_calibration.json").read_bytes()
        assert run_cli(*args) == 0
        assert (tmp_path / "a_calibration.json").read_bytes() == first
        report = json.loads(first)
        assert report["beta_trt"] == 0.0

    def test_small_oracle_calibration(self, tmp_path):
        rc = run_cli(
            "calibrate", "--scenario", "covid", "--target-effect", "0.16",
            "--oracle-datasets", "40", "--oracle-size", "4000",
            "--out", str(tmp_path / "c"),
        )
        assert rc == 0
        report = json.loads((tmp_path / "c_calibration.json").read_text())
        assert report["beta_trt"] == pytest.approx(0.868, abs=0.05)
        assert report["oracle_M"] == 40

    def test_unreachable_target_fails_cleanly(self, tmp_path, capsys):
        rc = run_cli(
            "calibrate", "--scenario", "covid", "--target-effect", "0.95",
            "--oracle-datasets", "3", "--oracle-size", "500",
            "--out", str(tmp_path / "x"),
        )
        assert rc == 2
        assert "error" in capsys.readouterr().err


class TestSimulate:
    def test_csv_schema_and_determinism(self, tmp_path):
        common = [
            "simulate", "--scenario", "covid", "--n", "40",
            "--replicates", "6", "--bootstrap", "0", "--beta-trt", "0",
            "--methods", "crude,cov_adjusted", "--seed", "7",
        ]
        rc = run_cli(*common, "--workers", "1", "--out", str(tmp_path / "w1"))
        assert rc == 0
        rc = run_cli(*common, "--workers", "4", "--out", str(tmp_path / "w4"))
        assert rc == 0
        rep1 = (tmp_path / "w1_replicates.csv").read_bytes()
        rep4 = (tmp_path / "w4_replicates.csv").read_bytes()
        assert rep1 == rep4
        sum1 = (tmp_path / "w1_summary.csv").read_bytes()
        sum4 = (tmp_path / "w4_summary.csv").read_bytes()
        assert sum1 == sum4
        with open(tmp_path / "w1_replicates.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6 * 2  # replicates x methods
        assert rows[0]["estimand"] == "rd"

    def test_summary_recomputable_from_replicates(self, tmp_path):
        rc = run_cli(
            "simulate", "--scenario", "covid", "--n", "60",
            "--replicates", "8", "--bootstrap", "0", "--beta-trt", "0.5",
            "--methods", "crude,iptw", "--seed", "3",
            "--workers", "1", "--out", str(tmp_path / "s"),
        )
        assert rc == 0
        meta = json.loads((tmp_path / "s_meta.json").read_text())
        true_effect = meta["true_effect"]
        rc = run_cli(
            "summarize",
            "--replicates-csv", str(tmp_path / "s_replicates.csv"),
            "--true-effect", str(true_effect),
            "--out", str(tmp_path / "re"),
        )
        assert rc == 0
        with open(tmp_path / "s_summary.csv", newline="") as fh:
            original = list(csv.reader(fh))
        with open(tmp_path / "re_summary.csv", newline="") as fh:
            recomputed = list(csv.reader(fh))
        assert original[0] == recomputed[0]
        for row_a, row_b in zip(original[1:], recomputed[1:]):
            assert row_a[0] == row_b[0]
            for cell_a, cell_b in zip(row_a[1:], row_b[1:]):
                if cell_a == "" or cell_b == "":
                    assert cell_a == cell_b
                else:
                    assert float(cell_a) == pytest.approx(float(cell_b), abs=1e-12)

    def test_requires_exactly_one_effect_spec(self, tmp_path, capsys):
        rc = run_cli(
            "simulate", "--scenario", "covid", "--n", "20",
            "--replicates", "2", "--out", str(tmp_path / "e"),
        )
        assert rc == 2

    def test_odds_ratio_estimand_end_to_end(self, tmp_path):
        rc = run_cli(
            "simulate", "--scenario", "covid", "--n", "80",
            "--replicates", "5", "--bootstrap", "0", "--beta-trt", "0.8678",
            "--estimand", "or", "--methods", "crude,match_conditional,gcomp",
            "--seed", "9", "--workers", "1", "--out", str(tmp_path / "or"),
        )
        assert rc == 0
        with open(tmp_path / "or_replicates.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 15
        assert {r["estimand"] for r in rows} == {"or"}
        meta = json.loads((tmp_path / "or_meta.json").read_text())
        # the recorded truth is the log of the marginal odds ratio (~log 2)
        assert meta["true_effect"] == pytest.approx(np.log(2.0), abs=0.02)

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = {
            "scenario": "covid",
            "n": 30,
            "n_replicates": 4,
            "bootstrap_b": 0,
            "beta_trt": 0.0,
            "methods": ["crude"],
            "master_seed": 5,
            "workers": 1,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        rc = run_cli(
            "simulate", "--config", str(cfg_path),
            "--replicates", "3", "--out", str(tmp_path / "c"),
        )
        assert rc == 0
        with open(tmp_path / "c_replicates.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3  # flag overrides the file's 4


class TestAnalyze:
    def test_study_counts_crude(self, tmp_path, capsys):
        data_path = study_counts_csv(tmp_path / "d.csv")
        rc = run_cli(
            "analyze", "--data", str(data_path), "--methods", "crude",
            "--bootstrap", "0", "--out", str(tmp_path / "a"),
        )
        assert rc == 0
        report = json.loads((tmp_path / "a_estimates.json").read_text())
        assert report["estimates"]["crude"]["point"] == pytest.approx(0.575)

    def test_ps_methods_without_covariates_refused(self, tmp_path, capsys):
        data_path = study_counts_csv(tmp_path / "d.csv")
        rc = run_cli(
            "analyze", "--data", str(data_path), "--methods", "crude,iptw",
            "--out", str(tmp_path / "b"),
        )
        assert rc == 2
        assert "covariate" in capsys.readouterr().err

    def test_round_trip_equals_library(self, tmp_path):
        rng = np.random.default_rng(10)
        n = 36
        x1 = rng.normal(size=n).round(3)
        x2 = rng.integers(0, 3, n)
        a = (rng.random(n) < 0.5).astype(int)
        y = (rng.random(n) < 0.4 + 0.2 * a).astype(int)
        path = tmp_path / "d.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "a", "x1", "x2"])
            for i in range(n):
                w.writerow([y[i], a[i], x1[i], x2[i]])
        rc = run_cli(
            "analyze", "--data", str(path), "--categorical", "x2",
            "--methods", "crude,cov_adjusted,ps_covariate,iptw",
            "--bootstrap", "0", "--seed", "2", "--out", str(tmp_path / "r"),
        )
        assert rc == 0
        report = json.loads((tmp_path / "r_estimates.json").read_text())

        data = read_dataset_csv(str(path), ("x2",))
        direct = estimate_effects(
            data, ("crude", "cov_adjusted", "ps_covariate", "iptw"), ESTIMAND_RD
        )
        for m, est in direct.items():
            assert report["estimates"][m]["point"] == pytest.approx(
                est.point, abs=1e-12
            )

    def test_dummy_expansion_and_kinds(self, tmp_path):
        path = tmp_path / "d.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "a", "grp", "age"])
            rows = [(0, 0, 0, 31.5), (1, 1, 1, 44.0), (1, 0, 2, 52.0), (0, 1, 1, 40.0)]
            w.writerows(rows * 3)
        data = read_dataset_csv(str(path), ("grp",))
        assert data.covariate_kinds == (
            "categorical-dummy",
            "categorical-dummy",
            "continuous",
        )
        assert data.covariates.shape == (12, 3)

    def test_bad_inputs_rejected(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("y,a\n2,0\n1,1\n")
        assert run_cli("analyze", "--data", str(path), "--out", str(tmp_path / "o")) == 2
        path.write_text("y\n1\n")
        assert run_cli("analyze", "--data", str(path), "--out", str(tmp_path / "o")) == 2
        path.write_text("y,a\n1,zero\n")
        assert run_cli("analyze", "--data", str(path), "--out", str(tmp_path / "o")) == 2
