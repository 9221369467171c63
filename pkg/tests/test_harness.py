"""
Harness tests
=============

End-to-end runs of the command harness: registry, the four commands, run
directories and exit codes.
"""
import json
import logging

import numpy as np
import pandas as pd
import pytest

from harness.config import read_environment
from harness.run_harness import main
from harness.tool_registry import ToolRegistry
from homeofit.errors import InternalConsistencyError
from homeofit.targets import f1, make_dataset, save_dataset, uniform_grid
from tools.adapters import fit_adapter
from tools.base_tool import allocate_run_dir

SMALL_NET = ["--steps", "2", "--n-blocks", "2", "--width", "4"]


def run(capsys, *argv):
    """Run the harness and return (exit code, parsed envelope)"""
    code = main(list(argv))
    envelope = json.loads(capsys.readouterr().out)
    return code, envelope


def read_report(run_dir):
    with open(f"{run_dir}/report.json", encoding="utf-8") as handle:
        return json.load(handle)


# =============================================================================
# Registry and info
# =============================================================================


class TestRegistry:
    def test_known_tools(self):
        assert ToolRegistry().list_tool_names() == ["construct", "fit", "baseline", "report"]

    def test_schema_info(self):
        info = ToolRegistry().get_tool("fit").get_schema_info()
        assert info["required_params"] == ["degree"]
        assert "target" in info["optional_params"]

    def test_info_command(self, capsys):
        assert main(["info"]) == 0
        out = capsys.readouterr().out
        assert "🔑 Required parameters: degree" in out
        assert "construct" in out


# =============================================================================
# construct
# =============================================================================


class TestConstruct:
    def test_f2(self, capsys, tmp_path):
        code, envelope = run(capsys, "construct", "--target", "f2", "--out", str(tmp_path / "f2"))
        assert code == 0
        report = envelope["result"]["report"]
        assert report["degree"] == 3
        assert report["model"] == "exact"
        assert report["extra"]["composition_residual"] <= 1e-8 * 5.0
        assert report["extra"]["degree_floor"]["degree_floor_respected"]

        run_dir = tmp_path / "f2"
        for name in ("config.json", "report.json", "chandler.json", "h_samples.csv", "run.log"):
            assert (run_dir / name).exists()
        samples = pd.read_csv(run_dir / "h_samples.csv")
        assert list(samples.columns) == ["x", "h", "f", "p_of_h"]
        assert np.all(np.diff(samples["h"]) > 0.0)

    def test_f1_closed_form(self, capsys, tmp_path):
        code, envelope = run(capsys, "construct", "--target", "f1", "--out", str(tmp_path / "f1"))
        assert code == 0
        report = envelope["result"]["report"]
        assert report["degree"] == 2
        assert report["extra"]["closed_form"]["sup_deviation"] <= 1e-6

    def test_constant_dataset(self, capsys, tmp_path):
        path = tmp_path / "constant.csv"
        path.write_text("x0,value\n0,1\n0.5,1\n1,1\n")
        code, envelope = run(capsys, "construct", "--dataset", str(path), "--out", str(tmp_path / "c"))
        assert code == 2
        assert envelope["success"] is False
        assert envelope["error_type"] == "constant-function"
        assert read_report(envelope["run_dir"])["error_type"] == "constant-function"

    def test_two_dimensional_target_rejected(self, capsys, tmp_path):
        code, envelope = run(capsys, "construct", "--target", "f4", "--out", str(tmp_path / "f4"))
        assert code == 2
        assert envelope["error_type"] == "invalid-parameter"

    def test_target_and_dataset_are_exclusive(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["construct", "--target", "f1", "--dataset", str(tmp_path / "x.csv")])


# =============================================================================
# fit
# =============================================================================


class TestFit:
    def test_f4_basis_size(self, capsys, tmp_path):
        code, envelope = run(
            capsys, "fit", "--target", "f4", "--degree", "2", *SMALL_NET, "--out", str(tmp_path / "f4")
        )
        assert code == 0
        report = envelope["result"]["report"]
        assert report["n_basis"] == 6
        assert report["dim"] == 2
        for name in ("checkpoint.json", "residuals.csv", "config.json"):
            assert (tmp_path / "f4" / name).exists()

    def test_pes_basis_size(self, capsys, tmp_path):
        code, envelope = run(
            capsys,
            "fit",
            "--target",
            "pes",
            "--degree",
            "4",
            *SMALL_NET,
            "--train-points",
            "8,8,8",
            "--val-points",
            "6,6,6",
            "--out",
            str(tmp_path / "pes"),
        )
        assert code == 0
        assert envelope["result"]["report"]["n_basis"] == 35

    def test_f1_records_h_and_floor(self, capsys, tmp_path):
        code, envelope = run(
            capsys, "fit", "--target", "f1", "--degree", "1", *SMALL_NET, "--out", str(tmp_path / "f1")
        )
        assert code == 0
        extra = envelope["result"]["report"]["extra"]
        assert extra["degree_floor"]["applies"]
        assert extra["M"] == 1
        assert (tmp_path / "f1" / "h_samples.csv").exists()

    def test_fixed_coeff_count_mismatch(self, capsys, tmp_path):
        code, envelope = run(
            capsys,
            "fit",
            "--target",
            "f1",
            "--degree",
            "2",
            "--fixed-coeffs",
            "1,2",
            *SMALL_NET,
            "--out",
            str(tmp_path / "bad"),
        )
        assert code == 2
        assert envelope["success"] is False

    def test_failed_floor_check_keeps_training_metrics(self, capsys, tmp_path, monkeypatch):
        def broken_floor(*args, **kwargs):
            raise InternalConsistencyError("approximant beats the degree floor")

        monkeypatch.setattr(fit_adapter, "check_degree_floor", broken_floor)
        code, envelope = run(
            capsys, "fit", "--target", "f1", "--degree", "1", *SMALL_NET, "--out", str(tmp_path / "f1")
        )
        assert code == 2
        assert envelope["error_type"] == "internal-consistency"
        assert envelope["partial_report"]["n_basis"] == 2
        saved = read_report(tmp_path / "f1")
        assert saved["success"] is False
        assert saved["error_type"] == "internal-consistency"
        assert np.isfinite(saved["rmse"])
        assert saved["steps"] == 2

    def test_same_seed_same_report(self, capsys, tmp_path):
        args = ["fit", "--target", "f2", "--degree", "3", *SMALL_NET, "--train-points", "41", "--val-points", "101"]
        _, one = run(capsys, *args, "--out", str(tmp_path / "a"))
        _, two = run(capsys, *args, "--out", str(tmp_path / "b"))
        assert one["result"]["report"]["rmse"] == pytest.approx(two["result"]["report"]["rmse"], rel=1e-12)


# =============================================================================
# baseline
# =============================================================================


class TestBaseline:
    def test_degree_zero_dataset(self, capsys, tmp_path):
        ds = make_dataset(f1, uniform_grid([(-10.0, 10.0)], 301))
        path = save_dataset(ds, tmp_path / "f1.csv")
        code, envelope = run(
            capsys, "baseline", "--dataset", str(path), "--degree", "0", "--out", str(tmp_path / "b")
        )
        assert code == 0
        assert envelope["result"]["report"]["rmse"] == pytest.approx(np.std(ds.y), rel=1e-9)

    def test_sweep(self, capsys, tmp_path):
        code, envelope = run(capsys, "baseline", "--target", "f2", "--sweep", "2:4", "--out", str(tmp_path / "s"))
        assert code == 0
        sweep = pd.read_csv(tmp_path / "s" / "sweep.csv")
        assert list(sweep["degree"]) == [2, 3, 4]
        assert envelope["result"]["report"]["extra"]["sweep"]["degrees"] == [2, 3, 4]

    def test_bad_sweep(self, capsys, tmp_path):
        code, envelope = run(capsys, "baseline", "--target", "f2", "--sweep", "5:2", "--out", str(tmp_path / "s"))
        assert code == 2
        assert envelope["success"] is False

    def test_morse_variables_only_for_pes(self, capsys, tmp_path):
        code, _ = run(
            capsys, "baseline", "--target", "f1", "--degree", "2", "--variables", "morse", "--out", str(tmp_path / "m")
        )
        assert code == 2


# =============================================================================
# report
# =============================================================================


class TestReport:
    def test_mixed_dimensions(self, capsys, tmp_path):
        run(capsys, "construct", "--target", "f2", "--out", str(tmp_path / "exact"))
        run(capsys, "baseline", "--target", "f4", "--degree", "3", "--out", str(tmp_path / "base"))
        code, envelope = run(
            capsys,
            "report",
            str(tmp_path / "exact" / "report.json"),
            str(tmp_path / "base"),
            "--out",
            str(tmp_path / "table"),
        )
        assert code == 0
        rows = envelope["result"]["rows"]
        assert len(rows) == 2
        assert "dim" in rows[0]
        markdown = (tmp_path / "table" / "comparison.md").read_text(encoding="utf-8")
        assert markdown.startswith("| model | target | dim |")
        assert (tmp_path / "table" / "comparison.csv").exists()

    def test_same_dimension_has_no_dim_column(self, capsys, tmp_path):
        run(capsys, "construct", "--target", "f1", "--out", str(tmp_path / "one"))
        run(capsys, "baseline", "--target", "f1", "--degree", "4", "--out", str(tmp_path / "two"))
        code, envelope = run(capsys, "report", str(tmp_path / "one"), str(tmp_path / "two"), "--out", str(tmp_path / "t"))
        assert code == 0
        assert "dim" not in envelope["result"]["rows"][0]

    def test_missing_report(self, capsys, tmp_path):
        code, envelope = run(capsys, "report", str(tmp_path / "nowhere.json"), "--out", str(tmp_path / "t"))
        assert code == 2
        assert envelope["error_type"] == "invalid-parameter"


# =============================================================================
# Run directories
# =============================================================================


class TestRunDir:
    def test_non_empty_directory_not_reused(self, tmp_path):
        first = allocate_run_dir(str(tmp_path / "run"), "fit")
        (first / "report.json").write_text("{}")
        second = allocate_run_dir(str(tmp_path / "run"), "fit")
        assert second.name == "run-1"

    def test_empty_directory_reused(self, tmp_path):
        (tmp_path / "run").mkdir()
        assert allocate_run_dir(str(tmp_path / "run"), "fit") == tmp_path / "run"


# =============================================================================
# Environment overrides
# =============================================================================


class TestEnvironment:
    def test_defaults(self):
        settings = read_environment({})
        assert settings.threads is None
        assert settings.runs_dir == "runs"
        assert settings.log_level == "INFO"

    def test_thread_count(self):
        assert read_environment({"HOMEOFIT_THREADS": "4"}).threads == 4
        assert read_environment({"HOMEOFIT_THREADS": "0"}).threads is None

    def test_invalid_threads_fall_back_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING, logger="harness.config"):
            settings = read_environment({"HOMEOFIT_THREADS": "four", "HOMEOFIT_RUNS_DIR": "elsewhere"})
        assert settings.threads is None
        assert settings.runs_dir == "elsewhere"
        assert "threads" in caplog.text

    def test_invalid_log_level_falls_back(self):
        assert read_environment({"HOMEOFIT_LOG_LEVEL": "loud"}).log_level == "INFO"
        assert read_environment({"HOMEOFIT_LOG_LEVEL": "debug"}).log_level == "DEBUG"
