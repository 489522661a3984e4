"""
Integration tests for the main application.

Tests the CLI interface and end-to-end functionality.
"""

import json
import sys
from fractions import Fraction
from unittest.mock import patch

import pytest

from src.main import (
    EXIT_FAILURE,
    EXIT_INTERRUPTED,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    apply_overrides,
    main,
    parse_arguments,
)
from src.models import GridSimError
from src.report import MANIFEST_FILE


@pytest.fixture
def scenario_file(fixtures_dir):
    return str(fixtures_dir / "three_house_scenario.json")


@pytest.fixture
def broken_file(tmp_path, three_house_doc):
    three_house_doc["plants"][0]["output"] = 40
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(three_house_doc), encoding="utf-8")
    return str(path)


@pytest.mark.integration
class TestParseArguments:
    """Test command-line parsing."""

    def test_run_defaults(self):
        """Test the defaults of the run command."""
        test_args = ["gridsim", "run", "scenario.json"]

        with patch.object(sys, "argv", test_args):
            args = parse_arguments()

        assert args.command == "run"
        assert args.scenario == "scenario.json"
        assert args.out == "runs/latest"
        assert args.seed is None
        assert args.epsilon is None

    def test_run_flags(self):
        """Test parsing every run flag."""
        args = parse_arguments(
            [
                "run",
                "scenario.json",
                "--out",
                "runs/x",
                "--seed",
                "7",
                "--iterations",
                "12",
                "--max-feedback-rounds",
                "5",
                "--epsilon",
                "0.1",
            ]
        )

        assert args.out == "runs/x"
        assert (args.seed, args.iterations, args.max_feedback_rounds) == (7, 12, 5)
        assert args.epsilon == Fraction(1, 10)

    def test_apply_overrides(self, three_house_scenario):
        """Test that flags replace configuration values."""
        args = parse_arguments(["run", "s.json", "--seed", "9", "--epsilon", "1/4"])

        scenario = apply_overrides(three_house_scenario, args)

        assert scenario.config.seed == 9
        assert scenario.config.epsilon == Fraction(1, 4)
        assert scenario.config.max_feedback_rounds == 20
        assert three_house_scenario.config.seed == 0

    def test_no_overrides(self, three_house_scenario):
        """Test that a run without flags keeps the scenario."""
        args = parse_arguments(["run", "s.json"])

        assert apply_overrides(three_house_scenario, args) is three_house_scenario

    @pytest.mark.parametrize(
        "argv",
        [
            [],
            ["run"],
            ["simulate", "s.json"],
            ["run", "s.json", "--epsilon", "2"],
            ["run", "s.json", "--iterations", "0"],
        ],
    )
    def test_usage_errors(self, argv, capsys):
        """Test that malformed command lines exit with the usage code."""
        assert main(argv) == EXIT_USAGE

    def test_help(self, capsys):
        """Test that --help succeeds."""
        assert main(["--help"]) == EXIT_OK
        assert "validate" in capsys.readouterr().out


@pytest.mark.integration
class TestValidateCommand:
    """Test the validate subcommand."""

    def test_valid_scenario(self, scenario_file, capsys):
        """Test a scenario without violations."""
        assert main(["validate", scenario_file]) == EXIT_OK
        assert capsys.readouterr().out.strip() == f"{scenario_file}: OK"

    @pytest.mark.parametrize("name", ["three_house.json", "tracking.json", "quadratic_goal.json"])
    def test_shipped_scenarios(self, scenarios_dir, name, capsys):
        """Test that every scenario in the repository validates."""
        assert main(["validate", str(scenarios_dir / name)]) == EXIT_OK

    def test_violations_are_listed(self, broken_file, capsys):
        """Test that each violation is printed on its own line."""
        assert main(["validate", broken_file]) == EXIT_FAILURE
        assert "Plant[P1]: output must lie in [0, capacity]" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        """Test that a missing file is an I/O failure."""
        assert main(["validate", str(tmp_path / "absent.json")]) == EXIT_IO
        assert "IO_ERROR" in capsys.readouterr().err

    def test_malformed_file(self, tmp_path, capsys):
        """Test that a malformed document is a parse failure."""
        path = tmp_path / "bad.json"
        path.write_text("{ not json", encoding="utf-8")

        assert main(["validate", str(path)]) == EXIT_FAILURE
        assert "PARSE_ERROR" in capsys.readouterr().err


@pytest.mark.integration
class TestRunCommand:
    """Test the run and report subcommands."""

    def test_run_writes_directory(self, scenario_file, tmp_path, capsys):
        """Test a full run of the example scenario."""
        out = tmp_path / "run"

        assert main(["run", scenario_file, "--out", str(out)]) == EXIT_OK

        assert (out / MANIFEST_FILE).is_file()
        report = capsys.readouterr().out
        assert "Mean consumption:  29" in report
        assert f"Scenario:          {scenario_file}" in report

    def test_run_rejects_invalid_scenario(self, broken_file, tmp_path, capsys):
        """Test that a scenario with violations is not run."""
        out = tmp_path / "run"

        assert main(["run", broken_file, "--out", str(out)]) == EXIT_FAILURE
        assert not (out / MANIFEST_FILE).exists()
        assert "VALIDATION_ERROR" in capsys.readouterr().err

    def test_report_after_run(self, scenario_file, tmp_path, capsys):
        """Test reporting a finished run."""
        out = str(tmp_path / "run")
        main(["run", scenario_file, "--out", out, "--iterations", "2"])
        capsys.readouterr()

        assert main(["report", out]) == EXIT_OK
        assert "Samples:           2" in capsys.readouterr().out

    def test_report_without_run(self, tmp_path, capsys):
        """Test that reporting an empty directory fails."""
        assert main(["report", str(tmp_path)]) == EXIT_FAILURE
        assert "INCOMPLETE_RUN" in capsys.readouterr().err

    def test_simulation_error(self, scenario_file, tmp_path, mocker, capsys):
        """Test that a simulation failure exits with the failure code."""
        mocker.patch(
            "src.main.write_run",
            side_effect=GridSimError(code="INFEASIBLE_REROUTE", message="stuck"),
        )

        assert main(["run", scenario_file, "--out", str(tmp_path)]) == EXIT_FAILURE
        assert "[INFEASIBLE_REROUTE] stuck" in capsys.readouterr().err

    def test_keyboard_interrupt(self, scenario_file, mocker, capsys):
        """Test that an interrupted run exits with 130."""
        mocker.patch("src.main.cmd_run", side_effect=KeyboardInterrupt)

        assert main(["run", scenario_file]) == EXIT_INTERRUPTED
        assert "Interrupted." in capsys.readouterr().err
