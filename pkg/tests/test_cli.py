import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from jampr.main import cli
from jampr.schemas.report import EvalReport
from jampr.schemas.solution import Solution
from jampr.services.instance_service import MANIFEST_NAME
from jampr.services.solution_service import solution_service


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def test_version_and_help(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert "jampr" in result.output
    result = runner.invoke(cli, ["--help"])
    assert result.exit_code == 0
    for command in ("generate", "train", "solve", "eval", "benchmark", "plot", "validate"):
        assert command in result.output


def test_generate_and_evaluate(runner, tmp_path):
    """Test generate + eval:
    1. Generate writes instance files and the seed manifest
    2. eval solves every file and writes a CSV report
    3. --compare re-reads the CSV and reports the gap
    4. Mixed sizes need --allow-mixed
    """
    out_dir = tmp_path / "set"

    print("\n1. Generating...")
    result = runner.invoke(cli, ["generate", "-n", "20", "--count", "3", "--seed", "7", "--out-dir", str(out_dir)])
    assert result.exit_code == 0, result.output
    assert "Wrote 3 instances" in result.output
    assert (out_dir / MANIFEST_NAME).exists()
    assert len(list(out_dir.glob("*.vrp"))) == 3

    print("\n2. Evaluating the random policy...")
    report_file = tmp_path / "report.csv"
    result = runner.invoke(cli, [
        "eval", str(out_dir), "--policy", "random", "-n", "4", "--variant", "TW2", "--jobs", "2",
        "-o", str(report_file)
    ])
    assert result.exit_code == 0, result.output
    assert "policy=random variant=TW2 mode=sample" in result.output
    assert "(3 instances)" in result.output
    frame = pd.read_csv(report_file)
    assert list(frame["name"]) == ["inst-00000", "inst-00001", "inst-00002"]
    assert (frame["violations"] == 0).all()
    assert (frame["cost"] > 0).all()

    print("\n3. Comparing against the earlier report...")
    reread = EvalReport.read_csv(report_file, policy="random", variant="TW2", mode="sample", m_con=1)
    assert [row.name for row in reread.rows] == ["inst-00000", "inst-00001", "inst-00002"]
    assert [row.cost for row in reread.rows] == pytest.approx(list(frame["cost"]), rel=1e-9)
    result = runner.invoke(cli, [
        "eval", str(out_dir), "--policy", "random", "-n", "4", "--variant", "TW2", "--compare", str(report_file)
    ])
    assert result.exit_code == 0, result.output
    assert "0.00% over 3 shared instances" in result.output, "Same seed should reproduce the report"

    print("\n4. Mixed sizes...")
    result = runner.invoke(cli, ["generate", "-n", "50", "--seed", "8", "--out-dir", str(tmp_path / "mixed")])
    assert result.exit_code == 0, result.output
    (tmp_path / "mixed" / "small.vrp").write_bytes((out_dir / "inst-00000.vrp").read_bytes())
    result = runner.invoke(cli, ["eval", str(tmp_path / "mixed"), "--policy", "random", "-n", "2"])
    assert result.exit_code == 1
    assert "--allow-mixed" in result.output


def test_solve_validate_plot(runner, tmp_path, solomon_file):
    """Test solve -> validate -> plot on a Solomon file:
    1. The random policy produces a feasible solution file
    2. validate accepts it and recomputes the cost
    3. plot renders an SVG with one legend entry per tour
    """
    solution_file = tmp_path / "small.sol"

    print("\n1. Solving...")
    result = runner.invoke(cli, [
        "solve", str(solomon_file), "--policy", "random", "-n", "16", "--seed", "2", "-o", str(solution_file)
    ])
    assert result.exit_code == 0, result.output
    assert result.output.startswith("SMALL1: cost=")
    assert "mode=sample n=16" in result.output
    solution = solution_service.read_solution(solution_file)
    assert sorted(c for tour in solution.tours for c in tour) == [1, 2, 3, 4, 5, 6]

    print("\n2. Validating...")
    result = runner.invoke(cli, ["validate", str(solomon_file), str(solution_file)])
    assert result.exit_code == 0, result.output
    assert result.output.startswith("ok: cost=")
    assert "note:" not in result.output

    print("\n3. Plotting...")
    svg_file = tmp_path / "small.svg"
    result = runner.invoke(cli, ["plot", str(solomon_file), str(solution_file), "-o", str(svg_file)])
    assert result.exit_code == 0, result.output
    svg = svg_file.read_text()
    assert "<svg" in svg
    assert svg.count("n=") >= solution.k


def test_exit_codes(runner, tmp_path, solomon_file):
    """Usage errors exit 1, infeasible or invalid solutions 2, missing or malformed files 3."""
    print("\n1. Usage errors...")
    result = runner.invoke(cli, ["solve", str(solomon_file), "--policy", "random", "--variant", "TW9"])
    assert result.exit_code == 1
    result = runner.invoke(cli, ["solve", str(solomon_file), "--policy", "random", "--beta", "0.5"])
    assert result.exit_code == 1, "TW1 keeps an infinite late weight"

    print("\n2. Invalid solutions...")
    partial = tmp_path / "partial.sol"
    solution_service.write_solution(partial, Solution(tours=[[1, 2]]))
    result = runner.invoke(cli, ["validate", str(solomon_file), str(partial), "--variant", "TW3"])
    assert result.exit_code == 2
    assert "coverage" in result.output

    print("\n3. IO errors...")
    result = runner.invoke(cli, ["solve", str(tmp_path / "absent.txt"), "--policy", "random"])
    assert result.exit_code == 3
    broken = tmp_path / "broken.sol"
    broken.write_text("SOLFILE v2\n")
    result = runner.invoke(cli, ["validate", str(solomon_file), str(broken)])
    assert result.exit_code == 3


def test_wait_cost_flag(runner, tmp_path, solomon_file):
    """Waiting is charged as time by default; --no-wait-cost falls back to the alpha-weighted early penalty."""
    singles = tmp_path / "singles.sol"
    solution_service.write_solution(singles, Solution(tours=[[i] for i in range(1, 7)]))

    def validated_cost(*flags) -> float:
        result = runner.invoke(cli, ["validate", str(solomon_file), str(singles), "--variant", "TW2", *flags])
        assert result.exit_code == 0, result.output
        return float(result.output.split("cost=")[1].split()[0])

    # every single-customer tour arrives before its window opens
    with_wait = validated_cost()
    assert validated_cost("--wait-cost") == with_wait
    assert validated_cost("--no-wait-cost") < with_wait


def test_config_file_and_flag_precedence(runner, tmp_path, solomon_file):
    """Config file values replace defaults; explicit flags win over the config file."""
    config = tmp_path / "jampr.conf"
    config.write_text("# inference\ninfer.random_samples 3\n")
    result = runner.invoke(cli, ["--config", str(config), "solve", str(solomon_file), "--policy", "random"])
    assert result.exit_code == 0, result.output
    assert "n=3 " in result.output
    result = runner.invoke(cli, ["--config", str(config), "solve", str(solomon_file), "--policy", "random", "-n", "5"])
    assert result.exit_code == 0, result.output
    assert "n=5 " in result.output

    config.write_text("infer.unknown 1\n")
    result = runner.invoke(cli, ["--config", str(config), "solve", str(solomon_file), "--policy", "random"])
    assert result.exit_code == 1


def test_train_then_solve_with_checkpoint(runner, tmp_path):
    """A tiny CLI training run produces checkpoints that solve and refuse other variants."""
    out_dir = tmp_path / "run"
    result = runner.invoke(cli, [
        "train", "-n", "10", "--variant", "CVRP", "--epochs", "1", "--instances", "4", "--batch-size", "2",
        "--val-size", "2", "--d-node", "16", "--heads", "2", "--seed", "3", "--out-dir", str(out_dir)
    ])
    assert result.exit_code == 0, result.output
    assert "epoch   1" in result.output
    assert (out_dir / "epoch-001.ckpt").exists()

    result = runner.invoke(cli, ["generate", "-n", "10", "--variant", "CVRP", "--seed", "1", "--out-dir",
                                 str(tmp_path / "cvrp")])
    assert result.exit_code == 0, result.output
    instance = tmp_path / "cvrp" / "inst-00000.vrp"
    checkpoint = out_dir / "epoch-001.ckpt"
    result = runner.invoke(cli, ["solve", str(instance), "--policy", str(checkpoint), "--variant", "CVRP"])
    assert result.exit_code == 0, result.output
    assert "mode=greedy n=1" in result.output

    result = runner.invoke(cli, ["solve", str(instance), "--policy", str(checkpoint), "--variant", "TW2"])
    assert result.exit_code == 1
    result = runner.invoke(cli, ["solve", str(instance), "--policy", str(checkpoint), "--variant", "CVRP",
                                 "--m-con", "3"])
    assert result.exit_code == 1


def test_benchmark_halves(runner, solomon_100, tmp_path):
    """Benchmark splits a 100-customer file into two halves grouped under its prefix."""
    rows_file = tmp_path / "rows.csv"
    result = runner.invoke(cli, [
        "benchmark", str(solomon_100), "--policy", "random", "--track", "50", "-n", "2", "--variant", "TW2",
        "--vehicle-weight", "100", "-o", str(rows_file)
    ])
    assert result.exit_code == 0, result.output
    assert "R2" in result.output
    frame = pd.read_csv(rows_file)
    assert sorted(frame["name"]) == ["R299-50", "R299-50b"]
    assert set(frame["group"]) == {"R2"} and set(frame["track"].astype(str)) == {"50"}
    assert np.allclose(frame["weighted"], 100 * frame["k"] + frame["distance"])
