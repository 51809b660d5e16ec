"""End-to-end runs of the command-line front end, in process via cli.main."""

import csv
import json

import numpy as np
import pytest

from sdot_fees import cli
from sdot_fees.fees import fee_to_spec
from sdot_fees.instances import ladder_instance, line_problem
from sdot_fees.io import load_fee, problem_payload, write_json
from sdot_fees.solver import TRACE_COLUMNS

TILTED_SITES = [0.25, 0.85]
QUAD_FEE = json.dumps([
    {"kind": "quadratic", "params": {"center": 0.0, "scale": 1.0},
     "domain": [0.02, 1.0]},
    {"kind": "quadratic", "params": {"center": 0.0, "scale": 1.0},
     "domain": [0.02, 1.0]},
])
PINNED_FEE = json.dumps([
    {"kind": "indicator", "params": {}, "domain": [0.3, 0.3]},
    {"kind": "indicator", "params": {}, "domain": [0.7, 0.7]},
])


def write_problem(tmp_path, sites=TILTED_SITES, resolution=512):
    path = tmp_path / "problem.json"
    write_json({
        "domain": {"dim": 1, "bounds": [[0.0, 1.0]], "resolution": resolution},
        "density": {"kind": "uniform"},
        "sites": sites,
    }, path)
    return str(path)


def run(tmp_path, *argv):
    out = tmp_path / "run"
    code = cli.main([*argv, "--out", str(out)])
    return code, out


# ---------------------------------------------------------------------------
# solve


def test_solve_converges_and_writes_artifacts(tmp_path):
    problem = write_problem(tmp_path)
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", QUAD_FEE)
    assert code == cli.EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert result["status"] == "converged"
    assert result["iterations"] >= 1
    assert len(result["psi"]) == 2
    assert sum(result["w"]) == pytest.approx(1.0, abs=1e-10)
    assert result["transport_cost"] > 0.0
    assert "regularization" not in result
    with (out / "trace.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 1 + result["iterations"]


def test_solve_finds_the_tilted_split(tmp_path):
    # sites 0.25 / 0.85 under f_i(x) = x^2/2: the boundary between the cells
    # sits at t + 0.5 * (psi_1 - psi_2) / 0.6 and stationarity pins the first
    # weight at 0.51875 exactly
    problem = write_problem(tmp_path)
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", QUAD_FEE,
                    "--zeta", "1e-10")
    assert code == cli.EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert result["w"][0] == pytest.approx(0.51875, abs=1e-8)


def test_solve_is_deterministic(tmp_path):
    problem = write_problem(tmp_path)
    first = tmp_path / "a"
    second = tmp_path / "b"
    argv = ["solve", "--problem", problem, "--fee", QUAD_FEE]
    assert cli.main(argv + ["--out", str(first)]) == cli.EXIT_OK
    assert cli.main(argv + ["--out", str(second)]) == cli.EXIT_OK
    assert (first / "result.json").read_bytes() == (second / "result.json").read_bytes()


def test_solve_rejects_pinned_fee(tmp_path):
    problem = write_problem(tmp_path, sites=[0.174, 0.766])
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", PINNED_FEE)
    assert code == cli.EXIT_ASSUMPTIONS
    report = json.loads((out / "assumptions.json").read_text())
    assert report["newton_ready"] is False
    assert "strict_interior" in report["failed_checks"]
    error = json.loads((out / "error.json").read_text())
    assert error["exit_code"] == cli.EXIT_ASSUMPTIONS
    assert not (out / "result.json").exists()


def test_solve_auto_regularize_recovers_pinned_fee(tmp_path):
    problem = write_problem(tmp_path, sites=[0.174, 0.766])
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", PINNED_FEE,
                    "--auto-regularize", "--eta", "0.05")
    assert code == cli.EXIT_OK
    result = json.loads((out / "result.json").read_text())
    assert result["status"] == "converged"
    assert result["regularization"]["eta"] == pytest.approx(0.05)
    # the solved split stays near the pinned target (0.3, 0.7)
    drift = max(abs(result["w"][0] - 0.3), abs(result["w"][1] - 0.7))
    assert drift <= 0.2 * np.sqrt(0.05)


def test_solve_floor_zero_quadratic_needs_regularization(tmp_path):
    problem = write_problem(tmp_path)
    floor_zero = json.dumps([
        {"kind": "quadratic", "params": {"center": 0.0, "scale": 1.0},
         "domain": [0.0, 1.0]},
        {"kind": "quadratic", "params": {"center": 0.0, "scale": 1.0},
         "domain": [0.0, 1.0]},
    ])
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", floor_zero)
    assert code == cli.EXIT_ASSUMPTIONS
    report = json.loads((out / "assumptions.json").read_text())
    assert "positive_mass_floor" in report["failed_checks"]


# ---------------------------------------------------------------------------
# config errors


def test_missing_problem_file_is_a_config_error(tmp_path, capsys):
    code, out = run(tmp_path, "solve", "--problem", str(tmp_path / "nope.json"),
                    "--fee", QUAD_FEE)
    assert code == cli.EXIT_CONFIG
    error = json.loads((out / "error.json").read_text())
    assert error["field"] == "problem"
    assert json.loads(capsys.readouterr().err)["exit_code"] == cli.EXIT_CONFIG


def test_broken_inline_fee_names_the_field(tmp_path):
    problem = write_problem(tmp_path)
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", "[{oops")
    assert code == cli.EXIT_CONFIG
    assert json.loads((out / "error.json").read_text())["field"] == "fee"


def test_fee_part_count_must_match_sites(tmp_path):
    problem = write_problem(tmp_path, sites=[0.2, 0.5, 0.8])
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", QUAD_FEE)
    assert code == cli.EXIT_CONFIG
    assert json.loads((out / "error.json").read_text())["field"] == "fee"


def test_unknown_flag_is_a_config_error(capsys):
    code = cli.main(["solve", "--wat"])
    assert code == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["field"] == "argv"


def test_threads_must_be_positive(tmp_path, capsys):
    problem = write_problem(tmp_path)
    code, _ = run(tmp_path, "solve", "--problem", problem, "--fee", QUAD_FEE,
                  "--threads", "0")
    assert code == cli.EXIT_CONFIG
    assert json.loads(capsys.readouterr().err)["field"] == "threads"


def test_threads_cap_accepted(tmp_path):
    problem = write_problem(tmp_path)
    code, out = run(tmp_path, "solve", "--problem", problem, "--fee", QUAD_FEE,
                    "--threads", "1")
    assert code == cli.EXIT_OK
    assert (out / "result.json").exists()


# ---------------------------------------------------------------------------
# regularize


def test_regularize_writes_loadable_fee(tmp_path):
    problem = write_problem(tmp_path, sites=[0.174, 0.766])
    code, out = run(tmp_path, "regularize", "--problem", problem,
                    "--fee", PINNED_FEE, "--eta", "0.05")
    assert code == cli.EXIT_OK
    report = json.loads((out / "regularization.json").read_text())
    assert report["eta"] == pytest.approx(0.05)
    fee = load_fee(str(out / "fee.json"))
    assert fee.n == 2
    # the written fee is solver-ready: feed it straight back into solve
    code2, out2 = run(tmp_path / "again", "solve", "--problem", problem,
                      "--fee", str(out / "fee.json"))
    assert code2 == cli.EXIT_OK


# ---------------------------------------------------------------------------
# verify


def test_verify_single_suite(tmp_path, capsys):
    code, out = run(tmp_path, "verify", "--suite", "geometry", "--seed", "0")
    assert code == cli.EXIT_OK
    lines = [l for l in capsys.readouterr().out.splitlines() if l]
    assert all(l.startswith("PASS geometry/") for l in lines)
    payload = json.loads((out / "verify.json").read_text())
    assert payload["passed"] is True
    assert list(payload["suites"]) == ["geometry"]
    assert payload["seed"] == 0


def test_verify_repeatable_suite_flag(tmp_path, capsys):
    code, out = run(tmp_path, "verify", "--suite", "geometry",
                    "--suite", "stability")
    assert code == cli.EXIT_OK
    payload = json.loads((out / "verify.json").read_text())
    assert sorted(payload["suites"]) == ["geometry", "stability"]
    capsys.readouterr()


def test_verify_rejects_unknown_suite(capsys):
    code = cli.main(["verify", "--suite", "astrology"])
    assert code == cli.EXIT_CONFIG
    capsys.readouterr()


# ---------------------------------------------------------------------------
# oracle-compare


def test_oracle_compare_agrees_on_tilted_instance(tmp_path):
    problem = write_problem(tmp_path)
    code, out = run(tmp_path, "oracle-compare", "--problem", problem,
                    "--fee", QUAD_FEE, "--grid-step", "1e-3")
    assert code == cli.EXIT_OK
    payload = json.loads((out / "oracle.json").read_text())
    assert payload["passed"] is True
    assert payload["distance_inf"] <= payload["tolerance"] == 2e-3
    assert payload["w_brute_force"][0] == pytest.approx(0.519, abs=1e-3)


def test_oracle_compare_flags_a_bad_solve(tmp_path, capsys):
    # zeta large enough to accept psi = 0, whose conjugate split (0.5, 0.5)
    # is far from the brute-force answer
    problem = write_problem(tmp_path)
    code, out = run(tmp_path, "oracle-compare", "--problem", problem,
                    "--fee", QUAD_FEE, "--grid-step", "1e-3", "--zeta", "10.0")
    assert code == cli.EXIT_FAILED
    payload = json.loads((out / "oracle.json").read_text())
    assert payload["passed"] is False
    capsys.readouterr()


# ---------------------------------------------------------------------------
# stability


def test_stability_ladder_cli(tmp_path):
    prob, fee = ladder_instance()
    problem_path = tmp_path / "problem.json"
    fee_path = tmp_path / "fee.json"
    write_json(problem_payload(prob), problem_path)
    write_json(fee_to_spec(fee), fee_path)
    code, out = run(tmp_path, "stability", "--problem", str(problem_path),
                    "--fee", str(fee_path), "--grid-step", "1e-3")
    assert code == cli.EXIT_OK
    payload = json.loads((out / "stability.json").read_text())
    assert payload["sqrt_consistent"] is True
    assert len(payload["rungs"]) == len(payload["scales"]) == 3
    assert payload["distances"] == sorted(payload["distances"], reverse=True)
    for rung in payload["rungs"]:
        assert rung["distance"] >= 0.0
        assert "dist" in rung["bound_form"]
