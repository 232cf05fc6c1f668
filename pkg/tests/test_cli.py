"""Command-line verbs and exit codes, run in-process."""

import json

import pytest

from conftest import SCENARIOS
from wpbc_game.cli import EXIT_OK, EXIT_SCENARIO, EXIT_SOLVER, EXIT_USAGE, main

SMALL = """
[devices]
awpd_count = 1
pwpd_count = 1
hwpd_count = 1
e_min_j = 5e-6

[solver]
methods = pa, tdma

[sweep]
variable = d_bd_m
values = 3, 6
"""


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_csv(small, capsys):
    code, out, err = run(["solve", small], capsys)
    assert code == EXIT_OK, err
    lines = out.splitlines()
    assert lines[0] == f"# scenario: {small}"
    body = [x for x in lines if not x.startswith("#")]
    assert body[0].startswith("sweep_var,sweep_value,method")
    assert [x.split(",")[2] for x in body[1:]] == ["pa", "tdma"]
    assert all(x.startswith("none,nan,") for x in body[1:])


def test_sweep_reproducible(small, tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        code, _, err = run(["sweep", small, "--reproducible", "--out", path], capsys)
        assert code == EXIT_OK
        assert "wrote 4 rows" in err
    assert a.read_bytes() == b.read_bytes()
    rows = [x for x in a.read_text().splitlines() if not x.startswith("#")][1:]
    assert len(rows) == 4 and all(x.endswith(",0.0") for x in rows)


def test_sweep_plot(small, capsys):
    code, out, _ = run(["sweep", small, "--format", "plot", "--methods", "pa"], capsys)
    assert code == EXIT_OK
    data = json.loads(out)
    assert data["sweep_var"] == "d_bd_m"
    assert list(data["series"]) == ["pa"]
    assert data["series"]["pa"]["u_leader"]["x"] == [3.0, 6.0]


@pytest.mark.parametrize("argv", [
    [],
    ["explode", "x.ini"],
    ["solve"],
    ["solve", "{small}", "--methods", "pa,magic"],
    ["solve", "{small}", "--format", "xml"],
    ["benchmark", "{small}", "--reps", "many"],
])
def test_usage_errors(argv, small, capsys):
    argv = [a.format(small=small) for a in argv]
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unwritable_output_is_usage_error(small, tmp_path, capsys):
    code, _, err = run(["solve", small, "--out", tmp_path / "no" / "such" / "x.csv"], capsys)
    assert code == EXIT_USAGE
    assert "cannot write" in err


@pytest.mark.parametrize("argv", [
    ["solve", "{missing}"],
    ["solve", "{bad}"],
    ["solve", "{small}", "--xi1", "0"],
    ["solve", "{small}", "--seed", "-1"],
    ["benchmark", "{small}", "--per-kind", "0"],
])
def test_scenario_errors(argv, small, tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[devices]\nd_bd_m = -2\n")
    argv = [a.format(small=small, bad=bad, missing=tmp_path / "nope.ini") for a in argv]
    code, _, err = run(argv, capsys)
    assert code == EXIT_SCENARIO
    assert err.startswith("invalid scenario")
    if "bad" in argv[1]:
        assert "d_bd_m" in err


def test_iteration_cap_is_solver_failure(small, capsys):
    code, out, err = run(["solve", small, "--methods", "pa", "--max-iter", "1"], capsys)
    assert code == EXIT_SOLVER
    assert "iteration cap" in err
    assert out.splitlines()[-1].split(",")[2] == "pa"  # rows are still written


def test_benchmark(small, capsys):
    code, out, _ = run(["benchmark", small, "--reps", "1", "--per-kind", "1",
                        "--methods", "tdma"], capsys)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "method,per_kind,n_devices,repetitions,mean_s,p95_s"
    assert lines[1].startswith("tdma,1,3,1,")


def test_verify_passes(capsys):
    code, out, _ = run(["verify", SCENARIOS / "three_device.ini", "--price-steps", "20",
                        "--beta-steps", "10", "--schedule-steps", "6"], capsys)
    assert code == EXIT_OK, out
    assert out.startswith("grid oracle: value")
    assert out.count("PASS") == 6 and "FAIL" not in out


def test_verify_rejects_many_explicit_devices(tmp_path, capsys):
    path = tmp_path / "two.ini"
    path.write_text("[device a]\nkind = awpd\n\n[device b]\nkind = awpd\n")
    code, _, err = run(["verify", path], capsys)
    assert code == EXIT_SCENARIO
    assert "at most one" in err
