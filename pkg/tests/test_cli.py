import json
import subprocess
import sys

import pytest

from gridtariff import cli


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def case_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cases")
    assert run("gen-case", "five-bus-m2", "--out", d) == cli.EXIT_OK
    return d / "five-bus-m2.json"


def test_validate(case_file, tmp_path):
    assert run("validate", "--case", case_file) == cli.EXIT_OK
    assert run("validate", "--case", tmp_path / "missing.json") == cli.EXIT_IO
    bad = json.loads(case_file.read_text())
    bad["lines"][1]["to"] = 9
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert run("validate", "--case", tmp_path / "bad.json") == cli.EXIT_INVALID


def test_usage_errors(case_file, tmp_path):
    assert run("clear", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("clear", "--case", case_file, "--u", "0-1=0.3", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("clear", "--case", case_file, "--u", "garbage", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("plan", "--case", "builtin:nope", "--out", tmp_path) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == cli.EXIT_USAGE


def test_clear_writes_reports(case_file, tmp_path):
    assert run("clear", "--case", case_file, "--u", "0-1=0.5", "--out", tmp_path) == cli.EXIT_OK
    for name in ("prices.csv", "flows.csv", "surplus.csv"):
        assert (tmp_path / name).exists()
    assert "seed 7" in (tmp_path / "prices.csv").read_text()


def test_plan_is_deterministic(case_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("plan", "--case", case_file, "--out", a) == cli.EXIT_OK
    assert run("plan", "--case", case_file, "--out", b) == cli.EXIT_OK
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_enumerate_cap(case_file, tmp_path):
    assert run("enumerate", "--case", case_file, "--out", tmp_path) == cli.EXIT_OK
    assert len((tmp_path / "oracle.csv").read_text().splitlines()) > 81
    assert run("enumerate", "--case", case_file, "--cap", 10, "--out", tmp_path) == cli.EXIT_UNSUPPORTED


def test_recalibrate(case_file, tmp_path):
    ov = tmp_path / "realized.json"
    ov.write_text(json.dumps({"scale": {"bids": 0.5, "offers": 0.5}}))
    code = run("recalibrate", "--case", case_file, "--realized", ov, "--shortfall", 50, "--out", tmp_path)
    assert code == cli.EXIT_OK
    text = (tmp_path / "recalibration.csv").read_text()
    assert "shortfall,50" in text


def test_stoch_plan_bad_probabilities(case_file, tmp_path):
    spec = {"base": str(case_file), "scenarios": [{"name": "a", "probability": 0.7}]}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    assert run("stoch-plan", "--scenarios", tmp_path / "s.json", "--out", tmp_path) == cli.EXIT_IO


def test_env_override(case_file, tmp_path, monkeypatch):
    monkeypatch.setenv("GRIDTARIFF_CASE", str(case_file))
    assert run("validate") == cli.EXIT_OK


def test_module_entry_point(case_file):
    out = subprocess.run([sys.executable, "-m", "gridtariff", "validate", "--case", str(case_file)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "five-bus" in out.stdout
