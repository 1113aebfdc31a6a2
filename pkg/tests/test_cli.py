import json

import pytest
from typer.testing import CliRunner

from main import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, cli
from services.suites import SuiteResult, VerificationService

runner = CliRunner()


@pytest.fixture
def invoke(tmp_path):
    env_file = str(tmp_path / "missing.env")

    def _invoke(*args):
        return runner.invoke(cli, [*args, "--env-file", env_file])

    return _invoke


def read_document(path):
    document = json.loads(path.read_text())
    document.pop("timestamp")
    return document


def test_check_free(invoke, tmp_path):
    out = tmp_path / "check.json"
    result = invoke("check", "--spec", "preset:free", "--out", str(out))
    assert result.exit_code == EXIT_PASS
    document = json.loads(out.read_text())
    assert document["command"] == "check"
    assert document["passed"] is True
    assert document["suites"]["check"]["kappa"] == pytest.approx(1.5707963267948966)
    assert document["suites"]["check"]["residuals"]["unitarity"] == 0


def test_check_spec_file(invoke, tmp_path):
    spec = tmp_path / "bound.json"
    spec.write_text('{"family": "product_poles", "sign": 1, "poles": ["0.7853981633974483i"]}')
    out = tmp_path / "check.json"
    assert invoke("check", "--spec", str(spec), "--out", str(out)).exit_code == EXIT_PASS
    assert json.loads(out.read_text())["suites"]["check"]["boundary_singular"] is True


@pytest.mark.parametrize("args", [
    ("plot", "--spec", "preset:free"),
    ("check",),
    ("check", "--spec", "preset:nonexistent"),
    ("check", "--spec", "preset:free", "--grid", "4,1"),
    ("check", "--spec", "preset:free", "--grid", "4,2,-2"),
    ("check", "--spec", "preset:free", "--format", "xml"),
])
def test_usage_errors(invoke, args):
    assert invoke(*args).exit_code == EXIT_USAGE


def test_malformed_spec_file(invoke, tmp_path):
    spec = tmp_path / "broken.json"
    spec.write_text('{"family": "constant", "value": }')
    assert invoke("check", "--spec", str(spec)).exit_code == EXIT_USAGE


def test_failed_suite_exit_code(invoke, tmp_path, mocker):
    mocker.patch.object(VerificationService, "check", return_value=SuiteResult("check", False, {}))
    out = tmp_path / "check.json"
    result = invoke("check", "--spec", "preset:free", "--out", str(out))
    assert result.exit_code == EXIT_FAIL
    assert json.loads(out.read_text())["passed"] is False


def test_smatrix_is_deterministic(invoke, tmp_path):
    out = tmp_path / "smatrix.json"
    args = ("smatrix", "--spec", "preset:sinh_gordon", "--trials", "5", "--seed", "3", "--out", str(out))
    assert invoke(*args).exit_code == EXIT_PASS
    first = read_document(out)
    assert invoke(*args).exit_code == EXIT_PASS
    assert read_document(out) == first
    report = first["suites"]["smatrix"]
    assert report["rank"] == report["dim"] == 4
    assert report["max_residual"] < 1e-10


def test_formfactor_verify(invoke, tmp_path):
    out = tmp_path / "formfactor.json"
    result = invoke("formfactor-verify", "--spec", "preset:sinh_gordon", "--n", "3", "--seed", "7",
                    "--trials", "3", "--out", str(out))
    assert result.exit_code == EXIT_PASS
    report = json.loads(out.read_text())["suites"]["formfactor-verify"]
    assert report["k"] == [0, 1, 2]
    assert report["max_res1"] < 1e-9
    assert report["max_res2"] < 1e-9


def test_fock_verify_csv(invoke, tmp_path):
    out = tmp_path / "fock.csv"
    result = invoke("fock-verify", "--spec", "preset:ising", "--trials", "3", "--format", "csv", "--out", str(out))
    assert result.exit_code == EXIT_PASS
    header, row = out.read_text().splitlines()
    assert header.startswith("suite,passed")
    assert row.startswith("fock-verify,True")


def test_fock_verify_zf_relations_with_four_particles(invoke, tmp_path):
    out = tmp_path / "fock.json"
    result = invoke("fock-verify", "--spec", "preset:free", "--n", "4", "--trials", "2", "--out", str(out))
    assert result.exit_code == EXIT_PASS
    report = json.loads(out.read_text())["suites"]["fock-verify"]
    assert report["n_max"] == 4
    assert max(report["zf_mixed"], report["zf_creation"], report["zf_annihilation"]) < 1e-12
    assert report["truncation"] == "strict"
    assert report["truncated"] is False


def test_fock_verify_permissive_truncation(invoke, tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text("verification:\n  strict_truncation: false\n")
    out = tmp_path / "fock.json"
    result = invoke("fock-verify", "--spec", "preset:sinh_gordon", "--trials", "2", "--config", str(config),
                    "--out", str(out))
    assert result.exit_code == EXIT_PASS
    report = json.loads(out.read_text())["suites"]["fock-verify"]
    assert report["truncation"] == "permissive"
    assert report["truncated"] is True
    assert report["z_bounds"] is True


def test_nuclearity_csv(invoke, tmp_path, mocker):
    mocker.patch("services.nuclearity.s_min_async", new=mocker.AsyncMock(return_value=(0.9, 0.5)))
    out = tmp_path / "nuclearity.csv"
    result = invoke("nuclearity", "--spec", "preset:bound_state_pi4", "--kappa", "0.3", "--s", "1,2",
                    "--format", "csv", "--out", str(out))
    assert result.exit_code == EXIT_PASS
    lines = out.read_text().splitlines()
    assert lines[0] == "s,kappa,sigma,t_trace,product,bound_bosonic,fermionic_x,bound_fermionic"
    assert [line.split(",")[:2] for line in lines[1:]] == [["1", "0.3"], ["2", "0.3"]]


@pytest.mark.slow
def test_report_all_is_deterministic(invoke, tmp_path, mocker):
    mocker.patch("services.nuclearity.s_min_async", new=mocker.AsyncMock(return_value=(0.9, 0.5)))
    out = tmp_path / "report.json"
    args = ("report-all", "--spec", "preset:bound_state_pi4", "--trials", "3", "--s", "1", "--out", str(out))
    assert invoke(*args).exit_code == EXIT_PASS
    first = read_document(out)
    assert list(first["suites"]) == ["check", "fock-verify", "formfactor-verify", "nuclearity", "smatrix"]
    assert invoke(*args).exit_code == EXIT_PASS
    assert read_document(out) == first
