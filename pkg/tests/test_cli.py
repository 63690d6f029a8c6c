import json
import os
from pathlib import Path

import pytest

from reachcert.cli import main


def run_cli(args):
    return main(args)


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    """A tiny end-to-end CLI workspace: grid, weights, expression, certificate."""
    root = tmp_path_factory.mktemp("cli")
    os.environ["SOURCE_DATE_EPOCH"] = "1700000000"
    try:
        assert run_cli([
            "solve-grid", "--preset", "double-integrator-paper", "--out-dir", str(root / "grid"),
            "--grid-shape", "41", "--tol", "1e-5", "--threads", "1",
        ]) == 0
        assert run_cli([
            "train", "--preset", "double-integrator-paper", "--out-dir", str(root / "train"),
            "--seed", "3", "--iterations", "40", "--batch-size", "256", "--buffer-size", "2048",
            "--threads", "1",
        ]) == 0
        assert run_cli([
            "export-expr", "--weights", str(root / "train" / "weights.json"),
            "--out-dir", str(root / "expr"),
        ]) == 0
        assert run_cli([
            "certify", "--preset", "double-integrator-paper", "--out-dir", str(root / "cert"),
            "--weights", str(root / "train" / "weights.json"), "--route", "b",
            "--rho", "50.0", "--delta", "1e-8", "--cells", "2", "--threads", "1",
            "--emit", "smt2",
        ]) == 0
        yield root
    finally:
        os.environ.pop("SOURCE_DATE_EPOCH", None)


def test_artifacts_exist(cli_env):
    assert (cli_env / "grid" / "grid.csv").exists()
    assert (cli_env / "grid" / "manifest.json").exists()
    assert (cli_env / "train" / "weights.json").exists()
    assert (cli_env / "train" / "loss_trace.csv").exists()
    assert (cli_env / "expr" / "expr.json").exists()
    cert = json.loads((cli_env / "cert" / "certificate.json").read_text())
    assert cert["eps_val"] == 50.0
    assert (cli_env / "cert" / "smt2" / "cell_0.smt2").exists()


def test_verify_manifest_and_tamper_detection(cli_env):
    assert run_cli(["verify-manifest", "--run-dir", str(cli_env / "train")]) == 0
    # Flip one byte in the weights file: verification must fail.
    wpath = cli_env / "train" / "weights.json"
    data = bytearray(wpath.read_bytes())
    data[len(data) // 2] ^= 0x01
    backup = wpath.read_bytes()
    wpath.write_bytes(bytes(data))
    try:
        assert run_cli(["verify-manifest", "--run-dir", str(cli_env / "train")]) == 2
    finally:
        wpath.write_bytes(backup)
    assert run_cli(["verify-manifest", "--run-dir", str(cli_env / "train")]) == 0


def test_certify_counterexample_exit_code(cli_env, capsys):
    # Tight bound on a barely-trained net: counterexample expected, exit 1.
    code = run_cli([
        "certify", "--preset", "double-integrator-paper", "--out-dir", str(cli_env / "cert_bad"),
        "--weights", str(cli_env / "train" / "weights.json"), "--route", "b",
        "--rho", "0.001", "--delta", "1e-8", "--cells", "2", "--threads", "1",
    ])
    assert code == 1
    err = capsys.readouterr().err
    assert "counterexample" in err
    cert = json.loads((cli_env / "cert_bad" / "certificate.json").read_text())
    assert cert.get("eps_val") is None


def test_compare_command(cli_env):
    assert run_cli([
        "compare", "--preset", "double-integrator-paper", "--out-dir", str(cli_env / "cmp"),
        "--weights", str(cli_env / "train" / "weights.json"), "--grid-shape", "31",
        "--tol", "1e-5", "--threads", "1",
    ]) == 0
    summary = json.loads((cli_env / "cmp" / "compare.json").read_text())
    assert "max_abs_delta" in summary and "max_abs_delta_rim_excluded" in summary
    assert summary["max_abs_delta_rim_excluded"] <= summary["max_abs_delta"] + 1e-15


def test_bracket_command(cli_env):
    code = run_cli([
        "bracket", "--preset", "double-integrator-paper", "--out-dir", str(cli_env / "br"),
        "--weights", str(cli_env / "train" / "weights.json"),
        "--certificate", str(cli_env / "cert" / "certificate.json"),
        "--grid-shape", "31", "--tol", "1e-5", "--threads", "1",
    ])
    # eps_val = 50 makes the outer mask everything and inner empty: valid bracket.
    assert code == 0
    assert (cli_env / "br" / "masks.csv").exists()


def test_usage_errors():
    assert run_cli(["certify", "--preset", "double-integrator-paper", "--out-dir", "/tmp/x",
                    "--weights", "/nonexistent/weights.json"]) == 2
    assert run_cli(["solve-grid", "--config", "/nonexistent/cfg.json", "--out-dir", "/tmp/x"]) == 2
    assert run_cli(["nonsense-command"]) == 2


def test_rerun_is_byte_identical(tmp_path):
    os.environ["SOURCE_DATE_EPOCH"] = "1700000000"
    try:
        outs = []
        for name in ("a", "b"):
            d = tmp_path / name
            assert run_cli([
                "train", "--preset", "double-integrator-paper", "--out-dir", str(d),
                "--seed", "5", "--iterations", "30", "--batch-size", "128",
                "--buffer-size", "1024", "--threads", "1",
            ]) == 0
            assert run_cli([
                "certify", "--preset", "double-integrator-paper", "--out-dir", str(d / "cert"),
                "--weights", str(d / "weights.json"), "--rho", "50.0", "--delta", "1e-8",
                "--cells", "2", "--threads", "1",
            ]) == 0
            outs.append(d)
        a, b = outs
        for rel in ["weights.json", "loss_trace.csv", "manifest.json",
                    Path("cert") / "certificate.json", Path("cert") / "manifest.json"]:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
    finally:
        os.environ.pop("SOURCE_DATE_EPOCH", None)


def test_cegis_cli_smoke(tmp_path):
    code = run_cli([
        "cegis", "--preset", "double-integrator-paper", "--out-dir", str(tmp_path / "cg"),
        "--seed", "3", "--iterations", "30", "--batch-size", "128", "--buffer-size", "1024",
        "--rho", "50.0", "--delta", "1e-8", "--cells", "2", "--max-rounds", "2", "--threads", "1",
    ])
    assert code == 0
    report = json.loads((tmp_path / "cg" / "cegis_report.json").read_text())
    assert report["final_status"] == "CERTIFIED"
