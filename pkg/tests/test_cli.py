import json
import subprocess
import sys
from pathlib import Path

from vpn_reserve.cli import main, run
from vpn_reserve.scenario import load_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def read_manifest(out_dir: Path) -> dict:
    return json.loads((out_dir / "manifest.json").read_text())


def test_stationary_run_writes_manifest_and_hashes(tmp_path):
    scenario = load_scenario(SCENARIOS / "threesite.toml")
    artifact = run("stationary", scenario, tmp_path / "out")
    manifest = read_manifest(tmp_path / "out")
    assert manifest["command"] == "stationary"
    assert manifest["scenario_sha256"] == scenario.content_hash
    assert set(manifest["files"]) == {"occupation.csv", "strategy.csv"}
    import hashlib

    for name, digest in manifest["files"].items():
        assert hashlib.sha256((tmp_path / "out" / name).read_bytes()).hexdigest() == digest


def test_dump_lp_flag(tmp_path):
    scenario = load_scenario(SCENARIOS / "threesite.toml")
    run("stationary", scenario, tmp_path / "out", dump_lp_files=True)
    dumps = list((tmp_path / "out").glob("lp_X_*.txt"))
    assert len(dumps) == 3


def test_seed_override_changes_outputs(tmp_path):
    scenario = load_scenario(SCENARIOS / "threesite.toml")
    a = run("bellman", scenario, tmp_path / "a", seed=1)
    b = run("bellman", scenario, tmp_path / "b", seed=2)
    assert a.files["trajectory_X.csv"] != b.files["trajectory_X.csv"]


def test_cli_main_success_and_error(tmp_path, capsys):
    rc = main(["stationary", "--scenario", str(SCENARIOS / "threesite.toml"),
               "--out", str(tmp_path / "ok")])
    assert rc == 0
    rc = main(["hierarchy", "--scenario", str(SCENARIOS / "threesite.toml"),
               "--out", str(tmp_path / "bad")])
    assert rc == 1
    err = capsys.readouterr().err.strip().splitlines()[-1]
    payload = json.loads(err)
    assert payload["status"] == "error"
    assert payload["command"] == "hierarchy"


def test_cli_entrypoint_subprocess(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "vpn_reserve.cli", "bellman",
         "--scenario", str(SCENARIOS / "threesite.toml"),
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert result.returncode == 0
    assert "wrote" in result.stdout


def test_pg_command_outputs(tmp_path):
    scenario = load_scenario(SCENARIOS / "threesite.toml")
    artifact = run("pg", scenario, tmp_path / "out")
    assert {"theta_trace.csv", "lambda_trace.csv", "states.csv"} <= set(artifact.files)
    header = (tmp_path / "out" / "theta_trace.csv").read_text().splitlines()[0]
    assert header == "chain,epoch,theta1,theta2,theta3"
