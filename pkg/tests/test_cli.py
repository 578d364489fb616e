import json
import subprocess
import sys
import time

import pytest

from semicone.cli import main

CLASSICAL_A1 = {"k": 2, "n": 2, "V": 1, "W": 2, "coeffs": {"2,0": [[1.0], [0.0]], "0,2": [[0.0], [1.0]]}}
CLASSICAL_A2 = {"k": 2, "n": 2, "V": 1, "W": 1, "coeffs": {"1,1": [[1.0]]}}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_smoke_suite_writes_eight_manifests(tmp_path):
    t0 = time.perf_counter()
    assert main(["suite", "smoke", "--output-dir", str(tmp_path)]) == 0
    assert time.perf_counter() - t0 < 30
    manifests = sorted(tmp_path.glob("*/manifest.json"))
    assert len(manifests) == 8
    commands = {json.loads(m.read_text())["command"] for m in manifests}
    assert len(commands) == 8


def test_ornstein_check_classical_exits_two(tmp_path):
    a1, a2 = write(tmp_path / "a1.json", CLASSICAL_A1), write(tmp_path / "a2.json", CLASSICAL_A2)
    out = tmp_path / "out"
    assert main(["ornstein-check", "--a1", a1, "--a2", a2, "--output-dir", str(out)]) == 2
    report = json.loads((out / "report.json").read_text())
    piece = report["pieces"][0]
    assert report["factors"] is False and piece["C"] is None
    assert abs(abs(piece["witness"][1]) - 1.0) < 1e-12
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 2


def test_ornstein_check_factorizable_exits_zero(tmp_path):
    a2 = {"k": 2, "n": 2, "V": 1, "W": 1, "coeffs": {"2,0": [[1.0]], "0,2": [[-1.0]]}}
    out = tmp_path / "out"
    code = main(["ornstein-check", "--a1", write(tmp_path / "a1.json", CLASSICAL_A1),
                 "--a2", write(tmp_path / "a2.json", a2), "--c", "1.5", "--output-dir", str(out)])
    assert code == 0
    assert json.loads((out / "report.json").read_text())["holds"] is True


def test_hessian_demo_reports_witness(tmp_path):
    cfg = write(tmp_path / "cfg.json", {"command": "hessian-demo", "params": {"M": [-1000.0]}})
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--output-dir", str(out)]) == 0
    w = json.loads((out / "report.json").read_text())["witnesses"][0]
    assert w["value"] < -1000.0
    assert w["t_star"] == pytest.approx(w["predicted_t"], rel=0.2)
    assert (out / "witness.csv").read_text().splitlines()[0] == "M,t_star,value,predicted_t"


def test_malformed_json_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad), "--output-dir", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "JSONDecodeError"


def test_schema_violation_exits_one(tmp_path, capsys):
    cfg = write(tmp_path / "cfg.json", {"command": "no-such-command", "params": {}})
    assert main(["run", "--config", cfg, "--output-dir", str(tmp_path / "o")]) == 1
    assert "error" in json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_unknown_suite_exits_one(tmp_path):
    assert main(["suite", "nonsense", "--output-dir", str(tmp_path)]) == 1


def test_check_dconvex_negative_verdict(tmp_path):
    cfg = {"command": "check-dconvex", "params": {"function": {"name": "quadratic", "q": [[-1, 0, 0], [0, -1, 0],
                                                                                          [0, 0, -1]]},
                                                  "n_segments": 50}}
    code = main(["run", "--config", write(tmp_path / "c.json", cfg), "--output-dir", str(tmp_path / "o")])
    assert code == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["worst_violation"] > 0 and report["witness"] is not None


def test_reproducible_outputs(tmp_path):
    for run in ("a", "b"):
        assert main(["suite", "smoke", "--output-dir", str(tmp_path / run), "--seed", "3"]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "semicone.cli", "suite", "nonsense", "--output-dir",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1
    assert json.loads(proc.stderr.strip())["error"] == "ConfigError"
