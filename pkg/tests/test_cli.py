import csv
import hashlib
import json
import shutil
import subprocess

import numpy as np
import pytest

from robustss import cli
from robustss.instances import (
    MAX_T,
    SchemaError,
    build_instance,
    generate_random_instance,
    parse_instance,
    write_random_instance,
)
from robustss.market import MarketError
from robustss.primal import ConvergenceError


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def _solve(tmp_path, mf, af, *extra):
    out = tmp_path / "out"
    code = cli.main(["solve", "--market", str(mf), "--ambiguity", str(af), "--out-dir", str(out), *extra])
    return code, out


def test_parse_r1(r1_files):
    inst = parse_instance(*r1_files)
    assert inst.system.n_paths == 2
    assert inst.ambiguity.kind == "hull"
    assert np.allclose(inst.ambiguity.matrix, [[0.6, 0.4], [0.4, 0.6]])
    assert inst.warnings == []


def test_solve_r1(tmp_path, r1_files):
    code, out = _solve(tmp_path, *r1_files)
    assert code == 0
    rep = json.loads((out / "r1_market_x1.report.json").read_text())
    assert rep["schema"] == "robustss.report/1"
    assert rep["pass"]
    assert rep["primal"]["value"] == pytest.approx(0.0097123, abs=1e-6)
    assert rep["dual"]["y"] == pytest.approx(1.0, abs=1e-6)
    assert all("tol" in c and "value" in c for c in rep["checks"].values())
    rows = list(csv.DictReader((out / "r1_market_x1.paths.csv").open()))
    assert [r["S1"] for r in rows] == ["0.5", "2.0"]
    assert float(rows[1]["X_hat"]) == pytest.approx(1.2, abs=1e-6)
    timings = json.loads((out / "r1_market_x1.timings.json").read_text())
    assert set(timings) >= {"robust_primal", "robust_value", "conjugate_search"}


def test_singleton_Q_residuals(tmp_path, r1_files):
    af = _write(tmp_path / "q.json", {"type": "hull", "measures": [[2 / 3, 1 / 3]]})
    code, out = _solve(tmp_path, r1_files[0], af)
    assert code == 0
    rep = json.loads((out / "r1_market_x1.report.json").read_text())
    for k in ("r1", "r2", "r3", "r4", "r5"):
        assert rep["checks"][f"theorem2_{k}"]["value"] <= 1e-9


def test_primal_and_dual_subcommands(tmp_path, r1_files):
    mf, af = r1_files
    for sub in ("primal", "dual"):
        out = tmp_path / sub
        assert cli.main([sub, "--market", str(mf), "--ambiguity", str(af), "--out-dir", str(out)]) == 0
        rep = json.loads((out / "r1_market_x1.report.json").read_text())
        assert rep["pass"]


def test_superhedge_subcommand(tmp_path, r1_files):
    mf, af = r1_files
    claim = _write(tmp_path / "call.json", {"values": [0.0, 1.0]})
    out = tmp_path / "sh"
    code = cli.main(["superhedge", "--market", str(mf), "--ambiguity", str(af), "--claim", str(claim), "--out-dir", str(out)])
    assert code == 0
    rep = json.loads((out / "call_superhedge.report.json").read_text())
    assert rep["superhedge"]["price"] == pytest.approx(1.0 / 3.0, abs=1e-10)
    bad = _write(tmp_path / "bad.json", [1.0])
    code = cli.main(["superhedge", "--market", str(mf), "--ambiguity", str(af), "--claim", str(bad), "--out-dir", str(out)])
    assert code == 2


def test_verify_and_negative_control(tmp_path, r1_files, capsys):
    code, out = _solve(tmp_path, *r1_files)
    path = out / "r1_market_x1.report.json"
    assert cli.main(["verify", "--report", str(path)]) == 0
    rep = json.loads(path.read_text())
    rep["saddle"]["y_hat"] += 0.1
    bad = _write(tmp_path / "tampered.json", rep)
    capsys.readouterr()
    assert cli.main(["verify", "--report", str(bad)]) == 4
    text = capsys.readouterr().out
    assert "r2" in text and "FAIL" in text


def test_schema_errors(tmp_path, r1_files):
    mf, af = r1_files
    m = json.loads(mf.read_text())
    del m["levels"]
    assert _solve(tmp_path, _write(tmp_path / "m.json", m), af)[0] == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert _solve(tmp_path, tmp_path / "broken.json", af)[0] == 2
    assert _solve(tmp_path, mf, _write(tmp_path / "a.json", {"type": "cloud"}))[0] == 2
    assert _solve(tmp_path, tmp_path / "missing.json", af)[0] == 2
    with pytest.raises(SchemaError):
        build_instance({"T": "one", "s0": 1.0, "levels": [[1.0]]}, {"type": "hull", "measures": [[1.0]]})


def test_invariant_errors(tmp_path, r1_files, capsys):
    mf, af = r1_files
    m = json.loads(mf.read_text())
    m["calibration"] = {"calibration": "marginals", "marginals": [{"0.5": 1.4, "2.0": -0.4}]}
    capsys.readouterr()
    assert _solve(tmp_path, _write(tmp_path / "neg.json", m), af)[0] == 3
    assert "marginal_nonnegative" in capsys.readouterr().err
    # a hull member charging only the up path: no equivalent calibrated measure
    p2 = _write(tmp_path / "p2.json", {"type": "hull", "measures": [[0.0, 1.0]]})
    assert _solve(tmp_path, mf, p2)[0] == 3
    assert "assumption_P2" in capsys.readouterr().err
    assert _solve(tmp_path, mf, af, "--x0", "-1")[0] == 3
    assert _solve(tmp_path, mf, af, "--utility", "power:2")[0] == 3
    with pytest.raises(MarketError):
        build_instance({"T": 1, "s0": 1.0, "levels": [[2.0, 0.5]]}, {"type": "hull", "measures": [[0.5, 0.5]]})


def test_verification_and_solver_exit_codes(tmp_path, r1_files, monkeypatch):
    def fail(*a, **k):
        raise ConvergenceError("stalled")

    monkeypatch.setattr(cli, "run_pipeline", fail)
    assert _solve(tmp_path, *r1_files)[0] == 5

    class Bad:
        report = {"pass": False}
        csv_text = ""
        timings = {}
        passed = False

    monkeypatch.setattr(cli, "run_pipeline", lambda *a, **k: Bad())
    assert _solve(tmp_path, *r1_files)[0] == 4


def test_report_bytes_deterministic(tmp_path, r1_files):
    _, out1 = _solve(tmp_path / "a", *r1_files)
    _, out2 = _solve(tmp_path / "b", *r1_files)
    for ext in ("report.json", "paths.csv"):
        a = (out1 / f"r1_market_x1.{ext}").read_bytes()
        b = (out2 / f"r1_market_x1.{ext}").read_bytes()
        assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()


def test_seed_env_override(tmp_path, r1_files, monkeypatch):
    monkeypatch.setenv("ROBUSTSS_SEED", "42")
    _, out = _solve(tmp_path, *r1_files, "--seed", "3")
    rep = json.loads((out / "r1_market_x1.report.json").read_text())
    assert rep["config"]["seed"] == 42


def test_jobs_match_sequential(tmp_path, r1_files):
    _, seq = _solve(tmp_path / "seq", *r1_files, "--x0", "0.5", "2")
    _, par = _solve(tmp_path / "par", *r1_files, "--x0", "0.5", "2", "--jobs", "2")
    for stem in ("r1_market_x0.5", "r1_market_x2"):
        assert (seq / f"{stem}.report.json").read_bytes() == (par / f"{stem}.report.json").read_bytes()


def test_gen_deterministic(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["gen", "--seed", "7", "--out-dir", str(tmp_path / d)]) == 0
    for name in ("market_7.json", "ambiguity_7.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    inst = parse_instance(tmp_path / "a" / "market_7.json", tmp_path / "a" / "ambiguity_7.json")
    assert inst.system.n_paths >= 2


def test_gen_cap_violation(tmp_path):
    assert cli.main(["gen", "--seed", "1", "--T", str(MAX_T + 1), "--out-dir", str(tmp_path)]) == 2
    with pytest.raises(ValueError):
        generate_random_instance(1, max_levels=5)
    with pytest.raises(ValueError):
        generate_random_instance(1, max_options=3)


def test_generated_caps():
    for seed in range(50):
        ms, am = generate_random_instance(seed)
        assert 1 <= ms["T"] <= 3
        assert all(2 <= len(lv) <= 4 for lv in ms["levels"])
        assert len(ms["options"]) <= 2


def test_written_instance_roundtrip(tmp_path):
    mf, af = write_random_instance(11, tmp_path)
    ms, am = generate_random_instance(11)
    assert json.loads(mf.read_text()) == ms and json.loads(af.read_text()) == am


@pytest.mark.skipif(shutil.which("robustss") is None, reason="console script not installed")
def test_console_script(tmp_path, r1_files):
    mf, af = r1_files
    proc = subprocess.run(
        ["robustss", "solve", "--market", str(mf), "--ambiguity", str(af), "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr


def test_shipped_r1_fixture(r1_files):
    from pathlib import Path

    data = Path(__file__).parent / "data"
    a = parse_instance(data / "r1_market.json", data / "r1_ambiguity.json")
    b = parse_instance(*r1_files)
    assert a.market_spec == b.market_spec and a.ambiguity_spec == b.ambiguity_spec
