import csv
import json

import numpy as np
import pytest

from orbitcert import certio
from orbitcert.analysis import integrate
from orbitcert.frontend import parse_problem, validate
from orbitcert.cli import main
from orbitcert.sdp import residual

from conftest import PLANAR_SRC


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    summary = json.loads(out.strip().splitlines()[-1])
    assert summary["exit"] == code
    return code, out, summary


@pytest.fixture()
def planar_file(tmp_path):
    p = tmp_path / "planar.prob"
    p.write_text(PLANAR_SRC)
    return p


def test_certify_planar(tmp_path, capsys, planar_file):
    code, out, summary = run(capsys, "certify", str(planar_file), "-o", str(tmp_path))
    assert code == 0
    assert summary["orbit_certified"] is True
    assert "exponentially stable periodic orbit certified" in out
    report = json.loads((tmp_path / "verification.json").read_text())
    assert report["verification"]["passed"]
    assert {v["verdict"] for v in report["invariance"]} == {"certified"}


def test_certificate_round_trip(tmp_path, capsys, planar_file):
    run(capsys, "certify", str(planar_file), "-o", str(tmp_path))
    path = tmp_path / "planar.cert"
    cert = certio.read_certificate(path)
    again = certio.loads(certio.dumps(cert))
    assert certio.dumps(again) == path.read_text()
    assert residual(again) == residual(cert)
    for name, (basis, Q) in cert.grams.items():
        assert again.grams[name][0] == basis
        assert np.array_equal(again.grams[name][1], Q)


def test_outputs_are_byte_identical(tmp_path, capsys, planar_file):
    a, b = tmp_path / "a", tmp_path / "b"
    outs = []
    for d in (a, b):
        outs.append(run(capsys, "certify", str(planar_file), "-o", str(d))[1])
    assert outs[0].replace(str(a), "") == outs[1].replace(str(b), "")
    assert (a / "planar.cert").read_bytes() == (b / "planar.cert").read_bytes()
    va = (a / "verification.json").read_text().replace(str(a), "")
    assert va == (b / "verification.json").read_text().replace(str(b), "")


def test_rate_and_verify(tmp_path, capsys, planar_file):
    run(capsys, "certify", str(planar_file), "-o", str(tmp_path))
    cert = str(tmp_path / "planar.cert")
    code, out, summary = run(capsys, "rate", str(planar_file), "--cert", cert)
    assert code == 0 and summary["c"] > 0.3
    assert out.startswith("c* = ")
    code, _, summary = run(capsys, "verify", cert, str(planar_file))
    assert code == 0 and summary["passed"]


def test_invariance_verdicts(tmp_path, capsys, planar_file):
    code, _, summary = run(capsys, "invariance", str(planar_file), "-o", str(tmp_path))
    assert code == 0
    assert summary["verdicts"] == {"inner": "certified", "outer": "certified"}


def test_shell_invariance_violation(tmp_path, capsys):
    code, out, summary = run(capsys, "invariance", "example_paper.prob", "-o", str(tmp_path))
    assert code == 1 and summary["verdicts"]["inner"] == "violated"
    data = json.loads((tmp_path / "invariance.json").read_text())
    inner = data[0]
    pts = [inner["point"]] + [m["point"] for m in inner["local_minimisers"]]
    assert any(np.linalg.norm(np.subtract(p, [0, 0, 0.7])) < 1e-3 for p in pts)
    assert inner["Dq"] <= -0.9


def test_simulate_csv(tmp_path, capsys, planar_file):
    run(capsys, "certify", str(planar_file), "-o", str(tmp_path))
    csv_path = tmp_path / "t.csv"
    code, _, summary = run(capsys, "simulate", str(planar_file), "--x0", "0.9,0", "--T", "1",
                           "--dt", "0.01", "--cert", str(tmp_path / "planar.cert"),
                           "--csv", str(csv_path))
    assert code == 0
    rows = list(csv.reader(csv_path.open()))
    assert rows[0] == ["t", "x1", "x2", "in_K", "min_eig_G", "max_transverse_eig"]
    assert len(rows) == 102
    assert float(rows[1][4]) > 0 and float(rows[1][5]) < 0
    # 17 significant digits round-trip exactly
    spec = validate(parse_problem(PLANAR_SRC))
    traj = integrate(spec.field, [0.9, 0.0], 0.01, 1.0)
    assert [float(r[1]) for r in rows[1:]] == list(traj.states[:, 0])


def test_simulate_without_certificate_leaves_traces_empty(tmp_path, capsys, planar_file):
    csv_path = tmp_path / "t.csv"
    run(capsys, "simulate", str(planar_file), "--x0", "0.9,0", "--T", "0.1", "--dt", "0.01",
        "--csv", str(csv_path))
    rows = list(csv.reader(csv_path.open()))
    assert rows[1][4] == "" and rows[1][5] == ""


@pytest.mark.parametrize("argv", [
    ["certify", "missing.prob"],
    ["certify", "example_paper.prob", "--set", "delta=abc"],
    ["certify", "example_paper.prob", "--set", "nonsense=1"],
    ["certify", "example_paper.prob", "--set", "metric_degree=5"],
    ["simulate", "example_paper.prob", "--x0", "1,2", "--T", "1"],
    ["frobnicate"],
])
def test_input_errors(capsys, argv, tmp_path):
    code = main(argv + ([] if argv == ["frobnicate"] else ["-o", str(tmp_path)]))
    out = capsys.readouterr().out
    assert code == 2
    assert json.loads(out.strip().splitlines()[-1])["exit"] == 2


def test_bad_problem_text(tmp_path, capsys):
    p = tmp_path / "bad.prob"
    p.write_text(PLANAR_SRC.replace("x^2 + y^2 - 0.5", "x^2 + w - 0.5"))
    code, out, _ = run(capsys, "invariance", str(p), "-o", str(tmp_path))
    assert code == 2 and "w" in out


def test_override_changes_degree(tmp_path, capsys, planar_file):
    code, _, _ = run(capsys, "certify", str(planar_file), "-o", str(tmp_path),
                     "--set", "metric_degree=0", "--set", "max_metric_degree=2")
    assert code == 0
    cert = certio.read_certificate(tmp_path / "planar.cert")
    assert cert.meta["metric_degree"] in (0, 2)
