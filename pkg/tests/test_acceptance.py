"""End-to-end acceptance checks, one test and one report line per criterion."""
import json
import math
import time

import numpy as np
import pytest

from orbitcert import certio
from orbitcert.analysis import (contraction_values, integrate, inverse_metric_identity_residual,
                                metric_eig_trace, nagumo_scan, sample_K, transverse_eig_trace)
from orbitcert.cli import main
from orbitcert.linalg import min_eigenvalue, orthogonal_complement, symmetric_eigvals
from orbitcert.polyring import PolyMatrix, VectorField, partial
from orbitcert.sdp import extract_certificate, lower, solve
from orbitcert.soscert import build_invariance_program

from conftest import random_poly, var
import test_sdp

REPORT: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)


@pytest.fixture(scope="module")
def certified(tmp_path_factory):
    out = tmp_path_factory.mktemp("certify")
    t0 = time.perf_counter()
    code = main(["certify", "example_paper.prob", "-o", str(out)])
    elapsed = time.perf_counter() - t0
    result = json.loads((out / "verification.json").read_text())
    cert_path = out / "shell_cycle_3d.cert"
    cert = certio.read_certificate(cert_path) if cert_path.exists() else None
    return dict(code=code, elapsed=elapsed, result=result, cert=cert)


def test_criterion_1_shell_certification(certified):
    cert = certified["cert"]
    ok = certified["code"] == 0 and cert is not None
    if ok:
        eps, gap, res = cert.value, cert.meta["gap"], cert.meta["residual"]
        deg = cert.meta["metric_degree"]
        ok = eps > 1e-4 and gap <= 1e-8 and res <= 1e-6 and deg <= 6
        ok = ok and certified["elapsed"] <= 1800
        detail = (f"eps*={eps:.6g} gap={gap:.3g} residual={res:.3g} degree={deg} "
                  f"time={certified['elapsed']:.0f}s")
    else:
        detail = f"exit {certified['code']}, attempts {certified['result']['attempts']}"
    report(1, ok, detail)
    assert ok


def test_criterion_2_sampling_validation(certified, shell_spec):
    cert = certified["cert"]
    assert cert is not None
    pts = sample_K(shell_spec, 10 ** 4, np.random.default_rng(0))
    min_eig = float(np.linalg.eigvalsh(cert.metric.evaluate_many(pts))[:, 0].min())
    vals, flagged = contraction_values(cert.metric, shell_spec.field, pts)
    worst = float(np.max(vals[~flagged]))
    ok = (len(pts) == 10 ** 4 and not flagged.any() and min_eig >= shell_spec.delta - 1e-6
          and worst <= -cert.value + 1e-6)
    report(2, ok, f"samples={len(pts)} min_eig_G={min_eig:.6g} (>= {shell_spec.delta - 1e-6:.6g}) "
                  f"max_transverse={worst:.6g} (<= {-cert.value + 1e-6:.6g})")
    assert ok


def _distance_to_cycle(x):
    return math.hypot(math.hypot(x[0], x[1]) - 1.0, x[2])


def test_criterion_3_trajectories(shell_spec):
    conv = integrate(shell_spec.field, [1.0, 1.0, 0.2], 1e-3, 50.0, shell_spec)
    dist = _distance_to_cycle(conv.final)
    div = integrate(shell_spec.field, [1.03, 1.03, 0.25], 1e-3, 50.0, shell_spec)
    norms = np.linalg.norm(div.states, axis=1)
    escaped = np.flatnonzero(norms > 10)
    t_escape = float(div.times[escaped[0]]) if escaped.size else math.inf
    ok = dist < 0.05 and not conv.diverged and t_escape < 50.0
    report(3, ok, f"terminal distance={dist:.3g} (< 0.05); |x|>10 at t={t_escape:.4g} (< 50)")
    assert ok


def test_criterion_4_traces(certified, shell_spec):
    cert = certified["cert"]
    assert cert is not None
    traj = integrate(shell_spec.field, [1.0, 1.0, 0.2], 1e-3, 50.0, shell_spec)
    g = metric_eig_trace(cert.metric, traj)
    t = transverse_eig_trace(cert.metric, shell_spec.field, traj)
    ink = traj.in_K
    g_ok = float(np.mean(g.values[ink] > 0))
    t_ok = float(np.mean(t.values[ink] < 0))
    ok = ink.any() and g_ok == 1.0 and t_ok == 1.0 and not t.flagged[ink].any()
    report(4, ok, f"in-K samples={int(ink.sum())} minG>0 at {100 * g_ok:.1f}% "
                  f"(min {g.min(True):.4g}), transverse<0 at {100 * t_ok:.1f}% "
                  f"(max {t.max(True):.4g})")
    assert ok


def test_criterion_5_invariance_violation(certified, tmp_path, capsys):
    code = main(["invariance", "example_paper.prob", "-o", str(tmp_path)])
    capsys.readouterr()
    inner = json.loads((tmp_path / "invariance.json").read_text())[0]
    pts = [inner.get("point")] + [m["point"] for m in inner.get("local_minimisers", [])]
    near = min((np.linalg.norm(np.subtract(p, [0, 0, 0.7])) for p in pts if p), default=math.inf)
    dq = inner.get("Dq", 0.0)
    claimed = certified["result"]["conclusion"] == "exponentially stable periodic orbit certified"
    ok = code == 1 and inner["verdict"] == "violated" and dq <= -0.9 and near < 1e-3 and not claimed
    report(5, ok, f"exit={code} Dq={dq:.6g} distance to (0,0,0.7)={near:.3g}; "
                  f"full conclusion claimed={claimed}")
    assert ok


def test_criterion_6_invariance_certified(planar_spec):
    assert int(planar_spec.option("multiplier_degree")) <= 4
    values, counts = [], []
    for i in (1, 2):
        prog = build_invariance_program(planar_spec, i)
        prob, low = lower(prog)
        sol = solve(prob)
        t = extract_certificate(planar_spec, prog, sol, low).value if sol.status == "optimal" else -1
        values.append(t)
        counts.append(len(nagumo_scan(planar_spec, i, samples=10 ** 5)))
    ok = all(t > 1e-8 for t in values) and counts == [0, 0]
    report(6, ok, f"t*={[round(v, 9) for v in values]} violations={counts} in 1e5 samples each")
    assert ok


def test_criterion_7_sdp_suite():
    probs = test_sdp._analytic_problems()
    expect = [1.0, 1.0, -2.0]
    errs = [abs(solve(p, tol=test_sdp.ACCURATE).objective - e) for p, e in zip(probs, expect)]
    rng = np.random.default_rng(2024)
    oracle_ok = 0
    duality_ok = True
    for _ in range(100):
        prob = test_sdp._random_instance(rng, m=int(rng.integers(1, 6)))
        sol = solve(prob)
        good = sol.status == "optimal"
        for M in (sol.X[0], sol.S[0]):
            ev = symmetric_eigvals(M)
            good &= bool(np.allclose(ev, np.linalg.eigvalsh(M), atol=1e-10 * (1 + abs(ev).max())))
            good &= min_eigenvalue(M) >= -1e-7 * (1 + abs(ev).max())
        oracle_ok += good
        for h in sol.history:
            scale = 1 + abs(h["pobj"]) + abs(h["dobj"])
            duality_ok &= h["abs_gap"] >= 0 and h["pobj"] - h["dobj"] - h["infeas"] >= -1e-9 * scale
    ok = max(errs) <= 1e-8 and oracle_ok == 100 and duality_ok
    report(7, ok, f"analytic errors={[float('%.2g' % e) for e in errs]} oracle={oracle_ok}/100 "
                  f"weak duality={'held' if duality_ok else 'violated'}")
    assert ok


def test_criterion_8_property_suites():
    rng = np.random.default_rng(8)
    ring_fail = 0
    for _ in range(1000):
        p, q, r = (random_poly(rng, 3, 3, 5) for _ in range(3))
        checks = [p + q == q + p, p * q == q * p,
                  ((p + q) + r - (p + (q + r))).max_abs_coef() <= 1e-10,
                  ((p * q) * r - p * (q * r)).max_abs_coef() <= 1e-9,
                  (p * (q + r) - (p * q + p * r)).max_abs_coef() <= 1e-9]
        checks += [(partial(p * q, i) - (p * partial(q, i) + q * partial(p, i))).max_abs_coef()
                   <= 1e-9 for i in range(3)]
        ring_fail += not all(checks)

    x = var(0, 1)
    F = VectorField([-x])
    e1, e2 = (abs(integrate(F, [1.0], dt, 1.0).final[0] - math.exp(-1)) for dt in (0.1, 0.05))
    factor = e1 / e2

    proj = 0.0
    for _ in range(1000):
        f = rng.normal(size=int(rng.integers(2, 7)))
        B = orthogonal_complement(f)
        proj = max(proj, np.abs(B.T @ f).max() / max(1.0, np.linalg.norm(f)),
                   np.abs(B.T @ B - np.eye(f.size - 1)).max())

    x2, y2 = var(0, 2), var(1, 2)
    Fv = VectorField([-y2 + 0.3 * x2 * x2, x2 - 0.2 * y2])
    ratios = []
    for _ in range(5):
        a, c = random_poly(rng, 2, 2, 3) * 0.1, random_poly(rng, 2, 2, 3) * 0.1
        b = random_poly(rng, 2, 2, 3) * 0.05
        G = PolyMatrix([[2 + a, b], [b, 2 + c]])
        r1 = inverse_metric_identity_residual(G, Fv, [0.4, -0.2], 2e-3)
        r2 = inverse_metric_identity_residual(G, Fv, [0.4, -0.2], 1e-3)
        ratios.append(r1 / r2)
    ok = ring_fail == 0 and 12 <= factor <= 20 and proj <= 1e-12 and all(3 <= q <= 5 for q in ratios)
    report(8, ok, f"ring/Leibniz failures={ring_fail}/1000 RK4 factor={factor:.3f} "
                  f"projection error={proj:.2g} identity dt-halving ratios="
                  f"{[round(q, 2) for q in ratios]}")
    assert ok
