"""Command-line entry point.

    orbitcert certify FILE       contraction certificate + invariance verdicts
    orbitcert invariance FILE    per-constraint boundary flow verdicts
    orbitcert simulate FILE      RK4 trajectory as CSV
    orbitcert rate FILE --cert C fixed-metric rate
    orbitcert verify CERT FILE   re-check a certificate file

Exit codes: 0 ok, 1 infeasible or violated, 2 input error, 3 solver stall or
numerical failure. The last line on stdout is a one-line JSON summary.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, certio
from .frontend import DEFAULT_OPTIONS, ParseError, ProblemSpec, SpecError, _parse_option, \
    load_problem, validate
from .sdp import Certificate, LoweringError, SolverOptions, extract_certificate, lower, solve
from .soscert import build_contraction_program, build_invariance_program, build_rate_program, \
    putinar_augment

log = logging.getLogger("orbitcert")

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    input: Path
    output_dir: Path
    overrides: dict = field(default_factory=dict)


def resolve_problem_path(name: str) -> Path:
    """A path on disk, or the name of a bundled problem file."""
    p = Path(name)
    if p.exists():
        return p
    data = resources.files("orbitcert") / "data" / p.name
    if data.is_file():
        return Path(str(data))
    raise InputError(f"problem file not found: {name}")


def parse_overrides(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in DEFAULT_OPTIONS:
            raise InputError(f"bad override {item!r}; known keys: {', '.join(sorted(DEFAULT_OPTIONS))}")
        try:
            out[key] = _parse_option(key, raw.strip(), 0, 1, 0)
        except ParseError as exc:
            raise InputError(f"bad override {item!r}: {exc}") from None
    return out


def load_config_spec(cfg: RunConfig) -> ProblemSpec:
    spec = load_problem(cfg.input)
    if cfg.overrides:
        opts = dict(spec.options)
        opts.update(cfg.overrides)
        degree = int(opts.get("metric_degree", spec.metric_degree))
        radius = opts.get("ball_radius", spec.ball_radius)
        spec = replace(spec, options=opts, metric_degree=degree, ball_radius=radius)
    # re-validate so overrides obey the same rules as the file
    return validate(spec)


def _solver_options(spec: ProblemSpec) -> SolverOptions:
    return SolverOptions(tol=float(spec.option("tol")), max_iter=int(spec.option("max_iter")))


def _summary(command: str, code: int, **extra) -> dict:
    status = {EXIT_OK: "ok", EXIT_NEGATIVE: "negative", EXIT_INPUT: "input_error",
              EXIT_NUMERIC: "numerical_failure"}[code]
    return {"command": command, "exit": code, "status": status, **extra}


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ----------------------------------------------------------------- invariance

def invariance_verdicts(spec: ProblemSpec, samples: int, seed: int) -> list[dict]:
    """SOS attempt, then a boundary scan, for every constraint of K."""
    opts = _solver_options(spec)
    out = []
    for i, name in enumerate(spec.constraint_names, start=1):
        entry: dict = {"index": i, "constraint": name}
        prog = build_invariance_program(spec, i)
        prob, low = lower(prog)
        sol = solve(prob, options=opts)
        t = None
        if sol.status == "optimal":
            cert = extract_certificate(spec, prog, sol, low)
            t = cert.value
            entry["t"] = t
            entry["residual"] = cert.meta["residual"]
        entry["solver_status"] = sol.status
        if t is not None and t > opts.tol:
            entry["verdict"] = "certified"
        else:
            viol = analysis.nagumo_scan(spec, i, samples=samples, seed=seed)
            if viol:
                entry["verdict"] = "violated"
                entry["point"] = [float(v) for v in viol[0].point]
                entry["Dq"] = viol[0].value
                entry["violations"] = len(viol)
                # symmetric systems have several equally bad boundary minimisers
                entry["local_minimisers"] = [
                    {"point": [float(c) for c in v.point], "Dq": v.value}
                    for v in viol if v.refined]
            else:
                entry["verdict"] = "undecided"
        out.append(entry)
        log.info("constraint %s: %s", name, entry["verdict"])
    return out


def _invariance_exit(verdicts: list[dict]) -> int:
    if all(v["verdict"] == "certified" for v in verdicts):
        return EXIT_OK
    if any(v["verdict"] == "violated" for v in verdicts):
        return EXIT_NEGATIVE
    if any(v["solver_status"] == "stalled" for v in verdicts):
        return EXIT_NUMERIC
    return EXIT_NEGATIVE


def cmd_invariance(cfg: RunConfig, args) -> tuple[int, dict]:
    spec = load_config_spec(cfg)
    samples = args.samples if args.samples is not None else 100000
    verdicts = invariance_verdicts(spec, samples, int(spec.option("seed")))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(cfg.output_dir / "invariance.json", verdicts)
    for v in verdicts:
        line = f"{v['constraint']}: {v['verdict']}"
        if v["verdict"] == "violated":
            pt = ", ".join(f"{c:.6g}" for c in v["point"])
            line += f" at ({pt}), Dq = {v['Dq']:.6g}"
        print(line)
        for lm in v.get("local_minimisers", [])[1:]:
            pt = ", ".join(f"{c:.6g}" for c in lm["point"])
            print(f"  also at ({pt}), Dq = {lm['Dq']:.6g}")
    code = _invariance_exit(verdicts)
    return code, {"verdicts": {v["constraint"]: v["verdict"] for v in verdicts}}


# ----------------------------------------------------------------- certify

def certify_contraction(spec: ProblemSpec) -> tuple[Certificate | None, list[dict]]:
    """Outer degree loop: metric_degree, +2, ... up to max_metric_degree."""
    aug = putinar_augment(spec)
    opts = _solver_options(spec)
    attempts = []
    top = max(int(spec.option("max_metric_degree")), spec.metric_degree)
    for deg in range(spec.metric_degree, top + 1, 2):
        trial = replace(aug, metric_degree=deg)
        prog = build_contraction_program(trial)
        prob, low = lower(prog)
        log.info("degree %d: %d equations, blocks %s", deg, prob.m, [b.dim for b in prob.blocks])
        sol = solve(prob, options=opts)
        eps = -sol.primal_objective
        rec = {"metric_degree": deg, "solver_status": sol.status, "eps": eps, "gap": sol.gap,
               "primal_residual": sol.primal_residual, "dual_residual": sol.dual_residual,
               "iterations": sol.iterations, "message": sol.message}
        attempts.append(rec)
        log.info("degree %d: %s, eps %.6g, gap %.2e", deg, sol.status, eps, sol.gap)
        if sol.status == "optimal" and eps > opts.tol:
            return extract_certificate(trial, prog, sol, low), attempts
    return None, attempts


def cmd_certify(cfg: RunConfig, args) -> tuple[int, dict]:
    spec = load_config_spec(cfg)
    samples = int(spec.option("samples"))
    seed = int(spec.option("seed"))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    cert, attempts = certify_contraction(spec)
    result: dict = {"attempts": attempts}
    if cert is None:
        code = EXIT_NUMERIC if attempts and attempts[-1]["solver_status"] == "stalled" \
            else EXIT_NEGATIVE
        print("no contraction certificate at the tried degrees")
    else:
        cert_path = cfg.output_dir / f"{spec.name}.cert"
        certio.write_certificate(cert, cert_path)
        report = analysis.verify_certificate(cert, putinar_augment(spec), samples=samples,
                                             seed=seed)
        result["verification"] = report.as_dict()
        result["certificate"] = str(cert_path)
        result["eps"] = cert.value
        result["metric_degree"] = cert.meta.get("metric_degree")
        print(f"contraction certificate: eps* = {cert.value:.10g} at metric degree "
              f"{cert.meta.get('metric_degree')} (gap {cert.meta['gap']:.2e}, "
              f"residual {cert.meta['residual']:.2e})")
        print("verification: " + ("passed" if report.passed else "FAILED ") +
              ("" if report.passed else
               ", ".join(k for k, ok in report.checks.items() if not ok)))
        code = EXIT_OK if report.passed else EXIT_NUMERIC

    # invariance is reported separately and never changes the exit code
    inv_samples = args.samples if args.samples is not None else 100000
    verdicts = invariance_verdicts(spec, inv_samples, seed)
    result["invariance"] = verdicts
    invariant = all(v["verdict"] == "certified" for v in verdicts)
    for v in verdicts:
        print(f"invariance of {v['constraint']}: {v['verdict']}")
    full = code == EXIT_OK and invariant
    result["conclusion"] = ("exponentially stable periodic orbit certified" if full else
                            "contraction certified; K not shown positively invariant, "
                            "no periodic-orbit conclusion" if code == EXIT_OK else
                            "no conclusion")
    print(result["conclusion"])
    _write_json(cfg.output_dir / "verification.json", result)
    summary = {"eps": result.get("eps"), "certificate": result.get("certificate"),
               "invariant": invariant, "orbit_certified": full}
    return code, summary


# ----------------------------------------------------------------- simulate

def _parse_x0(text: str, n: int) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise InputError(f"bad --x0 {text!r}") from None
    if len(vals) != n:
        raise InputError(f"--x0 needs {n} comma-separated values")
    return vals


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else format(float(v), ".17g")


def cmd_simulate(cfg: RunConfig, args) -> tuple[int, dict]:
    spec = load_config_spec(cfg)
    x0 = _parse_x0(args.x0, spec.n)
    if not (args.dt > 0 and args.T >= args.dt):
        raise InputError("need dt > 0 and T >= dt")
    traj = analysis.integrate(spec.field, x0, args.dt, args.T, spec)
    n = spec.n
    min_eig = np.full(len(traj), math.nan)
    trans = np.full(len(traj), math.nan)
    if args.cert:
        cert = certio.read_certificate(args.cert)
        if cert.metric is None:
            raise InputError("certificate carries no metric")
        min_eig = analysis.metric_eig_trace(cert.metric, traj).values
        trans = analysis.transverse_eig_trace(cert.metric, spec.field, traj).values
    out = Path(args.csv) if args.csv else cfg.output_dir / "trajectory.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["in_K", "min_eig_G",
                                                             "max_transverse_eig"])
        for k in range(len(traj)):
            w.writerow([_fmt(traj.times[k])] + [_fmt(v) for v in traj.states[k]]
                       + [int(traj.in_K[k]), _fmt(min_eig[k]), _fmt(trans[k])])
    final = traj.final
    escaped = bool(traj.diverged or np.any(np.linalg.norm(traj.states, axis=1) > 10.0))
    summary = {"csv": str(out), "samples": len(traj), "diverged": escaped,
               "final_state": [float(v) for v in final], "time_reached": float(traj.times[-1]),
               "left_K": [list(iv) for iv in traj.left_K]}
    if args.cert:
        ink = traj.in_K
        summary["min_eig_G_in_K"] = float(np.nanmin(min_eig[ink])) if ink.any() else None
        summary["max_transverse_eig_in_K"] = float(np.nanmax(trans[ink])) if ink.any() else None
    print(f"wrote {len(traj)} samples to {out}" + ("; trajectory diverged" if escaped else ""))
    return EXIT_OK, summary


# ----------------------------------------------------------------- rate / verify

def cmd_rate(cfg: RunConfig, args) -> tuple[int, dict]:
    spec = putinar_augment(load_config_spec(cfg))
    cert = certio.read_certificate(args.cert)
    if cert.metric is None:
        raise InputError("certificate carries no metric")
    prog = build_rate_program(spec, cert.metric)
    prob, low = lower(prog)
    opts = _solver_options(spec)
    sol = solve(prob, options=opts)
    if sol.status != "optimal":
        print(f"rate program {sol.status}: {sol.message}")
        return (EXIT_NUMERIC if sol.status == "stalled" else EXIT_NEGATIVE), \
            {"solver_status": sol.status}
    rc = extract_certificate(spec, prog, sol, low)
    print(f"c* = {rc.value:.10g}")
    code = EXIT_OK if rc.value > opts.tol else EXIT_NEGATIVE
    return code, {"c": rc.value, "gap": sol.gap, "residual": rc.meta["residual"]}


def cmd_verify(cfg: RunConfig, args) -> tuple[int, dict]:
    spec = putinar_augment(load_config_spec(cfg))
    cert = certio.read_certificate(args.certificate)
    if cert.kind not in ("contraction", "rate"):
        raise InputError(f"cannot verify a {cert.kind} certificate")
    report = analysis.verify_certificate(cert, spec, samples=int(spec.option("samples")),
                                         seed=int(spec.option("seed")))
    for key, ok in report.checks.items():
        print(f"{key}: {'pass' if ok else 'FAIL'}")
    return (EXIT_OK if report.passed else EXIT_NEGATIVE), report.as_dict()


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="orbitcert",
                                 description="SOS contraction certificates for periodic orbits")
    ap.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, problem=True):
        if problem:
            p.add_argument("problem", help="problem file (or name of a bundled example)")
        p.add_argument("-o", "--out", default=".", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a problem option")

    p = sub.add_parser("certify", help="search a contraction metric and check invariance")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="boundary samples per constraint")
    p = sub.add_parser("invariance", help="boundary flow verdict per constraint")
    common(p)
    p.add_argument("--samples", type=int, default=None, help="boundary samples per constraint")
    p = sub.add_parser("simulate", help="RK4 trajectory and eigenvalue traces as CSV")
    common(p)
    p.add_argument("--x0", required=True, help="initial state, comma separated")
    p.add_argument("--T", type=float, required=True, help="final time")
    p.add_argument("--dt", type=float, default=1e-3, help="step size")
    p.add_argument("--cert", help="certificate file supplying the metric")
    p.add_argument("--csv", help="CSV path (default OUT/trajectory.csv)")
    p = sub.add_parser("rate", help="maximise the rate for a fixed metric")
    common(p)
    p.add_argument("--cert", required=True, help="certificate file supplying the metric")
    p = sub.add_parser("verify", help="re-check a certificate against a problem")
    p.add_argument("certificate")
    common(p)
    return ap


COMMANDS = {"certify": cmd_certify, "invariance": cmd_invariance, "simulate": cmd_simulate,
            "rate": cmd_rate, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = EXIT_OK if exc.code == 0 else EXIT_INPUT
        if code:
            print(json.dumps(_summary("", code, error="bad command line")))
        return code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    extra: dict = {}
    try:
        cfg = RunConfig(args.command, resolve_problem_path(args.problem), Path(args.out),
                        parse_overrides(args.set))
        code, extra = COMMANDS[args.command](cfg, args)
    except (InputError, ParseError, SpecError, LoweringError, OSError, KeyError) as exc:
        print(f"error: {exc}")
        code, extra = EXIT_INPUT, {"error": str(exc)}
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}")
        code, extra = EXIT_NUMERIC, {"error": str(exc)}
    print(json.dumps(_clean(_summary(args.command, code, **extra)), sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
