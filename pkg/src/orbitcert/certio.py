"""Plain-text certificate files.

Layout (sections in this order)::

    [meta]            key = <json value>, one per line
    [vars]            state variable names
    [dynamics]        d<var> = <expr>
    [set]             <name>: <expr> >= 0
    [polynomials]     g11 = <expr>, p1 = <expr>, ...
    [gram <name>]     basis = <monomial>, <monomial>, ...
                      then one row of the Gram matrix per line

Polynomials over (X, W) name the W block ``w_<var>``. Floats are written
with 17 significant digits so a file reads back to the same bits.
"""
from __future__ import annotations

import json
import math

import numpy as np

from .frontend import ParseError, parse_polynomial
from .polyring import Monomial, PolyMatrix, Polynomial, VectorField, to_string
from .sdp import Certificate


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def w_names(variables) -> list[str]:
    names = [f"w_{v}" for v in variables]
    if set(names) & set(variables):
        raise ValueError("state variable names collide with the W block names")
    return names


def _monomial_text(m: Monomial, names: list[str]) -> str:
    factors = []
    for name, e in zip(names, m):
        if e == 1:
            factors.append(name)
        elif e > 1:
            factors.append(f"{name}^{e}")
    return "*".join(factors) if factors else "1"


def _json_safe(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    return None


def dumps(cert: Certificate) -> str:
    xs = list(cert.variables)
    all_names = xs + w_names(xs)
    out = ["# periodic orbit certificate", "[meta]"]
    meta = {"kind": cert.kind, "value": cert.value, **cert.meta}
    for key in sorted(meta):
        val = _json_safe(meta[key])
        if val is None and meta[key] is not None:
            continue
        out.append(f"{key} = {json.dumps(val)}")
    out.append("[vars]")
    out.append(" ".join(xs))
    out.append("[dynamics]")
    for v, f in zip(xs, cert.field):
        out.append(f"d{v} = {to_string(f, xs)}")
    out.append("[set]")
    for name, q in zip(cert.constraint_names, cert.constraints):
        out.append(f"{name}: {to_string(q, xs)} >= 0")
    out.append("[polynomials]")
    if cert.metric is not None:
        n = len(xs)
        for k in range(n):
            for l in range(k, n):
                out.append(f"g{k + 1}{l + 1} = {to_string(cert.metric[k, l], xs)}")
    for name in sorted(cert.polys):
        p = cert.polys[name]
        names = xs if p.arity == len(xs) else all_names
        out.append(f"{name} = {to_string(p, names)}")
    gram_names = all_names if cert.kind != "invariance" else xs
    for name, (basis, Q) in cert.grams.items():
        out.append(f"[gram {name}]")
        out.append("basis = " + ", ".join(_monomial_text(m, gram_names) for m in basis))
        for row in np.atleast_2d(Q):
            out.append(" ".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def write_certificate(cert: Certificate, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cert))


def _sections(text: str) -> list[tuple[str, list[tuple[int, str]]]]:
    secs: list[tuple[str, list[tuple[int, str]]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            secs.append((line[1:-1].strip(), []))
            continue
        if not secs:
            raise ParseError("content before the first section", lineno, 1, line)
        secs[-1][1].append((lineno, line))
    return secs


def loads(text: str) -> Certificate:
    meta: dict = {}
    xs: list[str] = []
    dyn: dict[str, str] = {}
    cons: list[tuple[str, str]] = []
    polys_src: dict[str, str] = {}
    grams_src: list[tuple[str, list[tuple[int, str]]]] = []
    for name, lines in _sections(text):
        if name == "meta":
            for lineno, line in lines:
                key, _, val = line.partition("=")
                try:
                    meta[key.strip()] = json.loads(val.strip())
                except json.JSONDecodeError:
                    raise ParseError("bad metadata value", lineno, 1, line) from None
        elif name == "vars":
            xs = " ".join(l for _, l in lines).split()
        elif name == "dynamics":
            for lineno, line in lines:
                lhs, _, rhs = line.partition("=")
                dyn[lhs.strip()] = rhs
        elif name == "set":
            for lineno, line in lines:
                cname, _, rest = line.partition(":")
                if not rest.rstrip().endswith(">= 0"):
                    raise ParseError("expected '<name>: <expr> >= 0'", lineno, 1, line)
                cons.append((cname.strip(), rest.rstrip()[:-4]))
        elif name == "polynomials":
            for lineno, line in lines:
                lhs, _, rhs = line.partition("=")
                polys_src[lhs.strip()] = rhs
        elif name.startswith("gram "):
            grams_src.append((name[5:].strip(), lines))
        else:
            raise ParseError(f"unknown section [{name}]", 0, 1, name)
    if not xs:
        raise ParseError("certificate lists no variables", 0, 1, "")
    all_names = xs + w_names(xs)
    n = len(xs)
    field = VectorField([parse_polynomial(dyn[f"d{v}"], xs) for v in xs])
    constraints = [parse_polynomial(src, xs) for _, src in cons]
    kind = meta.pop("kind")
    value = float(meta.pop("value"))

    metric = None
    polys: dict[str, Polynomial] = {}
    entries = [[None] * n for _ in range(n)]
    for key, src in polys_src.items():
        if len(key) >= 3 and key[0] == "g" and key[1:].isdigit() and len(key) == 3:
            k, l = int(key[1]) - 1, int(key[2]) - 1
            entries[k][l] = entries[l][k] = parse_polynomial(src, xs)
        else:
            try:
                polys[key] = parse_polynomial(src, xs)
            except ParseError:
                polys[key] = parse_polynomial(src, all_names)
    if entries[0][0] is not None:
        metric = PolyMatrix(entries)
    if kind in ("contraction", "rate"):
        # p1 and p2 live over (X, W) even when they happen not to mention W
        polys = {k: (p.embed(2 * n) if p.arity == n else p) for k, p in polys.items()}

    gram_names = all_names if kind != "invariance" else xs
    grams: dict[str, tuple[list[Monomial], np.ndarray]] = {}
    for gname, lines in grams_src:
        (lineno, first), rows = lines[0], lines[1:]
        if not first.startswith("basis"):
            raise ParseError("gram section must start with 'basis ='", lineno, 1, first)
        basis = []
        for tok in first.partition("=")[2].split(","):
            p = parse_polynomial(tok, gram_names)
            (mon, _), = p.terms.items()
            basis.append(mon)
        Q = np.array([[float(v) for v in row.split()] for _, row in rows]).reshape(len(basis),
                                                                                   len(basis))
        grams[gname] = (basis, Q)
    return Certificate(kind=kind, value=value, variables=xs, field=field,
                       constraints=constraints, constraint_names=[c for c, _ in cons],
                       metric=metric, polys=polys, grams=grams, meta=meta)


def read_certificate(path) -> Certificate:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
