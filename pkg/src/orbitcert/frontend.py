"""Problem-file parsing.

A problem file is line oriented with five sections::

    system <name>
    vars x y z
    dynamics
      dx = <expr>
    set
      <name>: <expr> >= 0
    options
      key = value

Expressions use ``+ - * ^`` with parentheses and decimal numbers; implicit
multiplication is rejected. ``#`` starts a comment.
"""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .polyring import Polynomial, VectorField, to_string

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed problem text. ``offset`` indexes into the parsed source."""

    def __init__(self, message: str, line: int, column: int, token: str, offset: int = 0):
        self.message = message
        self.line = line
        self.column = column
        self.token = token
        self.offset = offset
        super().__init__(f"line {line}, column {column}: {message} (at {token!r})")


class SpecError(ValueError):
    """A problem that parses but violates a validation rule."""


DEFAULT_OPTIONS: dict[str, float | int | str | None] = {
    "metric_degree": 4,
    "max_metric_degree": 6,
    "s_degree": None,          # default metric_degree
    "p1_degree": None,         # default metric_degree
    "p2_degree": None,         # default metric_degree - 1
    "multiplier_degree": 4,    # invariance multipliers
    "delta": 1e-3,
    "metric_upper": 1.0,
    "tol": 1e-8,
    "max_iter": 200,
    "ball_radius": None,
    "box": None,
    "samples": 10000,
    "seed": 0,
    "newton_reduction": 0,
}

INT_OPTIONS = {"metric_degree", "max_metric_degree", "s_degree", "p1_degree", "p2_degree",
               "multiplier_degree", "max_iter", "samples", "seed", "newton_reduction"}


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    variables: tuple[str, ...]
    field: VectorField
    constraints: tuple[Polynomial, ...]
    constraint_names: tuple[str, ...]
    metric_degree: int = 4
    ball_radius: float | None = None
    options: dict = field(default_factory=dict, compare=False)
    warnings: tuple[str, ...] = ()
    ball_scheduled: bool = False
    augmented: bool = False

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def option(self, key: str):
        value = self.options.get(key, DEFAULT_OPTIONS.get(key))
        if value is None:
            if key in ("s_degree", "p1_degree"):
                return self.metric_degree
            if key == "p2_degree":
                return max(self.metric_degree - 1, 0)
        return value

    @property
    def delta(self) -> float:
        return float(self.option("delta"))

    def bounding_box(self) -> np.ndarray:
        """(n, 2) array of lower/upper bounds used for sampling K."""
        box = self.option("box")
        if box is not None:
            arr = np.asarray(box, dtype=float)
            if arr.ndim == 1:
                arr = np.tile(arr, (self.n, 1))
            return arr
        if self.ball_radius is not None:
            r = float(self.ball_radius)
            return np.tile([-r, r], (self.n, 1))
        boxes = [b for b in (_quadratic_box(q) for q in self.constraints) if b is not None]
        if boxes:
            lo = np.max([b[:, 0] for b in boxes], axis=0)
            hi = np.min([b[:, 1] for b in boxes], axis=0)
            return np.stack([lo, hi], axis=1)
        return np.tile([-10.0, 10.0], (self.n, 1))

    def in_K(self, points: np.ndarray, slack: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        mask = np.ones(pts.shape[0], dtype=bool)
        for q in self.constraints:
            mask &= q.evaluate_many(pts) >= -slack
        return mask

    def to_text(self) -> str:
        lines = [f"system {self.name}", "vars " + " ".join(self.variables), "dynamics"]
        for v, f in zip(self.variables, self.field):
            lines.append(f"  d{v} = {to_string(f, self.variables)}")
        lines.append("set")
        for name, q in zip(self.constraint_names, self.constraints):
            lines.append(f"  {name}: {to_string(q, self.variables)} >= 0")
        lines.append("options")
        lines.append(f"  metric_degree = {self.metric_degree}")
        if self.ball_radius is not None:
            lines.append(f"  ball_radius = {self.ball_radius!r}")
        for key in sorted(self.options):
            if key in ("metric_degree", "ball_radius") or self.options[key] is None:
                continue
            value = self.options[key]
            if key == "box":
                value = ",".join(repr(float(v)) for v in np.ravel(value))
            lines.append(f"  {key} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Stable hash of the mathematical content (field, set, degrees)."""
        h = hashlib.sha256()
        h.update(" ".join(self.variables).encode())
        for f in self.field:
            h.update(b"|f|" + to_string(f, self.variables).encode())
        for q in self.constraints:
            h.update(b"|q|" + to_string(q, self.variables).encode())
        h.update(f"|deg|{self.metric_degree}".encode())
        return h.hexdigest()[:16]


def _quadratic_box(q: Polynomial) -> np.ndarray | None:
    """Exact bounding box of {q >= 0} for a quadratic with negative-definite top part."""
    if q.degree != 2:
        return None
    n = q.arity
    A = np.zeros((n, n))
    b = np.zeros(n)
    c = 0.0
    for mon, coef in q.terms.items():
        idx = [i for i, e in enumerate(mon) for _ in range(e)]
        if len(idx) == 2:
            i, j = idx
            if i == j:
                A[i, i] += coef
            else:
                A[i, j] += coef / 2
                A[j, i] += coef / 2
        elif len(idx) == 1:
            b[idx[0]] += coef
        else:
            c += coef
    if np.max(np.linalg.eigvalsh(A)) >= 0:
        return None
    # q = x'Ax + b'x + c, maximised at center = -A^{-1} b / 2
    P = -A
    center = np.linalg.solve(P, b / 2)
    level = c + center @ P @ center
    if level < 0:
        return np.tile([0.0, 0.0], (n, 1))
    half = np.sqrt(level * np.diag(np.linalg.inv(P)))
    return np.stack([center - half, center + half], axis=1)


# ---------------------------------------------------------------- expressions

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*^()])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


class _ExprParser:
    def __init__(self, src: str, variables: Sequence[str], line: int = 1, base: int = 0,
                 col0: int = 1):
        self.src = src
        self.vars = {v: i for i, v in enumerate(variables)}
        self.n = len(variables)
        self.line = line
        self.base = base
        self.col0 = col0
        self.toks = self._lex()
        self.i = 0

    def error(self, message: str, tok: _Tok) -> ParseError:
        return ParseError(message, self.line, self.col0 + tok.pos, tok.text, self.base + tok.pos)

    def _lex(self) -> list[_Tok]:
        toks = []
        pos = 0
        while pos < len(self.src):
            m = _TOKEN_RE.match(self.src, pos)
            if not m:
                bad = _Tok("bad", self.src[pos], pos)
                raise self.error("unexpected character", bad)
            kind = m.lastgroup
            if kind != "ws":
                text = m.group()
                if kind == "number" and m.end() < len(self.src) and (
                        self.src[m.end()].isalpha() or self.src[m.end()] in "._"):
                    end = m.end()
                    while end < len(self.src) and (self.src[end].isalnum() or self.src[end] in "._"):
                        end += 1
                    raise self.error("malformed number", _Tok("bad", self.src[pos:end], pos))
                toks.append(_Tok(kind, text, pos))
            pos = m.end()
        toks.append(_Tok("eof", "", len(self.src)))
        return toks

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def parse(self) -> Polynomial:
        if self.peek().kind == "eof":
            raise self.error("empty expression", self.peek())
        p = self.expr()
        tok = self.peek()
        if tok.kind != "eof":
            if tok.text == ")":
                raise self.error("unbalanced ')'", tok)
            raise self.error("unexpected token (implicit multiplication is not allowed)", tok)
        return p

    def expr(self) -> Polynomial:
        p = self.term()
        while self.peek().text in ("+", "-") and self.peek().kind == "op":
            op = self.take().text
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self) -> Polynomial:
        p = self.factor()
        while self.peek().kind == "op" and self.peek().text == "*":
            self.take()
            p = p * self.factor()
        return p

    def factor(self) -> Polynomial:
        tok = self.peek()
        if tok.kind == "op" and tok.text in ("-", "+"):
            self.take()
            p = self.factor()
            return -p if tok.text == "-" else p
        p = self.base_()
        if self.peek().kind == "op" and self.peek().text == "^":
            self.take()
            exp_tok = self.take()
            if exp_tok.kind != "number" or not exp_tok.text.isdigit():
                raise self.error("exponent must be a non-negative integer", exp_tok)
            p = p ** int(exp_tok.text)
        return p

    def base_(self) -> Polynomial:
        tok = self.take()
        if tok.kind == "number":
            return Polynomial.constant(float(tok.text), self.n)
        if tok.kind == "name":
            if tok.text not in self.vars:
                raise self.error(f"unknown identifier {tok.text!r}", tok)
            return Polynomial.variable(self.vars[tok.text], self.n)
        if tok.kind == "op" and tok.text == "(":
            p = self.expr()
            close = self.take()
            if close.text != ")":
                raise self.error("expected ')'", close)
            return p
        if tok.kind == "eof":
            raise self.error("unexpected end of expression", tok)
        raise self.error("unexpected token", tok)


def parse_polynomial(src: str, variables: Sequence[str]) -> Polynomial:
    if not variables:
        raise ValueError("need at least one variable")
    if len(set(variables)) != len(variables):
        raise ValueError("variable names must be distinct")
    return _ExprParser(src, variables).parse()


# ---------------------------------------------------------------- problem files

SECTIONS = ("system", "vars", "dynamics", "set", "options")


def _parse_option(key: str, raw: str, line: int, col: int, offset: int):
    raw = raw.strip()
    tok_err = ParseError(f"bad value for option {key!r}", line, col, raw, offset)
    if key == "box":
        try:
            vals = [float(v) for v in raw.split(",")]
        except ValueError:
            raise tok_err from None
        if len(vals) % 2:
            raise tok_err
        return np.array(vals).reshape(-1, 2) if len(vals) > 2 else np.array(vals)
    if raw.lower() in ("none", ""):
        return None
    try:
        if key in INT_OPTIONS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise tok_err from None


def parse_problem(src: str) -> ProblemSpec:
    name = None
    variables: list[str] | None = None
    dyn: dict[str, tuple[str, int, int, int]] = {}
    sets: list[tuple[str, str, int, int, int]] = []
    options: dict = {}
    seen: set[str] = set()
    section = None
    offset = 0
    for lineno, raw in enumerate(src.splitlines(keepends=True), start=1):
        line_start = offset
        offset += len(raw)
        text = raw.rstrip("\r\n")
        body = text.split("#", 1)[0]
        if not body.strip():
            continue
        stripped = body.strip()
        first = stripped.split()[0]
        indent = len(body) - len(body.lstrip())
        if first in SECTIONS and indent == 0:
            section = first
            seen.add(first)
            rest = stripped[len(first):].strip()
            if first == "system":
                name = rest or "unnamed"
            elif first == "vars":
                variables = rest.replace(",", " ").split()
                if not variables:
                    raise ParseError("vars section lists no variables", lineno, 1, text,
                                     line_start)
            elif rest:
                col = body.index(rest) + 1
                raise ParseError(f"unexpected text after '{first}'", lineno, col, rest,
                                 line_start + col - 1)
            continue
        if section in (None, "system", "vars"):
            col = indent + 1
            raise ParseError("line outside of a section", lineno, col, stripped, line_start + indent)
        if section == "dynamics":
            if "=" not in body:
                raise ParseError("expected 'd<var> = <expr>'", lineno, indent + 1, stripped,
                                 line_start + indent)
            lhs, rhs = body.split("=", 1)
            lhs = lhs.strip()
            start = body.index("=") + 1
            dyn[lhs] = (rhs, lineno, line_start + start, start + 1)
        elif section == "set":
            m = re.match(r"\s*([A-Za-z_][A-Za-z_0-9]*)\s*:(.*?)>=\s*0\s*$", body)
            if not m:
                raise ParseError("expected '<name>: <expr> >= 0'", lineno, indent + 1, stripped,
                                 line_start + indent)
            start = m.start(2)
            sets.append((m.group(1), m.group(2), lineno, line_start + start, start + 1))
        elif section == "options":
            if "=" not in body:
                raise ParseError("expected 'key = value'", lineno, indent + 1, stripped,
                                 line_start + indent)
            key, val = body.split("=", 1)
            key = key.strip()
            start = body.index("=") + 1
            if key not in DEFAULT_OPTIONS:
                raise ParseError(f"unknown option {key!r}", lineno, indent + 1, key,
                                 line_start + indent)
            options[key] = _parse_option(key, val, lineno, start + 1, line_start + start)

    for required in ("vars", "dynamics", "set"):
        if required not in seen:
            raise SpecError(f"missing required section '{required}'")
    assert variables is not None
    if len(set(variables)) != len(variables):
        raise SpecError("duplicate variable names")

    comps = []
    for v in variables:
        key = f"d{v}"
        if key not in dyn:
            raise SpecError(f"dynamics section has no equation for '{key}'")
        rhs, lineno, off, col = dyn.pop(key)
        comps.append(_ExprParser(rhs, variables, lineno, off, col).parse())
    if dyn:
        raise SpecError(f"dynamics for unknown variables: {sorted(dyn)}")
    cons, names = [], []
    for cname, expr, lineno, off, col in sets:
        cons.append(_ExprParser(expr, variables, lineno, off, col).parse())
        names.append(cname)

    metric_degree = options.pop("metric_degree", DEFAULT_OPTIONS["metric_degree"])
    ball = options.pop("ball_radius", None)
    spec = ProblemSpec(name=name or "unnamed", variables=tuple(variables),
                       field=VectorField(comps), constraints=tuple(cons),
                       constraint_names=tuple(names), metric_degree=int(metric_degree),
                       ball_radius=ball, options=options)
    check_spec(spec)
    return spec


def check_spec(spec: ProblemSpec) -> None:
    """Structural rules; raises SpecError."""
    if spec.n < 1:
        raise SpecError("need at least one state variable")
    if spec.num_constraints < 1:
        raise SpecError("the set section must contain at least one constraint")
    if spec.metric_degree < 0 or spec.metric_degree % 2:
        raise SpecError(f"metric_degree must be even and >= 0, got {spec.metric_degree}")
    mmax = int(spec.option("max_metric_degree"))
    if mmax % 2:
        raise SpecError("max_metric_degree must be even")
    for q in spec.constraints:
        if q.arity != spec.n:
            raise SpecError("constraint arity does not match the state dimension")
    if spec.field.arity != spec.n:
        raise SpecError("field arity does not match the state dimension")
    if spec.ball_radius is not None and spec.ball_radius <= 0:
        raise SpecError("ball_radius must be positive")
    if spec.delta < 0:
        raise SpecError("delta must be non-negative")


def _superlevel_compact(q: Polynomial, rng: np.random.Generator) -> bool:
    """Whether {q >= 0} is bounded, judged from the leading form of q."""
    d = q.degree
    if d <= 0 or d % 2:
        return False
    top = Polynomial({m: c for m, c in q.terms.items() if sum(m) == d}, q.arity)
    if d == 2:
        return _quadratic_box(q) is not None
    dirs = rng.standard_normal((4000, q.arity))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return bool(np.max(top.evaluate_many(dirs)) < 0)


def validate(spec: ProblemSpec, max_samples: int = 10**6) -> ProblemSpec:
    """Compactness and non-emptiness checks on K.

    If no constraint alone has a bounded superlevel set and no ball radius is
    given, a ball constraint is scheduled (see ``soscert.putinar_augment``).
    """
    check_spec(spec)
    rng = np.random.default_rng(int(spec.option("seed")))
    warnings = list(spec.warnings)
    scheduled = spec.ball_scheduled
    compact = any(_superlevel_compact(q, rng) for q in spec.constraints)
    if not compact and spec.ball_radius is None and not spec.augmented:
        msg = "no single constraint defines a compact set; a ball constraint will be added"
        if msg not in warnings:
            warnings.append(msg)
            log.warning(msg)
        scheduled = True
    box = spec.bounding_box()
    found = False
    drawn = 0
    batch = 20000
    while drawn < max_samples:
        k = min(batch, max_samples - drawn)
        pts = rng.uniform(box[:, 0], box[:, 1], size=(k, spec.n))
        drawn += k
        if spec.in_K(pts).any():
            found = True
            break
    if not found:
        raise SpecError(f"K appears empty: no point of {drawn} samples satisfies all constraints")
    return replace(spec, warnings=tuple(warnings), ball_scheduled=scheduled)


def load_problem(path) -> ProblemSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_problem(fh.read())
