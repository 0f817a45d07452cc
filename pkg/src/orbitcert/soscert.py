"""Symbolic SOS programs for contraction, metric positivity, invariance and rate.

Programs live in the joint ring R[X, W] laid out as (x_1..x_n, w_1..w_n).
Decision polynomials have coefficients that are scalar decision variables;
SOS-constrained expressions are polynomials whose coefficients are affine in
those variables.

The contraction condition is kept homogeneous of degree two in W. With the
equality multiplier for |W|^2 = 1 eliminated analytically (p1 = -eps), the
master expression reads

    -eps |W|^2 - W' sym(J G - G_dot / 2) W - sum_i s_i q_i + p2 W' f

and every SOS multiplier s_i is a quadratic form in W.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Hashable, Iterable, Mapping

import numpy as np

from .frontend import ProblemSpec
from .polyring import (Monomial, PolyMatrix, Polynomial, VectorField, grlex_key, jacobian,
                       monomial_basis, orbital_derivative)

log = logging.getLogger(__name__)

# key of the constant part inside an affine form
CONST = None
VarKey = Hashable   # int (free variable) | (block, a, b) (Gram entry, a <= b) | CONST


class DegreeError(ValueError):
    """A constrained expression violates the degree layout of its program."""

    def __init__(self, constraint: str, part: str, offending: list[Monomial]):
        self.constraint = constraint
        self.part = part
        self.offending = offending
        super().__init__(f"{constraint}: term(s) from {part} break the W-degree layout: "
                         f"{offending[:5]}")


class AffinePoly:
    """Polynomial whose coefficients are affine forms in decision variables."""

    __slots__ = ("terms", "arity")

    def __init__(self, terms: Mapping[Monomial, Mapping[VarKey, float]] | None, arity: int):
        self.arity = arity
        self.terms: dict[Monomial, dict[VarKey, float]] = {}
        for mon, form in (terms or {}).items():
            clean = {k: float(v) for k, v in form.items() if v != 0.0}
            if clean:
                self.terms[tuple(mon)] = clean

    @classmethod
    def from_polynomial(cls, p: Polynomial) -> "AffinePoly":
        return cls({m: {CONST: c} for m, c in p.terms.items()}, p.arity)

    @classmethod
    def variable_times(cls, key: VarKey, p: Polynomial, scale: float = 1.0) -> "AffinePoly":
        return cls({m: {key: scale * c} for m, c in p.terms.items()}, p.arity)

    def copy(self) -> "AffinePoly":
        out = AffinePoly(None, self.arity)
        out.terms = {m: dict(f) for m, f in self.terms.items()}
        return out

    def iadd(self, other: "AffinePoly", scale: float = 1.0) -> "AffinePoly":
        if other.arity != self.arity:
            raise ValueError("arity mismatch")
        for m, form in other.terms.items():
            tgt = self.terms.setdefault(m, {})
            for k, v in form.items():
                tgt[k] = tgt.get(k, 0.0) + scale * v
        return self

    def __add__(self, other: "AffinePoly") -> "AffinePoly":
        return self.copy().iadd(other)

    def __sub__(self, other: "AffinePoly") -> "AffinePoly":
        return self.copy().iadd(other, -1.0)

    def scaled(self, s: float) -> "AffinePoly":
        out = AffinePoly(None, self.arity)
        out.terms = {m: {k: s * v for k, v in f.items()} for m, f in self.terms.items()}
        return out

    def times(self, p: Polynomial) -> "AffinePoly":
        """Product with a numeric polynomial."""
        if p.arity != self.arity:
            raise ValueError("arity mismatch")
        out: dict[Monomial, dict[VarKey, float]] = {}
        for m2, form in self.terms.items():
            for m1, c in p.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                tgt = out.setdefault(m, {})
                for k, v in form.items():
                    tgt[k] = tgt.get(k, 0.0) + c * v
        res = AffinePoly(None, self.arity)
        res.terms = out
        return res

    def partial(self, i: int) -> "AffinePoly":
        out: dict[Monomial, dict[VarKey, float]] = {}
        for m, form in self.terms.items():
            e = m[i]
            if e == 0:
                continue
            mm = m[:i] + (e - 1,) + m[i + 1:]
            tgt = out.setdefault(mm, {})
            for k, v in form.items():
                tgt[k] = tgt.get(k, 0.0) + e * v
        res = AffinePoly(None, self.arity)
        res.terms = out
        return res

    def prune(self, tol: float = 1e-14) -> "AffinePoly":
        for m in list(self.terms):
            form = {k: v for k, v in self.terms[m].items() if abs(v) >= tol}
            if form:
                self.terms[m] = form
            else:
                del self.terms[m]
        return self

    def variables(self) -> set:
        out = set()
        for form in self.terms.values():
            out.update(k for k in form if k is not CONST)
        return out

    def evaluate(self, free: np.ndarray, grams: Mapping[int, np.ndarray] | None = None) -> Polynomial:
        """Substitute numbers for all decision variables."""
        grams = grams or {}
        out = {}
        for m, form in self.terms.items():
            acc = 0.0
            for k, v in form.items():
                if k is CONST:
                    acc += v
                elif isinstance(k, tuple):
                    blk, a, b = k
                    acc += v * grams[blk][a, b]
                else:
                    acc += v * free[k]
            out[m] = acc
        return Polynomial(out, self.arity)

    def coefficient_vector(self, monomials: list[Monomial], free: np.ndarray,
                           grams: Mapping[int, np.ndarray] | None = None) -> np.ndarray:
        p = self.evaluate(free, grams)
        return np.array([p.coefficient(m) for m in monomials])

    def w_degrees(self, n_x: int) -> set[int]:
        return {sum(m[n_x:]) for m in self.terms}


@dataclass
class DecisionPoly:
    """Polynomial unknown: free coefficients on a template or an SOS Gram form."""

    name: str
    kind: str                     # "free" | "sos"
    arity: int
    monomials: list[Monomial]     # template support (free) or Gram basis (sos)
    offset: int = 0               # first free-variable index (free kind)
    block: int | None = None      # Gram block id (sos kind)
    n_w: int = 0
    # sos kind: Gram directions along g*h may be traded for a free multiplier (see lower())
    absorbed: list[tuple[Polynomial, frozenset]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind == "sos" and self.monomials:
            doubled = {tuple(2 * e for e in m) for m in self.monomials}
            if any(sum(m) % 2 for m in doubled):
                raise ValueError("sos decision polynomial must have even degree")

    @property
    def size(self) -> int:
        return len(self.monomials)

    def expr(self) -> AffinePoly:
        if self.kind == "free":
            return AffinePoly({m: {self.offset + i: 1.0} for i, m in enumerate(self.monomials)},
                              self.arity)
        terms: dict[Monomial, dict[VarKey, float]] = {}
        basis = self.monomials
        for a in range(len(basis)):
            for b in range(a, len(basis)):
                m = tuple(x + y for x, y in zip(basis[a], basis[b]))
                tgt = terms.setdefault(m, {})
                tgt[(self.block, a, b)] = tgt.get((self.block, a, b), 0.0) + (1.0 if a == b else 2.0)
        return AffinePoly(terms, self.arity)

    def value(self, free: np.ndarray, grams: Mapping[int, np.ndarray] | None = None) -> Polynomial:
        if self.kind == "free":
            return Polynomial({m: free[self.offset + i] for i, m in enumerate(self.monomials)},
                              self.arity)
        return gram_polynomial(self.monomials, grams[self.block], self.arity)


def gram_polynomial(basis: list[Monomial], Q: np.ndarray, arity: int) -> Polynomial:
    """basis' Q basis as a polynomial."""
    out: dict[Monomial, float] = {}
    for a in range(len(basis)):
        for b in range(len(basis)):
            m = tuple(x + y for x, y in zip(basis[a], basis[b]))
            out[m] = out.get(m, 0.0) + Q[a, b]
    return Polynomial(out, arity)


@dataclass
class SosConstraint:
    name: str
    expr: AffinePoly
    basis: list[Monomial] | None = None   # Gram basis override; chosen by lower() otherwise
    n_w: int = 0                           # W-block size (0 for programs over X only)
    # (g, monomials of a free multiplier of g): Gram directions along g*h can be traded
    # for that multiplier, so lower() may drop them from the Gram basis
    absorbed: list[tuple[Polynomial, frozenset]] = field(default_factory=list)


@dataclass
class SosProgram:
    """Feasibility/optimisation problem over decision polynomials.

    ``objective`` maps free-variable indices to coefficients and is maximised.
    """

    arity: int
    n_x: int
    num_free: int = 0
    free_names: list[str] = field(default_factory=list)
    decision: dict[str, DecisionPoly] = field(default_factory=dict)
    gram_blocks: dict[int, str] = field(default_factory=dict)   # block id -> decision name
    constraints: list[SosConstraint] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def new_free(self, name: str, monomials: list[Monomial]) -> DecisionPoly:
        dp = DecisionPoly(name, "free", self.arity, list(monomials), offset=self.num_free,
                          n_w=self.arity - self.n_x)
        self.num_free += len(monomials)
        self.free_names.extend(f"{name}[{i}]" for i in range(len(monomials)))
        self.decision[name] = dp
        return dp

    def new_scalar(self, name: str) -> DecisionPoly:
        return self.new_free(name, [(0,) * self.arity])

    def new_sos(self, name: str, basis: list[Monomial], absorbed=()) -> DecisionPoly:
        block = len(self.gram_blocks)
        dp = DecisionPoly(name, "sos", self.arity, list(basis), block=block,
                          n_w=self.arity - self.n_x, absorbed=list(absorbed))
        self.gram_blocks[block] = name
        self.decision[name] = dp
        return dp

    def add_constraint(self, name: str, expr: AffinePoly, basis=None,
                       absorbed=()) -> SosConstraint:
        c = SosConstraint(name, expr.prune(), basis, self.arity - self.n_x, list(absorbed))
        self.constraints.append(c)
        return c

    def unused_variables(self) -> list[str]:
        used: set = set(self.objective)
        for c in self.constraints:
            used |= c.expr.variables()
        missing = [self.free_names[i] for i in range(self.num_free) if i not in used]
        for blk, name in self.gram_blocks.items():
            if not any(isinstance(k, tuple) and k[0] == blk for k in used):
                missing.append(name)
        return missing


# ----------------------------------------------------------------- helpers

def lift(p: Polynomial, arity: int) -> Polynomial:
    return p.embed(arity, 0)


def w_vars(n: int) -> list[Polynomial]:
    return [Polynomial.variable(n + k, 2 * n) for k in range(n)]


def w_norm2(n: int) -> Polynomial:
    acc = Polynomial.zero(2 * n)
    for w in w_vars(n):
        acc = acc + w * w
    return acc


def x_monomials(n: int, degree: int, arity: int) -> list[Monomial]:
    """Monomials in the first n indeterminates, padded to ``arity``."""
    return [m + (0,) * (arity - n) for m in monomial_basis(n, degree)]


def quadratic_form_basis(n: int, x_degree: int) -> list[Monomial]:
    """Gram basis x^a w_k (|a| <= x_degree) for SOS forms quadratic in W."""
    if x_degree < 0:
        return []
    return monomial_basis(2 * n, x_degree + 1, n_w=n, w_degree_cap=1, w_degree_min=1)


def metric_template(prog: SosProgram, n: int, degree: int) -> list[list[AffinePoly]]:
    """Symmetric n x n matrix of free polynomials in X (degree <= ``degree``)."""
    mons = x_monomials(n, degree, prog.arity)
    G: list[list[AffinePoly | None]] = [[None] * n for _ in range(n)]
    for k in range(n):
        for l in range(k, n):
            dp = prog.new_free(f"g{k + 1}{l + 1}", mons)
            G[k][l] = G[l][k] = dp.expr()
    return G  # type: ignore[return-value]


def _quadratic_in_w(M: list[list[AffinePoly]], n: int) -> AffinePoly:
    """W' M W for a symmetric matrix of affine polynomials in R[X, W]."""
    W = w_vars(n)
    acc = AffinePoly(None, 2 * n)
    for k in range(n):
        for l in range(n):
            acc.iadd(M[k][l].times(W[k] * W[l]))
    return acc


def contraction_matrix_affine(G: list[list[AffinePoly]], field: VectorField, n: int
                              ) -> list[list[AffinePoly]]:
    """sym(J G - G_dot / 2) with J, f lifted into R[X, W]."""
    N = 2 * n
    J = jacobian(field)
    Jl = [[lift(J[i, j], N) for j in range(n)] for i in range(n)]
    fl = [lift(fi, N) for fi in field]
    Gdot = [[None] * n for _ in range(n)]
    for k in range(n):
        for l in range(k, n):
            acc = AffinePoly(None, N)
            for j in range(n):
                acc.iadd(G[k][l].partial(j).times(fl[j]))
            Gdot[k][l] = Gdot[l][k] = acc
    JG = [[None] * n for _ in range(n)]
    for i in range(n):
        for l in range(n):
            acc = AffinePoly(None, N)
            for k in range(n):
                if Jl[i][k].is_zero():
                    continue
                acc.iadd(G[k][l].times(Jl[i][k]))
            JG[i][l] = acc
    M = [[None] * n for _ in range(n)]
    for i in range(n):
        for l in range(i, n):
            sym = JG[i][l].scaled(0.5).iadd(JG[l][i], 0.5).iadd(Gdot[i][l], -0.5)
            M[i][l] = M[l][i] = sym
    return M  # type: ignore[return-value]


def contraction_matrix_numeric(G: PolyMatrix, field: VectorField) -> PolyMatrix:
    """sym(J G - G_dot / 2) over R[X] for a numeric metric."""
    J = jacobian(field)
    M = J @ G - orbital_derivative(G, field).scale(0.5)
    return M.symmetrized()


# ----------------------------------------------------------------- operations

def putinar_augment(spec: ProblemSpec) -> ProblemSpec:
    """Append a ball constraint R^2 - |x|^2 >= 0 when validation scheduled one.

    R is 1.5 times the largest corner norm of K's bounding box, or the
    configured ball_radius.
    """
    if spec.augmented or not (spec.ball_scheduled or spec.ball_radius is not None):
        return spec
    n = spec.n
    if spec.ball_radius is not None:
        R = float(spec.ball_radius)
    else:
        box = spec.bounding_box()
        corners = np.abs(box).max(axis=1)
        R = 1.5 * float(np.linalg.norm(corners))
    q = Polynomial.constant(R * R, n)
    for i in range(n):
        x = Polynomial.variable(i, n)
        q = q - x * x
    return replace(spec, constraints=spec.constraints + (q,),
                   constraint_names=spec.constraint_names + ("ball",),
                   augmented=True, ball_scheduled=False)


def quotient_monomials(monos: Iterable[Monomial], q: Polynomial) -> frozenset:
    """Monomials m with m * q supported inside ``monos``."""
    monos = frozenset(monos)
    cands = {tuple(a - b for a, b in zip(m, t)) for m in monos for t in q.terms}
    return frozenset(c for c in cands if min(c) >= 0
                     and all(tuple(x + y for x, y in zip(c, t)) in monos for t in q.terms))


def _multiplier_x_degree(cap: int, q: Polynomial, target: int) -> int:
    """Largest even X-degree for an SOS multiplier of q within both caps."""
    d = min(cap, target - q.degree)
    d -= d % 2
    return d


def build_contraction_program(spec: ProblemSpec, G_fixed: PolyMatrix | None = None,
                              metric_constraints: bool = True) -> SosProgram:
    """Master SOS program: maximise eps such that the contraction form is certified on K.

    With ``G_fixed`` the metric is frozen and the objective variable is the
    rate c instead of eps (see ``build_rate_program``).
    """
    n = spec.n
    if n < 2:
        raise ValueError("contraction certificates need at least two state variables")
    N = 2 * n
    prog = SosProgram(arity=N, n_x=n)
    deg = spec.metric_degree
    prog.meta.update(kind="contraction" if G_fixed is None else "rate",
                     spec_hash=spec.digest(), metric_degree=deg, n=n)

    if G_fixed is None:
        G = metric_template(prog, n, deg)
    else:
        if G_fixed.shape != (n, n) or not G_fixed.is_symmetric():
            raise ValueError("fixed metric must be a symmetric n x n matrix")
        G = [[AffinePoly.from_polynomial(lift(G_fixed[k, l], N)) for l in range(n)]
             for k in range(n)]
        prog.meta["metric"] = G_fixed
    obj_name = "eps" if G_fixed is None else "c"
    eps = prog.new_scalar(obj_name)
    prog.objective = {eps.offset: 1.0}

    field_ = spec.field
    M = contraction_matrix_affine(G, field_, n)
    quad = _quadratic_in_w(M, n)
    deg_M = max((sum(m[:n]) for m in quad.terms), default=0)
    f_deg = max(f.degree for f in field_)
    p2_deg = int(spec.option("p2_degree"))
    s_cap = int(spec.option("s_degree"))
    target = max(deg_M, p2_deg + f_deg)
    if target % 2:
        target += 1

    master = AffinePoly.variable_times(eps.offset, w_norm2(n), -1.0)
    master.iadd(quad, -1.0)
    parts = {"eps": master.copy(), "W'MW": quad}

    p2 = prog.new_free("p2", monomial_basis(N, p2_deg + 1, n_w=n, w_degree_cap=1,
                                            w_degree_min=1, x_degree_cap=p2_deg))
    wf = Polynomial.zero(N)
    for k, fk in enumerate(field_):
        wf = wf + w_vars(n)[k] * lift(fk, N)
    p2_term = p2.expr().times(wf)
    master.iadd(p2_term)
    parts["p2 W'f"] = p2_term

    for i, (qname, q) in enumerate(zip(spec.constraint_names, spec.constraints)):
        sdeg = _multiplier_x_degree(s_cap, q, target)
        if sdeg < 0:
            continue
        qN = lift(q, N)
        s = prog.new_sos(f"s_{qname}", quadratic_form_basis(n, sdeg // 2),
                         absorbed=[(wf, quotient_monomials(p2.monomials, qN))])
        term = s.expr().times(qN)
        master.iadd(term, -1.0)
        parts[f"s_{qname} q_{qname}"] = term
    _check_w_layout("master", parts, n, exact=2)
    prog.add_constraint("master", master, absorbed=[(wf, frozenset(p2.monomials))])
    prog.meta["p1"] = "p1 = -" + obj_name

    if G_fixed is None and metric_constraints:
        build_metric_positivity_constraints(spec, prog, G)
    missing = prog.unused_variables()
    if missing:
        log.debug("decision variables absent from all constraints: %s", missing[:10])
    return prog


def _check_w_layout(name: str, parts: Mapping[str, AffinePoly], n: int, exact: int) -> None:
    for part, poly in parts.items():
        bad = [m for m in poly.terms if sum(m[n:]) != exact]
        if bad:
            raise DegreeError(name, part, sorted(bad, key=grlex_key))


def build_metric_positivity_constraints(spec: ProblemSpec, prog: SosProgram,
                                        G: list[list[AffinePoly]] | None = None) -> SosProgram:
    """Append delta*I <= G(x) (and G(x) <= metric_upper*I) on K, scalarised in W.

    Both are quadratic-module certificates: W'(G - delta I)W - sum sigma_i q_i
    is SOS. The upper bound fixes the scale of G, without which eps could be
    inflated by scaling the metric.
    """
    n = spec.n
    N = 2 * n
    if G is None:
        names = [f"g{k + 1}{l + 1}" for k in range(n) for l in range(k, n)]
        if not all(nm in prog.decision for nm in names):
            raise ValueError("program has no metric decision polynomial")
        G = [[None] * n for _ in range(n)]
        for k in range(n):
            for l in range(k, n):
                G[k][l] = G[l][k] = prog.decision[f"g{k + 1}{l + 1}"].expr()
    quadG = _quadratic_in_w(G, n)
    W2 = AffinePoly.from_polynomial(w_norm2(n))
    deg_G = max((sum(m[:n]) for m in quadG.terms), default=0)
    bounds = [("metric_lower", quadG - W2.scaled(spec.delta))]
    upper = spec.option("metric_upper")
    if upper is not None and float(upper) > 0:
        bounds.append(("metric_upper", W2.scaled(float(upper)) - quadG))
    for cname, expr in bounds:
        target = max(deg_G, 2)
        for qname, q in zip(spec.constraint_names, spec.constraints):
            sdeg = _multiplier_x_degree(max(deg_G, 2), q, target)
            if sdeg < 0:
                continue
            sigma = prog.new_sos(f"sigma_{cname}_{qname}", quadratic_form_basis(n, sdeg // 2))
            expr.iadd(sigma.expr().times(lift(q, N)), -1.0)
        _check_w_layout(cname, {cname: expr}, n, exact=2)
        prog.add_constraint(cname, expr)
    return prog


def build_rate_program(spec: ProblemSpec, G_fixed: PolyMatrix) -> SosProgram:
    """Maximise c with the metric frozen; all multipliers stay free."""
    for row in G_fixed.entries:
        for p in row:
            if not isinstance(p, Polynomial):
                raise TypeError("fixed metric must have numeric polynomial entries")
    if G_fixed.arity != spec.n:
        raise ValueError("fixed metric must be a polynomial matrix over the state variables")
    return build_contraction_program(spec, G_fixed=G_fixed)


def build_invariance_program(spec: ProblemSpec, i: int) -> SosProgram:
    """Certify Dq_i[f] >= 0 on K intersected with {q_i = 0}.

    Program over R[X]: maximise t subject to
        Dq_i[f] - mu q_i - sum_{j != i} tau_j q_j - t  in SOS,
    mu free, tau_j SOS. ``i`` is 1-based. t* > 0 certifies inward flow.
    """
    l = spec.num_constraints
    if not 1 <= i <= l:
        raise IndexError(f"constraint index {i} outside 1..{l}")
    n = spec.n
    prog = SosProgram(arity=n, n_x=n)
    q = spec.constraints[i - 1]
    md = int(spec.option("multiplier_degree"))
    prog.meta.update(kind="invariance", spec_hash=spec.digest(), index=i,
                     constraint=spec.constraint_names[i - 1], multiplier_degree=md, n=n)
    dq = spec.field.lie_derivative(q)
    t = prog.new_scalar("t")
    prog.objective = {t.offset: 1.0}
    expr = AffinePoly.from_polynomial(dq)
    expr.iadd(AffinePoly.variable_times(t.offset, Polynomial.constant(1.0, n)), -1.0)
    mu = prog.new_free("mu", monomial_basis(n, md))
    expr.iadd(mu.expr().times(q), -1.0)
    target = max(dq.degree, md + q.degree)
    for j, (qname, qj) in enumerate(zip(spec.constraint_names, spec.constraints), start=1):
        if j == i:
            continue
        tdeg = _multiplier_x_degree(md, qj, target)
        if tdeg < 0:
            continue
        tau = prog.new_sos(f"tau_{qname}", monomial_basis(n, tdeg // 2),
                           absorbed=[(q, quotient_monomials(mu.monomials, qj))])
        expr.iadd(tau.expr().times(qj), -1.0)
    prog.add_constraint("invariance", expr, absorbed=[(q, frozenset(mu.monomials))])
    return prog


def master_expression(field_: VectorField, constraints: Iterable[Polynomial], G: PolyMatrix,
                      value: float, p1: Polynomial, p2: Polynomial,
                      s: Iterable[Polynomial | None]) -> Polynomial:
    """Numeric contraction expression in the general (p1, p2) form:

    -eps - W'sym(JG - G_dot/2)W - sum s_i q_i + p1(|W|^2 - 1) + p2 W'f.
    """
    n = field_.arity
    N = 2 * n
    M = contraction_matrix_numeric(G, field_)
    W = w_vars(n)
    out = Polynomial.constant(-value, N)
    for k in range(n):
        for l in range(n):
            out = out - lift(M[k, l], N) * W[k] * W[l]
    for si, q in zip(s, constraints):
        if si is not None:
            out = out - si * lift(q, N)
    out = out + p1 * (w_norm2(n) - 1.0)
    wf = Polynomial.zero(N)
    for k, fk in enumerate(field_):
        wf = wf + W[k] * lift(fk, N)
    return out + p2 * wf


def metric_bound_expression(G: PolyMatrix, bound: float, lower: bool,
                            constraints: Iterable[Polynomial],
                            sigma: Iterable[Polynomial | None]) -> Polynomial:
    """W'(G - bound I)W - sum sigma_i q_i  (or W'(bound I - G)W - ... if not lower)."""
    n = G.rows
    N = 2 * n
    W = w_vars(n)
    out = Polynomial.zero(N)
    sign = 1.0 if lower else -1.0
    for k in range(n):
        for l in range(n):
            out = out + sign * lift(G[k, l], N) * W[k] * W[l]
    out = out - sign * bound * w_norm2(n)
    for sg, q in zip(sigma, constraints):
        if sg is not None:
            out = out - sg * lift(q, N)
    return out


def invariance_expression(field_: VectorField, constraints: list[Polynomial], i: int,
                          value: float, mu: Polynomial,
                          tau: Iterable[Polynomial | None]) -> Polynomial:
    q = constraints[i - 1]
    out = field_.lie_derivative(q) - value - mu * q
    for j, (tj, qj) in enumerate(zip(tau, constraints), start=1):
        if j != i and tj is not None:
            out = out - tj * qj
    return out
