"""Sparse multivariate polynomials with float coefficients.

A polynomial is a mapping from exponent tuples to coefficients over a fixed
number of indeterminates (its arity). Values are immutable; every arithmetic
operation returns a canonical, pruned result.
"""
from __future__ import annotations

import math
from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]

PRUNE_TOL = 1e-14


class ArityError(ValueError):
    """Raised when polynomials over different indeterminate counts are mixed."""


def _check_arity(a: int, b: int) -> None:
    if a != b:
        raise ArityError(f"arity mismatch: {a} vs {b}")


def _pruned(terms: dict[Monomial, float]) -> dict[Monomial, float]:
    # canonical (grlex) order makes arithmetic independent of construction order
    keep = [(m, c) for m, c in terms.items() if abs(c) >= PRUNE_TOL]
    keep.sort(key=lambda t: grlex_key(t[0]))
    return dict(keep)


def grlex_key(mon: Monomial) -> tuple:
    """Sort key for graded-lexicographic order (x0 > x1 > ... within a degree)."""
    return (sum(mon), tuple(-e for e in mon))


class Polynomial:
    __slots__ = ("terms", "arity", "_compiled")

    def __init__(self, terms: Mapping[Monomial, float], arity: int):
        if arity < 0:
            raise ValueError("arity must be non-negative")
        clean: dict[Monomial, float] = {}
        for mon, c in terms.items():
            mon = tuple(int(e) for e in mon)
            if len(mon) != arity:
                raise ArityError(f"monomial {mon} does not have {arity} exponents")
            if any(e < 0 for e in mon):
                raise ValueError(f"negative exponent in {mon}")
            clean[mon] = clean.get(mon, 0.0) + float(c)
        self.terms: dict[Monomial, float] = _pruned(clean)
        self.arity = arity
        self._compiled = None

    @classmethod
    def _raw(cls, terms: dict[Monomial, float], arity: int) -> "Polynomial":
        p = cls.__new__(cls)
        p.terms = _pruned(terms)
        p.arity = arity
        p._compiled = None
        return p

    # constructors
    @classmethod
    def zero(cls, arity: int) -> "Polynomial":
        return cls._raw({}, arity)

    @classmethod
    def constant(cls, value: float, arity: int) -> "Polynomial":
        return cls._raw({(0,) * arity: float(value)}, arity)

    @classmethod
    def variable(cls, index: int, arity: int) -> "Polynomial":
        if not 0 <= index < arity:
            raise IndexError(f"variable index {index} out of range for arity {arity}")
        mon = tuple(1 if i == index else 0 for i in range(arity))
        return cls._raw({mon: 1.0}, arity)

    @classmethod
    def monomial(cls, mon: Sequence[int], coef: float = 1.0) -> "Polynomial":
        return cls({tuple(mon): coef}, len(mon))

    # structure
    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree -1."""
        return max((sum(m) for m in self.terms), default=-1)

    def degree_in(self, indices: Iterable[int]) -> int:
        idx = list(indices)
        return max((sum(m[i] for i in idx) for m in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, mon: Sequence[int]) -> float:
        return self.terms.get(tuple(mon), 0.0)

    def sorted_terms(self) -> list[tuple[Monomial, float]]:
        """Terms in descending graded-lexicographic order."""
        return sorted(self.terms.items(), key=lambda t: grlex_key(t[0]), reverse=True)

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    # arithmetic
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            _check_arity(self.arity, other.arity)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other), self.arity)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial._raw(out, self.arity)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw({m: -c for m, c in self.terms.items()}, self.arity)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            return Polynomial._raw({m: s * c for m, c in self.terms.items()}, self.arity)
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        parts: dict[Monomial, list[float]] = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                parts.setdefault(m, []).append(c1 * c2)
        # correctly rounded sums make p*q and q*p bit-identical
        return Polynomial._raw({m: math.fsum(v) for m, v in parts.items()}, self.arity)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int) -> "Polynomial":
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only non-negative integer powers are supported")
        result = Polynomial.constant(1.0, self.arity)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.arity == other.arity and self.terms == other.terms

    def __hash__(self) -> int:
        return hash((self.arity, frozenset(self.terms.items())))

    def __repr__(self) -> str:
        names = [f"x{i + 1}" for i in range(self.arity)]
        return f"Polynomial({to_string(self, names)!r})"

    # calculus / evaluation
    def partial(self, var_index: int) -> "Polynomial":
        return partial(self, var_index)

    def __call__(self, *point: float) -> float:
        return evaluate(self, point)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at each row of an (N, arity) array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.arity:
            raise ArityError(f"points have {pts.shape[1]} columns, expected {self.arity}")
        if self._compiled is None:
            if self.terms:
                exps = np.array(list(self.terms.keys()), dtype=np.int64)
                coefs = np.array(list(self.terms.values()))
            else:
                exps = np.zeros((0, self.arity), dtype=np.int64)
                coefs = np.zeros(0)
            self._compiled = (exps, coefs)
        exps, coefs = self._compiled
        if coefs.size == 0:
            return np.zeros(pts.shape[0])
        maxdeg = int(exps.max()) if exps.size else 0
        # powers[k, i, :] = pts[:, i] ** k
        powers = np.ones((maxdeg + 1, self.arity, pts.shape[0]))
        for k in range(1, maxdeg + 1):
            powers[k] = powers[k - 1] * pts.T
        vals = np.ones((len(coefs), pts.shape[0]))
        for i in range(self.arity):
            vals *= powers[exps[:, i], i, :]
        return coefs @ vals

    def substitute(self, values: Mapping[int, float]) -> "Polynomial":
        """Fix some indeterminates to numbers (arity is kept)."""
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            mm = list(m)
            for i, v in values.items():
                c *= v ** mm[i]
                mm[i] = 0
            key = tuple(mm)
            out[key] = out.get(key, 0.0) + c
        return Polynomial._raw(out, self.arity)

    def embed(self, arity: int, offset: int = 0) -> "Polynomial":
        """Reinterpret in a larger ring, placing our indeterminates at ``offset``."""
        if offset + self.arity > arity:
            raise ArityError("target ring too small")
        out = {}
        for m, c in self.terms.items():
            mm = [0] * arity
            mm[offset:offset + self.arity] = m
            out[tuple(mm)] = c
        return Polynomial._raw(out, arity)


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    _check_arity(p.arity, q.arity)
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    _check_arity(p.arity, q.arity)
    return p * q


def partial(p: Polynomial, var_index: int) -> Polynomial:
    if not 0 <= var_index < p.arity:
        raise IndexError(f"variable index {var_index} out of range for arity {p.arity}")
    out: dict[Monomial, float] = {}
    for m, c in p.terms.items():
        e = m[var_index]
        if e == 0:
            continue
        mm = m[:var_index] + (e - 1,) + m[var_index + 1:]
        out[mm] = out.get(mm, 0.0) + c * e
    return Polynomial._raw(out, p.arity)


def evaluate(p: Polynomial, point: Sequence[float]) -> float:
    if len(point) != p.arity:
        raise ArityError(f"point has {len(point)} coordinates, expected {p.arity}")
    total = 0.0
    for m, c in p.terms.items():
        term = c
        for x, e in zip(point, m):
            if e:
                term *= x ** e
        total += term
    return total


class PolyMatrix:
    """Dense matrix of polynomials sharing one arity."""

    __slots__ = ("entries", "rows", "cols", "arity")

    def __init__(self, entries: Sequence[Sequence[Polynomial]]):
        rows = [tuple(r) for r in entries]
        if not rows or not rows[0]:
            raise ValueError("PolyMatrix needs at least one entry")
        cols = len(rows[0])
        if any(len(r) != cols for r in rows):
            raise ValueError("ragged PolyMatrix rows")
        arity = rows[0][0].arity
        for r in rows:
            for p in r:
                _check_arity(arity, p.arity)
        self.entries = tuple(rows)
        self.rows = len(rows)
        self.cols = cols
        self.arity = arity

    @classmethod
    def identity(cls, n: int, arity: int, scale: float = 1.0) -> "PolyMatrix":
        return cls([[Polynomial.constant(scale if i == j else 0.0, arity) for j in range(n)]
                    for i in range(n)])

    @classmethod
    def from_array(cls, a: np.ndarray, arity: int) -> "PolyMatrix":
        a = np.asarray(a, dtype=float)
        return cls([[Polynomial.constant(a[i, j], arity) for j in range(a.shape[1])]
                    for i in range(a.shape[0])])

    def __getitem__(self, ij: tuple[int, int]) -> Polynomial:
        i, j = ij
        return self.entries[i][j]

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def is_symmetric(self) -> bool:
        if self.rows != self.cols:
            return False
        return all(self.entries[i][j] == self.entries[j][i]
                   for i in range(self.rows) for j in range(i + 1, self.cols))

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix([[self.entries[i][j] for i in range(self.rows)]
                           for j in range(self.cols)])

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.shape != other.shape:
            raise ValueError("shape mismatch")
        return PolyMatrix([[self.entries[i][j] + other.entries[i][j] for j in range(self.cols)]
                           for i in range(self.rows)])

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + other.scale(-1.0)

    def scale(self, s: float) -> "PolyMatrix":
        return PolyMatrix([[p * s for p in r] for r in self.entries])

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise ValueError("shape mismatch")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = Polynomial.zero(self.arity)
                for k in range(self.cols):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            out.append(row)
        return PolyMatrix(out)

    def symmetrized(self) -> "PolyMatrix":
        return (self + self.transpose()).scale(0.5)

    def degree(self) -> int:
        return max(p.degree for r in self.entries for p in r)

    def evaluate(self, point: Sequence[float]) -> np.ndarray:
        return np.array([[evaluate(p, point) for p in r] for r in self.entries])

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Values at each row of ``points``; shape (N, rows, cols)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.rows, self.cols))
        cache: dict[int, np.ndarray] = {}
        for i in range(self.rows):
            for j in range(self.cols):
                p = self.entries[i][j]
                key = id(p)
                if key not in cache:
                    cache[key] = p.evaluate_many(pts)
                out[:, i, j] = cache[key]
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        return self.entries == other.entries


class VectorField:
    """Polynomial vector field f: R^n -> R^n."""

    __slots__ = ("components", "arity")

    def __init__(self, components: Sequence[Polynomial]):
        comps = tuple(components)
        if not comps:
            raise ValueError("vector field needs at least one component")
        arity = comps[0].arity
        for c in comps:
            _check_arity(arity, c.arity)
        if len(comps) != arity:
            raise ArityError(f"{len(comps)} components for {arity} indeterminates")
        self.components = comps
        self.arity = arity

    def __len__(self) -> int:
        return len(self.components)

    def __getitem__(self, i: int) -> Polynomial:
        return self.components[i]

    def __iter__(self):
        return iter(self.components)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorField):
            return NotImplemented
        return self.components == other.components

    def evaluate(self, point: Sequence[float]) -> np.ndarray:
        return np.array([evaluate(c, point) for c in self.components])

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([c.evaluate_many(pts) for c in self.components], axis=1)

    def lie_derivative(self, p: Polynomial) -> Polynomial:
        """Derivative of ``p`` along the field: sum_j f_j dp/dx_j."""
        _check_arity(self.arity, p.arity)
        acc = Polynomial.zero(self.arity)
        for j, fj in enumerate(self.components):
            acc = acc + fj * partial(p, j)
        return acc

    def compile(self):
        """Fast scalar evaluator ``g(x) -> ndarray`` for integrators."""
        return compile_polynomials(self.components)


def compile_polynomials(polys: Sequence[Polynomial]):
    """Build a plain-Python evaluator for a fixed list of polynomials.

    Generated code avoids per-call numpy overhead, which dominates when an
    integrator evaluates a small field hundreds of thousands of times.
    """
    if not polys:
        raise ValueError("nothing to compile")
    arity = polys[0].arity
    names = [f"_x{i}" for i in range(arity)]
    exprs = []
    for p in polys:
        _check_arity(arity, p.arity)
        parts = []
        for mon, c in p.sorted_terms():
            factors = [repr(c)]
            for name, e in zip(names, mon):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}**{e}")
            parts.append("*".join(factors))
        exprs.append(" + ".join(parts) if parts else "0.0")
    unpack = ", ".join(names) + ("," if arity == 1 else "")
    src = (f"def _f(_x):\n    {unpack} = _x\n"
           f"    return _np.array([{', '.join(exprs)}])\n")
    ns: dict = {"_np": np}
    exec(compile(src, "<compiled-polynomials>", "exec"), ns)
    return ns["_f"]


def jacobian(field: VectorField) -> PolyMatrix:
    n = field.arity
    return PolyMatrix([[partial(field[i], j) for j in range(n)] for i in range(n)])


def orbital_derivative(G: PolyMatrix, field: VectorField) -> PolyMatrix:
    """Entry-wise derivative of G along the flow of ``field``."""
    if not G.is_symmetric():
        raise ValueError("orbital_derivative requires a symmetric matrix")
    _check_arity(G.arity, field.arity)
    n = G.rows
    out = [[None] * n for _ in range(n)]
    for k in range(n):
        for l in range(k, n):
            d = field.lie_derivative(G[k, l])
            out[k][l] = d
            out[l][k] = d
    return PolyMatrix(out)


def monomial_basis(arity: int, max_degree: int, w_degree_cap: int | None = None,
                   *, n_w: int | None = None, w_degree_min: int = 0,
                   x_degree_cap: int | None = None) -> list[Monomial]:
    """All monomials of total degree <= ``max_degree`` in graded-lex order.

    The last ``n_w`` indeterminates form the W block (default: half of the
    ring). ``w_degree_cap`` / ``w_degree_min`` bound the W-block degree and
    ``x_degree_cap`` bounds the degree in the remaining indeterminates.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be non-negative")
    if n_w is None:
        n_w = arity // 2 if (w_degree_cap is not None or w_degree_min) else 0
    n_x = arity - n_w
    out: list[Monomial] = []
    for d in range(max_degree + 1):
        for combo in combinations_with_replacement(range(arity), d):
            mon = [0] * arity
            for i in combo:
                mon[i] += 1
            wdeg = sum(mon[n_x:])
            if w_degree_cap is not None and wdeg > w_degree_cap:
                continue
            if wdeg < w_degree_min:
                continue
            if x_degree_cap is not None and d - wdeg > x_degree_cap:
                continue
            out.append(tuple(mon))
    out.sort(key=grlex_key)
    return out


def count_monomials(arity: int, max_degree: int) -> int:
    return comb(arity + max_degree, max_degree)


def to_string(p: Polynomial, names: Sequence[str]) -> str:
    """Render in the problem-file grammar; coefficients keep full precision."""
    if len(names) != p.arity:
        raise ArityError("wrong number of variable names")
    if not p.terms:
        return "0"
    pieces = []
    for i, (mon, c) in enumerate(p.sorted_terms()):
        sign = "-" if c < 0 else "+"
        a = abs(c)
        factors = []
        for name, e in zip(names, mon):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        if not factors:
            body = repr(a)
        elif a == 1.0:
            body = "*".join(factors)
        else:
            body = "*".join([repr(a)] + factors)
        if i == 0:
            pieces.append(body if sign == "+" else f"-{body}")
        else:
            pieces.append(f"{sign} {body}")
    return " ".join(pieces)
