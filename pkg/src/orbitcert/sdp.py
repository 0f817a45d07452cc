"""Semidefinite programming: lowering of SOS programs, an interior-point solver,
and certificate extraction.

Standard form handled by :func:`solve`::

    maximise    b'y
    subject to  S_j = C_j + sum_k y_k A_jk  PSD   (every block j)
                E y = d

with the dual problem

    minimise    sum_j <C_j, X_j> - d'u
    subject to  sum_j <A_jk, X_j> + (E'u)_k = -b_k,   X_j PSD.

An SOS program lowers so that the X_j are its Gram matrices, u its free
decision coefficients and y the moment vector; ``solve`` returns both sides.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog

from .linalg import min_eigenvalue
from .polyring import Monomial, PolyMatrix, Polynomial, VectorField, grlex_key, monomial_basis
from .soscert import (CONST, SosConstraint, SosProgram, gram_polynomial, invariance_expression,
                      master_expression, metric_bound_expression)

log = logging.getLogger(__name__)


class LoweringError(ValueError):
    """The SOS program cannot be posed as an SDP (structurally infeasible)."""

    def __init__(self, constraint: str, monomials: list[Monomial], message: str):
        self.constraint = constraint
        self.monomials = monomials
        super().__init__(f"{constraint}: {message}: {monomials[:5]}")


@dataclass
class SdpBlock:
    dim: int
    C: np.ndarray            # (dim, dim) symmetric
    A: sp.csc_matrix         # (dim*dim, m); column k is vec(A_k), row-major


@dataclass
class SdpProblem:
    b: np.ndarray
    blocks: list[SdpBlock]
    E: sp.csr_matrix         # (p, m)
    d: np.ndarray

    @property
    def m(self) -> int:
        return self.b.size

    @property
    def p(self) -> int:
        return self.d.size

    def A_apply(self, y: np.ndarray) -> list[np.ndarray]:
        """sum_k y_k A_jk for every block."""
        return [(blk.A @ y).reshape(blk.dim, blk.dim) for blk in self.blocks]

    def A_adjoint(self, X: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for blk, Xj in zip(self.blocks, X):
            out += blk.A.T @ Xj.ravel()
        return out

    def dump(self) -> str:
        """Plain-text dump for cross-checking with external solvers.

        Layout: ``m p nblocks``, block dimensions, b, d, then E row-major; for
        each block C_j row-major followed by every non-zero A_jk introduced
        by a line ``A <j> <k>``. Numbers use 17 significant digits.
        """
        fmt = lambda v: format(float(v), ".17g")
        lines = [f"{self.m} {self.p} {len(self.blocks)}",
                 " ".join(str(b.dim) for b in self.blocks),
                 " ".join(fmt(v) for v in self.b),
                 " ".join(fmt(v) for v in self.d)]
        E = self.E.toarray()
        lines.extend(" ".join(fmt(v) for v in row) for row in E)
        for j, blk in enumerate(self.blocks):
            lines.append(f"C {j}")
            lines.extend(" ".join(fmt(v) for v in row) for row in blk.C)
            A = blk.A.tocsc()
            for k in range(self.m):
                col = A[:, k]
                if col.nnz == 0:
                    continue
                lines.append(f"A {j} {k}")
                dense = col.toarray().reshape(blk.dim, blk.dim)
                lines.extend(" ".join(fmt(v) for v in row) for row in dense)
        return "\n".join(lines) + "\n"


@dataclass
class SdpSolution:
    status: str                 # optimal | infeasible | unbounded | stalled
    y: np.ndarray
    u: np.ndarray
    X: list[np.ndarray]         # Gram side
    S: list[np.ndarray]         # moment side
    objective: float            # b'y
    primal_objective: float     # sum <C, X> - d'u
    gap: float                  # relative duality gap
    abs_gap: float              # sum <X, S>
    primal_residual: float
    dual_residual: float
    iterations: int
    history: list[dict] = field(default_factory=list)
    message: str = ""


# ----------------------------------------------------------------- lowering

@dataclass
class BlockInfo:
    name: str
    basis: list[Monomial]
    role: str        # "multiplier" | "constraint"
    # Gram matrix in ``basis`` is transform @ X @ transform.T (facially reduced blocks)
    transform: np.ndarray | None = None

    def full_gram(self, X: np.ndarray) -> np.ndarray:
        X = (X + X.T) / 2
        if self.transform is None:
            return X
        T = self.transform @ X @ self.transform.T
        return (T + T.T) / 2


@dataclass
class Lowering:
    """Bookkeeping from SdpProblem indices back to the SOS program."""

    rows: list[tuple[str, Monomial]]
    blocks: list[BlockInfo]
    free_index: np.ndarray      # program free index -> column of E (or -1 if unused)
    constant: float = 0.0


def _product(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


def choose_gram_basis(con: SosConstraint, arity: int, newton: bool = False) -> list[Monomial]:
    """Gram basis from the degree profile of the expression's support.

    W-degrees of the support must be even; the basis takes half of them. The
    X-degree is capped at half the largest X-degree. With ``newton`` the basis
    is additionally pruned to half the Newton polytope of the support.
    """
    support = list(con.expr.terms)
    if not support:
        return []
    n_w = con.n_w
    n_x = arity - n_w
    wdeg = {sum(m[n_x:]) for m in support}
    xdeg = max(sum(m[:n_x]) for m in support)
    half_x = xdeg // 2
    if n_w:
        if any(w % 2 for w in wdeg):
            raise LoweringError(con.name, [m for m in support if sum(m[n_x:]) % 2],
                                "odd W-degree in an SOS constraint")
        w_lo, w_hi = min(wdeg) // 2, max(wdeg) // 2
        basis = monomial_basis(arity, half_x + w_hi, n_w=n_w, w_degree_cap=w_hi,
                               w_degree_min=w_lo, x_degree_cap=half_x)
    else:
        basis = monomial_basis(arity, half_x)
    if newton:
        basis = newton_reduce(basis, support)
    return basis


def newton_reduce(basis: list[Monomial], support: list[Monomial]) -> list[Monomial]:
    """Keep basis monomials m with 2m inside the convex hull of ``support``."""
    pts = np.array(support, dtype=float)
    keep = []
    for m in basis:
        target = 2 * np.array(m, dtype=float)
        res = linprog(np.zeros(len(pts)), A_eq=np.vstack([pts.T, np.ones(len(pts))]),
                      b_eq=np.append(target, 1.0), bounds=(0, None), method="highs")
        if res.status == 0:
            keep.append(m)
    return keep


def absorbed_directions(con, basis: list[Monomial], arity: int) -> np.ndarray:
    """Coefficient vectors (columns) of g*h in ``basis`` for every g absorbed by a free
    multiplier and X-monomial h for which the trade is exact.

    If c = coeffs(g h) then any Gram part b'(c y' + y c' + z c c')b equals
    g * (h y'b + ...) and is reproduced by the free multiplier of g, provided
    every b*h and g*h*h' lies in that multiplier's monomial set. Such directions
    carry no information and leave the moment side without interior points.
    """
    if not con.absorbed or not basis:
        return np.zeros((len(basis), 0))
    n_x = arity - con.n_w
    index = {m: i for i, m in enumerate(basis)}
    xmax = max(sum(m[:n_x]) for m in basis)
    cols = []
    for g, mult in con.absorbed:
        hs = []
        for h in monomial_basis(arity, xmax, n_w=con.n_w, w_degree_cap=0):
            gh = [_product(m, h) for m in g.terms]
            if not all(m in index for m in gh):
                continue
            if not all(_product(b, h) in mult for b in basis):
                continue
            hs.append(h)
        # the c c' part needs g h h' in the multiplier for every accepted pair
        while hs and not all(_product(_product(m, h1), h2) in mult
                             for h1 in hs for h2 in hs for m in g.terms):
            hs.pop()
        for h in hs:
            c = np.zeros(len(basis))
            for m, v in g.terms.items():
                c[index[_product(m, h)]] += v
            cols.append(c)
    return np.array(cols).T if cols else np.zeros((len(basis), 0))


def face_transform(C: np.ndarray, tol: float = 1e-12) -> np.ndarray | None:
    """Sparse basis Q of the orthogonal complement of range(C), or None if C is empty.

    Q comes from the reduced row echelon form of C', so every column is a unit
    vector plus corrections on the pivot positions only.
    """
    if C.shape[1] == 0:
        return None
    R = C.T.copy()
    r, dim = R.shape
    pivots = []
    row = 0
    scale = max(float(np.max(np.abs(R))), 1.0)
    for col in range(dim):
        if row == r:
            break
        k = row + int(np.argmax(np.abs(R[row:, col])))
        if abs(R[k, col]) <= tol * scale:
            continue
        R[[row, k]] = R[[k, row]]
        R[row] /= R[row, col]
        for i in range(r):
            if i != row:
                R[i] -= R[i, col] * R[row]
        pivots.append(col)
        row += 1
    free = [j for j in range(dim) if j not in set(pivots)]
    Q = np.zeros((dim, len(free)))
    for t, j in enumerate(free):
        Q[j, t] = 1.0
        for i, pcol in enumerate(pivots):
            Q[pcol, t] = -R[i, j]
    Q[np.abs(Q) < 1e-15] = 0.0
    return Q


def lower(prog: SosProgram, newton: bool | None = None) -> tuple[SdpProblem, Lowering]:
    """Gram-matrix coefficient matching: one equality per monomial and constraint."""
    if newton is None:
        newton = bool(prog.meta.get("newton_reduction", False))
    N = prog.arity
    block_infos: list[BlockInfo] = []
    for blk_id in sorted(prog.gram_blocks):
        dp = prog.decision[prog.gram_blocks[blk_id]]
        Q = face_transform(absorbed_directions(dp, dp.monomials, N))
        block_infos.append(BlockInfo(dp.name, dp.monomials, "multiplier", Q))
    n_mult = len(block_infos)

    rows: list[tuple[str, Monomial]] = []
    # triplets per block: (flat index, row, value)
    trip: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = [[] for _ in range(n_mult)]
    B_rows, B_cols, B_vals = [], [], []
    g: list[float] = []

    for con in prog.constraints:
        basis = con.basis if con.basis is not None else choose_gram_basis(con, N, newton)
        prod_rows: dict[Monomial, list[tuple[int, int]]] = {}
        for a, ma in enumerate(basis):
            for b, mb in enumerate(basis):
                prod_rows.setdefault(_product(ma, mb), []).append((a, b))
        monos = sorted(set(con.expr.terms) | set(prod_rows), key=grlex_key)
        row0 = len(rows)
        index = {m: row0 + i for i, m in enumerate(monos)}
        rows.extend((con.name, m) for m in monos)
        g.extend([0.0] * len(monos))
        mult_entries: dict[int, tuple[list, list, list]] = {}
        structural = []
        for m, form in con.expr.terms.items():
            r = index[m]
            has_var = False
            for key, v in form.items():
                if key is CONST:
                    g[r] -= v
                elif isinstance(key, tuple):
                    blk, a, b = key
                    dim = len(block_infos[blk].basis)
                    fl, rr, vv = mult_entries.setdefault(blk, ([], [], []))
                    if a == b:
                        fl.append(a * dim + a); rr.append(r); vv.append(v)
                    else:
                        fl.extend([a * dim + b, b * dim + a]); rr.extend([r, r])
                        vv.extend([v / 2, v / 2])
                    has_var = True
                else:
                    B_rows.append(r); B_cols.append(key); B_vals.append(v)
                    has_var = True
            if not has_var and m not in prod_rows and abs(g[r]) > 0:
                structural.append(m)
        if structural:
            raise LoweringError(con.name, structural,
                                "non-zero coefficients no Gram entry or decision variable can match")
        for blk, (fl, rr, vv) in mult_entries.items():
            trip[blk].append((np.array(fl), np.array(rr), np.array(vv)))
        if basis:
            dim = len(basis)
            fl, rr = [], []
            for m, pairs in prod_rows.items():
                for a, b in pairs:
                    fl.append(a * dim + b)
                    rr.append(index[m])
            trip.append([(np.array(fl), np.array(rr), -np.ones(len(fl)))])
            Q = face_transform(absorbed_directions(con, basis, N))
            block_infos.append(BlockInfo(con.name, list(basis), "constraint", Q))

    m = len(rows)
    blocks = []
    for info, parts in zip(block_infos, trip):
        dim = len(info.basis)
        if parts:
            fl = np.concatenate([p[0] for p in parts])
            rr = np.concatenate([p[1] for p in parts])
            vv = np.concatenate([p[2] for p in parts])
        else:
            fl = rr = np.zeros(0, dtype=int)
            vv = np.zeros(0)
        A = sp.csc_matrix((vv, (fl, rr)), shape=(dim * dim, m))
        A.sum_duplicates()
        if info.transform is not None:
            # row-major vec(Q' A Q) = (Q kron Q)' vec(A)
            Qs = sp.csr_matrix(info.transform)
            A = (sp.kron(Qs, Qs).T @ A).tocsc()
            A.eliminate_zeros()
            dim = info.transform.shape[1]
        blocks.append(SdpBlock(dim, np.zeros((dim, dim)), A))

    B = sp.csr_matrix((B_vals, (B_rows, B_cols)), shape=(m, prog.num_free))
    B.sum_duplicates()
    h = np.zeros(prog.num_free)
    for k, v in prog.objective.items():
        h[k] = v
    used = np.asarray((abs(B).sum(axis=0))).ravel() > 0
    free_index = -np.ones(prog.num_free, dtype=int)
    free_index[used] = np.arange(int(used.sum()))
    if np.any(h[~used] != 0):
        raise LoweringError("objective", [], "objective variable appears in no constraint")
    E = B[:, used].T.tocsr()
    prob = SdpProblem(b=-np.asarray(g), blocks=blocks, E=E, d=h[used])
    return prob, Lowering(rows=rows, blocks=block_infos, free_index=free_index)


# ----------------------------------------------------------------- solver

@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98     # upper limit; the fraction adapts to the predictor step
    infeasibility_ratio: float = 1e8
    verbose: bool = False
    refine_steps: int = 2
    stall_window: int = 15          # iterations without a new best merit before giving up
    kkt_shift: float = 1e-14        # diagonal shift of the equilibrated Newton matrix


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha dX PSD (X positive definite)."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return 0.0
    Li = sla.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    T = Li @ dX @ Li.T
    lam = np.linalg.eigvalsh((T + T.T) / 2)[0]
    return math.inf if lam >= 0 else -1.0 / lam


def _is_pd(mats: Sequence[np.ndarray]) -> bool:
    try:
        for Mj in mats:
            if Mj.size:
                np.linalg.cholesky(Mj)
    except np.linalg.LinAlgError:
        return False
    return True


def _schur(prob: SdpProblem, X: list[np.ndarray], Sinv: list[np.ndarray],
           cols_cache: list) -> np.ndarray:
    """M_kl = sum_j <A_jk, X_j A_jl S_j^-1>."""
    m = prob.m
    M = np.zeros((m, m))
    for blk, Xj, Sj, cache in zip(prob.blocks, X, Sinv, cols_cache):
        if blk.dim == 0 or not cache["cols"]:
            continue
        n = blk.dim
        AT = cache["AT"]
        active = cache["rows"]
        chunk = 256
        cols = cache["cols"]
        for start in range(0, len(cols), chunk):
            part = cols[start:start + chunk]
            T = np.empty((len(part), n * n))
            for t, (l, ridx, cidx, vals) in enumerate(part):
                T[t] = (Xj[:, ridx] @ (vals[:, None] * Sj[cidx, :])).ravel()
            contrib = AT @ T.T            # (active rows, len(part))
            M[np.ix_(active, [c[0] for c in part])] += contrib
    return (M + M.T) / 2


def _prepare_cache(prob: SdpProblem) -> list:
    cache = []
    for blk in prob.blocks:
        A = blk.A.tocsc()
        n = blk.dim
        cols = []
        for l in range(prob.m):
            s, e = A.indptr[l], A.indptr[l + 1]
            if s == e:
                continue
            flat = A.indices[s:e]
            cols.append((l, flat // n, flat % n, A.data[s:e].copy()))
        rows = np.array(sorted({c[0] for c in cols}), dtype=int)
        AT = A[:, rows].T.tocsr() if rows.size else None
        cache.append({"cols": cols, "rows": rows, "AT": AT})
    return cache


def _row_scaling(prob: SdpProblem) -> np.ndarray:
    """Norm of each equality row across all blocks and free columns."""
    sq = np.zeros(prob.m)
    for blk in prob.blocks:
        sq += np.asarray(blk.A.multiply(blk.A).sum(axis=0)).ravel()
    if prob.p:
        sq += np.asarray(prob.E.multiply(prob.E).sum(axis=0)).ravel()
    r = np.sqrt(sq)
    r[r == 0] = 1.0
    return r


def _scaled(prob: SdpProblem, r: np.ndarray) -> SdpProblem:
    D = sp.diags(1.0 / r)
    blocks = [SdpBlock(b.dim, b.C, (b.A @ D).tocsc()) for b in prob.blocks]
    return SdpProblem(b=prob.b / r, blocks=blocks, E=(prob.E @ D).tocsr(), d=prob.d)


def _polish_primal(prob: SdpProblem, X: list[np.ndarray], u: np.ndarray, E: np.ndarray,
                   rP: np.ndarray, cache: list, tau: float = 0.0, min_eig: float = 0.0):
    """Remove the equality residual with a weighted minimum-norm correction

        dX = -W A(w) W,  du = -E w,  (A*(W A(.) W) + E'E) w = rP,  W = X + tau I.

    With tau = 0 the correction stays in range(X) and leaves <X, S> alone; a
    small tau lets it reach directions X has (nearly) dropped. tau = inf is the
    plain least-norm projection (W = I), accepted while every eigenvalue stays
    above -min_eig. Returns the corrected (X, u), or None.
    """
    m = prob.m
    if math.isinf(tau):
        W = [np.eye(Xj.shape[0]) for Xj in X]
    else:
        W = [Xj + tau * np.eye(Xj.shape[0]) for Xj in X]
    M = _schur(prob, W, W, cache)
    if prob.p:
        M += E.T @ E
    dM = np.sqrt(np.maximum(np.diag(M), 1e-300))
    Ms = M / dM[:, None] / dM[None, :]
    Ms[np.diag_indices(m)] += 1e-14
    try:
        c, low = sla.cho_factor(Ms, lower=True)
        w = sla.cho_solve((c, low), rP / dM) / dM
    except (np.linalg.LinAlgError, ValueError):
        return None
    Aw = prob.A_apply(w)
    Xn = []
    for Wj, Xj, Awj in zip(W, X, Aw):
        T = Xj - Wj @ Awj @ Wj
        Xn.append((T + T.T) / 2)
    un = u - (E @ w if prob.p else 0.0)
    if math.isinf(tau):
        # unweighted projection: may leave the cone by rounding-sized amounts
        if min((float(np.linalg.eigvalsh(Xj)[0]) for Xj in Xn if Xj.size), default=0.0) < -min_eig:
            return None
    elif not _is_pd(Xn):
        return None
    return Xn, un


def solve(prob: SdpProblem, tol: float = 1e-8, max_iter: int = 200,
          options: SolverOptions | None = None) -> SdpSolution:
    """Infeasible-start primal-dual path following (HKM direction, Mehrotra
    predictor-corrector) on the row-equilibrated problem.

    Never raises on numerical trouble: returns status ``stalled`` together
    with the best iterate seen.
    """
    opts = options or SolverOptions(tol=tol, max_iter=max_iter)
    if opts.tol <= 0:
        raise ValueError("tol must be positive")
    r = _row_scaling(prob)
    sol = _ipm(_scaled(prob, r), opts, prob, r)
    sol.y = sol.y / r
    return sol


def _ipm(prob: SdpProblem, opts: SolverOptions, orig: SdpProblem, r: np.ndarray) -> SdpSolution:
    m, p = prob.m, prob.p
    blocks = prob.blocks
    nblk = len(blocks)
    dims = [b.dim for b in blocks]
    nu = max(sum(dims), 1)
    E = prob.E.toarray() if p else np.zeros((0, m))
    b, d = prob.b, prob.d
    normb = np.linalg.norm(orig.b)
    normC = math.sqrt(sum(np.sum(blk.C ** 2) for blk in blocks))
    normd = np.linalg.norm(d)

    # initial point scaled by the data norms
    X, S = [], []
    for blk in blocks:
        n = blk.dim
        Anorms = np.sqrt(np.asarray(blk.A.multiply(blk.A).sum(axis=0))).ravel()
        xi = max(10.0, math.sqrt(n), float(np.max((1 + np.abs(b)) / (1 + Anorms)))) if m else 10.0
        eta = max(10.0, math.sqrt(n), float(np.linalg.norm(blk.C)), float(Anorms.max(initial=0)))
        X.append(xi * np.eye(n))
        S.append(eta * np.eye(n))
    y = np.zeros(m)
    u = np.zeros(p)
    cache = _prepare_cache(prob)
    history: list[dict] = []
    status = "stalled"
    message = "iteration limit reached"
    best = None
    best_merit = math.inf
    best_it = 0

    def residuals():
        rP = prob.A_adjoint(X) + (E.T @ u if p else 0.0) + b
        Ay = prob.A_apply(y)
        RD = [blk.C + Ayj - Sj for blk, Ayj, Sj in zip(blocks, Ay, S)]
        rE = E @ y - d if p else np.zeros(0)
        return rP, RD, rE

    def measures(rP, RD, rE):
        pobj = sum(float(np.sum(blk.C * Xj)) for blk, Xj in zip(blocks, X)) - float(d @ u)
        dobj = float(b @ y)
        rel_gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        pinf = float(np.linalg.norm(rP * r) / (1 + normb))
        dinf = float((math.sqrt(sum(np.sum(R ** 2) for R in RD)) + np.linalg.norm(rE))
                     / (1 + normC + normd))
        return pobj, dobj, rel_gap, pinf, dinf

    it = 0
    for it in range(1, opts.max_iter + 1):
        rP, RD, rE = residuals()
        mu = sum(float(np.sum(Xj * Sj)) for Xj, Sj in zip(X, S)) / nu
        pobj, dobj, rel_gap, pinf, dinf = measures(rP, RD, rE)
        # pobj - dobj = <X, S> + infeas exactly; weak duality is <X, S> >= 0
        infeas = (-float(rP @ y) + sum(float(np.sum(Xj * R)) for Xj, R in zip(X, RD))
                  + float(u @ rE))
        history.append(dict(iter=it, pobj=pobj, dobj=dobj, gap=rel_gap, abs_gap=mu * nu,
                            pinf=pinf, dinf=dinf, mu=mu, infeas=infeas))
        if opts.verbose:
            log.info("it %3d pobj % .9e dobj % .9e gap %.2e pinf %.2e dinf %.2e",
                     it, pobj, dobj, rel_gap, pinf, dinf)
        merit = max(rel_gap, pinf, dinf)
        if merit < 0.9 * best_merit or best is None:
            best_merit, best_it = merit, it
        if merit <= best_merit:
            best = ([Xj.copy() for Xj in X], u.copy(), y.copy(), [Sj.copy() for Sj in S], it)
        if rel_gap <= opts.tol and pinf <= opts.tol and dinf <= opts.tol:
            status, message = "optimal", "converged"
            break
        # Gram side infeasible: y grows along a ray with A(y) PSD, Ey ~ 0, b'y > 0
        if dobj > 0 and m:
            ray = dobj / (1 + normC + normd)
            if ray > opts.infeasibility_ratio and dinf * (1 + normC + normd) / dobj < 1e-6 * ray:
                status, message = "infeasible", "moment-side ray: SOS program infeasible"
                break
        # moment side infeasible: X, u ray with A*(X) + E'u ~ 0 and decreasing objective
        if pobj < 0:
            ray = -pobj / (1 + normb)
            if ray > opts.infeasibility_ratio and pinf * (1 + normb) / (-pobj) < 1e-6 * ray:
                status, message = "unbounded", "Gram-side ray: SOS objective unbounded"
                break
        if it - best_it >= opts.stall_window:
            message = f"no progress in {opts.stall_window} iterations"
            break
        if best_merit < 1e-4 and merit > 1e3 * best_merit:
            message = "iterates deteriorating"
            break

        try:
            Sinv = []
            for Sj in S:
                c, low = sla.cho_factor(Sj, lower=True)
                Sinv.append(sla.cho_solve((c, low), np.eye(Sj.shape[0])))
            M = _schur(prob, X, Sinv, cache)
            K = np.zeros((m + p, m + p))
            K[:m, :m] = M
            if p:
                K[:m, m:] = E.T
                K[m:, :m] = E
            # symmetric Ruiz equilibration; the Schur diagonal spans many decades near the end
            dK = np.ones(m + p)
            for _ in range(5):
                rows = np.sqrt(np.max(np.abs(K), axis=1))
                rows[rows == 0] = 1.0
                K = K / rows[:, None] / rows[None, :]
                dK = dK / rows
            # tiny quasi-definite shift on the equilibrated matrix; refinement removes its effect
            K[np.arange(m), np.arange(m)] += opts.kkt_shift
            K[np.arange(m, m + p), np.arange(m, m + p)] -= opts.kkt_shift
            lu, piv = sla.lu_factor(K, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            message = f"Newton system failure: {exc}"
            break

        def direction(sigma_mu: float, corr: list[np.ndarray] | None):
            Z = []
            for j in range(nblk):
                Zj = sigma_mu * Sinv[j] - X[j] - X[j] @ RD[j] @ Sinv[j]
                if corr is not None:
                    Zj = Zj - corr[j]
                Z.append(Zj)
            rhs = np.concatenate([rP + prob.A_adjoint(Z), -rE])
            def kkt_solve(v):
                return dK * sla.lu_solve((lu, piv), dK * v)
            sol = kkt_solve(rhs)
            err = math.inf
            for _ in range(opts.refine_steps + 1):
                dy = sol[:m]
                du = -sol[m:]
                Ady = prob.A_apply(dy)
                dX = []
                for j in range(nblk):
                    T = Z[j] - X[j] @ Ady[j] @ Sinv[j]
                    dX.append((T + T.T) / 2)
                # residual of the linearised equations, not of the factored matrix
                e1 = -rP - prob.A_adjoint(dX) - (E.T @ du if p else 0.0)
                e2 = -rE - (E @ dy if p else 0.0)
                err = float(np.linalg.norm(e1) + np.linalg.norm(e2))
                if err <= 1e-15 * (1 + np.linalg.norm(rhs)):
                    break
                sol = sol + kkt_solve(np.concatenate([-e1, e2]))
            dS = [Ay + R for Ay, R in zip(Ady, RD)]
            return dy, du, dX, dS, err

        with np.errstate(all="ignore"):
            dy, du, dX, dS, _ = direction(0.0, None)
            ap = min([1.0] + [_max_step(Xj, dXj) for Xj, dXj in zip(X, dX)])
            ad = min([1.0] + [_max_step(Sj, dSj) for Sj, dSj in zip(S, dS)])
            mu_aff = sum(float(np.sum((Xj + ap * dXj) * (Sj + ad * dSj)))
                         for Xj, dXj, Sj, dSj in zip(X, dX, S, dS)) / nu
            expon = max(1.0, 3.0 * min(ap, ad) ** 2)
            sigma = min(1.0, max(0.0, mu_aff / mu) ** expon) if mu > 0 else 0.0
            frac = min(opts.step_fraction, 0.9 + 0.09 * min(ap, ad))
            corr = [dXj @ dSj @ Sinvj for dXj, dSj, Sinvj in zip(dX, dS, Sinv)]
            dy, du, dX, dS, newton_err = direction(sigma * mu, corr)
        if not (np.all(np.isfinite(dy)) and np.all(np.isfinite(du))):
            message = "non-finite search direction"
            break
        ap = min([1.0] + [frac * _max_step(Xj, dXj) for Xj, dXj in zip(X, dX)])
        ad = min([1.0] + [frac * _max_step(Sj, dSj) for Sj, dSj in zip(S, dS)])
        # rounding can still push a nearly singular block out of the cone
        for _ in range(30):
            Xn = [Xj + ap * dXj for Xj, dXj in zip(X, dX)]
            Xn = [(Xj + Xj.T) / 2 for Xj in Xn]
            if _is_pd(Xn):
                break
            ap *= 0.5
        for _ in range(30):
            Sn = [Sj + ad * dSj for Sj, dSj in zip(S, dS)]
            Sn = [(Sj + Sj.T) / 2 for Sj in Sn]
            if _is_pd(Sn):
                break
            ad *= 0.5
        if ap < 1e-12 and ad < 1e-12:
            message = "step length collapsed"
            break
        X, S = Xn, Sn
        u = u + ap * du
        y = y + ad * dy
        history[-1].update(step_primal=ap, step_dual=ad, sigma=sigma, newton_residual=newton_err)

    if status == "stalled" and best is not None:
        X, u, y, S, best_iter = best
        message += f"; returning iterate {best_iter}"
    if status in ("optimal", "stalled"):
        rP, RD, rE = residuals()
        merit = max(measures(rP, RD, rE)[2:])
        for tau in (0.0, 0.0, 1e-12, 1e-10, 1e-8, math.inf):
            X0, u0 = X, u
            polished = _polish_primal(prob, X, u, E, rP, cache, tau, min_eig=opts.tol)
            if polished is None:
                continue
            X, u = polished
            rP, RD, rE = residuals()
            new_merit = max(measures(rP, RD, rE)[2:])
            if opts.verbose:
                log.info("polish tau=%g merit %.2e -> %.2e", tau, merit, new_merit)
            if new_merit < merit:
                merit = new_merit
            else:
                X, u = X0, u0
                rP, RD, rE = residuals()
        pobj, dobj, rel_gap, pinf, dinf = measures(rP, RD, rE)
        if status == "stalled" and max(rel_gap, pinf, dinf) <= opts.tol:
            status, message = "optimal", "converged after primal polishing"
    rP, RD, rE = residuals()
    pobj, dobj, rel_gap, pinf, dinf = measures(rP, RD, rE)
    return SdpSolution(
        status=status, y=y, u=u, X=X, S=S, objective=dobj, primal_objective=pobj,
        gap=rel_gap, abs_gap=sum(float(np.sum(Xj * Sj)) for Xj, Sj in zip(X, S)),
        primal_residual=pinf, dual_residual=dinf,
        iterations=it, history=history, message=message)


# ----------------------------------------------------------------- certificates

@dataclass
class Certificate:
    """Numeric witnesses of a solved SOS program.

    ``kind`` is ``contraction``, ``rate`` or ``invariance``; ``value`` is the
    optimum of the corresponding objective (eps, c or t). Polynomials over
    (X, W) use arity 2n with the W block last; the metric lives over X only.
    """

    kind: str
    value: float
    variables: list[str]
    field: VectorField
    constraints: list[Polynomial]
    constraint_names: list[str]
    metric: PolyMatrix | None = None
    polys: dict[str, Polynomial] = field(default_factory=dict)
    grams: dict[str, tuple[list[Monomial], np.ndarray]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.variables)

    def gram(self, name: str) -> Polynomial | None:
        if name not in self.grams:
            return None
        basis, Q = self.grams[name]
        arity = self.field.arity if self.kind == "invariance" else 2 * self.n
        return gram_polynomial(basis, Q, arity)

    def min_gram_eigenvalue(self) -> float:
        return min((min_eigenvalue(Q) for _, Q in self.grams.values() if Q.size), default=math.inf)


def extract_certificate(spec, prog: SosProgram, sol: SdpSolution, lowering: Lowering) -> Certificate:
    """Substitute the solver output into the decision polynomials.

    ``spec`` is the (augmented) ProblemSpec the program was built from.
    """
    if sol.status != "optimal":
        raise ValueError(f"cannot extract a certificate from a {sol.status} solution")
    free = np.zeros(prog.num_free)
    used = lowering.free_index >= 0
    free[used] = sol.u[lowering.free_index[used]]
    kind = prog.meta.get("kind", "contraction")
    obj_name = {"contraction": "eps", "rate": "c", "invariance": "t"}[kind]
    value = float(free[prog.decision[obj_name].offset])

    grams: dict[str, tuple[list[Monomial], np.ndarray]] = {}
    for info, X in zip(lowering.blocks, sol.X):
        grams[info.name] = (list(info.basis), info.full_gram(X))

    n = spec.n
    polys: dict[str, Polynomial] = {}
    metric = None
    if kind in ("contraction", "rate"):
        N = 2 * n
        polys["p1"] = Polynomial.constant(-value, N)
        polys["p2"] = prog.decision["p2"].value(free)
        if kind == "contraction":
            entries = [[None] * n for _ in range(n)]
            for k in range(n):
                for l in range(k, n):
                    g = prog.decision[f"g{k + 1}{l + 1}"].value(free)
                    g = Polynomial({m[:n]: c for m, c in g.terms.items()}, n)
                    entries[k][l] = entries[l][k] = g
            metric = PolyMatrix(entries)
        else:
            metric = prog.meta["metric"]
    else:
        polys["mu"] = prog.decision["mu"].value(free)

    meta = {k: v for k, v in prog.meta.items() if k != "metric"}
    meta.update(delta=spec.delta, metric_upper=spec.option("metric_upper"),
                solver_status=sol.status, gap=sol.gap, abs_gap=sol.abs_gap,
                primal_residual=sol.primal_residual, dual_residual=sol.dual_residual,
                iterations=sol.iterations)
    cert = Certificate(kind=kind, value=value, variables=list(spec.variables), field=spec.field,
                       constraints=list(spec.constraints),
                       constraint_names=list(spec.constraint_names),
                       metric=metric, polys=polys, grams=grams, meta=meta)
    cert.meta["residual"] = residual(cert)
    return cert


def _mismatch(target: Polynomial, gram: Polynomial | None) -> float:
    diff = target - gram if gram is not None else target
    return diff.max_abs_coef() / max(1.0, target.max_abs_coef())


def recompose(cert: Certificate) -> dict[str, tuple[Polynomial, Polynomial | None]]:
    """(target expression, Gram polynomial) for every SOS constraint in ``cert``."""
    out: dict[str, tuple[Polynomial, Polynomial | None]] = {}
    names = cert.constraint_names
    if cert.kind in ("contraction", "rate"):
        s = [cert.gram(f"s_{q}") for q in names]
        out["master"] = (master_expression(cert.field, cert.constraints, cert.metric, cert.value,
                                           cert.polys["p1"], cert.polys["p2"], s),
                         cert.gram("master"))
        bounds = [("metric_lower", cert.meta.get("delta"), True),
                  ("metric_upper", cert.meta.get("metric_upper"), False)]
        for cname, bound, is_lower in bounds:
            if cname not in cert.grams:
                continue
            sigma = [cert.gram(f"sigma_{cname}_{q}") for q in names]
            out[cname] = (metric_bound_expression(cert.metric, float(bound), is_lower,
                                                  cert.constraints, sigma),
                          cert.gram(cname))
    else:
        i = int(cert.meta["index"])
        tau = [cert.gram(f"tau_{q}") for q in names]
        out["invariance"] = (invariance_expression(cert.field, cert.constraints, i, cert.value,
                                                   cert.polys["mu"], tau),
                             cert.gram("invariance"))
    return out


def residual(cert: Certificate) -> float:
    """Largest scaled coefficient mismatch between each target and its Gram form.

    Per constraint: max |target - basis' Q basis| over coefficients, divided by
    max(1, max |target coefficient|).
    """
    return max((_mismatch(t, g) for t, g in recompose(cert).values()), default=0.0)
