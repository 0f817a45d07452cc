"""Numerical cross-checks: trajectories, eigenvalue traces along them,
sampled lambda', boundary flow scans and certificate verification.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frontend import ProblemSpec
from .linalg import orthogonal_complements
from .polyring import PolyMatrix, Polynomial, VectorField, orbital_derivative
from .soscert import contraction_matrix_numeric

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e6
EQUILIBRIUM_TOL = 1e-12


@dataclass
class Trajectory:
    dt: float
    times: np.ndarray
    states: np.ndarray                     # (len(times), n)
    diverged: bool = False
    in_K: np.ndarray | None = None         # mask, when a ProblemSpec was supplied
    left_K: list[tuple[float, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class TraceReport:
    values: np.ndarray                     # NaN at flagged samples
    in_K: np.ndarray
    flagged: np.ndarray                    # samples excluded from the summary

    def __len__(self) -> int:
        return self.values.size

    def _valid(self, in_K_only: bool) -> np.ndarray:
        keep = ~self.flagged
        if in_K_only:
            keep &= self.in_K
        return self.values[keep]

    def min(self, in_K_only: bool = False) -> float:
        v = self._valid(in_K_only)
        return float(v.min()) if v.size else math.nan

    def max(self, in_K_only: bool = False) -> float:
        v = self._valid(in_K_only)
        return float(v.max()) if v.size else math.nan


def _intervals(times: np.ndarray, mask: np.ndarray) -> list[tuple[float, float]]:
    """Maximal runs where ``mask`` is True, as (first time, last time)."""
    out = []
    start = prev = None
    for t, m in zip(times, mask):
        if m and start is None:
            start = t
        elif not m and start is not None:
            out.append((float(start), float(prev)))
            start = None
        prev = t
    if start is not None:
        out.append((float(start), float(times[-1])))
    return out


def integrate(F: VectorField, x0: Sequence[float], dt: float, T: float,
              spec: ProblemSpec | None = None) -> Trajectory:
    """Classical RK4 with fixed step ``dt`` up to time ``T``.

    Stops early with ``diverged`` set when |x| exceeds 1e6 or the state
    becomes non-finite; the partial trajectory is returned.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt:
        raise ValueError("T must be at least dt")
    x = np.asarray(x0, dtype=float)
    if x.shape != (F.arity,):
        raise ValueError(f"initial state needs {F.arity} components")
    f = F.compile()
    steps = int(round(T / dt))
    states = np.empty((steps + 1, x.size))
    states[0] = x
    diverged = False
    last = steps
    with np.errstate(all="ignore"):
        for k in range(steps):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                diverged = True
                last = k
                break
            states[k + 1] = x
            if np.linalg.norm(x) > DIVERGENCE_NORM:
                diverged = True
                last = k + 1
                break
    states = states[:last + 1]
    times = dt * np.arange(last + 1)
    traj = Trajectory(dt=dt, times=times, states=states, diverged=diverged)
    if spec is not None:
        traj.in_K = spec.in_K(states)
        traj.left_K = _intervals(times, ~traj.in_K)
    return traj


def _in_K_mask(traj: Trajectory) -> np.ndarray:
    return traj.in_K if traj.in_K is not None else np.ones(len(traj), dtype=bool)


def metric_eig_trace(G: PolyMatrix, traj: Trajectory) -> TraceReport:
    """Minimum eigenvalue of G(x(t)) at every sample."""
    if not G.is_symmetric():
        raise ValueError("metric must be symmetric")
    vals = np.linalg.eigvalsh(G.evaluate_many(traj.states))[:, 0]
    return TraceReport(values=vals, in_K=_in_K_mask(traj), flagged=np.zeros(vals.size, bool))


def transverse_max_eig(M: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """max eig of B'MB with B an orthonormal basis of f's orthogonal complement.

    ``M`` has shape (N, n, n), ``f`` shape (N, n). Returns (values, flagged);
    samples with |f| < 1e-12 are flagged and get NaN.
    """
    M = np.asarray(M, dtype=float)
    f = np.atleast_2d(np.asarray(f, dtype=float))
    flagged = np.linalg.norm(f, axis=1) < EQUILIBRIUM_TOL
    out = np.full(f.shape[0], np.nan)
    ok = ~flagged
    if ok.any():
        B = orthogonal_complements(f[ok])
        R = np.einsum("nji,njk,nkl->nil", B, M[ok], B)
        R = (R + np.swapaxes(R, 1, 2)) / 2
        out[ok] = np.linalg.eigvalsh(R)[:, -1]
    return out, flagged


def contraction_values(G: PolyMatrix, F: VectorField, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    M = contraction_matrix_numeric(G, F)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return transverse_max_eig(M.evaluate_many(pts), F.evaluate_many(pts))


def transverse_eig_trace(G: PolyMatrix, F: VectorField, traj: Trajectory) -> TraceReport:
    """max over unit w orthogonal to f of w' sym(JG - G_dot/2) w along ``traj``."""
    vals, flagged = contraction_values(G, F, traj.states)
    return TraceReport(values=vals, in_K=_in_K_mask(traj), flagged=flagged)


def sample_K(spec: ProblemSpec, count: int, rng: np.random.Generator,
             max_draws: int = 10**8) -> np.ndarray:
    """``count`` uniform rejection samples from K inside its bounding box."""
    box = spec.bounding_box()
    got: list[np.ndarray] = []
    have = drawn = 0
    batch = max(1000, 4 * count)
    while have < count and drawn < max_draws:
        pts = rng.uniform(box[:, 0], box[:, 1], size=(batch, spec.n))
        drawn += batch
        pts = pts[spec.in_K(pts)]
        got.append(pts)
        have += len(pts)
    if have == 0:
        raise ValueError("no sample fell inside K")
    return np.concatenate(got)[:count]


def sample_lambda_prime(G: PolyMatrix, F: VectorField, spec: ProblemSpec,
                        samples: int = 10000, seed: int = 0) -> float:
    """Largest transverse eigenvalue over rejection samples of K.

    A lower bound on sup_K lambda'_G.
    """
    pts = sample_K(spec, samples, np.random.default_rng(seed))
    vals, flagged = contraction_values(G, F, pts)
    if flagged.all():
        raise ValueError("every sample is an equilibrium of the field")
    return float(np.nanmax(vals))


@dataclass
class Violation:
    point: np.ndarray
    value: float             # Dq_i[f] at the point
    refined: bool = False    # a local minimiser on the boundary, not a raw sample


def _boundary_band(q: Polynomial) -> float:
    coef_norm = math.sqrt(sum(c * c for c in q.terms.values()))
    return 1e-6 * (1.0 + coef_norm)


def boundary_samples(spec: ProblemSpec, i: int, samples: int, seed: int = 0,
                     newton_steps: int = 8) -> np.ndarray:
    """Points of K with |q_i| inside the boundary band.

    Uniform box samples are pushed onto {q_i = 0} by Newton projection
    x <- x - q(x) grad q / |grad q|^2; points that do not land in the band,
    have |grad q_i| <= 1e-9 or leave K are discarded.
    """
    l = spec.num_constraints
    if not 1 <= i <= l:
        raise IndexError(f"constraint index {i} outside 1..{l}")
    q = spec.constraints[i - 1]
    grad = [q.partial(j) for j in range(spec.n)]
    band = _boundary_band(q)
    others = [c for j, c in enumerate(spec.constraints, start=1) if j != i]
    rng = np.random.default_rng(seed)
    box = spec.bounding_box()
    got: list[np.ndarray] = []
    have = 0
    draws = 0
    batch = max(1000, samples)
    while have < samples and draws < 200:
        draws += 1
        x = rng.uniform(box[:, 0], box[:, 1], size=(batch, spec.n))
        with np.errstate(all="ignore"):
            for _ in range(newton_steps):
                qv = q.evaluate_many(x)
                g = np.stack([d.evaluate_many(x) for d in grad], axis=1)
                g2 = np.sum(g * g, axis=1)
                step = np.where(g2 > 0, qv / np.where(g2 > 0, g2, 1.0), 0.0)
                x = x - step[:, None] * g
            qv = q.evaluate_many(x)
            g = np.stack([d.evaluate_many(x) for d in grad], axis=1)
        ok = np.all(np.isfinite(x), axis=1) & (np.abs(qv) < band)
        ok &= np.linalg.norm(g, axis=1) > 1e-9
        for c in others:
            ok &= c.evaluate_many(x) >= 0.0
        got.append(x[ok])
        have += int(ok.sum())
    if have == 0:
        raise ValueError(f"no boundary samples found for constraint {i}")
    return np.concatenate(got)[:samples]


def _project(x: np.ndarray, q: Polynomial, grad: list[Polynomial], steps: int = 8) -> np.ndarray:
    for _ in range(steps):
        g = np.array([d(*x) for d in grad])
        g2 = float(g @ g)
        if g2 == 0.0:
            break
        x = x - (q(*x) / g2) * g
    return x


def refine_violation(spec: ProblemSpec, i: int, x0: np.ndarray, iters: int = 300) -> Violation:
    """Projected descent of Dq_i[f] on {q_i = 0}, staying inside K.

    Armijo backtracking along the tangential gradient followed by Newton
    projection back onto the boundary.
    """
    q = spec.constraints[i - 1]
    dq = spec.field.lie_derivative(q)
    grad = [q.partial(j) for j in range(spec.n)]
    dgrad = [dq.partial(j) for j in range(spec.n)]
    others = [c for j, c in enumerate(spec.constraints, start=1) if j != i]
    x = np.asarray(x0, dtype=float)
    val = dq(*x)
    step = 0.1
    for _ in range(iters):
        nrm = np.array([d(*x) for d in grad])
        g = np.array([d(*x) for d in dgrad])
        g = g - (g @ nrm) / max(float(nrm @ nrm), 1e-300) * nrm
        gn = float(np.linalg.norm(g))
        if gn < 1e-13:
            break
        moved = False
        while step > 1e-14:
            y = _project(x - step * g / gn, q, grad)
            if all(c(*y) >= 0 for c in others) and abs(q(*y)) < _boundary_band(q):
                vy = dq(*y)
                if vy < val - 1e-4 * step * gn:
                    x, val, moved = y, vy, True
                    step *= 2.0
                    break
            step /= 2.0
        if not moved:
            break
    return Violation(x, float(val), refined=True)


def nagumo_scan(spec: ProblemSpec, i: int, samples: int = 100000, seed: int = 0,
                tol: float = 1e-9, refine: bool = True) -> list[Violation]:
    """Boundary points of K where the flow points out through {q_i = 0}.

    Inward flow means Dq_i[f] >= 0; a violation is Dq_i[f] < -tol. With
    ``refine`` the worst sampled violation of every orthant is pushed to a
    local minimiser of Dq_i[f] on the boundary, and these refined points lead
    the list. The rest follow sorted by value, most negative first.
    """
    pts = boundary_samples(spec, i, samples, seed)
    dq = spec.field.lie_derivative(spec.constraints[i - 1]).evaluate_many(pts)
    bad = np.flatnonzero(dq < -tol)
    bad = bad[np.argsort(dq[bad], kind="stable")]
    found = [Violation(pts[k].copy(), float(dq[k])) for k in bad]
    if not (refine and found):
        return found
    seeds: dict[tuple, int] = {}
    for k in bad:
        key = tuple(np.signbit(pts[k]))
        seeds.setdefault(key, k)
    refined: list[Violation] = []
    for k in sorted(seeds.values(), key=lambda k: dq[k]):
        v = refine_violation(spec, i, pts[k])
        if not any(np.linalg.norm(v.point - r.point) < 1e-6 for r in refined):
            refined.append(v)
    refined.sort(key=lambda v: v.value)
    return refined + found


def inverse_metric_identity_residual(G: PolyMatrix, F: VectorField, x0: Sequence[float],
                                     dt: float, steps: int = 10) -> float:
    """max over a short trajectory of |dH/dt + H G_dot H|, H = G^-1.

    dH/dt is a central difference of H(x(t)) along an RK4 trajectory; the
    residual is O(dt^2).
    """
    traj = integrate(F, x0, dt, dt * (steps + 2))
    X = traj.states
    Gv = G.evaluate_many(X)
    H = np.linalg.inv(Gv)
    Gdot = orbital_derivative(G, F).evaluate_many(X)
    worst = 0.0
    for k in range(1, len(X) - 1):
        dH = (H[k + 1] - H[k - 1]) / (2 * dt)
        worst = max(worst, float(np.max(np.abs(dH + H[k] @ Gdot[k] @ H[k]))))
    return worst


@dataclass
class VerificationReport:
    residual: float
    min_eig_G: float
    lambda_prime: float
    identity_residual: float
    checks: dict[str, bool]
    samples: int

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_dict(self) -> dict:
        return dict(residual=self.residual, min_eig_G=self.min_eig_G,
                    lambda_prime=self.lambda_prime, identity_residual=self.identity_residual,
                    samples=self.samples, checks=dict(self.checks), passed=self.passed)


def verify_certificate(cert, spec: ProblemSpec, samples: int = 10000, seed: int = 0,
                       residual_tol: float = 1e-6, identity_dt: float = 1e-4) -> VerificationReport:
    """Re-check a contraction (or rate) certificate numerically.

    Checks: recomposition residual, min-eig G >= delta - 1e-6 and
    lambda' <= -value + 1e-6 on K samples, and the identity
    H G_dot H = -H_dot along a short trajectory. A failing check marks the
    certificate suspect; nothing raises.
    """
    from .sdp import residual

    if cert.metric is None:
        raise ValueError("certificate carries no metric")
    G, F = cert.metric, cert.field
    res = residual(cert)
    rng = np.random.default_rng(seed)
    pts = sample_K(spec, samples, rng)
    min_eig = float(np.linalg.eigvalsh(G.evaluate_many(pts))[:, 0].min())
    vals, flagged = contraction_values(G, F, pts)
    lam = float(np.nanmax(vals)) if not flagged.all() else math.nan
    x0 = pts[0]
    ident = inverse_metric_identity_residual(G, F, x0, identity_dt)
    scale = 1.0 + float(np.max(np.abs(np.linalg.inv(G.evaluate(x0)))))
    delta = float(cert.meta.get("delta", spec.delta))
    checks = {
        "residual": res <= residual_tol,
        "metric_positive": min_eig >= delta - 1e-6,
        "lambda_prime": lam <= -cert.value + 1e-6,
        # central differences: error ~ dt^2 times third derivatives of H
        "identity": ident <= 1e-4 * scale ** 3,
    }
    return VerificationReport(residual=res, min_eig_G=min_eig, lambda_prime=lam,
                              identity_residual=ident, checks=checks, samples=len(pts))
