"""Small dense symmetric eigen-solver and Householder utilities.

Used as an independent check on solver output: Gram and moment matrices are
certified PSD by eigenvalues computed here, not by the Cholesky factorisations
the interior-point iteration relies on.
"""
from __future__ import annotations

import math

import numpy as np


def tridiagonalize(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder reduction of a symmetric matrix to tridiagonal form.

    Returns (diagonal, off-diagonal); the off-diagonal has length n - 1.
    """
    a = np.array(a, dtype=float, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("square matrix required")
    for k in range(n - 2):
        u = a[k + 1:, k].copy()
        alpha = math.sqrt(float(u @ u))
        if alpha == 0.0:
            continue
        if u[0] < 0.0:
            alpha = -alpha
        u[0] += alpha
        h = float(u @ u) / 2.0
        sub = a[k + 1:, k + 1:]
        v = sub @ u / h
        g = float(u @ v) / (2.0 * h)
        v -= g * u
        sub -= np.outer(v, u) + np.outer(u, v)
        a[k + 1:, k + 1:] = sub
        a[k, k + 1] = a[k + 1, k] = -alpha
        a[k, k + 2:] = 0.0
        a[k + 2:, k] = 0.0
    return np.diagonal(a).copy(), np.diagonal(a, 1).copy()


def tridiagonal_ql(d: np.ndarray, e: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric tridiagonal matrix by implicit-shift QL."""
    d = np.array(d, dtype=float, copy=True)
    n = d.size
    if n == 0:
        return d
    off = np.zeros(n)
    off[:n - 1] = e
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(off[m]) <= np.finfo(float).eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            if it > max_sweeps:
                raise np.linalg.LinAlgError("QL iteration did not converge")
            g = (d[l + 1] - d[l]) / (2.0 * off[l])
            r = math.hypot(g, 1.0)
            g = d[m] - d[l] + off[l] / (g + math.copysign(r, g))
            s = c = 1.0
            p = 0.0
            i = m - 1
            while i >= l:
                f = s * off[i]
                b = c * off[i]
                r = math.hypot(f, g)
                off[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    off[m] = 0.0
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                i -= 1
            else:
                d[l] -= p
                off[l] = g
                off[m] = 0.0
                continue
            if r == 0.0 and i >= l:
                continue
    return np.sort(d)


def symmetric_eigvals(a: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix (tridiagonalisation + QL)."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(0)
    if a.shape == (1, 1):
        return a.reshape(1).copy()
    d, e = tridiagonalize((a + a.T) / 2)
    return tridiagonal_ql(d, e)


def min_eigenvalue(a: np.ndarray) -> float:
    vals = symmetric_eigvals(a)
    return float(vals[0]) if vals.size else math.inf


def orthogonal_complement(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n x (n-1)) of the hyperplane orthogonal to ``v``.

    Built from the Householder reflector mapping ``v`` onto a multiple of e1:
    the reflector's last n-1 columns span v's orthogonal complement.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("zero vector has no orthogonal complement of dimension n-1")
    u = v / norm
    u = u.copy()
    u[0] += math.copysign(1.0, u[0]) if u[0] != 0 else 1.0
    H = np.eye(n) - 2.0 * np.outer(u, u) / float(u @ u)
    return H[:, 1:]


def orthogonal_complements(vs: np.ndarray) -> np.ndarray:
    """Batched ``orthogonal_complement`` for rows of ``vs``; shape (N, n, n-1)."""
    vs = np.atleast_2d(np.asarray(vs, dtype=float))
    N, n = vs.shape
    norms = np.linalg.norm(vs, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("zero vector has no orthogonal complement of dimension n-1")
    u = vs / norms[:, None]
    sign = np.where(u[:, 0] >= 0, 1.0, -1.0)
    u[:, 0] += sign
    H = np.eye(n)[None] - 2.0 * u[:, :, None] * u[:, None, :] / np.sum(u * u, axis=1)[:, None, None]
    return H[:, :, 1:]
