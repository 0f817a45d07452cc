import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitcert.analysis import (integrate, inverse_metric_identity_residual, metric_eig_trace,
                                nagumo_scan, sample_lambda_prime, transverse_eig_trace,
                                transverse_max_eig)
from orbitcert.frontend import parse_problem, validate
from orbitcert.linalg import orthogonal_complement, orthogonal_complements
from orbitcert.polyring import PolyMatrix, VectorField

from conftest import const, random_poly, var

x2, y2 = var(0, 2), var(1, 2)
ROT = VectorField([-y2, x2])
RADIAL = VectorField([-x2, -y2])


def decay_1d():
    return VectorField([-var(0, 1)])


class TestIntegrate:
    def test_exponential_decay(self):
        traj = integrate(decay_1d(), [1.0], 1e-3, 1.0)
        assert abs(traj.final[0] - math.exp(-1)) <= 1e-7
        assert len(traj) == 1001 and not traj.diverged

    def test_rotation_returns(self):
        traj = integrate(ROT, [1.0, 0.0], 1e-3, 2 * math.pi)
        # T is rounded to a whole number of steps
        t = traj.times[-1]
        assert np.allclose(traj.final, [math.cos(t), math.sin(t)], atol=1e-6)
        assert np.allclose(traj.final, [1.0, 0.0], atol=1e-3)

    def test_uniform_times(self):
        traj = integrate(ROT, [1.0, 0.0], 0.01, 1.0)
        assert np.allclose(np.diff(traj.times), 0.01)
        assert traj.states.shape == (traj.times.size, 2)

    def test_blow_up_is_flagged(self):
        x = var(0, 1)
        traj = integrate(VectorField([x * x]), [1.0], 1e-3, 2.0)
        assert traj.diverged and traj.times[-1] < 1.1

    @pytest.mark.parametrize("dt, T", [(0.0, 1.0), (0.1, 0.05)])
    def test_bad_steps(self, dt, T):
        with pytest.raises(ValueError):
            integrate(decay_1d(), [1.0], dt, T)

    def test_order_factor(self):
        errs = []
        for dt in (0.1, 0.05):
            traj = integrate(decay_1d(), [1.0], dt, 1.0)
            errs.append(abs(traj.final[0] - math.exp(-1)))
        assert 12 <= errs[0] / errs[1] <= 20

    def test_left_K_intervals(self, shell_spec):
        traj = integrate(shell_spec.field, [1.0, 1.0, 0.2], 1e-3, 10.0, shell_spec)
        assert traj.left_K and all(a <= b for a, b in traj.left_K)
        assert traj.in_K[0] and traj.in_K[-1]


class TestTraces:
    def test_identity_metric(self):
        traj = integrate(ROT, [1.0, 0.0], 0.01, 1.0)
        tr = metric_eig_trace(PolyMatrix.identity(2, 2), traj)
        assert np.allclose(tr.values, 1.0) and len(tr) == len(traj)

    def test_diagonal_metric(self):
        G = PolyMatrix([[const(1, 2), const(0, 2)], [const(0, 2), 2 + x2 * x2]])
        traj = integrate(ROT, [1.0, 0.0], 0.01, 1.0)
        assert np.allclose(metric_eig_trace(G, traj).values, 1.0)

    def test_rotation_transverse_is_zero(self):
        traj = integrate(ROT, [1.0, 0.0], 0.01, 1.0)
        assert np.allclose(transverse_eig_trace(PolyMatrix.identity(2, 2), ROT, traj).values, 0.0)

    def test_radial_contraction(self):
        M = -np.eye(2)[None]
        vals, flagged = transverse_max_eig(M, np.array([[-1.0, 0.0]]))
        assert vals[0] == pytest.approx(-1.0) and not flagged[0]

    def test_equilibrium_is_flagged(self):
        traj = integrate(RADIAL, [0.0, 0.0], 0.1, 0.5)
        tr = transverse_eig_trace(PolyMatrix.identity(2, 2), RADIAL, traj)
        assert tr.flagged.all() and math.isnan(tr.max())


LINEAR_3D = """system decay
vars x y z
dynamics
  dx = -x
  dy = -y
  dz = -z
set
  shell: 1 - x^2 - y^2 - z^2 >= 0
"""


def test_lambda_prime_oracles(planar_spec):
    spec = validate(parse_problem(LINEAR_3D))
    G = PolyMatrix.identity(3, 3)
    assert sample_lambda_prime(G, spec.field, spec, samples=2000) == pytest.approx(-1.0)
    assert sample_lambda_prime(PolyMatrix.identity(2, 2), ROT, planar_spec, samples=2000) == \
        pytest.approx(0.0, abs=1e-15)


class TestNagumo:
    def test_shell_inner_boundary(self, shell_spec):
        viol = nagumo_scan(shell_spec, 1, samples=20000)
        assert viol and viol[0].value <= -0.9
        refined = [v for v in viol if v.refined]
        assert any(np.linalg.norm(v.point - [0, 0, 0.7]) < 1e-3 for v in refined)

    def test_planar_has_no_violations(self, planar_spec):
        for i in (1, 2):
            assert nagumo_scan(planar_spec, i, samples=100000) == []

    def test_one_dimensional(self):
        spec = validate(parse_problem("system s\nvars x\ndynamics\n  dx = -x\nset\n  a: 1 - x^2 >= 0\n"))
        assert nagumo_scan(spec, 1, samples=1000) == []

    def test_deterministic(self, shell_spec):
        a = nagumo_scan(shell_spec, 1, samples=5000, seed=3)
        b = nagumo_scan(shell_spec, 1, samples=5000, seed=3)
        assert [v.value for v in a] == [v.value for v in b]


class TestIdentity:
    def test_constant_metric(self):
        G = PolyMatrix.identity(2, 2, 2.0)
        assert inverse_metric_identity_residual(G, ROT, [1.0, 0.3], 1e-3) == 0.0

    def test_one_by_one(self):
        x = var(0, 1)
        G = PolyMatrix([[1 + x * x]])
        assert inverse_metric_identity_residual(G, decay_1d(), [0.8], 1e-4) <= 1e-6

    def test_second_order(self):
        rng = np.random.default_rng(11)
        F = VectorField([-y2 + 0.3 * x2 * x2, x2 - 0.2 * y2])
        for _ in range(5):
            a = random_poly(rng, 2, 2, 3) * 0.1
            c = random_poly(rng, 2, 2, 3) * 0.1
            b = random_poly(rng, 2, 2, 3) * 0.05
            G = PolyMatrix([[2 + a, b], [b, 2 + c]])
            r1 = inverse_metric_identity_residual(G, F, [0.4, -0.2], 2e-3)
            r2 = inverse_metric_identity_residual(G, F, [0.4, -0.2], 1e-3)
            assert 3.0 <= r1 / r2 <= 5.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6))
def test_projection_is_orthonormal(seed, n):
    f = np.random.default_rng(seed).normal(size=n)
    B = orthogonal_complement(f)
    assert np.abs(B.T @ f).max() <= 1e-12 * max(1.0, np.linalg.norm(f))
    assert np.abs(B.T @ B - np.eye(n - 1)).max() <= 1e-12


def test_batched_projection_matches():
    f = np.random.default_rng(1).normal(size=(50, 3))
    Bs = orthogonal_complements(f)
    for fi, B in zip(f, Bs):
        assert np.abs(B.T @ fi).max() <= 1e-12
        assert np.allclose(B, orthogonal_complement(fi))


def test_constrained_maximum_matches_projection():
    rng = np.random.default_rng(12)
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        M = A + A.T
        f = rng.normal(size=3)
        exact, _ = transverse_max_eig(M[None], f[None])
        w = rng.normal(size=(10 ** 4, 3))
        w -= np.outer(w @ f, f) / (f @ f)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        sampled = np.max(np.einsum("ki,ij,kj->k", w, M, w))
        assert sampled <= exact[0] + 1e-8
        assert exact[0] - sampled <= 1e-3
