import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitcert.frontend import parse_polynomial
from orbitcert.polyring import (ArityError, PolyMatrix, Polynomial, VectorField, add, count_monomials,
                                evaluate, jacobian, monomial_basis, mul, orbital_derivative, partial,
                                to_string)

from conftest import random_poly, var, const

X, Y = var(0, 2), var(1, 2)


def P(src, names=("x", "y")):
    return parse_polynomial(src, names)


class TestArithmetic:
    def test_cancellation(self):
        assert add(X ** 2 + 1, -X ** 2 + X) == X + 1

    def test_zero_identity(self):
        p = random_poly(np.random.default_rng(1), 2, 4, 6)
        assert p + Polynomial.zero(2) == p

    def test_scalar_addition(self):
        s = 0.1 * X + 0.2 * X
        assert abs(s.coefficient((1, 0)) - 0.3) <= 1e-15 * 0.3

    def test_difference_of_squares(self):
        assert mul(X + 1, X - 1) == X ** 2 - 1

    def test_one_identity(self):
        p = random_poly(np.random.default_rng(2), 2, 4, 6)
        assert p * const(1.0, 2) == p

    def test_expansion_of_first_factor_group(self):
        got = X * (1 - X ** 2 - Y ** 2) * (X + 0.5)
        want = P("-x^4 - 0.5*x^3 - x^2*y^2 - 0.5*x*y^2 + x^2 + 0.5*x")
        assert got == want

    def test_degree_of_product(self):
        assert mul(X ** 2 + Y, X * Y - 1).degree == 4

    def test_arity_mismatch_reports_both(self):
        with pytest.raises(ArityError, match="2.*3"):
            add(X, var(0, 3))
        with pytest.raises(ArityError):
            mul(X, var(0, 3))

    def test_pruning(self):
        p = X + 1e-15 * Y
        assert p == X


class TestCalculus:
    def test_power_rule(self):
        assert partial(X ** 2 * Y, 0) == 2 * X * Y

    def test_constant_in_y(self):
        assert partial(X ** 2, 1).is_zero()

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            partial(X, 2)

    def test_evaluate(self):
        assert evaluate(X ** 2 + Y ** 2, (3, 4)) == 25

    def test_evaluate_length_mismatch(self):
        with pytest.raises(ArityError):
            evaluate(X, (1.0, 2.0, 3.0))

    def test_shell_field_z_component(self, shell_spec):
        assert shell_spec.field[2](0.3, -0.2, 0.7) == pytest.approx(-0.7, abs=1e-15)

    def test_jacobian_rotation(self):
        J = jacobian(VectorField([-Y, X]))
        assert np.array_equal(J.evaluate((0.3, 0.1)), [[0, -1], [1, 0]])

    def test_jacobian_shell_third_row(self, shell_spec):
        J = jacobian(shell_spec.field)
        assert [J[2, j] for j in range(3)] == [const(0, 3), const(0, 3), const(-1, 3)]

    def test_jacobian_shell_df1_dy(self, shell_spec):
        x, y = var(0, 3), var(1, 3)
        J = jacobian(shell_spec.field)
        assert J[0, 1] == -2 * x * y * (x + 0.5) - 1

    def test_jacobian_linear_field_is_exact(self):
        rng = np.random.default_rng(3)
        A = rng.normal(size=(3, 3))
        xs = [var(i, 3) for i in range(3)]
        F = VectorField([sum((A[i, j] * xs[j] for j in range(3)), const(0, 3)) for i in range(3)])
        assert np.array_equal(jacobian(F).evaluate((0.0, 0.0, 0.0)), A)

    def test_orbital_derivative_constant(self):
        G = PolyMatrix.identity(2, 2, 3.0)
        assert orbital_derivative(G, VectorField([-Y, X])) == PolyMatrix.identity(2, 2, 0.0)

    def test_orbital_derivative_one_by_one(self):
        x = var(0, 1)
        Gd = orbital_derivative(PolyMatrix([[x ** 2]]), VectorField([-x]))
        assert Gd[0, 0] == -2 * x ** 2

    def test_orbital_derivative_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            orbital_derivative(PolyMatrix([[X, Y], [X, Y]]), VectorField([-Y, X]))

    def test_orbital_derivative_symmetric_output(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b, c = (random_poly(rng, 2, 3, 4) for _ in range(3))
            G = PolyMatrix([[a, b], [b, c]])
            F = VectorField([random_poly(rng, 2, 3, 4), random_poly(rng, 2, 3, 4)])
            assert orbital_derivative(G, F).is_symmetric()


class TestMonomialBasis:
    def test_counts(self):
        assert len(monomial_basis(2, 2)) == 6
        assert len(monomial_basis(3, 6)) == 84 == count_monomials(3, 6)

    def test_w_cap(self):
        basis = monomial_basis(4, 2, w_degree_cap=1)
        for m in [(0, 0, 2, 0), (0, 0, 1, 1), (0, 0, 0, 2)]:
            assert m not in basis
        assert (0, 0, 1, 0) in basis and (2, 0, 0, 0) in basis

    def test_grlex_and_deterministic(self):
        b = monomial_basis(3, 3)
        assert b == monomial_basis(3, 3)
        assert [sum(m) for m in b] == sorted(sum(m) for m in b)


def _rand(seed, arity=3):
    rng = np.random.default_rng(seed)
    return [random_poly(rng, arity, 3, 5) for _ in range(3)]


def _close(a: Polynomial, b: Polynomial, tol=1e-10) -> bool:
    d = a - b
    return d.max_abs_coef() <= tol * (1 + max(a.max_abs_coef(), b.max_abs_coef()))


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ring_axioms_and_leibniz(seed):
    p, q, r = _rand(seed)
    assert p + q == q + p
    assert p * q == q * p
    assert _close((p + q) + r, p + (q + r))
    assert _close((p * q) * r, p * (q * r))
    assert _close(p * (q + r), p * q + p * r)
    for i in range(3):
        assert _close(partial(p * q, i), p * partial(q, i) + q * partial(p, i))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_evaluation_is_a_homomorphism(seed):
    p, q, _ = _rand(seed)
    pt = np.random.default_rng(seed).uniform(-2, 2, size=3)
    for got, want in [(evaluate(p * q, pt), evaluate(p, pt) * evaluate(q, pt)),
                      (evaluate(p + q, pt), evaluate(p, pt) + evaluate(q, pt))]:
        assert abs(got - want) <= 1e-10 * (1 + abs(want))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_print_parse_round_trip(seed):
    p, _, _ = _rand(seed)
    names = ("x", "y", "z")
    assert parse_polynomial(to_string(p, names), names) == p
