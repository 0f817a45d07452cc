import numpy as np
import pytest

from orbitcert.frontend import load_problem, parse_problem, validate
from orbitcert.polyring import Polynomial
from orbitcert.soscert import AffinePoly, SosProgram
from orbitcert.cli import resolve_problem_path


def var(i, n):
    return Polynomial.variable(i, n)


def const(c, n):
    return Polynomial.constant(c, n)


def univariate_program(p: Polynomial, with_eps: bool = False) -> SosProgram:
    """p - eps is SOS over one variable (eps only when ``with_eps``)."""
    prog = SosProgram(arity=p.arity, n_x=p.arity)
    expr = AffinePoly.from_polynomial(p)
    if with_eps:
        e = prog.new_scalar("eps")
        expr = expr - AffinePoly.variable_times(e.offset, const(1.0, p.arity))
        prog.objective = {e.offset: 1.0}
    prog.meta["kind"] = "contraction"
    prog.add_constraint("p", expr)
    return prog


PLANAR_SRC = """system planar
vars x y
dynamics
  dx = -y + x*(1 - x^2 - y^2)
  dy = x + y*(1 - x^2 - y^2)
set
  inner: x^2 + y^2 - 0.5 >= 0
  outer: 1.5 - x^2 - y^2 >= 0
options
  metric_degree = 2
"""


@pytest.fixture(scope="session")
def shell_spec():
    return validate(load_problem(resolve_problem_path("example_paper.prob")))


@pytest.fixture(scope="session")
def planar_spec():
    return validate(parse_problem(PLANAR_SRC))


def random_poly(rng: np.random.Generator, arity: int, max_deg: int, terms: int) -> Polynomial:
    out = {}
    for _ in range(terms):
        e = rng.integers(0, max_deg + 1, size=arity)
        while e.sum() > max_deg:
            e[int(np.argmax(e))] -= 1
        out[tuple(int(v) for v in e)] = float(rng.normal())
    return Polynomial(out, arity)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.REPORT):
            terminalreporter.write_line(line)
