import numpy as np
import pytest

from orbitcert.frontend import (ParseError, SpecError, parse_polynomial, parse_problem,
                                validate)
from orbitcert.soscert import putinar_augment

from conftest import PLANAR_SRC, var


def test_two_term_parse():
    p = parse_polynomial("x^2 - 0.5*y", ("x", "y"))
    assert p.terms == {(2, 0): 1.0, (0, 1): -0.5}


def test_first_field_component_has_seven_terms():
    p = parse_polynomial("x*(1 - x^2 - y^2)*(x + 0.5) - y", ("x", "y"))
    assert p.degree == 4 and len(p.terms) == 7


@pytest.mark.parametrize("src, token", [
    ("x + q", "q"),
    ("x + (y", ""),
    ("x + 1.2.3", "1.2.3"),
    ("2 x", "x"),
    ("x ^ -1", "-"),
])
def test_parse_errors_point_at_token(src, token):
    with pytest.raises(ParseError) as info:
        parse_polynomial(src, ("x", "y"))
    err = info.value
    assert src[err.offset:err.offset + len(err.token)] == err.token
    if token:
        assert err.token == token


def test_unary_minus_and_powers():
    x, y = var(0, 2), var(1, 2)
    assert parse_polynomial("-(x - y)^2", ("x", "y")) == -(x - y) ** 2
    assert parse_polynomial("--x", ("x", "y")) == x


def test_bundled_problem(shell_spec):
    assert shell_spec.n == 3 and shell_spec.num_constraints == 2
    x, y, z = (var(i, 3) for i in range(3))
    assert shell_spec.constraints[0] == x ** 2 + y ** 2 + z ** 2 - 0.49
    assert shell_spec.constraints[1] == 2.25 - (x ** 2 + y ** 2 + z ** 2)
    assert shell_spec.field[2] == -z


def test_missing_section_is_named():
    src = PLANAR_SRC.replace("dynamics\n", "").replace("  dx = -y + x*(1 - x^2 - y^2)\n", "")
    src = src.replace("  dy = x + y*(1 - x^2 - y^2)\n", "")
    with pytest.raises((ParseError, SpecError), match="dynamics"):
        parse_problem(src)


def test_odd_metric_degree():
    with pytest.raises(SpecError, match="must be even"):
        parse_problem(PLANAR_SRC.replace("metric_degree = 2", "metric_degree = 5"))


def test_problem_errors_slice_to_token():
    src = PLANAR_SRC.replace("1.5 - x^2", "1.5 - w^2")
    with pytest.raises(ParseError) as info:
        parse_problem(src)
    err = info.value
    assert src[err.offset:err.offset + len(err.token)] == err.token == "w"


def test_defaults(planar_spec):
    assert planar_spec.delta == 1e-3
    assert planar_spec.option("tol") == 1e-8
    assert planar_spec.option("s_degree") == planar_spec.metric_degree
    assert planar_spec.option("p2_degree") == planar_spec.metric_degree - 1


def test_shell_is_compact_without_a_ball(shell_spec):
    assert not shell_spec.ball_scheduled
    assert putinar_augment(shell_spec).num_constraints == 2


ONE_D = """system half_line
vars x
dynamics
  dx = -x
set
  pos: x >= 0
options
  box = 0,10
"""


def test_unbounded_set_schedules_a_ball():
    spec = validate(parse_problem(ONE_D))
    assert spec.ball_scheduled and spec.warnings
    aug = putinar_augment(spec)
    assert aug.constraints[-1] == 225 - var(0, 1) ** 2
    assert putinar_augment(aug) is aug


def test_empty_set_is_rejected():
    src = ONE_D.replace("  pos: x >= 0\n", "  a: x - 1 >= 0\n  b: -x >= 0\n")
    with pytest.raises(SpecError, match="empty"):
        validate(parse_problem(src), max_samples=10 ** 5)


def test_text_round_trip(shell_spec):
    again = parse_problem(shell_spec.to_text())
    assert again.field == shell_spec.field
    assert again.constraints == shell_spec.constraints
    assert again.digest() == shell_spec.digest()


def test_sampled_points_respect_box(shell_spec):
    box = shell_spec.bounding_box()
    assert np.allclose(box, [[-1.5, 1.5]] * 3)
