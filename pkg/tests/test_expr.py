import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avcat import scalar as S
from avcat.errors import ParseError, RingDivisionError, SpecError
from avcat.expr import (Add, Const, Pow, Var, compile_exprs, evaluate, parse_expr, parse_system,
                        serialize_system, to_source)
from avcat.scalar import Dual, EpsJet
from avcat.systems import CATALOG, load_system

FOLD_TEXT = """\
system fold
dim n=1 k=1
period T=2*pi
order 1: x1^2 + mu1 + sin(t)
end
"""


def test_parse_fold_file():
    spec = parse_system(FOLD_TEXT)
    assert (spec.n, spec.k, spec.N) == (1, 1, 1)
    assert spec.T == 2 * math.pi
    assert spec.F[1][0] == parse_expr("x1^2 + mu1 + sin(t)")


def test_parse_pitchfork_with_zero_first_order():
    spec = load_system("pitchfork")
    assert spec.N == 2 and spec.F[1] == (Const(0.0),)
    assert spec.Ftilde is not None and spec.max_order == 3


def test_empty_order_list_is_dimension_error():
    with pytest.raises(SpecError):
        parse_system("system z\ndim n=1 k=1\nperiod T=1\norder 1:\nend\n")
    with pytest.raises(SpecError):
        parse_system("system z\ndim n=1 k=1\nperiod T=1\nend\n")


def test_wrong_expression_count_is_dimension_error():
    with pytest.raises(SpecError):
        parse_system("system z\ndim n=2 k=0\nperiod T=1\norder 1: x1\nend\n")


def test_unknown_identifier_is_rejected():
    with pytest.raises(ParseError):
        parse_system("system z\ndim n=1 k=1\nperiod T=1\norder 1: x2 + mu1\nend\n")


def test_lexical_error_carries_position():
    with pytest.raises(ParseError) as info:
        parse_system("system z\ndim n=1 k=0\nperiod T=1\norder 1: x1 $ 2\nend\n")
    assert info.value.line == 4 and info.value.column is not None


def test_non_periodic_terms_only_warn():
    text = "system drift\ndim n=1 k=0\nperiod T=1\norder 1: t*x1\nend\n"
    with pytest.warns(UserWarning):
        spec = parse_system(text)
    assert spec.n == 1


def test_periodic_builtins_do_not_warn():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for name in CATALOG:
            load_system(name)


def test_precedence_and_unary_minus():
    assert evaluate(parse_expr("-2^2"), {}) == -4.0
    assert evaluate(parse_expr("2*3^2 - 8/4"), {}) == 16.0
    assert evaluate(parse_expr("pi"), {}) == math.pi
    assert isinstance(parse_expr("x1^3"), Pow)


def test_eval_examples():
    assert evaluate(Var("x1"), {"x1": 4.0}) == 4.0
    e = parse_expr("x1^2 + mu1")
    assert evaluate(e, {"x1": 2.0, "mu1": -1.0}) == 3.0
    e = parse_expr("x1^2 + mu1 + sin(t)")
    assert evaluate(e, {"x1": 0.0, "mu1": 0.0, "t": math.pi / 2}) == 1.0


def test_unbound_variable_and_ring_zero_division():
    with pytest.raises(SpecError):
        evaluate(Add(Var("x1"), Const(1.0)), {})
    with pytest.raises(RingDivisionError):
        evaluate(parse_expr("1/x1"), {"x1": EpsJet([0.0, 1.0])})


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_serialize_round_trip(name):
    spec = load_system(name)
    again = parse_system(serialize_system(spec))
    assert again == spec


def test_expression_source_round_trip():
    for text in ["x1^2 + mu1*x1 + sin(t)*x1", "-(x1 - 2)/(3 + exp(-t))", "cos(x1)^0 - -x1"]:
        e = parse_expr(text)
        assert parse_expr(to_source(e)) == e


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 7))
def test_generic_evaluation_is_bit_identical(x, mu, t):
    spec = load_system("transcritical")
    exprs = spec.F[1] + spec.Ftilde
    fn = compile_exprs(exprs, 1, 1)
    ref = fn(t, [x], [mu])
    jet = fn(t, [EpsJet.constant(x, 0)], [mu])
    dual = fn(t, [Dual(x, [1.0], S._fresh_tag())], [mu])
    interp = [evaluate(e, {"t": t, "x1": x, "mu1": mu}) for e in exprs]
    for r, j, d, i in zip(ref, jet, dual, interp):
        r = float(r)
        assert float(np.asarray(j.coeffs if isinstance(j, EpsJet) else j).ravel()[0]) == r
        assert float(d.value if isinstance(d, Dual) else d) == r
        assert float(i) == r
