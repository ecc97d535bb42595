import numpy as np
import pytest

from common.errors import ExpressionSyntaxError, NonFiniteValue, UnknownFunction, UnknownVariable
from common.expression import (
    Binary, Call, Expression, Negate, Number, Variable, eval_expression, evaluate_array, parse_expression,
    pretty_print,
)


def value(src, u=0.0):
    return eval_expression(parse_expression(src), u)


class TestGrammar:
    def test_sin_at_zero(self):
        assert value("sin(u)") == 0.0

    def test_precedence(self):
        assert value("2+3*4^2") == 50.0

    def test_power_is_right_associative(self):
        assert value("2^3^2") == 512.0

    def test_power_binds_tighter_than_negation(self):
        assert value("-u^2", 3.0) == -9.0

    def test_negative_exponent(self):
        assert value("2^-1") == 0.5

    def test_exp_and_tanh(self):
        assert value("exp(0)") == 1.0
        assert value("tanh(1)") == pytest.approx(0.7615942, abs=1e-7)

    def test_division_and_subtraction_are_left_associative(self):
        assert value("8/4/2") == 1.0
        assert value("5-3-1") == 1.0

    def test_whitespace_is_ignored(self):
        assert value("  2 *\t( u + 1 ) ", 2.0) == 6.0

    def test_tree_shape(self):
        assert parse_expression("-u^2") == Negate(Binary("^", Variable("u"), Number(2.0)))
        assert parse_expression("abs(u)") == Call("abs", Variable("u"))


class TestErrors:
    def test_unary_plus_is_rejected(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("+1")
        assert info.value.offset == 0

    def test_offset_is_in_bytes(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_expression("u * )")
        assert info.value.offset == 4

    def test_unclosed_parenthesis(self):
        with pytest.raises(ExpressionSyntaxError, match="expected"):
            parse_expression("sin(u")

    def test_trailing_tokens(self):
        with pytest.raises(ExpressionSyntaxError):
            parse_expression("u u")

    def test_unknown_function(self):
        with pytest.raises(UnknownFunction, match="log"):
            parse_expression("log(u)")

    def test_unknown_variable(self):
        with pytest.raises(UnknownVariable, match="x"):
            parse_expression("x + 1")

    def test_division_by_zero_is_non_finite(self):
        with pytest.raises(NonFiniteValue):
            value("1/u", 0.0)

    def test_domain_error_is_non_finite(self):
        with pytest.raises(NonFiniteValue):
            value("sqrt(u)", -1.0)


class TestEvaluation:
    def test_array_evaluation_matches_numpy(self):
        u = np.linspace(-2.0, 2.0, 11)
        np.testing.assert_allclose(evaluate_array(parse_expression("u*exp(-u^2)"), u), u * np.exp(-u ** 2))

    def test_constant_broadcasts(self):
        assert Expression("-1")(np.zeros(5)).shape == (5,)

    def test_pretty_print_round_trip(self):
        rng = np.random.default_rng(7)
        u = rng.uniform(-3.0, 3.0, 100)
        for src in ("2+3*4^2", "-u^2", "sin(u)/(1+u^2)", "2^3^2", "abs(u - 0.5)*cos(2*u)", "exp(-u)^2"):
            ast = parse_expression(src)
            again = parse_expression(pretty_print(ast))
            np.testing.assert_array_equal(evaluate_array(again, u), evaluate_array(ast, u))
