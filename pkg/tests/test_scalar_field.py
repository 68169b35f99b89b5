import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from berwald.scalar_field import (BinOp, Call, DomainError, ExpressionSyntaxError,
                                  Jet2, Neg, Num, Param, ScalarField, UnboundParameter,
                                  UnknownIdentifier, Var, eval_jet2, evaluate, parse,
                                  substitute, to_source)


def jet(src, t, r, **params):
    return eval_jet2(parse(src), t, r, params)


class TestParse:
    def test_power_law_coefficient(self):
        # value 2r at alpha = 3
        e = parse("2*r*(alpha-2)")
        for r in (0.5, 1.0, 2.5):
            assert evaluate(e, {"t": 0.0, "r": r, "alpha": 3.0}) == pytest.approx(2 * r)

    def test_zero(self):
        assert evaluate(parse("0"), {}) == 0.0
        assert jet("0", 1.0, 2.0).value == 0.0

    def test_exp_square_against_finite_differences(self):
        j = jet("exp((r-t)^2)", 1.0, 2.0)
        h = 1e-5
        f = lambda t, r: math.exp((r - t) ** 2)
        assert j.value == pytest.approx(math.e, rel=1e-12)
        assert j.dt == pytest.approx((f(1 + h, 2) - f(1 - h, 2)) / (2 * h), rel=1e-6)
        assert j.dt == pytest.approx(-2 * math.e, rel=1e-10)

    def test_pi(self):
        assert evaluate(parse("cos(pi)"), {}) == pytest.approx(-1.0)

    def test_syntax_error_position(self):
        with pytest.raises(ExpressionSyntaxError) as exc:
            parse("2*+r")
        assert exc.value.position == 2

    def test_unknown_function(self):
        with pytest.raises(UnknownIdentifier):
            parse("sinh(t)")

    def test_function_name_without_call(self):
        with pytest.raises(UnknownIdentifier):
            parse("sin + 2")

    def test_empty(self):
        with pytest.raises(ExpressionSyntaxError):
            parse("   ")

    def test_unary_binds_before_power(self):
        # the grammar reads factor := unary ('^' factor)?, so -2^2 = (-2)^2
        assert evaluate(parse("-2^2"), {}) == 4.0

    def test_power_right_associative(self):
        assert evaluate(parse("2^3^2"), {}) == 512.0

    def test_scientific_numbers(self):
        assert evaluate(parse("1.5e-3 + 2E2"), {}) == pytest.approx(200.0015)


class TestEvalJet2:
    def test_bilinear(self):
        j = jet("t*r", 2.0, 3.0)
        assert (j.value, j.dt, j.dr) == (6.0, 3.0, 2.0)
        assert (j.dtt, j.dtr, j.drr) == (0.0, 1.0, 0.0)

    def test_sin_at_zero(self):
        j = jet("sin(t)", 0.0, 5.0)
        assert j.value == 0.0
        assert j.dt == 1.0
        assert j.dtt == 0.0

    def test_radial_coefficient_field(self):
        # (1/3) d_r(t*r) = t/3; equals 1 at t = 3
        phi = jet("t*r", 3.0, 1.7)
        assert phi.dr / 3.0 == pytest.approx(1.0)
        assert ScalarField("t/3").value(3.0, 0.0) == pytest.approx(1.0)

    def test_unbound_parameter(self):
        with pytest.raises(UnboundParameter):
            jet("alpha*t", 1.0, 1.0)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            jet("ln(t-2)", 1.0, 0.0)
        with pytest.raises(DomainError):
            jet("sqrt(0-r)", 0.0, 1.0)
        with pytest.raises(DomainError):
            jet("1/(t-1)", 1.0, 0.0)
        with pytest.raises(DomainError):
            jet("t^0.5", -1.0, 0.0)

    def test_integer_power_of_negative_base(self):
        j = jet("t^3", -2.0, 0.0)
        assert j.value == -8.0
        assert j.dt == 12.0
        assert j.dtt == -12.0

    def test_abs_kink_flag(self):
        assert jet("abs(t)", 0.0, 0.0).kink
        smooth = jet("abs(t)", 2.0, 0.0)
        assert not smooth.kink
        assert smooth.dt == 1.0
        assert jet("abs(t)", -2.0, 0.0).dt == -1.0


# -- randomized ASTs for the property tests ----------------------------------

_LEAVES = [Num(0.5), Num(2.0), Num(3.0), Var("t"), Var("r"), Param("alpha")]
_FUNCS = ["sin", "cos", "exp"]


def _random_ast(rng, depth):
    if depth == 0:
        return _LEAVES[rng.integers(len(_LEAVES))]
    kind = rng.integers(5)
    if kind == 0:
        return Neg(_random_ast(rng, 0))
    if kind == 1:
        return Call(_FUNCS[rng.integers(len(_FUNCS))], _random_ast(rng, depth - 1))
    op = "+-*"[rng.integers(3)]
    return BinOp(op, _random_ast(rng, depth - 1), _random_ast(rng, depth - 1))


def _fd(expr, t, r, params, h=1e-5):
    f = lambda tt, rr: evaluate(expr, {"t": tt, "r": rr, **params})
    dt = (f(t + h, r) - f(t - h, r)) / (2 * h)
    dr = (f(t, r + h) - f(t, r - h)) / (2 * h)
    dtt = (f(t + h, r) - 2 * f(t, r) + f(t - h, r)) / h ** 2
    drr = (f(t, r + h) - 2 * f(t, r) + f(t, r - h)) / h ** 2
    dtr = (f(t + h, r + h) - f(t + h, r - h) - f(t - h, r + h) + f(t - h, r - h)) / (4 * h * h)
    return dt, dr, dtt, dtr, drr


def test_ad_matches_finite_differences_on_random_expressions():
    rng = np.random.default_rng(1234)
    params = {"alpha": 1.3}
    checked = 0
    while checked < 100:
        expr = _random_ast(rng, int(rng.integers(1, 4)))
        t, r = rng.uniform(0.3, 2.0, size=2)
        try:
            j = eval_jet2(expr, t, r, params)
        except DomainError:
            continue
        if abs(j.value) > 1e3:
            continue
        dt, dr, dtt, dtr, drr = _fd(expr, t, r, params)
        scale1 = 1.0 + max(abs(j.dt), abs(j.dr))
        scale2 = 1.0 + max(abs(j.dtt), abs(j.dtr), abs(j.drr))
        assert abs(j.dt - dt) / scale1 < 1e-6
        assert abs(j.dr - dr) / scale1 < 1e-6
        assert abs(j.dtt - dtt) / scale2 < 1e-4
        assert abs(j.dtr - dtr) / scale2 < 1e-4
        assert abs(j.drr - drr) / scale2 < 1e-4
        checked += 1


def test_product_rule_exact():
    rng = np.random.default_rng(7)
    for _ in range(50):
        f = _random_ast(rng, 2)
        g = _random_ast(rng, 2)
        t, r = rng.uniform(0.3, 2.0, size=2)
        params = {"alpha": 0.7}
        try:
            jf = eval_jet2(f, t, r, params)
            jg = eval_jet2(g, t, r, params)
            jfg = eval_jet2(BinOp("*", f, g), t, r, params)
        except DomainError:
            continue
        leib = jf * jg
        scale = 1.0 + abs(leib.value) + abs(leib.dtt) + abs(leib.drr)
        for attr in ("value", "dt", "dr", "dtt", "dtr", "drr"):
            assert abs(getattr(jfg, attr) - getattr(leib, attr)) / scale < 1e-12


def test_quotient_rule_exact():
    jf = jet("sin(t) + 2", 0.7, 1.1)
    jg = jet("exp(r) + t", 0.7, 1.1)
    jq = jet("(sin(t) + 2)/(exp(r) + t)", 0.7, 1.1)
    ref = jf / jg
    for attr in ("value", "dt", "dr", "dtt", "dtr", "drr"):
        assert getattr(jq, attr) == pytest.approx(getattr(ref, attr), rel=1e-12, abs=1e-12)


def test_parse_print_round_trip_random():
    rng = np.random.default_rng(99)
    pts = [(0.7, 1.3), (1.9, 0.4), (2.2, 2.2)]
    params = {"alpha": 0.9}
    for _ in range(150):
        expr = _random_ast(rng, int(rng.integers(1, 4)))
        text = to_source(expr)
        reparsed = parse(text)
        for (t, r) in pts:
            env = {"t": t, "r": r, **params}
            try:
                v1 = evaluate(expr, env)
            except DomainError:
                continue
            v2 = evaluate(reparsed, env)
            assert v2 == pytest.approx(v1, rel=1e-14, abs=1e-14)


@given(st.floats(min_value=-3, max_value=3), st.floats(min_value=-3, max_value=3),
       st.floats(min_value=0.2, max_value=2.5), st.floats(min_value=0.2, max_value=2.5))
@settings(max_examples=200, deadline=None)
def test_round_trip_fixed_shape(a, b, t, r):
    expr = BinOp("*", BinOp("+", Num(a), Var("t")),
                 BinOp("-", Num(b), Call("sin", Var("r"))))
    env = {"t": t, "r": r}
    assert evaluate(parse(to_source(expr)), env) == pytest.approx(
        evaluate(expr, env), rel=1e-13, abs=1e-13)


def test_substitute_composition():
    base = parse("t^2 + sin(r)")
    composed = substitute(base, {"t": parse("t + r"), "r": parse("2*r")})
    env = {"t": 0.4, "r": 0.9}
    assert evaluate(composed, env) == pytest.approx((0.4 + 0.9) ** 2 + math.sin(1.8))


def test_field_algebra_jets_are_exact():
    f = ScalarField("t^2*r") / ScalarField("1 + r^2") - 3.0 * ScalarField("sin(t)")
    j = f.jet(1.1, 0.8)
    g = lambda t, r: t * t * r / (1 + r * r) - 3 * math.sin(t)
    h = 1e-5
    assert j.value == pytest.approx(g(1.1, 0.8), rel=1e-13)
    assert j.dt == pytest.approx((g(1.1 + h, 0.8) - g(1.1 - h, 0.8)) / (2 * h), rel=1e-7)
    assert j.dr == pytest.approx((g(1.1, 0.8 + h) - g(1.1, 0.8 - h)) / (2 * h), rel=1e-7)


def test_conflicting_parameter_values_rejected():
    f = ScalarField("alpha*t", {"alpha": 1.0})
    g = ScalarField("alpha*r", {"alpha": 2.0})
    with pytest.raises(ValueError):
        f + g
