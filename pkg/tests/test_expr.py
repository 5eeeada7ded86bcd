import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incstab import expr as ex
from incstab.errors import (
    DimensionError,
    DomainError,
    ExprError,
    NonSmoothError,
    ParseError,
    UnboundVariableError,
    UnknownVariableError,
)


def ev(text, n=2, m=2, **b):
    return float(ex.evaluate(ex.parse(text, n, m), b))


class TestParse:
    def test_precedence(self):
        assert ev("1 + 2*3^2") == 19.0
        assert ev("-2^2") == -4.0
        assert ev("2^3^2") == 512.0
        assert ev("(1+2)*3") == 9.0
        assert ev("8/4/2") == 1.0
        assert ev("2^-1") == 0.5

    def test_input_variable(self):
        assert ev("-1 + u1", u1=0.3) == pytest.approx(-0.7, abs=1e-15)

    def test_functions(self):
        assert ev("exp(0) + log(1) + sin(0) + cos(0) + tanh(0) + sqrt(4) + abs(-3)") == 7.0

    def test_scientific_numbers(self):
        assert ev("1.5e2 + .5") == 150.5

    @pytest.mark.parametrize("text", ["x1 +", "(x1", "x1)", "2 ** 3", "exp x1", "", "   ", "1 2"])
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            ex.parse(text, 2)

    def test_parse_error_position(self):
        with pytest.raises(ParseError) as info:
            ex.parse("x1 + * x2", 2)
        assert info.value.position == 5

    def test_unknown_identifier(self):
        with pytest.raises(UnknownVariableError):
            ex.parse("z1", 2)
        with pytest.raises(UnknownVariableError):
            ex.parse("foo(x1)", 2)

    def test_index_out_of_range(self):
        with pytest.raises(DimensionError):
            ex.parse("x3", 2)
        with pytest.raises(DimensionError):
            ex.parse("u1", 2, 0)
        with pytest.raises(DimensionError):
            ex.parse("x0", 2)


class TestEvaluate:
    def test_vectorized(self):
        node = ex.parse("x1*x2 + 1", 2)
        out = ex.evaluate(node, {"x1": np.arange(3.0), "x2": np.full(3, 2.0)})
        np.testing.assert_array_equal(out, [1.0, 3.0, 5.0])

    def test_compiled_matches_tree_walk(self, rng):
        node = ex.parse("exp(x1)*sin(x2) - tanh(x1/(1+x2^2)) + sqrt(x1^2+1)", 2)
        b = {"x1": rng.normal(size=50), "x2": rng.normal(size=50)}
        np.testing.assert_array_equal(ex.compile_expr(node)(b), ex.evaluate(node, b))

    def test_unbound(self):
        with pytest.raises(UnboundVariableError):
            ex.evaluate(ex.parse("x1 + x2", 2), {"x1": 1.0})

    @pytest.mark.parametrize("text", ["log(0)", "log(-1)", "sqrt(-1)", "(-8)^0.5"])
    def test_domain(self, text):
        with pytest.raises(DomainError):
            ev(text)

    def test_non_finite(self):
        with pytest.raises(ExprError):
            ev("exp(1000)")
        with pytest.raises(ExprError):
            ev("1/0")


class TestDiff:
    def test_square(self):
        assert ex.to_string(ex.diff(ex.parse("x1^2", 1), "x1")) == "2*x1"

    def test_other_variable(self):
        assert ex.diff(ex.parse("x1^2", 1), "y1") == ex.Const(0.0)

    def test_pullback_candidate(self):
        V = ex.parse("(exp(x1)-exp(y1))^2", 1)
        assert ex.to_string(ex.diff(V, "x1")) == "2*(exp(x1)-exp(y1))*exp(x1)"

    def test_abs_rejected(self):
        with pytest.raises(NonSmoothError):
            ex.diff(ex.parse("abs(x1)", 1), "x1")

    def test_variable_exponent_rejected(self):
        with pytest.raises(ExprError):
            ex.diff(ex.parse("x1^x2", 2), "x1")

    def test_simplification(self):
        assert ex.to_string(ex.diff(ex.parse("3*x1 + 0*x2 + 1", 2), "x1")) == "3"


def _central_difference(node, name, b):
    h = 1e-5 * max(1.0, abs(b[name]))
    up, dn = dict(b), dict(b)
    up[name] += h
    dn[name] -= h
    return (float(ex.evaluate(node, up)) - float(ex.evaluate(node, dn))) / (2 * h)


CANDIDATES = [
    "(x1-y1)^2",
    "(exp(x1)-exp(y1))^2",
    "(x1-y1)^2 + 0.5*(x2-y2)^2 + (x1-y1)*(x2-y2)",
    "(x2^3 + x2 - y2^3 - y2)^2 + (exp(x1) - exp(y1))^2",
    "sin(x1-y1)^2 + tanh(x2)*cos(y2)",
    "sqrt(1 + (x1-y1)^2) - 1",
    "log(1 + (x1-y1)^2) / (1 + x2^2)",
]


@pytest.mark.parametrize("text", CANDIDATES)
def test_gradient_matches_finite_differences(text):
    # oracle: central differences, 100 random points per candidate
    rng = np.random.default_rng(7)
    V = ex.parse(text, 2)
    names = ["x1", "x2", "y1", "y2"]
    worst = 0.0
    for _ in range(100):
        b = {nm: float(v) for nm, v in zip(names, rng.uniform(-2, 2, 4))}
        for nm in names:
            g = float(ex.evaluate(ex.diff(V, nm), b))
            fd = _central_difference(V, nm, b)
            worst = max(worst, abs(fd - g) / max(1.0, abs(g)))
    assert worst <= 1e-5


# --------------------------------------------------------------------------
# property tests
# --------------------------------------------------------------------------

_leaf = st.one_of(
    st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False).map(ex.Const),
    st.sampled_from(["x1", "x2", "y1", "u1"]).map(ex.Var),
)


def _grow(children):
    return st.one_of(
        st.tuples(st.sampled_from(["neg"] + list(ex.FUNCS)), children).map(lambda t: ex.Unary(*t)),
        st.tuples(st.sampled_from(ex.BINOPS), children, children).map(lambda t: ex.Binary(*t)),
    )


trees = st.recursive(_leaf, _grow, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_print_parse_fixpoint(tree):
    once = ex.parse(ex.to_string(tree), 2, 1)
    assert ex.parse(ex.to_string(once), 2, 1) == once


@settings(max_examples=300, deadline=None)
@given(trees)
def test_printed_tree_evaluates_like_original(tree):
    b = {"x1": 0.3, "x2": -0.7, "y1": 1.1, "u1": 0.2}
    back = ex.parse(ex.to_string(tree), 2, 1)
    try:
        a = float(ex.evaluate(tree, b))
    except ExprError:
        with pytest.raises(ExprError):
            ex.evaluate(back, b)
        return
    c = float(ex.evaluate(back, b))
    assert a == c or (math.isnan(a) and math.isnan(c))


_smooth_unary = st.sampled_from(["neg", "exp", "sin", "cos", "tanh"])
_smooth = st.recursive(
    st.one_of(st.integers(0, 3).map(lambda k: ex.Const(float(k))), st.sampled_from(["x1", "y1"]).map(ex.Var)),
    lambda ch: st.one_of(
        st.tuples(_smooth_unary, ch).map(lambda t: ex.Unary(*t)),
        st.tuples(st.sampled_from(["+", "-", "*"]), ch, ch).map(lambda t: ex.Binary(*t)),
        st.tuples(ch, st.integers(2, 3)).map(lambda t: ex.Binary("^", t[0], ex.Const(float(t[1])))),
    ),
    max_leaves=6,
)


@settings(max_examples=200, deadline=None)
@given(_smooth, st.floats(-1, 1), st.floats(-1, 1))
def test_diff_matches_finite_differences(node, x, y):
    b = {"x1": x, "y1": y}
    try:
        g = float(ex.evaluate(ex.diff(node, "x1"), b))
        fd = _central_difference(node, "x1", b)
    except ExprError:
        return
    # nested exponentials make huge values possible; compare relative to the values involved
    scale = max(1.0, abs(g), abs(float(ex.evaluate(node, b))))
    assert abs(fd - g) <= 1e-4 * scale
