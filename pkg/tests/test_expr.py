"""Expression trees: parsing, evaluation, normalization, skeletons."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintsr.expr import (
    MAX_ABS_VALUE,
    ArityMismatch,
    Const,
    Op,
    Placeholder,
    Pointer,
    TrailingTokens,
    UnboundConstant,
    UnknownToken,
    Var,
    bind_constants,
    complexity,
    constant_count,
    depth,
    evaluate,
    iter_nodes,
    normalize,
    parse_prefix,
    skeletonize,
    to_infix,
    to_prefix,
    variables,
)

# ---------------------------------------------------------------------------
# Random expression strategy (structural, no normalization assumed)
# ---------------------------------------------------------------------------

UNARY = ["sqrt", "pow2", "pow3", "pow4", "inv", "log", "exp", "sin", "cos", "asin"]
BINARY = ["add", "sub", "mul", "div"]


def expr_strategy(max_depth: int = 4):
    leaves = st.one_of(
        st.integers(1, 5).map(Var),
        st.floats(-8, 8, allow_nan=False).map(lambda v: Const(float(v))),
        st.just(Placeholder()),
        st.integers(0, 9).map(Pointer),
    )

    def extend(children):
        return st.one_of(
            st.tuples(st.sampled_from(UNARY), children).map(
                lambda t: Op(t[0], (t[1],))
            ),
            st.tuples(st.sampled_from(BINARY), children, children).map(
                lambda t: Op(t[0], (t[1], t[2]))
            ),
        )

    return st.recursive(leaves, extend, max_leaves=2 ** (max_depth - 1))


# ---------------------------------------------------------------------------
# Prefix form
# ---------------------------------------------------------------------------


def test_parse_worked_example():
    e = parse_prefix("mul x3 sin add x1 x2".split())
    assert e == Op("mul", (Var(3), Op("sin", (Op("add", (Var(1), Var(2))),))))
    assert to_prefix(e) == ["mul", "x3", "sin", "add", "x1", "x2"]


@given(expr_strategy())
@settings(max_examples=300, deadline=None)
def test_prefix_round_trip(e):
    assert parse_prefix(to_prefix(e)) == e


def test_parse_errors():
    with pytest.raises(UnknownToken):
        parse_prefix(["frob", "x1"])
    with pytest.raises(ArityMismatch):
        parse_prefix(["add", "x1"])
    with pytest.raises(TrailingTokens):
        parse_prefix(["x1", "x2"])
    with pytest.raises(ArityMismatch):
        parse_prefix([])


def test_counts_and_variables():
    e = parse_prefix("add mul c x1 sin x2".split())
    assert complexity(e) == 6
    assert depth(e) == 2  # edge depth, leaves at 0
    assert variables(e) == {1, 2}
    assert constant_count(e) == 1


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def test_evaluate_matches_numpy():
    e = parse_prefix("add mul 2.0 sin x1 div x2 x1".split())
    pts = np.array([[0.5, 2.0], [1.5, -1.0], [-2.0, 4.0]])
    got = evaluate(e, pts)
    want = 2.0 * np.sin(pts[:, 0]) + pts[:, 1] / pts[:, 0]
    assert np.allclose(got, want, rtol=1e-12)


def test_evaluate_domain_violations_are_nan():
    pts = np.array([[-1.0], [1.0]])
    assert np.isnan(evaluate(parse_prefix(["log", "x1"]), pts)[0])
    assert np.isnan(evaluate(parse_prefix(["sqrt", "x1"]), pts)[0])
    assert np.isnan(evaluate(parse_prefix(["div", "x1", "0.0"]), pts)).all()
    # half-precision range guard
    big = evaluate(parse_prefix("mul 70000.0 x1".split()), np.array([[1.0]]))
    assert np.isnan(big[0])
    assert abs(MAX_ABS_VALUE - 65504.0) == 0


def test_evaluate_binds_slots_and_pointers():
    e = parse_prefix("add mul c x1 pointer_0".split())
    pts = np.array([[2.0], [3.0]])
    got = evaluate(e, pts, constants=(1.5,), pointers={0: -1.0})
    assert np.allclose(got, 1.5 * pts[:, 0] - 1.0)
    with pytest.raises(UnboundConstant):
        evaluate(e, pts)


def test_bind_constants_round_trip():
    e = parse_prefix("add mul c x1 pointer_3".split())
    bound = bind_constants(e, [2.0], {3: 4.0})
    assert to_prefix(bound) == ["add", "mul", "2.0", "x1", "4.0"]
    with pytest.raises(UnboundConstant):
        bind_constants(e, [], {3: 4.0})


def test_skeletonize_prefix_order_and_known():
    e = parse_prefix("add mul 2.5 x1 -3.0".split())
    assert to_prefix(skeletonize(e)) == ["add", "mul", "c", "x1", "c"]
    # known constants become pointer slots, numbered in prefix order
    assert to_prefix(skeletonize(e, known=(0,))) == [
        "add", "mul", "pointer_0", "x1", "c",
    ]
    assert to_prefix(skeletonize(e, known=(0, 1))) == [
        "add", "mul", "pointer_0", "x1", "pointer_1",
    ]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

CANON_CASES = [
    # commutative ordering
    ("add x2 x1", "add x1 x2"),
    ("mul sin x1 x1", "mul x1 sin x1"),
    # literal folding
    ("add 1.0 2.0", "3.0"),
    ("mul x1 1.0", "x1"),
    ("add x1 0.0", "x1"),
    ("mul x1 0.0", "0.0"),
    # chain flattening and regrouping
    ("add x1 add x1 x1", "mul 3.0 x1"),
    ("mul x1 mul x1 x1", "pow3 x1"),
    ("add add x1 x2 add x1 x2", "add mul 2.0 x1 mul 2.0 x2"),
    ("mul mul x1 x2 mul x1 x2", "pow2 mul x1 x2"),
    # coefficient merging across terms
    ("add mul 2.0 x1 mul 3.0 x1", "mul 5.0 x1"),
    ("add mul c x1 x1", "mul c x1"),
    # exponent merging across factors
    ("mul x1 pow2 x1", "pow3 x1"),
    ("mul pow2 x1 pow2 x1", "pow4 x1"),
    ("mul sqrt x1 sqrt x1", "x1"),
    ("mul x1 inv x1", "1.0"),
    # squared factors combine
    ("mul pow2 x1 pow2 x2", "pow2 mul x1 x2"),
    # scale pull-out through powers
    ("pow2 mul 2.0 x1", "mul 4.0 pow2 x1"),
    ("pow2 mul c x1", "mul c pow2 x1"),
    ("inv mul 2.0 x1", "mul 0.5 inv x1"),
    # slot algebra collapses
    ("add c c", "c"),
    ("mul c c", "c"),
    ("add mul c x1 c", "add c mul c x1"),
    # sub/div are preserved as written (no reciprocal rewriting)
    ("sub x1 x2", "sub x1 x2"),
    ("div x1 x2", "div x1 x2"),
]


@pytest.mark.parametrize("raw,want", CANON_CASES)
def test_normalize_cases(raw, want):
    got = to_prefix(normalize(parse_prefix(raw.split())))
    assert got == want.split()


@given(expr_strategy())
@settings(max_examples=300, deadline=None)
def test_normalize_idempotent(e):
    once = normalize(e)
    assert normalize(once) == once


@given(expr_strategy())
@settings(max_examples=300, deadline=None)
def test_normalize_preserves_values(e):
    # slots carry no values; bind them before comparing numerics
    slots = sum(1 for n in iter_nodes(e) if isinstance(n, Placeholder))
    e = bind_constants(e, [0.7] * slots, {i: 1.3 for i in range(10)})
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(64, 5))
    base = evaluate(e, pts)
    canon = evaluate(normalize(e), pts)
    both = np.isfinite(base) & np.isfinite(canon)
    # normalization may only change where intermediate overflow differs
    assert np.allclose(base[both], canon[both], rtol=1e-6, atol=1e-8)


def test_normalize_keeps_worked_example_intact():
    e = parse_prefix("mul x3 sin add x1 x2".split())
    assert to_prefix(normalize(e)) == ["mul", "x3", "sin", "add", "x1", "x2"]


def test_to_infix_readable():
    e = parse_prefix("add mul c sin x1 pointer_0".split())
    text = to_infix(e)
    assert "sin" in text and "c" in text
    assert to_infix(parse_prefix(["x1"])) == "x1"
