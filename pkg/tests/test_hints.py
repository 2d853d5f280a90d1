"""Privileged-information channels: pools, sampling, symmetry, grammar."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hintsr import hints
from hintsr.expr import Const, Op, Placeholder, Var, parse_prefix, to_prefix
from hintsr.hints import (
    Branch,
    GrammarError,
    MaskDraw,
    PrivilegedInfo,
    SymmetryProbeConfig,
    build_global_pool,
    build_pi,
    detect_symmetry,
    deserialize,
    draw_known,
    hypotheses_string,
    make_pi,
    negative_pool,
    parse_hypotheses,
    positive_pool,
    sample_branches,
    satisfies,
    serialize,
    symmetry_flags,
    training_mask,
)

WORKED = parse_prefix("mul x3 sin add x1 x2".split())


# ---------------------------------------------------------------------------
# Positive pool vs an independent recursive oracle
# ---------------------------------------------------------------------------


def pool_oracle(e) -> list[Branch]:
    """Branch enumeration written from the definition, bottom-up."""

    def collect(node) -> frozenset[Branch]:
        if not isinstance(node, Op):
            return frozenset()
        own = {(node.symbol,), tuple(to_prefix(node))}
        for child in node.children:
            own.add((node.symbol, *to_prefix(child)))
        return frozenset(own).union(*(collect(c) for c in node.children))

    found = collect(e) - {tuple(to_prefix(e))}
    return sorted(found, key=lambda b: (len(b), b))


def enumerate_expressions(depth: int, unary, binary) -> list:
    """Every distinct tree up to the given edge depth over {x1, x2, c}."""
    leaves = [Var(1), Var(2), Placeholder()]
    if depth == 0:
        return leaves
    inner = enumerate_expressions(depth - 1, unary, binary)
    out = list(leaves)
    out.extend(Op(u, (s,)) for u in unary for s in inner)
    out.extend(Op(b, (l, r)) for b in binary for l in inner for r in inner)
    return out


def test_worked_example_pool():
    want = [
        ("add",), ("mul",), ("sin",),
        ("add", "x1"), ("add", "x2"), ("mul", "x3"),
        ("add", "x1", "x2"),
        ("sin", "add", "x1", "x2"),
        ("mul", "sin", "add", "x1", "x2"),
    ]
    assert positive_pool(WORKED) == sorted(want, key=lambda b: (len(b), b))


def test_pool_of_leaf_is_empty():
    assert positive_pool(Var(1)) == []
    assert positive_pool(Placeholder()) == []


def test_pool_matches_oracle_depth3():
    # the exhaustive depth-4 sweep runs in the acceptance suite
    for e in enumerate_expressions(3, ["sin"], ["add"]):
        assert positive_pool(e) == pool_oracle(e), to_prefix(e)


def test_pool_never_contains_full_tree_or_leaves():
    for e in enumerate_expressions(2, ["sin", "pow2"], ["add", "mul"]):
        pool = positive_pool(e)
        full = tuple(to_prefix(e))
        assert full not in pool
        assert all(len(b) > 1 or b[0] not in ("x1", "x2", "c") for b in pool)


# ---------------------------------------------------------------------------
# Branch sampling
# ---------------------------------------------------------------------------


def test_budget_rule_worked_example():
    # p=0.5 of 6 tokens: branch lengths may sum to at most 3
    pool = positive_pool(WORKED)
    rng = np.random.default_rng(7)
    for _ in range(500):
        picks = sample_branches(pool, 0.5, 6, rng)
        assert sum(len(b) for b in picks) <= 3


@given(st.floats(0, 1), st.integers(1, 20), st.integers(0, 2**32 - 1))
@settings(max_examples=200, deadline=None)
def test_budget_never_exceeded(p, gt_len, seed):
    pool = positive_pool(WORKED)
    rng = np.random.default_rng(seed)
    picks = sample_branches(pool, p, gt_len, rng)
    assert sum(len(b) for b in picks) <= round(p * gt_len)
    assert len(set(picks)) == len(picks)  # without replacement


def test_sample_weights_favor_short_branches():
    pool = [("sin",), ("mul", "sin", "add", "x1", "x2")]
    rng = np.random.default_rng(0)
    counts = {1: 0, 5: 0}
    for _ in range(4000):
        picks = sample_branches(pool, 1.0, 5, rng)
        counts[len(picks[0])] += 1
    # weights 1 vs 1/25
    ratio = counts[1] / max(counts[5], 1)
    assert ratio > 15


def test_zero_budget_is_empty():
    assert sample_branches(positive_pool(WORKED), 0.0, 6, np.random.default_rng(0)) == []


# ---------------------------------------------------------------------------
# Negative pool
# ---------------------------------------------------------------------------


def test_negative_pool_excludes_positives_and_full_tree():
    global_pool = build_global_pool(
        [WORKED, parse_prefix("exp x1".split()), parse_prefix("mul x1 x2".split())]
    )
    negatives = negative_pool(WORKED, global_pool)
    assert ("exp",) in negatives
    assert ("mul", "x1") in negatives
    assert ("sin",) not in negatives
    assert tuple(to_prefix(WORKED)) not in negatives
    for b in negatives:
        assert b not in positive_pool(WORKED)


def test_negative_pool_requires_global_pool():
    with pytest.raises(hints.EmptyGlobalPool):
        negative_pool(WORKED, ())


# ---------------------------------------------------------------------------
# Symmetry detection
# ---------------------------------------------------------------------------

SYMMETRY_CASES = [
    ("mul x3 sin add x1 x2", (1, 2), True),
    ("mul x3 sin add x1 x2", (1, 3), False),
    ("mul x3 sin add x1 x2", (2, 3), False),
    ("add mul x1 x2 x3", (1, 2), True),
    ("add pow2 add x1 x2 x3", (1, 2), True),
    ("add exp mul x1 x2 sin x3", (1, 2), True),
    ("add x1 mul x2 x3", (2, 3), True),
    ("add x1 mul x2 x3", (1, 2), False),
    ("add mul x1 x3 x2", (1, 2), False),
    ("div sin add x1 x2 x3", (1, 2), True),
]


@pytest.mark.parametrize("text,subset,want", SYMMETRY_CASES)
def test_symmetry_oracle_cases(text, subset, want):
    e = parse_prefix(text.split())
    assert detect_symmetry(e, subset) is want


def test_symmetry_flags_worked_example_order():
    flags = symmetry_flags(WORKED)
    assert flags == (((1, 2), True), ((2, 3), False), ((1, 3), False))


def test_symmetry_requires_proper_subset():
    e = parse_prefix("add x1 x2".split())
    assert symmetry_flags(e) == ()  # d=2 leaves no useful subsets


def test_symmetry_insufficient_probes():
    # log of a negative-definite argument is invalid almost everywhere
    e = parse_prefix("log mul -1.0 add pow2 add x1 x2 x3".split())
    cfg = SymmetryProbeConfig(bound=5.0)
    with pytest.raises(hints.InsufficientValidProbes):
        detect_symmetry(e, (1, 2), cfg)


def test_symmetry_seed_stability():
    e = parse_prefix("mul x3 sin add x1 x2".split())
    votes = [detect_symmetry(e, (1, 2), seed=s) for s in range(30)]
    assert all(votes)


# ---------------------------------------------------------------------------
# Serialization grammar
# ---------------------------------------------------------------------------


def test_worked_example_string():
    pi = make_pi(
        positive=[("sin",), ("mul", "x3")],
        negative=[("exp",), ("mul", "x1")],
        complexity=6,
        symmetry=symmetry_flags(WORKED),
    )
    assert hypotheses_string(pi) == (
        "<Positive> sin </Positive> <Positive> mul x3 </Positive> "
        "<Negative> exp </Negative> <Negative> mul x1 </Negative> "
        "Complexity=6 TrueSymmetryX1X2 FalseSymmetryX2X3 FalseSymmetryX1X3"
    )


def test_symmetry_only_string():
    pi = make_pi(symmetry=symmetry_flags(WORKED))
    assert hypotheses_string(pi) == (
        "TrueSymmetryX1X2 FalseSymmetryX2X3 FalseSymmetryX1X3"
    )


def test_empty_pi_serializes_to_nothing():
    tokens, payload = serialize(PrivilegedInfo())
    assert tokens == [] and payload == []


def test_pointer_payload_side_channel():
    pi = make_pi(constants=[(0, 2.5), (1, -1.0)])
    tokens, payload = serialize(pi)
    assert tokens == ["pointer_0", "pointer_1"]
    assert payload == [(0, 2.5), (1, -1.0)]


@st.composite
def pi_strategy(draw):
    branch = st.lists(
        st.sampled_from(["add", "x1", "x2", "sin", "mul", "c"]), min_size=1, max_size=4
    ).map(tuple)
    positive = draw(st.none() | st.lists(branch, min_size=1, max_size=3, unique=True))
    negative = draw(st.none() | st.lists(branch, min_size=1, max_size=3, unique=True))
    complexity = draw(st.none() | st.integers(1, 20))
    symmetry = draw(
        st.none()
        | st.lists(
            st.tuples(st.sampled_from([(1, 2), (2, 3), (1, 3)]), st.booleans()),
            min_size=1, max_size=3,
            unique_by=lambda t: t[0],
        )
    )
    n_ptr = draw(st.integers(0, 3))
    constants = [(i, float(draw(st.integers(-40, 40))) / 8) for i in range(n_ptr)] or None
    return make_pi(positive, negative, complexity, symmetry, constants)


@given(pi_strategy())
@settings(max_examples=300, deadline=None)
def test_serialize_round_trip(pi):
    tokens, payload = serialize(pi)
    assert deserialize(tokens, payload) == pi


@pytest.mark.parametrize(
    "text,position",
    [
        ("</Positive>", 0),
        ("<Positive> </Positive>", 0),
        ("<Positive> sin", 0),
        ("<Positive> frob </Positive>", 1),
        ("Complexity=6 Complexity=7", 1),
        ("Complexity=99", 0),
        ("TrueSymmetryX1X2 FalseSymmetryX1X2", 1),
        ("pointer_0", 0),
    ],
)
def test_grammar_errors_carry_positions(text, position):
    with pytest.raises(GrammarError) as err:
        parse_hypotheses(text)
    assert err.value.position == position


# ---------------------------------------------------------------------------
# Masking schedules
# ---------------------------------------------------------------------------


def test_training_mask_schedule_small_sample():
    rng = np.random.default_rng(0)
    draws = [training_mask(rng) for _ in range(20000)]
    froze = np.mean([d.p_positive > 0 for d in draws])
    assert abs(froze - 0.30) < 0.02
    assert abs(np.mean([d.p_negative > 0 for d in draws]) - 0.30) < 0.02
    assert abs(np.mean([d.show_complexity for d in draws]) - 0.30) < 0.02
    assert abs(np.mean([d.show_symmetry for d in draws]) - 0.20) < 0.02
    assert abs(np.mean([d.p_constants for d in draws]) - 0.15) < 0.02


def test_presets_table():
    assert hints.PRESETS["vanilla"] == MaskDraw()
    assert hints.PRESETS["positive"].p_positive == 0.5
    assert hints.PRESETS["complexity"].show_complexity
    assert hints.PRESETS["all"].p_constants == 0.3
    with pytest.raises(KeyError):
        hints.preset("bogus")


def test_draw_known_rate():
    rng = np.random.default_rng(1)
    hits = sum(len(draw_known(4, 0.15, rng)) for _ in range(20000))
    assert abs(hits / 80000 - 0.15) < 0.01
    assert draw_known(0, 1.0, rng) == ()


# ---------------------------------------------------------------------------
# build_pi and satisfies
# ---------------------------------------------------------------------------


def test_build_pi_full_mask_is_self_consistent():
    skeleton = parse_prefix("add mul c x1 sin x2".split())
    constants = [2.5]
    mask = MaskDraw(p_positive=0.5, p_negative=0.5, show_complexity=True,
                    show_symmetry=True, p_constants=1.0)
    pool = build_global_pool([WORKED, parse_prefix("exp x1".split())])
    rng = np.random.default_rng(3)
    pi, known, target = build_pi(skeleton, constants, mask, rng, global_pool=pool)
    assert pi.complexity == 6
    assert known == (0,)
    assert pi.constants == ((0, 2.5),)
    # the target re-labels known slots as pointers
    assert "pointer_0" in to_prefix(target)
    for channel in ("positive", "negative", "complexity", "constants"):
        if getattr(pi, channel) is not None:
            assert satisfies(target, pi, channel, pointers=dict(pi.constants))


def test_satisfies_channels():
    pi = make_pi(
        positive=[("sin",)],
        negative=[("exp",)],
        complexity=6,
        symmetry=symmetry_flags(WORKED),
    )
    assert satisfies(WORKED, pi, "positive")
    assert satisfies(WORKED, pi, "negative")
    assert satisfies(WORKED, pi, "complexity")
    assert satisfies(WORKED, pi, "symmetry")
    wrong = parse_prefix("add x1 x2".split())
    assert not satisfies(wrong, pi, "positive")
    assert not satisfies(wrong, pi, "complexity")
    assert satisfies(wrong, pi, "negative")  # no exp anywhere


def test_satisfies_positive_accepts_full_tree():
    # conditioning equal to the whole prediction still counts as contained
    pi = make_pi(positive=[tuple(to_prefix(WORKED))])
    assert satisfies(WORKED, pi, "positive")


def test_satisfies_constants_placement():
    pred = parse_prefix("add mul pointer_0 x1 c".split())
    pi = make_pi(constants=[(0, 2.5)])
    assert satisfies(pred, pi, "constants", pointers={0: 2.5})
    missing = parse_prefix("add x1 x2".split())
    assert not satisfies(missing, pi, "constants", pointers={0: 2.5})


def test_masked_channel_always_satisfied():
    pi = PrivilegedInfo()
    assert satisfies(WORKED, pi, "positive")
    assert satisfies(WORKED, pi, "complexity")
