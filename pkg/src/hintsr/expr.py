"""Symbolic expression trees over a fixed operator table.

Expressions are immutable trees built from unary/binary operators, indexed
variables ``x1..x5``, literal constants, skeleton constant slots (the token
``c``), and pointer slots (``pointer_0`` ...) that reference externally
supplied constant values.  The prefix token form is the interchange format
used everywhere else in the package:

    >>> e = parse_prefix(["mul", "x3", "sin", "add", "x1", "x2"])
    >>> to_prefix(e)
    ['mul', 'x3', 'sin', 'add', 'x1', 'x2']
    >>> complexity(e)
    6

Evaluation is vectorised over a point matrix and never raises on domain
violations: points where any sub-operation leaves the real domain (log of a
non-positive value, division by zero, |asin| argument > 1, overflow) or where
the final value exceeds the half-precision range (|f(x)| > 65504) are marked
with NaN, the module-wide invalid marker.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

MAX_ABS_VALUE = 65504.0  # largest finite half-precision magnitude
PLACEHOLDER_TOKEN = "c"
POINTER_PREFIX = "pointer_"


class ExprError(Exception):
    """Base class for expression errors."""


class UnknownToken(ExprError):
    """A token is not an operator, variable, constant slot, or literal."""


class ArityMismatch(ExprError):
    """A prefix token stream ends before an operator's children are complete."""


class TrailingTokens(ExprError):
    """A prefix token stream continues past a complete expression."""


class UnboundConstant(ExprError):
    """Evaluation reached a constant slot with no bound value."""


class MissingVariable(ExprError):
    """Evaluation reached a variable not covered by the point matrix."""


@dataclass(frozen=True)
class Operator:
    symbol: str
    arity: int


UNARY_SYMBOLS = ("sqrt", "pow2", "pow3", "pow4", "inv", "log", "exp", "sin", "cos", "asin")
BINARY_SYMBOLS = ("add", "sub", "mul", "div")

OPERATORS: dict[str, Operator] = {s: Operator(s, 1) for s in UNARY_SYMBOLS}
OPERATORS.update({s: Operator(s, 2) for s in BINARY_SYMBOLS})


@dataclass(frozen=True)
class Var:
    """Variable leaf, 1-indexed (``Var(3)`` is the token ``x3``)."""

    index: int


@dataclass(frozen=True)
class Const:
    """Literal numeric constant leaf."""

    value: float


@dataclass(frozen=True)
class Placeholder:
    """An unbound constant slot (the skeleton token ``c``)."""


@dataclass(frozen=True)
class Pointer:
    """A constant slot bound to externally supplied value number ``index``."""

    index: int


@dataclass(frozen=True)
class Op:
    symbol: str
    children: tuple["Expression", ...]

    def __post_init__(self) -> None:
        op = OPERATORS.get(self.symbol)
        if op is None:
            raise UnknownToken(f"unknown operator {self.symbol!r}")
        if len(self.children) != op.arity:
            raise ArityMismatch(
                f"{self.symbol} takes {op.arity} children, got {len(self.children)}"
            )


Expression = Union[Op, Var, Const, Placeholder, Pointer]


# ---------------------------------------------------------------------------
# Prefix form
# ---------------------------------------------------------------------------


def leaf_token(node: Expression) -> str:
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Placeholder):
        return PLACEHOLDER_TOKEN
    if isinstance(node, Pointer):
        return f"{POINTER_PREFIX}{node.index}"
    if isinstance(node, Const):
        return repr(float(node.value))
    raise TypeError(f"not a leaf: {node!r}")


def _parse_leaf(token: str) -> Expression | None:
    if token == PLACEHOLDER_TOKEN:
        return Placeholder()
    if token.startswith("x") and token[1:].isdigit():
        index = int(token[1:])
        if index >= 1:
            return Var(index)
    if token.startswith(POINTER_PREFIX) and token[len(POINTER_PREFIX):].isdigit():
        return Pointer(int(token[len(POINTER_PREFIX):]))
    try:
        return Const(float(token))
    except ValueError:
        return None


def parse_prefix(tokens: Sequence[str]) -> Expression:
    """Parse a prefix token sequence into an expression tree.

    Raises UnknownToken for unrecognised tokens, ArityMismatch when the
    stream ends mid-operator, and TrailingTokens when tokens remain after a
    complete tree.
    """
    pos = 0

    def parse_node() -> Expression:
        nonlocal pos
        if pos >= len(tokens):
            raise ArityMismatch(f"token stream ended early at position {pos}")
        token = tokens[pos]
        pos += 1
        op = OPERATORS.get(token)
        if op is not None:
            children = tuple(parse_node() for _ in range(op.arity))
            return Op(token, children)
        leaf = _parse_leaf(token)
        if leaf is None:
            raise UnknownToken(f"unknown token {token!r} at position {pos - 1}")
        return leaf

    root = parse_node()
    if pos != len(tokens):
        raise TrailingTokens(f"{len(tokens) - pos} tokens remain after position {pos}")
    return root


def to_prefix(e: Expression) -> list[str]:
    """Serialize an expression to its prefix token list (inverse of parse_prefix)."""
    out: list[str] = []
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Op):
            out.append(node.symbol)
            stack.extend(reversed(node.children))
        else:
            out.append(leaf_token(node))
    return out


def iter_nodes(e: Expression) -> Iterator[Expression]:
    """Yield all nodes in prefix (depth-first, left-to-right) order."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Op):
            stack.extend(reversed(node.children))


def complexity(e: Expression) -> int:
    """Node count: internal operator nodes plus leaves, one per constant."""
    return sum(1 for _ in iter_nodes(e))


def depth(e: Expression) -> int:
    """Edge depth; a bare leaf has depth 0."""
    if not isinstance(e, Op):
        return 0
    return 1 + max(depth(c) for c in e.children)


def variables(e: Expression) -> set[int]:
    return {n.index for n in iter_nodes(e) if isinstance(n, Var)}


def n_variables(e: Expression) -> int:
    """Highest variable index used (0 for variable-free expressions)."""
    used = variables(e)
    return max(used) if used else 0


def constant_count(e: Expression) -> int:
    return sum(1 for n in iter_nodes(e) if isinstance(n, (Placeholder, Const)))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_DOMAIN_FREE = {"add", "sub", "mul", "pow2", "pow3", "pow4", "exp", "sin", "cos"}


def _apply_op(symbol: str, args: list[np.ndarray]) -> np.ndarray:
    a = args[0]
    if symbol == "add":
        v = a + args[1]
    elif symbol == "sub":
        v = a - args[1]
    elif symbol == "mul":
        v = a * args[1]
    elif symbol == "div":
        b = args[1]
        v = np.where(b != 0, a / np.where(b != 0, b, 1.0), np.nan)
    elif symbol == "inv":
        v = np.where(a != 0, 1.0 / np.where(a != 0, a, 1.0), np.nan)
    elif symbol == "sqrt":
        v = np.where(a >= 0, np.sqrt(np.abs(a)), np.nan)
    elif symbol == "log":
        v = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
    elif symbol == "exp":
        v = np.exp(a)
    elif symbol == "sin":
        v = np.sin(a)
    elif symbol == "cos":
        v = np.cos(a)
    elif symbol == "asin":
        v = np.where(np.abs(a) <= 1, np.arcsin(np.clip(a, -1, 1)), np.nan)
    elif symbol == "pow2":
        v = a * a
    elif symbol == "pow3":
        v = a * a * a
    elif symbol == "pow4":
        v = (a * a) * (a * a)
    else:  # pragma: no cover - operator table is closed
        raise UnknownToken(symbol)
    # any overflow or propagated domain failure becomes the invalid marker
    return np.where(np.isfinite(v), v, np.nan)


def evaluate(
    e: Expression,
    points: np.ndarray,
    constants: Sequence[float] = (),
    pointers: Mapping[int, float] | None = None,
) -> np.ndarray:
    """Evaluate ``e`` on an (n, d) point matrix.

    ``constants`` binds Placeholder slots in prefix order of appearance;
    ``pointers`` binds Pointer slots by index.  Returns a float64 vector of
    length n where invalid points (domain violation in any sub-operation,
    non-finite result, or final |value| > 65504) are NaN.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-d (n, d) array")
    n, d = points.shape
    slot = 0

    def rec(node: Expression) -> np.ndarray:
        nonlocal slot
        if isinstance(node, Var):
            if node.index > d:
                raise MissingVariable(f"x{node.index} not covered by {d}-column points")
            return points[:, node.index - 1].copy()
        if isinstance(node, Const):
            return np.full(n, float(node.value))
        if isinstance(node, Placeholder):
            if slot >= len(constants):
                raise UnboundConstant(f"no value bound for constant slot {slot}")
            value = float(constants[slot])
            slot += 1
            return np.full(n, value)
        if isinstance(node, Pointer):
            if pointers is None or node.index not in pointers:
                raise UnboundConstant(f"no value bound for pointer_{node.index}")
            return np.full(n, float(pointers[node.index]))
        return _apply_op(node.symbol, [rec(c) for c in node.children])

    with np.errstate(all="ignore"):
        values = rec(e)
    values = np.where(np.abs(values) <= MAX_ABS_VALUE, values, np.nan)
    return values


def bind_constants(
    e: Expression,
    constants: Sequence[float] = (),
    pointers: Mapping[int, float] | None = None,
) -> Expression:
    """Return a copy of ``e`` with constant slots replaced by Const leaves."""
    slot = 0

    def rec(node: Expression) -> Expression:
        nonlocal slot
        if isinstance(node, Placeholder):
            if slot >= len(constants):
                raise UnboundConstant(f"no value bound for constant slot {slot}")
            value = float(constants[slot])
            slot += 1
            return Const(value)
        if isinstance(node, Pointer):
            if pointers is None or node.index not in pointers:
                raise UnboundConstant(f"no value bound for pointer_{node.index}")
            return Const(float(pointers[node.index]))
        if isinstance(node, Op):
            return Op(node.symbol, tuple(rec(c) for c in node.children))
        return node

    return rec(e)


def skeletonize(e: Expression, known: Sequence[int] = ()) -> Expression:
    """Replace constant leaves with slots.

    Constants (Const or Placeholder leaves) are numbered 0.. in prefix order.
    Positions listed in ``known`` become Pointer slots, numbered by prefix
    order of appearance among the known positions; all other constants become
    Placeholder slots.  Variables and operators are untouched.
    """
    known_sorted = sorted(set(known))
    pointer_of = {pos: i for i, pos in enumerate(known_sorted)}
    counter = 0

    def rec(node: Expression) -> Expression:
        nonlocal counter
        if isinstance(node, (Const, Placeholder)):
            pos = counter
            counter += 1
            if pos in pointer_of:
                return Pointer(pointer_of[pos])
            return Placeholder()
        if isinstance(node, Op):
            return Op(node.symbol, tuple(rec(c) for c in node.children))
        return node

    out = rec(e)
    for pos in known_sorted:
        if pos >= counter:
            raise ValueError(f"known position {pos} out of range ({counter} constants)")
    return out


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def _same_value(a: Expression, b: Expression) -> bool:
    """Structural equality that is sound for value-based rewrites.

    Placeholder slots never compare equal (two unbound constants are distinct
    values); pointers compare by index since equal indices share one value.
    """
    if isinstance(a, Placeholder) or isinstance(b, Placeholder):
        return False
    if type(a) is not type(b):
        return False
    if isinstance(a, Op):
        return a.symbol == b.symbol and all(
            _same_value(x, y) for x, y in zip(a.children, b.children)
        )
    return a == b


def _fold(symbol: str, children: tuple[Expression, ...]) -> Expression | None:
    if not all(isinstance(c, Const) for c in children):
        return None
    args = [np.array([c.value], dtype=np.float64) for c in children]  # type: ignore[union-attr]
    with np.errstate(all="ignore"):
        v = _apply_op(symbol, args)[0]
    if not math.isfinite(v) or abs(v) > MAX_ABS_VALUE:
        return None  # keep the invalid sub-expression visible rather than folding
    return Const(float(v))


def _is_const(node: Expression, value: float) -> bool:
    return isinstance(node, Const) and node.value == value


def _is_slot_algebra(node: Expression) -> bool:
    """True for subtrees built only from placeholder slots and arithmetic.

    Such a subtree denotes a single free constant: any add/sub/mul/div
    combination of unbound constants can be re-expressed as one unbound
    constant, so generation collapses it to one slot.
    """
    if isinstance(node, Placeholder):
        return True
    if isinstance(node, Op) and node.symbol in ("add", "sub", "mul", "div"):
        return all(_is_slot_algebra(c) for c in node.children)
    return False


def _sort_key(node: Expression) -> tuple[int, tuple[str, ...]]:
    tokens = tuple(to_prefix(node))
    return (len(tokens), tokens)


def _flatten_chain(node: Expression, symbol: str) -> list[Expression]:
    """Operands of a nested add- or mul-chain, left to right."""
    if isinstance(node, Op) and node.symbol == symbol:
        out: list[Expression] = []
        for child in node.children:
            out.extend(_flatten_chain(child, symbol))
        return out
    return [node]


def _nest(symbol: str, operands: list[Expression]) -> Expression:
    """Right-nest already-canonical operands in (length, token) key order."""
    ordered = sorted(operands, key=_sort_key)
    node = ordered[-1]
    for operand in reversed(ordered[:-1]):
        node = Op(symbol, (operand, node))
    return node


def _peel_power(o: Expression) -> tuple[float, Expression]:
    """Strip pow/sqrt/inv wrappers, returning (exponent, base)."""
    exponents = {"pow2": 2.0, "pow3": 3.0, "pow4": 4.0, "sqrt": 0.5, "inv": -1.0}
    e = 1.0
    while isinstance(o, Op) and o.symbol in exponents:
        e *= exponents[o.symbol]
        o = o.children[0]
    return e, o


def _emit_power(e: float, base: Expression) -> list[Expression] | None:
    """Operands spelling base**e, or None when no spelling exists."""
    if e == 0.0:
        return []
    if e < 0.0:
        inner = _emit_power(-e, base)
        if inner is None:
            return None
        return [Op("inv", (inner[0] if len(inner) == 1 else _nest("mul", inner),))]
    out: list[Expression] = []
    whole, frac = int(e), e - int(e)
    while whole > 4:
        out.append(Op("pow4", (base,)))
        whole -= 4
    if whole in (2, 3, 4):
        out.append(Op(f"pow{whole}", (base,)))
    elif whole == 1:
        out.append(base)
    if frac == 0.5:
        out.append(Op("sqrt", (base,)))
    elif frac == 0.25:
        out.append(Op("sqrt", (Op("sqrt", (base,)),)))
    elif frac == 0.75:
        out.extend((Op("sqrt", (base,)), Op("sqrt", (Op("sqrt", (base,)),))))
    elif frac != 0.0:
        return None
    return out


def _decompose_term(o: Expression) -> tuple[float, bool, Expression | None]:
    """An add-chain operand as (literal coefficient, slot flag, term)."""
    if isinstance(o, Op) and o.symbol == "mul":
        factors = _flatten_chain(o, "mul")
        coeff = math.prod(f.value for f in factors if isinstance(f, Const))
        slot = any(_is_slot_algebra(f) for f in factors)
        base = [f for f in factors if not isinstance(f, Const) and not _is_slot_algebra(f)]
        if base:
            return coeff, slot, base[0] if len(base) == 1 else _nest("mul", base)
    return 1.0, False, o


def _merge_add_terms(operands: list[Expression]) -> list[Expression]:
    """Sum equal terms: 2·a + 3·a -> 5·a; c·a + a -> c·a (slot absorbs)."""
    decomposed = [(*_decompose_term(o), o) for o in operands]
    decomposed.sort(key=lambda t: _sort_key(t[2]))
    out: list[Expression] = []
    i = 0
    while i < len(decomposed):
        coeff, slot, term = decomposed[i][:3]
        j = i + 1
        while j < len(decomposed) and _same_value(term, decomposed[j][2]):
            coeff += decomposed[j][0]
            slot = slot or decomposed[j][1]
            j += 1
        if slot:
            out.append(Op("mul", (Placeholder(), term)))
        elif not math.isfinite(coeff) or abs(coeff) > MAX_ABS_VALUE:
            out.extend(d[3] for d in decomposed[i:j])  # unfoldable, keep visible
        elif coeff == 1.0:
            out.append(term)
        elif coeff != 0.0:
            out.append(Op("mul", (Const(coeff), term)))
        i = j
    return out


def _merge_mul_factors(operands: list[Expression]) -> list[Expression]:
    """Multiply equal bases: a·a² -> a³; pairs of squares combine afterwards."""
    decomposed = [(*_peel_power(o), o) for o in operands]
    decomposed.sort(key=lambda t: _sort_key(t[1]))
    merged: list[Expression] = []
    i = 0
    while i < len(decomposed):
        e, base = decomposed[i][:2]
        j = i + 1
        while j < len(decomposed) and _same_value(base, decomposed[j][1]):
            e += decomposed[j][0]
            j += 1
        spelled = _emit_power(e, base)
        if spelled is None:
            merged.extend(decomposed[k][2] for k in range(i, j))
        else:
            merged.extend(spelled)
        i = j
    squared = [o for o in merged if isinstance(o, Op) and o.symbol == "pow2"]
    if len(squared) >= 2:
        bases = [o.children[0] for o in squared]
        merged = [o for o in merged if o not in squared]
        merged.append(Op("pow2", (_nest("mul", bases),)))
    return merged


def _rebuild_chain(symbol: str, operands: list[Expression]) -> Expression:
    """Canonical right-nested spelling of an add- or mul-chain.

    Free-constant operands merge into one slot, literal constants fold into
    one value (dropping the identity element), equal terms and bases merge
    with their coefficients or exponents, and squared factors combine
    (a²·b² -> (a·b)²); the survivors are ordered by (length, token) key.
    One function family, one spelling.
    """
    slots = [o for o in operands if _is_slot_algebra(o)]
    consts = [o for o in operands if isinstance(o, Const)]
    rest = [o for o in operands if not _is_slot_algebra(o) and not isinstance(o, Const)]

    keep: list[Expression] = []
    if consts:
        value = math.fsum(c.value for c in consts) if symbol == "add" else math.prod(
            c.value for c in consts
        )
        if not math.isfinite(value) or abs(value) > MAX_ABS_VALUE:
            keep.extend(consts)  # unfoldable literals stay visible
        elif symbol == "mul" and value == 0.0:
            return Const(0.0)
        elif value != (0.0 if symbol == "add" else 1.0):
            keep.append(Const(value))
    if slots:
        keep.append(Placeholder())

    rest = _merge_add_terms(rest) if symbol == "add" else _merge_mul_factors(rest)
    keep.extend(rest)
    if not keep:
        return Const(0.0 if symbol == "add" else 1.0)
    if len(keep) == 1:
        return keep[0]
    return _nest(symbol, keep)


def _rewrite_once(node: Op) -> Expression:
    folded = _fold(node.symbol, node.children)
    if folded is not None:
        return folded
    s = node.symbol
    a = node.children[0]
    b = node.children[1] if len(node.children) == 2 else None
    if b is not None and _is_slot_algebra(node):
        return Placeholder()
    if b is None and isinstance(a, Placeholder):
        return Placeholder()  # any unary image of a free constant is a constant
    if s in ("add", "mul"):
        canonical = _rebuild_chain(s, _flatten_chain(node, s))
        if to_prefix(canonical) != to_prefix(node):
            return canonical
    elif s == "sub":
        if _is_const(b, 0.0):  # type: ignore[arg-type]
            return a
        if _same_value(a, b):  # type: ignore[arg-type]
            return Const(0.0)
    elif s == "div":
        if _is_const(b, 1.0):  # type: ignore[arg-type]
            return a
        if _is_const(a, 0.0):
            return Const(0.0)
        if _same_value(a, b):  # type: ignore[arg-type]
            return Const(1.0)
    elif s == "inv":
        if isinstance(a, Op) and a.symbol == "inv":
            return a.children[0]
    elif s == "pow2":
        if isinstance(a, Op) and a.symbol == "pow2":
            return Op("pow4", a.children)
        if isinstance(a, Op) and a.symbol == "sqrt":
            return a.children[0]
    elif s == "sqrt":
        if isinstance(a, Op) and a.symbol == "pow4":
            return Op("pow2", a.children)
    powers = {"pow2": 2, "pow3": 3, "pow4": 4, "inv": -1}
    if s in powers and isinstance(a, Op) and a.symbol == "mul":
        # (c·X)^k and c·X^k denote the same scaled-power family: one spelling
        factors = _flatten_chain(a, "mul")
        slots = [f for f in factors if _is_slot_algebra(f)]
        consts = [f for f in factors if isinstance(f, Const)]
        rest = [f for f in factors if not _is_slot_algebra(f) and not isinstance(f, Const)]
        if (slots or consts) and rest:
            power = Op(s, (rest[0] if len(rest) == 1 else _nest("mul", rest),))
            if slots:
                return Op("mul", (Placeholder(), power))
            scale = math.prod(c.value for c in consts)
            try:
                value = scale**powers[s]
            except (OverflowError, ZeroDivisionError):
                return node
            if not math.isfinite(value) or abs(value) > MAX_ABS_VALUE:
                return node
            if value == 1.0:
                return power
            return Op("mul", (Const(value), power))
    return node


def normalize(e: Expression) -> Expression:
    """Apply the fixed rewrite set bottom-up until stable.

    Rewrites: constant folding (skipped when the fold would be invalid),
    a-a -> 0 and a/a -> 1 for slot-free identical subtrees, the 0/1
    identities of add/sub/mul/div, pow-chain collapse (pow2(pow2) -> pow4,
    pow2(sqrt(a)) -> a, sqrt(pow4(a)) -> pow2(a)), and double-inv removal.
    The result is numerically equivalent on the valid domain of the input;
    rewrites such as a/a -> 1 widen the domain at points where the input was
    invalid.

    Canonicalization for generation: add/mul chains are flattened, their
    literal constants folded, equal terms and equal bases merged with their
    coefficients or exponents (a+a -> 2*a, a*a^2 -> a^3), squared factors
    combined (a^2*b^2 -> (a*b)^2), scale factors pulled through powers
    ((c*a)^2 -> c*a^2), and the surviving operands ordered by (length, token)
    key.  Any subtree denoting only a free constant (arithmetic over slots,
    or a unary applied to a slot) collapses to a single slot.  One function
    family then has one skeleton spelling, which removes target ambiguity
    the observations cannot resolve.
    """
    if not isinstance(e, Op):
        return e
    node: Expression = Op(e.symbol, tuple(normalize(c) for c in e.children))
    while isinstance(node, Op):
        rewritten = _rewrite_once(node)
        if rewritten is node:
            break
        node = rewritten
    return node


# ---------------------------------------------------------------------------
# Display
# ---------------------------------------------------------------------------

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2}


def to_infix(e: Expression) -> str:
    """Human-readable infix rendering (display only, not parsed back)."""

    def fmt_const(v: float) -> str:
        return f"{v:.6g}"

    def rec(node: Expression, parent_prec: int) -> str:
        if isinstance(node, Var):
            return f"x{node.index}"
        if isinstance(node, Const):
            s = fmt_const(node.value)
            return f"({s})" if node.value < 0 and parent_prec > 1 else s
        if isinstance(node, Placeholder):
            return "c"
        if isinstance(node, Pointer):
            return f"c[{node.index}]"
        s = node.symbol
        if s in ("add", "sub", "mul", "div"):
            prec = _PREC[s]
            glyph = {"add": " + ", "sub": " - ", "mul": "*", "div": "/"}[s]
            left = rec(node.children[0], prec)
            right = rec(node.children[1], prec + 1)
            body = f"{left}{glyph}{right}"
            return f"({body})" if prec < parent_prec else body
        child = rec(node.children[0], 0)
        if s == "inv":
            return f"1/({child})"
        if s in ("pow2", "pow3", "pow4"):
            return f"({child})^{s[-1]}"
        return f"{s}({child})"

    return rec(e, 0)
