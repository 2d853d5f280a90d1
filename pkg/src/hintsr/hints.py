"""Privileged information channels attached to regression samples.

Five conditioning channels describe properties of a ground-truth expression:
positive branches (subtrees the expression contains), negative branches
(subtrees it avoids), complexity (node count), generalized symmetries over
variable subsets, and known constant values referenced through pointer slots.
A channel set serializes to a flat token string (plus a parallel numeric
record for pointer payloads) that both the model and the service API consume:

    <Positive> sin </Positive> <Positive> mul x3 </Positive>
    <Negative> exp </Negative> Complexity=6 TrueSymmetryX1X2 pointer_0

Masked channels are simply absent from the string; an absent channel is
always vacuously satisfied.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import vocab as V
from .expr import (
    Expression,
    OPERATORS,
    Op,
    Placeholder,
    Pointer,
    complexity,
    evaluate,
    constant_count,
    n_variables,
    parse_prefix,
    skeletonize,
    to_prefix,
)

CHANNELS = ("positive", "negative", "complexity", "symmetry", "constants")

Branch = tuple[str, ...]


class HintError(Exception):
    """Base class for privileged-information errors."""


class GrammarError(HintError):
    """Malformed conditioning token stream; carries the offending position."""

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} (at token {position})")
        self.position = position


class EmptyGlobalPool(HintError):
    """Negative sampling requested without a populated global branch pool."""


class InsufficientValidProbes(HintError):
    """Symmetry detection could not gather the minimum quorum of valid probes."""


@dataclass(frozen=True)
class PrivilegedInfo:
    """One sample's conditioning; ``None`` marks a masked channel."""

    positive: tuple[Branch, ...] | None = None
    negative: tuple[Branch, ...] | None = None
    complexity: int | None = None
    symmetry: tuple[tuple[tuple[int, ...], bool], ...] | None = None
    constants: tuple[tuple[int, float], ...] | None = None

    @property
    def mask(self) -> dict[str, bool]:
        """Per-channel visibility: True where the channel is conditioned."""
        return {ch: getattr(self, ch) is not None for ch in CHANNELS}

    def is_empty(self) -> bool:
        return not any(self.mask.values())


def make_pi(
    positive: Iterable[Branch] | None = None,
    negative: Iterable[Branch] | None = None,
    complexity: int | None = None,
    symmetry: Iterable[tuple[tuple[int, ...], bool]] | None = None,
    constants: Iterable[tuple[int, float]] | None = None,
) -> PrivilegedInfo:
    """Build a PrivilegedInfo, normalizing empty channels to masked."""

    def tup(x):
        if x is None:
            return None
        t = tuple(x)
        return t if t else None

    return PrivilegedInfo(
        positive=tup(positive),
        negative=tup(negative),
        complexity=complexity,
        symmetry=tup(tuple((tuple(s), bool(f)) for s, f in symmetry)) if symmetry else None,
        constants=tup(tuple((int(i), float(v)) for i, v in constants)) if constants else None,
    )


# ---------------------------------------------------------------------------
# Branch pools
# ---------------------------------------------------------------------------


def positive_pool(e: Expression) -> list[Branch]:
    """All informative branches of ``e``: for every operator node, the bare
    operator, the operator with each single child subtree attached in full,
    and the node's complete subtree.  The whole tree and bare leaves are
    excluded.  Returned sorted by (length, token order) and deduplicated.
    """
    full = tuple(to_prefix(e))
    seen: set[Branch] = set()
    stack: list[Expression] = [e]
    while stack:
        node = stack.pop()
        if not isinstance(node, Op):
            continue
        seen.add((node.symbol,))
        for child in node.children:
            seen.add((node.symbol, *to_prefix(child)))
            stack.append(child)
        seen.add(tuple(to_prefix(node)))
    seen.discard(full)
    return sorted(seen, key=lambda b: (len(b), b))


def sample_branches(
    pool: Sequence[Branch], p: float, gt_len: int, rng: np.random.Generator
) -> list[Branch]:
    """Draw branches without replacement, weighted by 1/len^2, until the
    token budget round(p * gt_len) is met.

    Draws that would overflow the remaining budget are skipped (removed from
    the candidate set, never truncated).  Returns the accepted branches in
    draw order; possibly empty.
    """
    budget = round(p * gt_len)
    if budget <= 0 or not pool:
        return []
    remaining = list(pool)
    chosen: list[Branch] = []
    total = 0
    while remaining and total < budget:
        weights = np.array([1.0 / len(b) ** 2 for b in remaining])
        idx = int(rng.choice(len(remaining), p=weights / weights.sum()))
        branch = remaining.pop(idx)
        if total + len(branch) <= budget:
            chosen.append(branch)
            total += len(branch)
    return chosen


def build_global_pool(
    expressions: Iterable[Expression], max_len: int = 4, top_k: int = 5000
) -> tuple[Branch, ...]:
    """Most frequent short branches across a corpus of expressions.

    Counts every positive-pool branch of length <= max_len and keeps the
    top_k by frequency (ties broken by length then token order, so the pool
    is deterministic for a fixed corpus).
    """
    counts: Counter[Branch] = Counter()
    for e in expressions:
        for branch in positive_pool(e):
            if len(branch) <= max_len:
                counts[branch] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], len(kv[0]), kv[0]))
    return tuple(branch for branch, _ in ranked[:top_k])


def negative_pool(e: Expression, global_pool: Sequence[Branch]) -> list[Branch]:
    """Global-pool branches that ``e`` does not contain (token-sequence test)."""
    if not global_pool:
        raise EmptyGlobalPool("negative sampling needs a non-empty global pool")
    present = set(positive_pool(e))
    present.add(tuple(to_prefix(e)))
    return [b for b in global_pool if b not in present]


# ---------------------------------------------------------------------------
# Generalized symmetry detection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SymmetryProbeConfig:
    """Numeric probe settings for the generalized-symmetry test.

    An expression f has the symmetry f(x) = g[h(x_sub), x_rest] iff the
    normalized gradient of f along the subset coordinates does not depend on
    the remaining coordinates (up to sign, since dg/dh may flip).  We test
    that at ``probes`` subset points, each crossed with ``draws`` settings of
    the remaining coordinates, using central differences.
    """

    probes: int = 16
    draws: int = 8
    tol: float = 1e-4          # max angular deviation (radians) per probe
    step_frac: float = 1e-3    # finite-difference step as a fraction of interval width
    quorum: int = 8            # minimum probes with a measurable gradient
    bound: float = 5.0         # default probe interval is [-bound, bound]
    grad_floor: float = 1e-9   # gradients below this norm are unmeasurable


def detect_symmetry(
    e: Expression,
    subset: Sequence[int],
    cfg: SymmetryProbeConfig = SymmetryProbeConfig(),
    *,
    constants: Sequence[float] = (),
    pointers: Mapping[int, float] | None = None,
    intervals: Sequence[tuple[float, float]] | None = None,
    seed: int = 0,
) -> bool:
    """True iff ``e`` is generalized-symmetric in the variable subset.

    Probe points with invalid evaluations or unmeasurable gradients are
    skipped; raises InsufficientValidProbes when fewer than ``cfg.quorum``
    probes survive.
    """
    subset = tuple(sorted(int(i) for i in subset))
    if len(subset) < 2:
        raise ValueError("symmetry subsets need at least two variables")
    d = max(n_variables(e), subset[-1])
    if intervals is None:
        intervals = [(-cfg.bound, cfg.bound)] * d
    if len(intervals) < d:
        raise ValueError(f"need {d} probe intervals, got {len(intervals)}")
    rng = np.random.default_rng(seed)
    m, r, k = cfg.probes, cfg.draws, len(subset)
    rest = [i for i in range(1, d + 1) if i not in subset]

    lo = np.array([intervals[i - 1][0] for i in range(1, d + 1)])
    hi = np.array([intervals[i - 1][1] for i in range(1, d + 1)])
    base = np.empty((m, r, d))
    sub_idx = np.array([i - 1 for i in subset])
    rest_idx = np.array([i - 1 for i in rest], dtype=int)
    probes = rng.uniform(lo[sub_idx], hi[sub_idx], size=(m, k))
    base[:, :, sub_idx] = probes[:, None, :]
    if len(rest_idx):
        draws = rng.uniform(lo[rest_idx], hi[rest_idx], size=(r, len(rest_idx)))
        base[:, :, rest_idx] = draws[None, :, :]
    flat = base.reshape(m * r, d)

    grads = np.empty((m * r, k))
    for ci, var in enumerate(subset):
        h = cfg.step_frac * (hi[var - 1] - lo[var - 1])
        plus = flat.copy()
        plus[:, var - 1] += h
        minus = flat.copy()
        minus[:, var - 1] -= h
        fp = evaluate(e, plus, constants, pointers)
        fm = evaluate(e, minus, constants, pointers)
        grads[:, ci] = (fp - fm) / (2.0 * h)

    norms = np.linalg.norm(grads, axis=1)
    valid = np.isfinite(grads).all(axis=1) & (norms > cfg.grad_floor)
    dirs = np.where(valid[:, None], grads / np.where(valid, norms, 1.0)[:, None], 0.0)
    dirs = dirs.reshape(m, r, k)
    valid = valid.reshape(m, r)

    usable = 0
    all_aligned = True
    for i in range(m):
        rows = dirs[i][valid[i]]
        if rows.shape[0] < 2:
            continue
        usable += 1
        cosines = np.clip(np.abs(rows @ rows.T), 0.0, 1.0)
        deviation = float(np.max(np.arccos(cosines)))
        if deviation >= cfg.tol:
            all_aligned = False
    if usable < cfg.quorum:
        raise InsufficientValidProbes(
            f"only {usable} of {m} probes usable (quorum {cfg.quorum})"
        )
    return all_aligned


def symmetry_flags(
    e: Expression,
    cfg: SymmetryProbeConfig = SymmetryProbeConfig(),
    *,
    constants: Sequence[float] = (),
    pointers: Mapping[int, float] | None = None,
    intervals: Sequence[tuple[float, float]] | None = None,
    seed: int = 0,
) -> tuple[tuple[tuple[int, ...], bool], ...]:
    """Flags for every eligible subset of the expression's variables, in
    canonical subset order.  Empty for expressions of fewer than 3 variables.
    """
    d = n_variables(e)
    out = []
    for subset in V.useful_symmetry_subsets(d):
        flag = detect_symmetry(
            e, subset, cfg, constants=constants, pointers=pointers,
            intervals=intervals, seed=seed,
        )
        out.append((subset, flag))
    return tuple(out)


# ---------------------------------------------------------------------------
# Serialization grammar
# ---------------------------------------------------------------------------

_SYMMETRY_RE = re.compile(r"^(True|False)Symmetry((?:X\d+)+)$")
_COMPLEXITY_RE = re.compile(r"^Complexity=(\d+)$")
_POINTER_RE = re.compile(r"^pointer_(\d+)$")


def _branch_token_ok(token: str) -> bool:
    if token in OPERATORS or token == "c":
        return True
    if re.fullmatch(r"x\d+", token):
        return True
    return bool(_POINTER_RE.match(token))


def serialize(pi: PrivilegedInfo) -> tuple[list[str], list[tuple[int, float]]]:
    """Flatten a channel set to (tokens, constant payload records).

    Channel order is fixed: positive branches, negative branches, complexity,
    symmetry flags, constant pointers.  Masked channels contribute nothing.
    """
    tokens: list[str] = []
    payload: list[tuple[int, float]] = []
    for branch in pi.positive or ():
        tokens.append(V.POS_OPEN)
        tokens.extend(branch)
        tokens.append(V.POS_CLOSE)
    for branch in pi.negative or ():
        tokens.append(V.NEG_OPEN)
        tokens.extend(branch)
        tokens.append(V.NEG_CLOSE)
    if pi.complexity is not None:
        tokens.append(V.complexity_token(pi.complexity))
    for subset, flag in pi.symmetry or ():
        tokens.append(V.symmetry_token(subset, flag))
    for i, value in pi.constants or ():
        tokens.append(V.pointer_token(i))
        payload.append((i, float(value)))
    return tokens, payload


def hypotheses_string(pi: PrivilegedInfo) -> str:
    """Canonical text form: serialized tokens joined by single spaces."""
    tokens, _ = serialize(pi)
    return " ".join(tokens)


def deserialize(
    tokens: Sequence[str], payload: Sequence[tuple[int, float]] = ()
) -> PrivilegedInfo:
    """Parse a conditioning token stream back into a PrivilegedInfo.

    Raises GrammarError (with the offending token position) on malformed
    input: unbalanced branch delimiters, empty or ill-tokened branches,
    duplicate or out-of-range complexity, conflicting symmetry flags,
    non-dense pointer indices, or pointers without payload values.
    """
    values = {int(i): float(v) for i, v in payload}
    positive: list[Branch] = []
    negative: list[Branch] = []
    comp: int | None = None
    symmetry: list[tuple[tuple[int, ...], bool]] = []
    seen_subsets: dict[tuple[int, ...], bool] = {}
    pointer_ids: list[int] = []

    i = 0
    n = len(tokens)
    while i < n:
        token = tokens[i]
        if token in (V.POS_OPEN, V.NEG_OPEN):
            close = V.POS_CLOSE if token == V.POS_OPEN else V.NEG_CLOSE
            j = i + 1
            branch: list[str] = []
            while j < n and tokens[j] != close:
                if tokens[j] in (V.POS_OPEN, V.NEG_OPEN, V.POS_CLOSE, V.NEG_CLOSE):
                    raise GrammarError(f"unexpected {tokens[j]!r} inside branch", j)
                if not _branch_token_ok(tokens[j]):
                    raise GrammarError(f"invalid branch token {tokens[j]!r}", j)
                branch.append(tokens[j])
                j += 1
            if j >= n:
                raise GrammarError(f"unclosed {token!r}", i)
            if not branch:
                raise GrammarError("empty branch", i)
            (positive if token == V.POS_OPEN else negative).append(tuple(branch))
            i = j + 1
            continue
        if token in (V.POS_CLOSE, V.NEG_CLOSE):
            raise GrammarError(f"stray {token!r}", i)
        m = _COMPLEXITY_RE.match(token)
        if m:
            if comp is not None:
                raise GrammarError("duplicate complexity token", i)
            comp = int(m.group(1))
            if not 1 <= comp <= V.MAX_COMPLEXITY:
                raise GrammarError(f"complexity {comp} outside 1..{V.MAX_COMPLEXITY}", i)
            i += 1
            continue
        m = _SYMMETRY_RE.match(token)
        if m:
            subset = tuple(int(s) for s in re.findall(r"X(\d+)", m.group(2)))
            flag = m.group(1) == "True"
            if subset in seen_subsets:
                if seen_subsets[subset] != flag:
                    raise GrammarError(f"conflicting symmetry flags for {subset}", i)
                raise GrammarError(f"duplicate symmetry token for {subset}", i)
            if len(subset) < 2 or len(set(subset)) != len(subset):
                raise GrammarError(f"invalid symmetry subset {subset}", i)
            seen_subsets[subset] = flag
            symmetry.append((subset, flag))
            i += 1
            continue
        m = _POINTER_RE.match(token)
        if m:
            idx = int(m.group(1))
            if idx not in values:
                raise GrammarError(f"pointer_{idx} has no constant payload", i)
            if idx in pointer_ids:
                raise GrammarError(f"duplicate pointer_{idx}", i)
            pointer_ids.append(idx)
            i += 1
            continue
        raise GrammarError(f"unexpected token {token!r}", i)

    if pointer_ids and sorted(pointer_ids) != list(range(len(pointer_ids))):
        raise GrammarError(
            f"pointer indices {sorted(pointer_ids)} are not dense from 0", len(tokens) - 1
        )
    constants = tuple((idx, values[idx]) for idx in pointer_ids)
    return make_pi(positive, negative, comp, symmetry, constants)


def parse_hypotheses(
    text: str, constants: Sequence[tuple[int, float]] = ()
) -> PrivilegedInfo:
    """Parse the canonical whitespace-separated text form."""
    return deserialize(text.split(), constants)


# ---------------------------------------------------------------------------
# Masking schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskDraw:
    """Per-sample channel intensities.

    ``p_positive``/``p_negative`` are token-budget fractions of the target
    length (0 disables the channel); ``p_constants`` is the per-constant
    probability of being revealed through a pointer.
    """

    p_positive: float = 0.0
    p_negative: float = 0.0
    show_complexity: bool = False
    show_symmetry: bool = False
    p_constants: float = 0.0


def training_mask(rng: np.random.Generator) -> MaskDraw:
    """Random channel intensities for corpus generation.

    Each branch fraction is 0 with probability 0.7, else uniform on (0, 1);
    complexity is shown with probability 0.3 and symmetry with 0.2; each
    constant is independently revealed with probability 0.15.
    """
    p_p = 0.0 if rng.random() < 0.7 else float(rng.random())
    p_n = 0.0 if rng.random() < 0.7 else float(rng.random())
    return MaskDraw(
        p_positive=p_p,
        p_negative=p_n,
        show_complexity=bool(rng.random() < 0.3),
        show_symmetry=bool(rng.random() < 0.2),
        p_constants=0.15,
    )


PRESETS: dict[str, MaskDraw] = {
    "positive": MaskDraw(p_positive=0.5),
    "negative": MaskDraw(p_negative=0.5),
    "complexity": MaskDraw(show_complexity=True),
    "symmetry": MaskDraw(show_symmetry=True),
    "constants": MaskDraw(p_constants=0.8),
    "vanilla": MaskDraw(),
    "all": MaskDraw(
        p_positive=0.5, p_negative=0.5, show_complexity=True,
        show_symmetry=True, p_constants=0.3,
    ),
}


def preset(name: str) -> MaskDraw:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def draw_known(n_constants: int, p: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Independently reveal each constant position with probability p."""
    if n_constants == 0 or p <= 0:
        return ()
    return tuple(i for i in range(n_constants) if rng.random() < p)


def build_pi(
    skeleton: Expression,
    constants: Sequence[float],
    mask: MaskDraw,
    rng: np.random.Generator,
    *,
    global_pool: Sequence[Branch] | None = None,
    probe_cfg: SymmetryProbeConfig = SymmetryProbeConfig(),
    intervals: Sequence[tuple[float, float]] | None = None,
) -> tuple[PrivilegedInfo, tuple[int, ...], Expression]:
    """Extract a channel set from a ground-truth skeleton and its constants.

    Returns (pi, known constant positions, pointerized target skeleton).
    Branch channels and complexity are computed on the pointerized target so
    the ground truth always satisfies its own conditioning; symmetry probes
    the numeric function (constants bound).  If symmetry probing cannot reach
    quorum the symmetry channel is masked for the sample.
    """
    n_const = constant_count(skeleton)
    known = draw_known(n_const, mask.p_constants, rng)
    target = skeletonize(skeleton, known)
    pointer_values = {i: float(constants[pos]) for i, pos in enumerate(sorted(known))}
    free = [v for i, v in enumerate(constants) if i not in known]
    gt_len = complexity(target)

    positive = None
    if mask.p_positive > 0:
        positive = sample_branches(positive_pool(target), mask.p_positive, gt_len, rng)

    negative = None
    if mask.p_negative > 0:
        if global_pool is None:
            raise EmptyGlobalPool("negative channel requested without a global pool")
        eligible = negative_pool(target, global_pool)
        negative = sample_branches(eligible, mask.p_negative, gt_len, rng)

    comp = gt_len if mask.show_complexity else None

    symmetry = None
    if mask.show_symmetry:
        try:
            flags = symmetry_flags(
                target,
                probe_cfg,
                constants=free,
                pointers=pointer_values,
                intervals=intervals,
                seed=int(rng.integers(2**32)),
            )
            symmetry = flags if flags else None
        except InsufficientValidProbes:
            symmetry = None

    const_channel = tuple((i, pointer_values[i]) for i in range(len(pointer_values)))
    pi = make_pi(positive, negative, comp, symmetry, const_channel)
    return pi, known, target


# ---------------------------------------------------------------------------
# Satisfaction checks
# ---------------------------------------------------------------------------


def satisfies(
    pred: Expression,
    pi: PrivilegedInfo,
    channel: str,
    *,
    constants: Sequence[float] = (),
    pointers: Mapping[int, float] | None = None,
    probe_cfg: SymmetryProbeConfig = SymmetryProbeConfig(),
    probe_seed: int = 0,
) -> bool:
    """Does a predicted expression honor one conditioning channel?

    Masked channels are vacuously satisfied.  Branch checks are literal
    token-sequence membership against the prediction's positive pool (the
    full tree counts as present).  Symmetry re-probes the prediction with
    its fitted constants; an unprobeable prediction does not satisfy.
    """
    if channel not in CHANNELS:
        raise ValueError(f"unknown channel {channel!r}")
    value = getattr(pi, channel)
    if value is None:
        return True
    if channel in ("positive", "negative"):
        present = set(positive_pool(pred))
        present.add(tuple(to_prefix(pred)))
        if channel == "positive":
            return all(branch in present for branch in value)
        return not any(branch in present for branch in value)
    if channel == "complexity":
        return complexity(pred) == value
    if channel == "symmetry":
        try:
            for subset, flag in value:
                got = detect_symmetry(
                    pred, subset, probe_cfg,
                    constants=constants, pointers=pointers, seed=probe_seed,
                )
                if got != flag:
                    return False
        except InsufficientValidProbes:
            return False
        return True
    # constants: every conditioned pointer placed exactly once, no strays
    conditioned = {i for i, _ in value}
    used = [n.index for n in _pointer_leaves(pred)]
    return sorted(used) == sorted(conditioned)


def _pointer_leaves(e: Expression) -> list[Pointer]:
    out = []
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Pointer):
            out.append(node)
        elif isinstance(node, Op):
            stack.extend(node.children)
    return out


def satisfied_flags(
    pred: Expression,
    pi: PrivilegedInfo,
    *,
    constants: Sequence[float] = (),
    pointers: Mapping[int, float] | None = None,
    probe_cfg: SymmetryProbeConfig = SymmetryProbeConfig(),
    probe_seed: int = 0,
) -> dict[str, bool]:
    """Per-channel satisfaction for every conditioned (non-masked) channel."""
    return {
        ch: satisfies(
            pred, pi, ch,
            constants=constants, pointers=pointers,
            probe_cfg=probe_cfg, probe_seed=probe_seed,
        )
        for ch in CHANNELS
        if getattr(pi, ch) is not None
    }
