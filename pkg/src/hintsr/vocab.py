"""Token vocabulary shared by the conditioning grammar and the decoder.

One flat vocabulary covers both sides of the model: target-side expression
tokens (operators, variables, the constant slot ``c``, pointer slots) and
conditioning-side tokens (branch delimiters, complexity levels, symmetry
flags, plus the always-present start-of-conditioning token that doubles as
the learned null embedding for fully masked conditioning).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

from .expr import BINARY_SYMBOLS, PLACEHOLDER_TOKEN, UNARY_SYMBOLS
from .expr import UnknownToken

PAD = "<pad>"
SOS = "<sos>"
EOS = "<eos>"
SEP = "<sep>"
COND = "<cond>"
POS_OPEN = "<Positive>"
POS_CLOSE = "</Positive>"
NEG_OPEN = "<Negative>"
NEG_CLOSE = "</Negative>"

MAX_VARS = 5
MAX_POINTERS = 10
MAX_COMPLEXITY = 20


def useful_symmetry_subsets(d: int) -> list[tuple[int, ...]]:
    """Variable subsets eligible for a symmetry flag, in canonical order.

    Eligible sizes are 2..d-1 (size d is trivially true, size 1 meaningless),
    so nothing is eligible below three variables.  Order: by size, then by
    span (max minus min), then by element tuple; for three variables this
    yields (1,2), (2,3), (1,3).
    """
    subsets: list[tuple[int, ...]] = []
    for size in range(2, d):
        group = list(combinations(range(1, d + 1), size))
        group.sort(key=lambda s: (s[-1] - s[0], s))
        subsets.extend(group)
    return subsets


def symmetry_token(subset: tuple[int, ...], flag: bool) -> str:
    name = "".join(f"X{i}" for i in subset)
    return ("True" if flag else "False") + "Symmetry" + name


def complexity_token(k: int) -> str:
    if not 1 <= k <= MAX_COMPLEXITY:
        raise ValueError(f"complexity {k} outside 1..{MAX_COMPLEXITY}")
    return f"Complexity={k}"


def pointer_token(i: int) -> str:
    return f"pointer_{i}"


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token <-> id bijection with class-of-token views."""

    tokens: tuple[str, ...]
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = {t: i for i, t in enumerate(self.tokens)}
        if len(ids) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_ids", ids)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise UnknownToken(f"token {token!r} not in vocabulary") from None

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: list[str] | tuple[str, ...]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def sos_id(self) -> int:
        return self._ids[SOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def cond_id(self) -> int:
        return self._ids[COND]

    def pointer_id(self, i: int) -> int:
        return self.id_of(pointer_token(i))

    def is_pointer(self, idx: int) -> bool:
        return self.tokens[idx].startswith("pointer_")

    @property
    def expression_token_ids(self) -> frozenset[int]:
        """Ids the decoder may emit inside an expression body."""
        out = set()
        for t in (*UNARY_SYMBOLS, *BINARY_SYMBOLS, PLACEHOLDER_TOKEN):
            out.add(self._ids[t])
        for i in range(1, MAX_VARS + 1):
            out.add(self._ids[f"x{i}"])
        for i in range(MAX_POINTERS):
            out.add(self._ids[pointer_token(i)])
        return frozenset(out)


def default_vocabulary() -> Vocabulary:
    tokens: list[str] = [PAD, SOS, EOS, SEP, COND]
    tokens.extend(BINARY_SYMBOLS)
    tokens.extend(UNARY_SYMBOLS)
    tokens.extend(f"x{i}" for i in range(1, MAX_VARS + 1))
    tokens.append(PLACEHOLDER_TOKEN)
    tokens.extend(pointer_token(i) for i in range(MAX_POINTERS))
    tokens.extend([POS_OPEN, POS_CLOSE, NEG_OPEN, NEG_CLOSE])
    tokens.extend(complexity_token(k) for k in range(1, MAX_COMPLEXITY + 1))
    for subset in useful_symmetry_subsets(MAX_VARS):
        tokens.append(symmetry_token(subset, True))
        tokens.append(symmetry_token(subset, False))
    return Vocabulary(tuple(tokens))
