"""Synthetic regression corpora: skeletons, constants, supports, and shards.

A corpus sample is a ground-truth skeleton (constants as unbound slots), its
drawn constant values, a per-variable support box, observation points with
function values, and the privileged-information channels extracted for the
sample.  Shards are length-prefixed binary records plus a JSON index; a
(config, seed) pair regenerates a corpus byte-for-byte.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import hints
from .expr import (
    BINARY_SYMBOLS,
    Expression,
    Op,
    Placeholder,
    UNARY_SYMBOLS,
    Var,
    depth,
    evaluate,
    n_variables,
    normalize,
    parse_prefix,
    to_prefix,
    variables,
)

CORPUS_VERSION = 1
_SHARD_MAGIC = b"SRSH"


class ResampleLimitExceeded(Exception):
    """A retry budget ran out while sampling a skeleton or its points."""


class CorpusFormatError(Exception):
    """A shard or index file is malformed or from an unknown version."""


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for expression and observation sampling.

    ``operator_weights`` maps operator symbols to relative weights applied
    within each arity class (missing symbols get weight 0 when the dict is
    given, 1.0 when it is None).  Tree shape is controlled by ``p_leaf``
    (chance an internal position becomes a leaf before the depth cap) and
    ``p_unary`` (chance an operator node is unary).
    """

    max_depth: int = 6
    max_prefix_len: int = 20
    max_vars: int = 5
    n_points: tuple[int, int] = (1, 1000)
    support_bound: float = 10.0
    min_support_width: float = 1.0
    additive_range: tuple[float, float] = (-10.0, 10.0)
    multiplicative_range: tuple[float, float] = (0.05, 10.0)
    operator_weights: dict[str, float] | None = None
    p_leaf: float = 0.5
    p_unary: float = 0.4
    leaf_const_prob: float = 0.25
    skeleton_retries: int = 100
    point_batches: int = 100
    pool_expressions: int = 100_000
    pool_top_k: int = 5000
    pool_max_len: int = 4

    def __post_init__(self) -> None:
        if self.min_support_width > 2 * self.support_bound:
            raise ValueError(
                "min_support_width "
                f"{self.min_support_width} cannot exceed the full range "
                f"2 * support_bound = {2 * self.support_bound}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        kwargs = dict(d)
        for key in ("n_points", "additive_range", "multiplicative_range"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def _arity_weights(self, symbols: Sequence[str]) -> np.ndarray:
        if self.operator_weights is None:
            w = np.ones(len(symbols))
        else:
            w = np.array([float(self.operator_weights.get(s, 0.0)) for s in symbols])
        total = w.sum()
        if total <= 0:
            raise ValueError(f"no positive operator weights among {symbols}")
        return w / total


@dataclass(frozen=True)
class Observations:
    """A point matrix (n, d) and the observed values (n,), both float32."""

    points: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True)
class TrainingSample:
    skeleton: Expression
    constants: tuple[float, ...]
    known: tuple[int, ...]
    intervals: tuple[tuple[float, float], ...]
    observations: Observations
    pi: hints.PrivilegedInfo

    @property
    def target(self) -> Expression:
        """Pointerized skeleton: known constants as pointers, rest as slots."""
        from .expr import skeletonize

        return skeletonize(self.skeleton, self.known)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def _relabel_contiguous(e: Expression) -> Expression:
    used = sorted(variables(e))
    mapping = {old: new for new, old in enumerate(used, start=1)}

    def rec(node: Expression) -> Expression:
        if isinstance(node, Var):
            return Var(mapping[node.index])
        if isinstance(node, Op):
            return Op(node.symbol, tuple(rec(c) for c in node.children))
        return node

    return rec(e)


def _literals_to_slots(e: Expression) -> Expression:
    """Turn literal Const leaves (left behind by constant folding) back into
    unbound slots so that every constant in a generated skeleton is drawn."""
    from .expr import Const

    if isinstance(e, Const):
        return Placeholder()
    if isinstance(e, Op):
        return Op(e.symbol, tuple(_literals_to_slots(c) for c in e.children))
    return e


def sample_skeleton(cfg: GeneratorConfig, rng: np.random.Generator) -> Expression:
    """Draw a random unary-binary skeleton within the depth/length caps.

    Leaves are variables (contiguously indexed from x1 after relabeling) or
    constant slots; the tree is normalized before acceptance and resampled if
    normalization leaves it variable-free or over the caps.
    """
    unary_w = cfg._arity_weights(UNARY_SYMBOLS)
    binary_w = cfg._arity_weights(BINARY_SYMBOLS)

    def leaf(d_target: int) -> Expression:
        if rng.random() < cfg.leaf_const_prob:
            return Placeholder()
        return Var(int(rng.integers(1, d_target + 1)))

    def node(depth_left: int, d_target: int, is_root: bool) -> Expression:
        if depth_left == 0:
            return leaf(d_target)
        if not is_root and rng.random() < cfg.p_leaf:
            return leaf(d_target)
        if rng.random() < cfg.p_unary:
            symbol = str(rng.choice(UNARY_SYMBOLS, p=unary_w))
            return Op(symbol, (node(depth_left - 1, d_target, False),))
        symbol = str(rng.choice(BINARY_SYMBOLS, p=binary_w))
        return Op(
            symbol,
            (
                node(depth_left - 1, d_target, False),
                node(depth_left - 1, d_target, False),
            ),
        )

    for _ in range(cfg.skeleton_retries):
        d_target = int(rng.integers(1, cfg.max_vars + 1))
        tree = node(cfg.max_depth, d_target, True)
        # slot conversion can expose new foldable constant arithmetic, so
        # iterate with normalization until the tree is stable
        for _pass in range(4):
            folded = _literals_to_slots(normalize(tree))
            if folded == tree:
                break
            tree = folded
        if not variables(tree):
            continue
        if len(to_prefix(tree)) > cfg.max_prefix_len or depth(tree) > cfg.max_depth:
            continue
        return _relabel_contiguous(tree)
    raise ResampleLimitExceeded(
        f"no admissible skeleton after {cfg.skeleton_retries} attempts"
    )


def sample_constants(
    skeleton: Expression, cfg: GeneratorConfig, rng: np.random.Generator
) -> list[float]:
    """One value per constant slot, in prefix order.

    Slots under add/sub parents draw uniformly from the additive range;
    slots under mul/div, under unary operators, or at the root draw
    log-uniformly from the multiplicative range.
    """
    lo_m, hi_m = cfg.multiplicative_range
    lo_a, hi_a = cfg.additive_range
    out: list[float] = []

    def rec(node: Expression, parent_symbol: str | None) -> None:
        if isinstance(node, Placeholder):
            if parent_symbol in ("add", "sub"):
                out.append(float(rng.uniform(lo_a, hi_a)))
            else:
                out.append(float(np.exp(rng.uniform(np.log(lo_m), np.log(hi_m)))))
        elif isinstance(node, Op):
            for child in node.children:
                rec(child, node.symbol)

    rec(skeleton, None)
    return out


def sample_support(
    d: int, cfg: GeneratorConfig, rng: np.random.Generator
) -> tuple[tuple[tuple[float, float], ...], int]:
    """Per-variable support intervals and the observation count.

    Interval endpoints are uniform in [-support_bound, support_bound],
    redrawn until the width reaches min_support_width; n is integer-uniform
    over the configured range.  A width demand equal to the full range pins
    every interval to (-support_bound, support_bound).
    """
    b = cfg.support_bound
    intervals = []
    for _ in range(d):
        if cfg.min_support_width >= 2 * b:
            # rejection would almost surely never accept
            intervals.append((float(-b), float(b)))
            continue
        while True:
            a, c = sorted(rng.uniform(-b, b, size=2))
            if c - a >= cfg.min_support_width:
                intervals.append((float(a), float(c)))
                break
    lo, hi = cfg.n_points
    n = int(rng.integers(lo, hi + 1))
    return tuple(intervals), n


def _sample_points(
    skeleton: Expression,
    constants: Sequence[float],
    intervals: Sequence[tuple[float, float]],
    n: int,
    cfg: GeneratorConfig,
    rng: np.random.Generator,
) -> Observations | None:
    lo = np.array([iv[0] for iv in intervals])
    hi = np.array([iv[1] for iv in intervals])
    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    got = 0
    for _ in range(cfg.point_batches):
        m = max(n - got, 16)
        pts = rng.uniform(lo, hi, size=(m, len(intervals)))
        vals = evaluate(skeleton, pts, constants)
        keep = np.isfinite(vals)
        if keep.any():
            xs.append(pts[keep])
            ys.append(vals[keep])
            got += int(keep.sum())
        if got >= n:
            points = np.concatenate(xs)[:n].astype(np.float32)
            values = np.concatenate(ys)[:n].astype(np.float32)
            return Observations(points, values)
    return None


@dataclass(frozen=True)
class HintOptions:
    """How privileged information is attached during generation.

    ``mask`` fixes the channel intensities; when None, each sample draws the
    training schedule.  The global pool is required only when negative
    branches can be requested.
    """

    mask: hints.MaskDraw | None = None
    global_pool: tuple[hints.Branch, ...] | None = None
    probe_cfg: hints.SymmetryProbeConfig = hints.SymmetryProbeConfig()


def build_sample(
    cfg: GeneratorConfig,
    rng: np.random.Generator,
    options: HintOptions = HintOptions(),
) -> TrainingSample:
    """Draw one complete training sample; resamples skeletons whose support
    cannot yield enough valid points within the retry budget."""
    for _ in range(cfg.skeleton_retries):
        skeleton = sample_skeleton(cfg, rng)
        constants = sample_constants(skeleton, cfg, rng)
        d = n_variables(skeleton)
        intervals, n = sample_support(d, cfg, rng)
        obs = _sample_points(skeleton, constants, intervals, n, cfg, rng)
        if obs is None:
            continue
        mask = options.mask if options.mask is not None else hints.training_mask(rng)
        pi, known, _ = hints.build_pi(
            skeleton,
            constants,
            mask,
            rng,
            global_pool=options.global_pool,
            probe_cfg=options.probe_cfg,
            intervals=intervals,
        )
        return TrainingSample(
            skeleton=skeleton,
            constants=tuple(constants),
            known=known,
            intervals=intervals,
            observations=obs,
            pi=pi,
        )
    raise ResampleLimitExceeded(
        f"no evaluable sample after {cfg.skeleton_retries} skeletons"
    )


def skeleton_stream(
    cfg: GeneratorConfig, seed: int, count: int
) -> Iterator[Expression]:
    """Deterministic stream of skeletons, e.g. for global-pool construction."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9C00]))
    for _ in range(count):
        yield sample_skeleton(cfg, rng)


def default_global_pool(
    cfg: GeneratorConfig,
    seed: int = 0,
    n_expressions: int | None = None,
    top_k: int | None = None,
    max_len: int | None = None,
) -> tuple[hints.Branch, ...]:
    """Build the global negative-branch pool for a generator config."""
    n = n_expressions if n_expressions is not None else cfg.pool_expressions
    k = top_k if top_k is not None else cfg.pool_top_k
    ml = max_len if max_len is not None else cfg.pool_max_len
    return hints.build_global_pool(skeleton_stream(cfg, seed, n), max_len=ml, top_k=k)


# ---------------------------------------------------------------------------
# Shard format
# ---------------------------------------------------------------------------


def _pack_sample(sample: TrainingSample) -> bytes:
    buf = io.BytesIO()
    tokens = " ".join(to_prefix(sample.skeleton)).encode("utf-8")
    buf.write(struct.pack("<H", len(tokens)))
    buf.write(tokens)
    buf.write(struct.pack("<B", len(sample.constants)))
    for v in sample.constants:
        buf.write(struct.pack("<d", v))
    known_mask = 0
    for pos in sample.known:
        known_mask |= 1 << pos
    buf.write(struct.pack("<H", known_mask))
    ivs = sample.intervals
    buf.write(struct.pack("<B", len(ivs)))
    for lo, hi in ivs:
        buf.write(struct.pack("<dd", lo, hi))
    obs = sample.observations
    buf.write(struct.pack("<I", obs.n))
    buf.write(obs.points.astype("<f4").tobytes())
    buf.write(obs.values.astype("<f4").tobytes())
    pi_tokens, payload = hints.serialize(sample.pi)
    pi_text = " ".join(pi_tokens).encode("utf-8")
    buf.write(struct.pack("<H", len(pi_text)))
    buf.write(pi_text)
    buf.write(struct.pack("<B", len(payload)))
    for idx, value in payload:
        buf.write(struct.pack("<Bd", idx, value))
    return buf.getvalue()


def _unpack_sample(data: bytes) -> TrainingSample:
    off = 0

    def take(fmt: str):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, data, off)
        off += size
        return vals

    (tlen,) = take("<H")
    tokens = data[off : off + tlen].decode("utf-8")
    off += tlen
    skeleton = parse_prefix(tokens.split())
    (n_const,) = take("<B")
    constants = tuple(take("<d")[0] for _ in range(n_const))
    (known_mask,) = take("<H")
    known = tuple(i for i in range(n_const) if known_mask & (1 << i))
    (d,) = take("<B")
    intervals = tuple((take("<dd")) for _ in range(d))
    (n,) = take("<I")
    points = np.frombuffer(data, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    values = np.frombuffer(data, dtype="<f4", count=n, offset=off)
    off += 4 * n
    (plen,) = take("<H")
    pi_text = data[off : off + plen].decode("utf-8")
    off += plen
    (n_payload,) = take("<B")
    payload = [take("<Bd") for _ in range(n_payload)]
    pi = hints.deserialize(pi_text.split() if pi_text else [], payload)
    if off != len(data):
        raise CorpusFormatError(f"{len(data) - off} stray bytes in record")
    return TrainingSample(
        skeleton=skeleton,
        constants=constants,
        known=known,
        intervals=intervals,
        observations=Observations(points.copy(), values.copy()),
        pi=pi,
    )


def write_shard(path: Path | str, samples: Sequence[TrainingSample]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_SHARD_MAGIC)
        f.write(struct.pack("<II", CORPUS_VERSION, len(samples)))
        for sample in samples:
            blob = _pack_sample(sample)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
    tmp.replace(path)


def read_shard(path: Path | str) -> list[TrainingSample]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _SHARD_MAGIC:
        raise CorpusFormatError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CORPUS_VERSION:
        raise CorpusFormatError(f"{path}: unsupported version {version}")
    off = 12
    out = []
    for _ in range(count):
        if off + 4 > len(data):
            raise CorpusFormatError(f"{path}: truncated shard")
        (size,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + size > len(data):
            raise CorpusFormatError(f"{path}: truncated record")
        out.append(_unpack_sample(data[off : off + size]))
        off += size
    return out


def write_corpus(
    out_dir: Path | str,
    cfg: GeneratorConfig,
    n_shards: int,
    samples_per_shard: int,
    seed: int,
    options: HintOptions | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> dict:
    """Generate and persist a sharded corpus; returns the index mapping.

    Shard RNGs derive from the master seed, so any shard can be regenerated
    independently and the whole corpus is byte-identical for a fixed
    (config, seed) pair.  When negative channels are possible and no pool is
    supplied, the global pool is built first from the same master seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if options is None:
        options = HintOptions()
    needs_pool = options.mask is None or options.mask.p_negative > 0
    if needs_pool and options.global_pool is None:
        options = replace(options, global_pool=default_global_pool(cfg, seed))
    shards = []
    root = np.random.SeedSequence(seed)
    children = root.spawn(n_shards)
    for i, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        samples = [build_sample(cfg, rng, options) for _ in range(samples_per_shard)]
        name = f"shard_{i:04d}.bin"
        write_shard(out / name, samples)
        shards.append({"file": name, "records": len(samples), "spawn_index": i})
        if progress is not None:
            progress(i + 1, n_shards)
    index = {
        "version": CORPUS_VERSION,
        "config": cfg.to_dict(),
        "seed": seed,
        "shards": shards,
    }
    with open(out / "index.json", "w") as f:
        json.dump(index, f, indent=2)
    return index


def read_corpus(corpus_dir: Path | str) -> list[TrainingSample]:
    """Load every shard listed by a corpus index."""
    root = Path(corpus_dir)
    index_path = root / "index.json"
    if not index_path.exists():
        raise CorpusFormatError(f"no index.json under {root}")
    with open(index_path) as f:
        index = json.load(f)
    if index.get("version") != CORPUS_VERSION:
        raise CorpusFormatError(f"unsupported corpus version {index.get('version')}")
    samples: list[TrainingSample] = []
    for entry in index["shards"]:
        shard = read_shard(root / entry["file"])
        if len(shard) != entry["records"]:
            raise CorpusFormatError(
                f"{entry['file']}: expected {entry['records']} records, got {len(shard)}"
            )
        samples.extend(shard)
    return samples


def corpus_config(corpus_dir: Path | str) -> GeneratorConfig:
    with open(Path(corpus_dir) / "index.json") as f:
        index = json.load(f)
    return GeneratorConfig.from_dict(index["config"])


# ---------------------------------------------------------------------------
# External tables
# ---------------------------------------------------------------------------


def read_table(path: Path | str) -> tuple[Observations, int]:
    """Read a benchmark CSV: header x1..xd,y then numeric rows.

    Rows with non-finite values or |y| beyond the half-precision range are
    dropped; returns (observations, number of dropped rows).
    """
    import csv

    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CorpusFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        expected = [f"x{i}" for i in range(1, d + 1)] + ["y"]
        if d < 1 or header != expected:
            raise CorpusFormatError(
                f"{path}: header must be x1..xd,y — got {header!r}"
            )
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise CorpusFormatError(
                    f"{path}: non-numeric value on line {line_no}"
                ) from None
            if len(rows[-1]) != d + 1:
                raise CorpusFormatError(
                    f"{path}: line {line_no} has {len(rows[-1])} fields, expected {d + 1}"
                )
    if not rows:
        raise CorpusFormatError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    finite = np.isfinite(arr).all(axis=1) & (np.abs(arr[:, -1]) <= 65504.0)
    dropped = int((~finite).sum())
    arr = arr[finite]
    if arr.shape[0] == 0:
        raise CorpusFormatError(f"{path}: all rows dropped as invalid")
    return (
        Observations(arr[:, :-1].astype(np.float32), arr[:, -1].astype(np.float32)),
        dropped,
    )
