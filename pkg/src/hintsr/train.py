"""Training loop: batching, the Adam optimizer, and checkpointing.

Targets are the pointerized skeleton token sequences; the loss is
teacher-forced cross-entropy over non-pad positions.  The learning rate
follows the inverse-square-root schedule with linear warmup, and gradients
are clipped by global norm before each update.
"""

from __future__ import annotations

import dataclasses
import json
import time
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import hints
from .datagen import TrainingSample
from .expr import POINTER_PREFIX, to_prefix
from .nn.model import BITS, ConditionedRegressor, ModelConfig, float_to_multihot, points_to_features
from .nn.tensor import Parameter, Tensor, gather_last, log_softmax, mul, no_grad, tsum
from .vocab import Vocabulary


class NonFiniteLoss(Exception):
    """The loss left the finite range; carries the path of the batch dump."""

    def __init__(self, step: int, value: float, dump_path: str | None) -> None:
        super().__init__(f"non-finite loss {value} at step {step} (batch dump: {dump_path})")
        self.step = step
        self.value = value
        self.dump_path = dump_path


class ConfigMismatch(Exception):
    """A checkpoint was produced under an incompatible configuration."""


class CorruptCheckpoint(Exception):
    """The checkpoint file failed structural or checksum validation."""


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def target_token_ids(sample: TrainingSample, vocab: Vocabulary) -> list[int]:
    return vocab.encode(to_prefix(sample.target))


def conditioning_arrays(
    pi: hints.PrivilegedInfo, vocab: Vocabulary, max_len: int
) -> tuple[list[int], list[tuple[int, float]]]:
    """Token ids (with the start-of-conditioning id first) plus positioned
    payload records (sequence position, constant value).

    Channels are dropped whole, least informative first, if the serialized
    form would overflow ``max_len``.
    """
    drop_order = ("negative", "symmetry", "positive", "complexity", "constants")
    dropped = 0
    while True:
        tokens, payload = hints.serialize(pi)
        if len(tokens) + 1 <= max_len:
            break
        if dropped >= len(drop_order):
            raise ValueError("conditioning does not fit even with all channels dropped")
        pi = dataclasses.replace(pi, **{drop_order[dropped]: None})
        dropped += 1
    ids = [vocab.cond_id] + vocab.encode(tokens)
    # Payload records pair 1:1 with the trailing constants-channel pointer
    # tokens; pointer tokens inside branch bodies carry no value.
    positioned: list[tuple[int, float]] = []
    base = len(tokens) - len(payload)
    for k, (idx, value) in enumerate(payload):
        assert tokens[base + k] == f"{POINTER_PREFIX}{idx}"
        positioned.append((base + k + 1, value))
    return ids, positioned


@dataclass
class Batch:
    features: np.ndarray  # (B, n, F) float32 bit features
    points_keep: np.ndarray  # (B, n) bool
    cond_ids: np.ndarray  # (B, M) int
    cond_payload: np.ndarray  # (B, M, 16) float32
    cond_keep: np.ndarray  # (B, M) bool
    decoder_in: np.ndarray  # (B, T) int
    labels: np.ndarray  # (B, T) int
    label_keep: np.ndarray  # (B, T) bool

    def as_dict(self) -> dict:
        return {
            "features": self.features,
            "points_keep": self.points_keep,
            "cond_ids": self.cond_ids,
            "cond_payload": self.cond_payload,
            "cond_keep": self.cond_keep,
            "decoder_in": self.decoder_in,
        }


def collate(
    samples: Sequence[TrainingSample],
    vocab: Vocabulary,
    cfg: ModelConfig,
    rng: np.random.Generator,
    max_points: int = 24,
) -> Batch:
    """Assemble padded arrays for one batch, subsampling observation rows."""
    b = len(samples)
    rows = []
    for s in samples:
        obs = s.observations
        if obs.n > max_points:
            pick = rng.choice(obs.n, size=max_points, replace=False)
            pick.sort()
            rows.append((obs.points[pick], obs.values[pick]))
        else:
            rows.append((obs.points, obs.values))
    n_max = max(r[1].shape[0] for r in rows)

    features = np.zeros((b, n_max, cfg.feature_dim), dtype=np.float32)
    points_keep = np.zeros((b, n_max), dtype=bool)
    for i, (pts, vals) in enumerate(rows):
        n = vals.shape[0]
        features[i, :n] = points_to_features(pts, vals, cfg.max_vars)
        points_keep[i, :n] = True

    conds = [conditioning_arrays(s.pi, vocab, cfg.max_cond_len) for s in samples]
    m_max = max(len(ids) for ids, _ in conds)
    cond_ids = np.full((b, m_max), vocab.pad_id, dtype=np.int64)
    cond_payload = np.zeros((b, m_max, BITS), dtype=np.float32)
    cond_keep = np.zeros((b, m_max), dtype=bool)
    for i, (ids, positioned) in enumerate(conds):
        cond_ids[i, : len(ids)] = ids
        cond_keep[i, : len(ids)] = True
        for pos, value in positioned:
            cond_payload[i, pos] = float_to_multihot(float(np.clip(value, -65504, 65504)))

    targets = [target_token_ids(s, vocab) for s in samples]
    t_max = max(len(t) for t in targets) + 1  # room for SOS/EOS shift
    if t_max > cfg.max_target_len:
        raise ValueError(f"target length {t_max} exceeds model maximum {cfg.max_target_len}")
    decoder_in = np.full((b, t_max), vocab.pad_id, dtype=np.int64)
    labels = np.full((b, t_max), vocab.pad_id, dtype=np.int64)
    label_keep = np.zeros((b, t_max), dtype=bool)
    for i, t in enumerate(targets):
        decoder_in[i, 0] = vocab.sos_id
        decoder_in[i, 1 : len(t) + 1] = t
        labels[i, : len(t)] = t
        labels[i, len(t)] = vocab.eos_id
        label_keep[i, : len(t) + 1] = True
    return Batch(features, points_keep, cond_ids, cond_payload, cond_keep,
                 decoder_in, labels, label_keep)


# ---------------------------------------------------------------------------
# Loss and optimizer
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray, keep: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over positions where ``keep`` is True."""
    lp = log_softmax(logits, axis=-1)
    nll = mul(gather_last(lp, labels), -1.0)
    weights = keep.astype(logits.data.dtype)
    total = tsum(mul(nll, weights))
    return mul(total, 1.0 / max(float(weights.sum()), 1.0))


def learning_rate(step: int, base: float, warmup: int) -> float:
    """Inverse-square-root decay with linear warmup (step counts from 1)."""
    s = max(step, 1)
    return base * min(s ** -0.5 * warmup ** 0.5, s / warmup)


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Adam:
    """Adam with bias correction; the learning rate is supplied per step."""

    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data, dtype=np.float32) for p in self.params]
        self.v = [np.zeros_like(p.data, dtype=np.float32) for p in self.params]

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float32)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 96
    base_lr: float = 1e-4
    warmup: int = 4000
    clip_norm: float = 1.0
    max_points: int = 24
    seed: int = 0
    log_every: int = 100
    heldout_fraction: float = 0.02
    heldout_max: int = 512

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def train_step(
    model: ConditionedRegressor,
    optimizer: Adam,
    batch: Batch,
    lr: float,
    clip_norm: float,
) -> tuple[float, float]:
    """One optimization step; returns (loss, pre-clip gradient norm)."""
    optimizer.zero_grad()
    logits = model.forward(batch.as_dict())
    loss = cross_entropy(logits, batch.labels, batch.label_keep)
    loss.backward()
    norm = clip_global_norm(optimizer.params, clip_norm)
    optimizer.step(lr)
    return loss.item(), norm


def evaluate_heldout(
    model,
    samples: Sequence[TrainingSample],
    vocab: Vocabulary,
    cfg: ModelConfig,
    batch_size: int = 96,
    max_points: int = 24,
    seed: int = 0,
) -> dict:
    """Teacher-forced token accuracy and mean loss on held-out samples.

    ``model`` only needs a ``forward(dict) -> Tensor`` of logits, so test
    doubles can stand in for the real network.
    """
    rng = np.random.default_rng(seed)
    correct = 0
    counted = 0
    loss_total = 0.0
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            batch = collate(chunk, vocab, cfg, rng, max_points=max_points)
            logits = model.forward(batch.as_dict())
            pred = np.argmax(logits.data, axis=-1)
            hit = (pred == batch.labels) & batch.label_keep
            correct += int(hit.sum())
            counted += int(batch.label_keep.sum())
            loss_total += float(
                cross_entropy(logits, batch.labels, batch.label_keep).item()
            ) * int(batch.label_keep.sum())
    return {
        "token_accuracy": correct / max(counted, 1),
        "loss": loss_total / max(counted, 1),
        "tokens": counted,
    }


def _dump_batch(batch: Batch, out_dir: Path, step: int) -> str:
    path = out_dir / f"bad_batch_step{step}.npz"
    np.savez(path, features=batch.features, points_keep=batch.points_keep,
             cond_ids=batch.cond_ids, cond_payload=batch.cond_payload,
             cond_keep=batch.cond_keep, decoder_in=batch.decoder_in,
             labels=batch.labels, label_keep=batch.label_keep)
    return str(path)


def train_model(
    model: ConditionedRegressor,
    samples: Sequence[TrainingSample],
    vocab: Vocabulary,
    cfg: TrainConfig,
    out_dir: Path | str | None = None,
    progress: Callable[[dict], None] | None = None,
) -> dict:
    """Run the optimization loop; returns the final metrics record.

    A slice of the corpus is held out for token-accuracy tracking; batches
    are drawn by seeded shuffling, reshuffled each epoch.  Metrics records
    go to ``metrics.jsonl`` under ``out_dir`` when given.
    """
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    n_heldout = min(cfg.heldout_max, int(len(samples) * cfg.heldout_fraction))
    heldout = list(samples[:n_heldout])
    pool = list(samples[n_heldout:])
    if not pool:
        raise ValueError("no training samples left after the held-out split")

    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam([p for _, p in model.named_parameters()])
    log_file = (out_path / "metrics.jsonl").open("a") if out_path is not None else None
    order = rng.permutation(len(pool))
    cursor = 0
    record: dict = {}
    started = time.time()
    try:
        for step in range(1, cfg.steps + 1):
            if cursor + cfg.batch_size > len(order):
                order = rng.permutation(len(pool))
                cursor = 0
            chunk = [pool[i] for i in order[cursor : cursor + cfg.batch_size]]
            cursor += cfg.batch_size
            batch = collate(chunk, vocab, model.cfg, rng, max_points=cfg.max_points)
            lr = learning_rate(step, cfg.base_lr, cfg.warmup)
            loss, norm = train_step(model, optimizer, batch, lr, cfg.clip_norm)
            if not np.isfinite(loss):
                dump = _dump_batch(batch, out_path, step) if out_path is not None else None
                raise NonFiniteLoss(step, loss, dump)
            if step % cfg.log_every == 0 or step == cfg.steps:
                record = {
                    "step": step,
                    "loss": round(loss, 6),
                    "lr": lr,
                    "grad_norm": round(norm, 4),
                    "elapsed_s": round(time.time() - started, 1),
                }
                if heldout:
                    record.update(
                        {
                            "heldout_"
                            + k: (round(v, 6) if isinstance(v, float) else v)
                            for k, v in evaluate_heldout(
                                model, heldout, vocab, model.cfg,
                                batch_size=cfg.batch_size,
                                max_points=cfg.max_points,
                                seed=cfg.seed,
                            ).items()
                        }
                    )
                if log_file is not None:
                    log_file.write(json.dumps(record) + "\n")
                    log_file.flush()
                if progress is not None:
                    progress(record)
    finally:
        if log_file is not None:
            log_file.close()
    return record


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"SRCK"
_CKPT_VERSION = 1


def save_checkpoint(
    path: Path | str,
    model: ConditionedRegressor,
    extra: dict | None = None,
) -> None:
    """Atomic binary checkpoint: header JSON + float32 tensor payload + CRC."""
    named = list(model.named_parameters())
    header = {
        "model_config": model.cfg.to_dict(),
        "vocab_tokens": list(model.vocab.tokens),
        "tensors": [{"name": n, "shape": list(p.data.shape)} for n, p in named],
        "extra": extra or {},
    }
    header_bytes = json.dumps(header).encode("utf-8")
    payload = b"".join(p.data.astype("<f4").tobytes() for _, p in named)
    crc = zlib.crc32(payload)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(np.uint32(_CKPT_VERSION).tobytes())
        f.write(np.uint32(len(header_bytes)).tobytes())
        f.write(header_bytes)
        f.write(np.uint32(crc & 0xFFFFFFFF).tobytes())
        f.write(payload)
    tmp.replace(path)


def load_checkpoint(path: Path | str, dtype=np.float32) -> ConditionedRegressor:
    """Rebuild a model (architecture, vocabulary, weights) from a checkpoint."""
    from .vocab import Vocabulary as V

    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic {raw[:4]!r}")
    version = int(np.frombuffer(raw[4:8], "<u4")[0])
    if version != _CKPT_VERSION:
        raise ConfigMismatch(f"{path}: checkpoint version {version} != {_CKPT_VERSION}")
    hlen = int(np.frombuffer(raw[8:12], "<u4")[0])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header") from exc
    body = raw[12 + hlen :]
    crc_stored = int(np.frombuffer(body[:4], "<u4")[0])
    payload = body[4:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc_stored:
        raise CorruptCheckpoint(f"{path}: payload checksum mismatch")

    cfg = ModelConfig.from_dict(header["model_config"])
    vocab = V(tokens=tuple(header["vocab_tokens"]))
    model = ConditionedRegressor(cfg, vocab, seed=0, dtype=dtype)
    named = dict(model.named_parameters())
    offset = 0
    for spec in header["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if name not in named:
            raise ConfigMismatch(f"{path}: unknown tensor {name!r}")
        p = named.pop(name)
        if tuple(p.data.shape) != shape:
            raise ConfigMismatch(
                f"{path}: {name} shape {shape} != model shape {tuple(p.data.shape)}"
            )
        count = int(np.prod(shape)) if shape else 1
        chunk = payload[offset : offset + 4 * count]
        if len(chunk) != 4 * count:
            raise CorruptCheckpoint(f"{path}: truncated payload at {name}")
        p.data = np.frombuffer(chunk, "<f4").reshape(shape).astype(dtype).copy()
        offset += 4 * count
    if named:
        raise ConfigMismatch(f"{path}: missing tensors {sorted(named)}")
    if offset != len(payload):
        raise CorruptCheckpoint(f"{path}: {len(payload) - offset} trailing payload bytes")
    return model
