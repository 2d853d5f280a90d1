"""The conditioned regression network.

Two encoders feed one decoder.  The numeric encoder ingests observation
points, each value expanded into its 16 half-precision bits (a multi-hot
0/1 vector), and pools them through learned latent slots into a fixed
(S, H) summary that is invariant to point order.  The symbolic encoder
ingests the conditioning token sequence (with per-pointer value payloads
projected into the embedding) and produces its own (S, H) summary; a
dedicated start-of-conditioning token is always present, so fully masked
conditioning reduces to a learned null embedding.  The two summaries are
fused by elementwise sum and cross-attended by a causal decoder over
expression tokens.  The baseline configuration drops the symbolic encoder
entirely, leaving the fusion sum with a zero contribution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..vocab import Vocabulary
from .layers import (
    DecoderBlock,
    EncoderBlock,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    PoolingBlock,
    causal_mask,
    key_padding_mask,
    sinusoidal_positions,
)
from .tensor import Tensor, add, add_const

HALF_MAX = 65504.0
BITS = 16


class OutOfRange(Exception):
    """A value cannot be represented in half precision."""


class PayloadMissing(Exception):
    """A pointer token appeared without an attached constant value."""


# ---------------------------------------------------------------------------
# Half-precision bit encoding
# ---------------------------------------------------------------------------


def float_to_multihot(v: float) -> np.ndarray:
    """16-bit IEEE half-precision pattern of ``v`` as a float32 0/1 vector.

    Bit order is sign, exponent (5), fraction (10), most significant first.
    Conversion rounds to nearest-even and preserves subnormals; finite values
    beyond +-65504 raise OutOfRange (half-precision specials pass through).
    """
    f = float(v)
    if np.isfinite(f) and abs(f) > HALF_MAX:
        raise OutOfRange(f"|{f}| exceeds the half-precision maximum {HALF_MAX}")
    with np.errstate(over="ignore"):
        pattern = int(np.float16(f).view(np.uint16))
    return np.array([(pattern >> (15 - i)) & 1 for i in range(BITS)], dtype=np.float32)


def floats_to_multihot(values: np.ndarray, clip: bool = False) -> np.ndarray:
    """Vectorised bit encoding; appends a trailing axis of 16 bits.

    With ``clip`` the values are clamped into the representable range first
    (used on model inputs, where injected noise may overshoot); otherwise
    out-of-range values raise OutOfRange.
    """
    arr = np.asarray(values, dtype=np.float64)
    over = np.isfinite(arr) & (np.abs(arr) > HALF_MAX)
    if over.any():
        if not clip:
            raise OutOfRange(f"{int(over.sum())} values exceed the half-precision range")
        arr = np.clip(arr, -HALF_MAX, HALF_MAX)
    with np.errstate(over="ignore"):
        patterns = arr.astype(np.float16).view(np.uint16)
    shifts = np.arange(BITS - 1, -1, -1, dtype=np.uint16)
    bits = (patterns[..., None] >> shifts) & 1
    return bits.astype(np.float32)


def points_to_features(
    points: np.ndarray, values: np.ndarray, max_vars: int = 5, clip: bool = True
) -> np.ndarray:
    """Bit-encode observation rows into (n, (max_vars+1)*16) feature vectors.

    Variable columns beyond the data's dimensionality are zero-padded, which
    coincides with the bit pattern of +0.0.
    """
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n, d = points.shape
    if d > max_vars:
        raise ValueError(f"{d} variables exceed the model maximum {max_vars}")
    full = np.zeros((n, max_vars + 1), dtype=np.float64)
    full[:, :d] = points
    full[:, -1] = values
    return floats_to_multihot(full, clip=clip).reshape(n, (max_vars + 1) * BITS)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    heads: int = 4
    latent_slots: int = 16
    enc_layers: int = 2
    dec_layers: int = 2
    ff_mult: int = 2
    max_vars: int = 5
    max_target_len: int = 24
    max_cond_len: int = 96
    vocab_size: int = 0
    use_symbolic: bool = True

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise ValueError("hidden must be divisible by heads")
        if self.latent_slots < 1:
            raise ValueError("need at least one latent slot")

    @property
    def feature_dim(self) -> int:
        return (self.max_vars + 1) * BITS

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class SetEncoder(Module):
    """Self-attention over set elements, then latent-slot pooling."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype) -> None:
        self.blocks = [
            EncoderBlock(cfg.hidden, cfg.heads, cfg.ff_mult, rng, dtype=dtype)
            for _ in range(cfg.enc_layers)
        ]
        self.pool = PoolingBlock(
            cfg.latent_slots, cfg.hidden, cfg.heads, cfg.ff_mult, rng, dtype=dtype
        )
        self.post = EncoderBlock(cfg.hidden, cfg.heads, cfg.ff_mult, rng, dtype=dtype)
        self.ln = LayerNorm(cfg.hidden, dtype=dtype)

    def __call__(self, x: Tensor, keep: np.ndarray) -> Tensor:
        mask = key_padding_mask(keep, dtype=x.dtype)
        for block in self.blocks:
            x = block(x, mask)
        z = self.pool(x, mask)
        z = self.post(z)
        return self.ln(z)


class ConditionedRegressor(Module):
    """Dual-encoder sequence model mapping observations (+hints) to skeletons."""

    def __init__(
        self,
        cfg: ModelConfig,
        vocab: Vocabulary,
        seed: int = 0,
        dtype=np.float32,
    ) -> None:
        if cfg.vocab_size and cfg.vocab_size != len(vocab):
            raise ValueError(
                f"config vocab_size {cfg.vocab_size} != vocabulary size {len(vocab)}"
            )
        if not cfg.vocab_size:
            cfg = ModelConfig(**{**cfg.to_dict(), "vocab_size": len(vocab)})
        self.cfg = cfg
        self.vocab = vocab
        self.dtype = dtype
        rng = np.random.default_rng(seed)

        self.point_proj = Linear(cfg.feature_dim, cfg.hidden, rng, dtype=dtype)
        self.numeric_encoder = SetEncoder(cfg, rng, dtype)

        if cfg.use_symbolic:
            self.cond_embedding = Embedding(len(vocab), cfg.hidden, rng, dtype=dtype)
            self.payload_proj = Linear(BITS, cfg.hidden, rng, bias=False, dtype=dtype)
            self.symbolic_encoder = SetEncoder(cfg, rng, dtype)
            self.cond_positions = sinusoidal_positions(cfg.max_cond_len, cfg.hidden, dtype)

        self.target_embedding = Embedding(len(vocab), cfg.hidden, rng, dtype=dtype)
        self.target_positions = sinusoidal_positions(cfg.max_target_len, cfg.hidden, dtype)
        self.decoder_blocks = [
            DecoderBlock(cfg.hidden, cfg.heads, cfg.ff_mult, rng, dtype=dtype)
            for _ in range(cfg.dec_layers)
        ]
        self.final_ln = LayerNorm(cfg.hidden, dtype=dtype)
        self.head = Linear(cfg.hidden, len(vocab), rng, dtype=dtype)

    # -- encoders -----------------------------------------------------------

    def encode_numeric(self, features: np.ndarray, keep: np.ndarray) -> Tensor:
        """(B, n, feature_dim) bit features + (B, n) keep mask -> (B, S, H)."""
        x = self.point_proj(Tensor(features.astype(self.dtype)))
        return self.numeric_encoder(x, keep)

    def encode_symbolic(
        self, ids: np.ndarray, payload: np.ndarray, keep: np.ndarray
    ) -> Tensor:
        """Conditioning ids (B, M), per-token bit payloads (B, M, 16), and a
        keep mask -> (B, S, H).  Position 0 is the start-of-conditioning
        token, so M >= 1 always; payload rows are zero except under pointer
        tokens."""
        if not self.cfg.use_symbolic:
            raise RuntimeError("baseline model has no symbolic encoder")
        b, m = ids.shape
        x = self.cond_embedding(ids)
        x = add(x, self.payload_proj(Tensor(payload.astype(self.dtype))))
        x = add_const(x, self.cond_positions[:m][None, :, :])
        return self.symbolic_encoder(x, keep)

    def fuse(self, z_numeric: Tensor, z_symbolic: Tensor | None) -> Tensor:
        """Elementwise sum; a missing symbolic summary contributes zero."""
        if z_symbolic is None:
            return z_numeric
        return add(z_numeric, z_symbolic)

    # -- decoder --------------------------------------------------------------

    def decode(self, memory: Tensor, target_ids: np.ndarray) -> Tensor:
        """Teacher-forced causal decoding: (B, T) ids -> (B, T, V) logits."""
        b, t = target_ids.shape
        if t > self.cfg.max_target_len:
            raise ValueError(f"target length {t} exceeds {self.cfg.max_target_len}")
        x = self.target_embedding(target_ids)
        x = add_const(x, self.target_positions[:t][None, :, :])
        mask = causal_mask(t, dtype=self.dtype)
        for block in self.decoder_blocks:
            x = block(x, memory, mask)
        return self.head(self.final_ln(x))

    def forward(self, batch: dict) -> Tensor:
        """Full teacher-forced pass over a collated batch."""
        z = self.encode_numeric(batch["features"], batch["points_keep"])
        if self.cfg.use_symbolic:
            zs = self.encode_symbolic(
                batch["cond_ids"], batch["cond_payload"], batch["cond_keep"]
            )
        else:
            zs = None
        return self.decode(self.fuse(z, zs), batch["decoder_in"])
