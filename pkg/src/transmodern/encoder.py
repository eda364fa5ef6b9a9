"""
ModernBERT-style encoder: pre-norm blocks, alternating global/local attention, dual-theta RoPE, tied MLM head.
"""

import enum
import json
import logging
import math
import struct
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .accounting import AllocationMeter
from .config import TypedConfig
from .errors import (
    CheckpointFormatError,
    ConfigErrorInvalidValue,
    NoMaskedPositionsError,
    SequenceTooLongError,
    ShapeMismatchError,
    TokenIdOutOfRangeError,
)
from .numerics import DTYPE, gelu, layer_norm, softmax

if typing.TYPE_CHECKING:  # pragma: nocover
    from .transtokenizer import EmbeddingMatrix

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
DEFAULT_MASK_RATE = 0.30
MAGIC = b"ENC1"
LOCAL_ATTENTION_IMPLS = ("banded", "dense")


@dataclass
class EncoderConfig(TypedConfig):
    """
    Architecture of the encoder; the defaults are the 149M-parameter base configuration.
    """

    hidden: int = 768
    layers: int = 22
    heads: int = 12
    intermediate: int = 1152
    vocab_size: int = 50280
    max_context: int = 8192
    # every `global_every`-th layer attends globally, starting at layer index `global_phase`
    global_every: int = 3
    global_phase: int = 0
    # total band width: a local layer sees +-local_window/2 positions
    local_window: int = 128
    rope_theta_global: float = 160_000.0
    rope_theta_local: float = 10_000.0
    mask_rate: float = DEFAULT_MASK_RATE
    norm_eps: float = 1e-5
    init_std: float = 0.02
    use_rope: bool = True
    local_attention_impl: str = "banded"

    def __post_init__(self) -> None:
        """
        Check the architectural invariants.
        """
        for key in ("hidden", "layers", "heads", "intermediate", "vocab_size", "max_context", "global_every"):
            if getattr(self, key) < 1:
                raise ConfigErrorInvalidValue(key, getattr(self, key), "must be >= 1")
        if self.hidden % self.heads:
            raise ConfigErrorInvalidValue("hidden", self.hidden, f"must be divisible by heads ({self.heads})")
        if self.head_dim % 2:
            raise ConfigErrorInvalidValue("heads", self.heads, f"head_dim {self.head_dim} must be even for RoPE")
        if self.local_window < 1 or self.local_window % 2:
            raise ConfigErrorInvalidValue("local_window", self.local_window, "must be a positive even number")
        if not 0 <= self.global_phase < self.global_every:
            raise ConfigErrorInvalidValue("global_phase", self.global_phase, "must be in [0, global_every)")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigErrorInvalidValue("mask_rate", self.mask_rate, "must be in (0, 1)")
        if self.rope_theta_global <= 0 or self.rope_theta_local <= 0:
            raise ConfigErrorInvalidValue("rope_theta", (self.rope_theta_global, self.rope_theta_local), "must be > 0")
        if self.local_attention_impl not in LOCAL_ATTENTION_IMPLS:
            raise ConfigErrorInvalidValue("local_attention_impl", self.local_attention_impl, "banded or dense")

    @property
    def head_dim(self) -> int:
        """
        Width of one attention head.
        """
        return self.hidden // self.heads


if hasattr(enum, "StrEnum"):
    _StrEnum = enum.StrEnum
else:  # Python < 3.11

    class _StrEnum(str, enum.Enum):
        def __str__(self) -> str:
            return str(self.value)


class AttentionKind(_StrEnum):
    """
    Attention pattern of one layer.
    """

    GLOBAL = "global"
    LOCAL = "local"


def attention_schedule(config: EncoderConfig) -> tuple[AttentionKind, ...]:
    """
    Per-layer attention kinds: layer i is global iff i % global_every == global_phase.
    """
    return tuple(
        AttentionKind.GLOBAL if i % config.global_every == config.global_phase else AttentionKind.LOCAL
        for i in range(config.layers)
    )


class Norm(nn.Module):
    """
    Layer norm parameters (gain and bias) over the hidden axis.
    """

    def __init__(self, width: int, eps: float):
        """
        Gain starts at one, bias at zero.
        """
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(width, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(width, dtype=DTYPE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """
        See `numerics.layer_norm`.
        """
        return layer_norm(x, self.gain, self.bias, self.eps)


def _linear(fan_in: int, fan_out: int) -> nn.Linear:
    # weights are filled by build_model, skip torch's default init
    return typing.cast(nn.Linear, nn.utils.skip_init(nn.Linear, fan_in, fan_out, bias=False, dtype=DTYPE))


class EncoderLayer(nn.Module):
    """
    One pre-norm block: attention (no projection biases) and a gated gelu feed-forward.
    """

    def __init__(self, config: EncoderConfig):
        """
        Allocate the block's parameters.
        """
        super().__init__()
        self.attn_norm = Norm(config.hidden, config.norm_eps)
        self.query = _linear(config.hidden, config.hidden)
        self.key = _linear(config.hidden, config.hidden)
        self.value = _linear(config.hidden, config.hidden)
        self.output = _linear(config.hidden, config.hidden)
        self.mlp_norm = Norm(config.hidden, config.norm_eps)
        self.gate = _linear(config.hidden, config.intermediate)
        self.up = _linear(config.hidden, config.intermediate)
        self.down = _linear(config.intermediate, config.hidden)


class EncoderModel(nn.Module):
    """
    Token embeddings, the layer stack, a final norm and the tied MLM head.
    """

    def __init__(self, config: EncoderConfig):
        """
        Allocate (uninitialized) parameters; use `build_model` to get a usable model.
        """
        super().__init__()
        self.config = config
        self.schedule = attention_schedule(config)
        self.embeddings = nn.Parameter(torch.empty(config.vocab_size, config.hidden, dtype=DTYPE))
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.layers))
        self.final_norm = Norm(config.hidden, config.norm_eps)
        self.decoder_bias = nn.Parameter(torch.zeros(config.vocab_size, dtype=DTYPE))
        self.register_buffer("embedding_provenance", torch.full((config.vocab_size,), 2, dtype=torch.uint8))

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """
        Logits of shape (..., length, vocab_size).
        """
        return logits_from_hidden(self, encode_hidden(self, ids))


def build_model(config: EncoderConfig, init_emb: "EmbeddingMatrix" = None, seed: int = 0) -> EncoderModel:
    """
    Seeded initialization: projections ~ N(0, init_std), norms at identity, decoder bias at zero.

    Embeddings come from `init_emb` when given (bitwise copy), otherwise from N(0, init_std).
    """
    if init_emb is not None and (init_emb.rows, init_emb.dim) != (config.vocab_size, config.hidden):
        raise ShapeMismatchError("init_emb", (config.vocab_size, config.hidden), (init_emb.rows, init_emb.dim))

    model = EncoderModel(config)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith(".gain"):
                param.fill_(1.0)
            elif name.endswith(".bias") or name == "decoder_bias":
                param.zero_()
            elif name == "embeddings" and init_emb is not None:
                param.copy_(torch.from_numpy(np.array(init_emb.values, dtype=np.float64)))
            else:
                param.normal_(0.0, config.init_std, generator=generator)
        if init_emb is not None:
            model.embedding_provenance.copy_(torch.from_numpy(np.array(init_emb.provenance, dtype=np.uint8)))

    n_params = sum(p.numel() for p in model.parameters())
    logger.info("built encoder: %d layers, schedule %s, %.2fM parameters",
                config.layers, "".join(k.value[0].upper() for k in model.schedule), n_params / 1e6)
    return model


def with_body(
    body: EncoderModel, config: EncoderConfig, init_emb: "EmbeddingMatrix" = None, seed: int = 0
) -> EncoderModel:
    """
    A model with `config`'s vocabulary whose layers and final norm are copied from `body`.

    Only the vocabulary-sized tensors (embeddings, decoder bias) come from `build_model`.
    """
    model = build_model(config, init_emb, seed)
    for part in ("layers", "final_norm"):
        source = getattr(body, part).state_dict()
        target = getattr(model, part).state_dict()
        for name, value in source.items():
            if target[name].shape != value.shape:
                raise ShapeMismatchError(f"{part}.{name}", tuple(target[name].shape), tuple(value.shape))
        getattr(model, part).load_state_dict(source)
    return model


def rope_apply(x: torch.Tensor, positions: torch.Tensor, theta: float) -> torch.Tensor:
    """
    Rotate coordinate pairs (2k, 2k+1) of the last axis by positions * theta^(-2k/head_dim).

    x: (..., length, head_dim), positions: (length,)
    """
    head_dim = x.shape[-1]
    if head_dim % 2:
        raise ConfigErrorInvalidValue("head_dim", head_dim, "must be even for RoPE")
    exponents = torch.arange(0, head_dim, 2, dtype=DTYPE) / head_dim
    inv_freq = theta ** (-exponents)
    angles = positions.to(DTYPE)[:, None] * inv_freq[None, :]
    cos, sin = torch.cos(angles), torch.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    rotated = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
    return rotated.flatten(-2)


def local_attention_mask(seq_len: int, window: int) -> torch.Tensor:
    """
    Boolean (seq_len, seq_len) band: i may attend to j iff |i - j| <= window / 2.
    """
    if seq_len < 1:
        raise ConfigErrorInvalidValue("seq_len", seq_len, "must be >= 1")
    if window < 1 or window % 2:
        raise ConfigErrorInvalidValue("window", window, "must be a positive even number")
    positions = torch.arange(seq_len)
    return (positions[:, None] - positions[None, :]).abs() <= window // 2


def dense_attention(
    q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, mask: torch.Tensor = None
) -> torch.Tensor:
    """
    Full (length x length) scaled dot-product attention; `mask` marks allowed positions.
    """
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    AllocationMeter().record("global_scores" if mask is None else "dense_local_scores", scores.numel())
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    return softmax(scores, axis=-1) @ v


def banded_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, window: int) -> torch.Tensor:
    """
    Sliding-window attention computing only the window + 1 in-band scores per query.

    Keys and values are zero-padded by window / 2 on both sides and viewed as overlapping windows, so score
    storage is length x (window + 1) instead of length x length.
    """
    half = window // 2
    width = 2 * half + 1
    length = q.shape[-2]
    seq_axis = k.dim() - 2

    k_windows = F.pad(k, (0, 0, half, half)).unfold(seq_axis, width, 1)  # (..., length, head_dim, width)
    v_windows = F.pad(v, (0, 0, half, half)).unfold(seq_axis, width, 1)

    scores = torch.einsum("...ld,...ldw->...lw", q, k_windows) / math.sqrt(q.shape[-1])
    AllocationMeter().record("local_scores", scores.numel())

    key_positions = torch.arange(length)[:, None] + torch.arange(width)[None, :] - half
    in_range = (key_positions >= 0) & (key_positions < length)
    scores = scores.masked_fill(~in_range, float("-inf"))
    return torch.einsum("...lw,...ldw->...ld", softmax(scores, axis=-1), v_windows)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, length, hidden = x.shape
    return x.reshape(*lead, length, heads, hidden // heads).transpose(-2, -3)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, heads, length, head_dim = x.shape
    return x.transpose(-2, -3).reshape(*lead, length, heads * head_dim)


def attention_layer(
    hidden: torch.Tensor,
    layer: EncoderLayer,
    kind: AttentionKind,
    config: EncoderConfig,
) -> torch.Tensor:
    """
    Pre-norm multi-head attention with RoPE on queries and keys, plus the residual connection.

    hidden: (..., length, hidden)
    """
    length = hidden.shape[-2]
    if length > config.max_context:
        raise SequenceTooLongError(length, config.max_context)

    normed = layer.attn_norm(hidden)
    q = _split_heads(layer.query(normed), config.heads)
    k = _split_heads(layer.key(normed), config.heads)
    v = _split_heads(layer.value(normed), config.heads)

    if config.use_rope:
        theta = config.rope_theta_global if kind is AttentionKind.GLOBAL else config.rope_theta_local
        positions = torch.arange(length)
        q, k = rope_apply(q, positions, theta), rope_apply(k, positions, theta)

    if kind is AttentionKind.GLOBAL:
        context = dense_attention(q, k, v)
    elif config.local_attention_impl == "dense":
        context = dense_attention(q, k, v, local_attention_mask(length, config.local_window))
    else:
        context = banded_attention(q, k, v, config.local_window)

    return hidden + layer.output(_merge_heads(context))


def feed_forward(hidden: torch.Tensor, layer: EncoderLayer) -> torch.Tensor:
    """
    Pre-norm gated feed-forward: down(gelu(x W_gate) * (x W_up)), plus the residual connection.
    """
    normed = layer.mlp_norm(hidden)
    return hidden + layer.down(gelu(layer.gate(normed)) * layer.up(normed))


def _check_ids(model: EncoderModel, ids: torch.Tensor) -> None:
    if ids.dim() == 0:
        raise ShapeMismatchError("token ids", (-1,), ())
    if ids.shape[-1] > model.config.max_context:
        raise SequenceTooLongError(ids.shape[-1], model.config.max_context)
    if ids.numel():
        low, high = int(ids.min()), int(ids.max())
        if low < 0 or high >= model.config.vocab_size:
            raise TokenIdOutOfRangeError(low if low < 0 else high, model.config.vocab_size)


def encode_hidden(model: EncoderModel, ids: torch.Tensor) -> torch.Tensor:
    """
    Final-normed hidden states of shape (..., length, hidden) for token ids of shape (..., length).
    """
    ids = torch.as_tensor(ids, dtype=torch.long)
    _check_ids(model, ids)
    hidden = model.embeddings[ids]
    for layer, kind in zip(model.layers, model.schedule, strict=True):
        hidden = attention_layer(hidden, typing.cast(EncoderLayer, layer), kind, model.config)
        hidden = feed_forward(hidden, typing.cast(EncoderLayer, layer))
    return typing.cast(torch.Tensor, model.final_norm(hidden))


def logits_from_hidden(model: EncoderModel, hidden: torch.Tensor) -> torch.Tensor:
    """
    Tied output projection: hidden @ embeddings^T + decoder_bias.
    """
    return hidden @ model.embeddings.T + model.decoder_bias


def forward(model: EncoderModel, ids: torch.Tensor) -> torch.Tensor:
    """
    Per-position vocabulary logits for a full sequence, in one pass.
    """
    return typing.cast(torch.Tensor, model(ids))


def mlm_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    Mean cross-entropy over positions whose label is not IGNORE_INDEX.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.shape != logits.shape[:-1]:
        raise ShapeMismatchError("labels", tuple(logits.shape[:-1]), tuple(labels.shape))
    if not (labels != IGNORE_INDEX).any():
        raise NoMaskedPositionsError(labels.numel())
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE_INDEX)


# --- checkpoint container ---


def _write_tensor(f: typing.BinaryIO, name: str, value: torch.Tensor) -> None:
    encoded = name.encode("utf-8")
    array = value.detach().cpu().to(torch.float64).numpy()
    f.write(struct.pack("<Q", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<Q", array.ndim))
    f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def write_container(path: str | Path, header: dict[str, typing.Any], tensors: dict[str, torch.Tensor]) -> None:
    """
    "ENC1", u64 length + JSON header, then (name length, name, rank, extents, f64 values) per tensor.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    block = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(block)))
        f.write(block)
        for name, value in tensors.items():
            _write_tensor(f, name, value)


def read_container(path: str | Path) -> tuple[dict[str, typing.Any], dict[str, torch.Tensor]]:
    """
    Inverse of `write_container`.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointFormatError(str(path), "missing ENC1 magic")
    try:
        (block_len,) = struct.unpack_from("<Q", raw, 4)
        offset = 12 + block_len
        header = json.loads(raw[12:offset].decode("utf-8"))
        tensors: dict[str, torch.Tensor] = {}
        while offset < len(raw):
            (name_len,) = struct.unpack_from("<Q", raw, offset)
            offset += 8
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<Q", raw, offset)
            offset += 8
            shape = struct.unpack_from(f"<{rank}Q", raw, offset)
            offset += 8 * rank
            count = math.prod(shape)
            if offset + 8 * count > len(raw):
                raise CheckpointFormatError(str(path), f"tensor '{name}' is truncated")
            array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
            offset += 8 * count
            tensors[name] = torch.from_numpy(array.astype(np.float64))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(str(path), str(e)) from e
    return header, tensors


def model_state(model: EncoderModel) -> dict[str, torch.Tensor]:
    """
    Every named parameter plus the embedding provenance buffer.
    """
    state = {name: p.detach() for name, p in model.named_parameters()}
    state["embedding_provenance"] = model.embedding_provenance.to(DTYPE)
    return state


def model_from_state(config: EncoderConfig, tensors: dict[str, torch.Tensor], path: str = "<memory>") -> EncoderModel:
    """
    Rebuild a model from container tensors, checking names and shapes.
    """
    model = EncoderModel(config)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name not in tensors:
                raise CheckpointFormatError(path, f"missing parameter '{name}'")
            if tuple(tensors[name].shape) != tuple(param.shape):
                raise ShapeMismatchError(name, tuple(param.shape), tuple(tensors[name].shape))
            param.copy_(tensors[name])
        if "embedding_provenance" in tensors:
            model.embedding_provenance.copy_(tensors["embedding_provenance"].to(torch.uint8))
    return model


def save_model(model: EncoderModel, path: str | Path, extra: dict[str, typing.Any] = None) -> None:
    """
    Write a model checkpoint; `extra` lands next to the config in the JSON header.
    """
    header = {"config": model.config.to_dict(), **(extra or {})}
    write_container(path, header, model_state(model))


def load_model(path: str | Path) -> EncoderModel:
    """
    Read a model written by `save_model` (or a training checkpoint).
    """
    header, tensors = read_container(path)
    if "config" not in header:
        raise CheckpointFormatError(str(path), "header has no config block")
    config = EncoderConfig.load(header["config"])
    return model_from_state(config, tensors, str(path))
