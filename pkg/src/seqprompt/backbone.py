"""Frozen toy transformer encoder with prefix-tuning hooks.

Stands in for a pre-trained vision transformer. Weights are a pure function
of the seed and never carry gradients; prefixes injected into the trailing
``prefix_blocks`` blocks are the only way to steer the features.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .snapshot import load_arrays, save_arrays
from .tensor import Tensor


@dataclass
class BackboneConfig:
    num_blocks: int = 4
    d: int = 32
    num_heads: int = 4
    seq_len: int = 9
    prefix_blocks: int = 2
    input_dim: int = 16
    mlp_ratio: int = 2
    seed: int = 0

    def validate(self) -> None:
        for name in ("num_blocks", "d", "num_heads", "seq_len", "input_dim", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.seq_len < 2:
            raise ConfigError("seq_len counts the class token and needs at least one data token")
        if self.d % self.num_heads:
            raise ConfigError(f"d={self.d} is not divisible by num_heads={self.num_heads}")
        if not 0 <= self.prefix_blocks <= self.num_blocks:
            raise ConfigError("prefix_blocks must lie in [0, num_blocks]")


@dataclass
class PrefixPair:
    """Key and value rows prepended inside one attention layer (each H x d)."""

    key: Tensor
    value: Tensor

    def __post_init__(self):
        if self.key.shape != self.value.shape or self.key.ndim != 2:
            raise DimensionError(f"prefix key/value shapes differ: {self.key.shape} vs {self.value.shape}")

    @property
    def length(self) -> int:
        return self.key.shape[0]


@dataclass
class Attention:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    num_heads: int

    def tensors(self) -> list:
        return [self.wq, self.wk, self.wv, self.wo]


@dataclass
class Block:
    attn: Attention
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def tensors(self) -> list:
        return self.attn.tensors() + [self.w1, self.b1, self.w2, self.b2]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, n, dh = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.reshape(T.transpose(x, axes), (*lead, n, heads * dh))


def prefix_attention(attn: Attention, h: Tensor, prefix: Optional[PrefixPair] = None) -> Tensor:
    """Multi-head attention with optional prefix rows.

    Queries come from ``h`` only; keys and values are ``[p_K; h W_K]`` and
    ``[p_V; h W_V]``. ``h`` is ``s x d`` or ``B x s x d``.
    """
    d = h.shape[-1]
    if d != attn.wq.shape[0]:
        raise DimensionError(f"input width {d} does not match attention width {attn.wq.shape[0]}")
    q = h @ attn.wq
    k = h @ attn.wk
    v = h @ attn.wv
    if prefix is not None:
        if prefix.key.shape[-1] != d:
            raise DimensionError(f"prefix width {prefix.key.shape[-1]} does not match {d}")
        lead = h.shape[:-2]
        pk = T.broadcast_to(prefix.key, (*lead, *prefix.key.shape))
        pv = T.broadcast_to(prefix.value, (*lead, *prefix.value.shape))
        k = T.concat([pk, k], axis=-2)
        v = T.concat([pv, v], axis=-2)
    heads = attn.num_heads
    qh, kh, vh = (_split_heads(t, heads) for t in (q, k, v))
    scores = T.scale(qh @ T.transpose(kh), 1.0 / math.sqrt(d // heads))
    mixed = T.softmax(scores, axis=-1) @ vh
    return _merge_heads(mixed) @ attn.wo


def block_forward(block: Block, h: Tensor, prefix: Optional[PrefixPair] = None) -> Tensor:
    """Pre-norm transformer block."""
    h = h + prefix_attention(block.attn, T.layer_norm(h), prefix)
    hidden = T.gelu(T.layer_norm(h) @ block.w1 + block.b1)
    return h + (hidden @ block.w2 + block.b2)


def init_block(rng: np.random.Generator, d: int, heads: int, mlp_ratio: int, requires_grad: bool) -> Block:
    def gauss(*shape, fan_in):
        return Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape), requires_grad=requires_grad)

    hidden = mlp_ratio * d
    attn = Attention(*(gauss(d, d, fan_in=d) for _ in range(4)), num_heads=heads)
    return Block(
        attn=attn,
        w1=gauss(d, hidden, fan_in=d),
        b1=Tensor(np.zeros(hidden), requires_grad=requires_grad),
        w2=gauss(hidden, d, fan_in=hidden),
        b2=Tensor(np.zeros(d), requires_grad=requires_grad),
    )


class Backbone:
    """Seeded, frozen transformer; see :func:`init_backbone`."""

    def __init__(self, cfg: BackboneConfig, w_in: Tensor, b_in: Tensor, cls_token: Tensor, blocks: list):
        self.cfg = cfg
        self.w_in = w_in
        self.b_in = b_in
        self.cls_token = cls_token
        self.blocks = blocks

    def tensors(self) -> list:
        out = [self.w_in, self.b_in, self.cls_token]
        for b in self.blocks:
            out.extend(b.tensors())
        return out

    def state_arrays(self) -> dict:
        names = ["w_in", "b_in", "cls_token"]
        for i in range(len(self.blocks)):
            names += [f"block{i}.{n}" for n in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")]
        return {n: t.data for n, t in zip(names, self.tensors())}

    def save(self, prefix) -> None:
        save_arrays(prefix, self.state_arrays(), meta={"config": asdict(self.cfg)})

    @classmethod
    def load(cls, prefix) -> "Backbone":
        arrays, meta = load_arrays(prefix)
        bb = init_backbone(BackboneConfig(**meta["config"]))
        for t, (name, arr) in zip(bb.tensors(), arrays.items()):
            if t.shape != arr.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} != expected {t.shape}")
            t.data[...] = arr
        return bb


def init_backbone(cfg: BackboneConfig) -> Backbone:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_tok = cfg.seq_len - 1
    w_in = Tensor(rng.normal(0.0, 1.0 / math.sqrt(cfg.input_dim), size=(cfg.input_dim, n_tok * cfg.d)))
    b_in = Tensor(rng.normal(0.0, 0.02, size=(n_tok, cfg.d)))
    cls_token = Tensor(rng.normal(0.0, 1.0, size=(1, cfg.d)))
    blocks = [init_block(rng, cfg.d, cfg.num_heads, cfg.mlp_ratio, requires_grad=False) for _ in range(cfg.num_blocks)]
    return Backbone(cfg, w_in, b_in, cls_token, blocks)


def embed_input(backbone: Backbone, x) -> Tensor:
    """Project raw feature vectors into ``seq_len x d`` token sequences.

    ``x`` may be a single vector (-> ``seq_len x d``) or a batch ``B x in``
    (-> ``B x seq_len x d``). Row 0 is the class token.
    """
    cfg = backbone.cfg
    x = T.as_tensor(x)
    single = x.ndim == 1
    if x.shape[-1] != cfg.input_dim or x.ndim > 2:
        raise DimensionError(f"expected raw inputs of length {cfg.input_dim}, got shape {x.shape}")
    xb = T.reshape(x, (1, cfg.input_dim)) if single else x
    batch = xb.shape[0]
    tokens = T.reshape(xb @ backbone.w_in, (batch, cfg.seq_len - 1, cfg.d)) + backbone.b_in
    cls = T.broadcast_to(backbone.cls_token, (batch, 1, cfg.d))
    seq = T.concat([cls, tokens], axis=1)
    return T.reshape(seq, (cfg.seq_len, cfg.d)) if single else seq


def forward_features(backbone: Backbone, x, prefixes: Sequence[Optional[PrefixPair]]) -> Tensor:
    """Class-token output after all blocks; ``d`` or ``B x d``.

    ``prefixes[i]`` feeds the i-th of the trailing ``prefix_blocks`` blocks;
    ``None`` entries mean no prefix for that block.
    """
    cfg = backbone.cfg
    if len(prefixes) != cfg.prefix_blocks:
        raise ContractError(f"expected {cfg.prefix_blocks} prefix pairs, got {len(prefixes)}")
    h = embed_input(backbone, x)
    first = cfg.num_blocks - cfg.prefix_blocks
    for i, block in enumerate(backbone.blocks):
        h = block_forward(block, h, prefixes[i - first] if i >= first else None)
    h = T.layer_norm(h)
    return h[..., 0, :]
