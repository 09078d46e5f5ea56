"""Sequential prompt adaptation.

A pool of ``M`` prompt vectors is split evenly over ``N`` sessions; only the
current session's slice is trainable. The visible part of the pool is
appended to a prompt token ``[PT]_0`` and pushed through an ``L``-block
encoder that is shared by every session. The prompt-token rows after block
``i`` form ``[PT]_i``; the remaining rows ``[SP]_i`` only feed block ``i+1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np

from . import tensor as T
from .backbone import Block, PrefixPair, block_forward, init_block
from .errors import ConfigError, ContractError, DimensionError
from .snapshot import load_arrays, save_arrays
from .tensor import Tensor


@dataclass
class SpaConfig:
    pool_size: int = 20        # M
    num_sessions: int = 5      # N
    prompt_length: int = 4     # H
    depth: int = 2             # L
    d: int = 32
    num_heads: int = 4
    mlp_ratio: int = 2
    init_scale: float = 0.5
    seed: int = 1

    @property
    def per_session(self) -> int:
        return self.pool_size // self.num_sessions

    def validate(self) -> None:
        if self.num_sessions < 1 or self.pool_size < 1:
            raise ConfigError("pool_size and num_sessions must be positive")
        if self.pool_size % self.num_sessions:
            raise ConfigError(f"pool size {self.pool_size} is not a multiple of {self.num_sessions} sessions")
        if self.d % self.num_heads:
            raise ConfigError(f"d={self.d} is not divisible by num_heads={self.num_heads}")
        if self.prompt_length < 1 or self.depth < 1:
            raise ConfigError("prompt_length and depth must be positive")


FULL_PRESET = dict(pool_size=100, prompt_length=4, depth=2)


def learnable_slice(t: int, M: int, N: int) -> tuple[int, int]:
    """1-based inclusive range of pool rows trainable in session ``t``."""
    if not 1 <= t <= N:
        raise ContractError(f"session {t} outside 1..{N}")
    if M % N:
        raise ConfigError(f"M={M} is not a multiple of N={N}")
    per = M // N
    return per * (t - 1) + 1, per * t


def segment_encoding(segment: int, d: int) -> np.ndarray:
    j = np.arange(0, d, 2)
    angle = segment / np.power(10000.0, j / d)
    out = np.empty(d)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle[: d // 2])
    return out


def spe_encode(pos: int, segment_size: int, d: int) -> Tensor:
    """Segmented sinusoidal code: every position in a segment shares a vector."""
    if segment_size < 1:
        raise ContractError("segment_size must be >= 1")
    return Tensor(segment_encoding(pos // segment_size, d))


class PromptPool:
    def __init__(self, M: int, N: int, d: int, rng: np.random.Generator, init_scale: float = 0.5):
        if M % N:
            raise ConfigError(f"pool size {M} is not a multiple of {N} sessions")
        self.M, self.N, self.d = M, N, d
        self.prompts = Tensor(rng.uniform(-init_scale, init_scale, size=(M, d)), requires_grad=True, name="pool")
        self.learnable_mask = np.zeros(M, dtype=bool)
        self.session = 0

    @property
    def per_session(self) -> int:
        return self.M // self.N

    def set_session(self, t: int) -> None:
        lo, hi = learnable_slice(t, self.M, self.N)
        self.learnable_mask[:] = False
        self.learnable_mask[lo - 1:hi] = True
        self.session = t

    def visible(self, t: int) -> Tensor:
        """Rows ``1 .. (M/N) t``; rows outside the learnable mask enter as constants."""
        n = self.per_session * t
        mask = self.learnable_mask[:n]
        if not mask.any():
            return Tensor(self.prompts.data[:n].copy())
        lo = int(np.argmax(mask))
        hi = lo + int(mask.sum())
        parts = []
        if lo:
            parts.append(Tensor(self.prompts.data[:lo].copy()))
        parts.append(self.prompts[lo:hi])
        if hi < n:
            parts.append(Tensor(self.prompts.data[hi:n].copy()))
        return T.concat(parts, axis=0) if len(parts) > 1 else parts[0]

    def mask_grad(self) -> None:
        """Zero gradient rows of frozen prompts."""
        if self.prompts.grad is not None:
            self.prompts.grad[~self.learnable_mask] = 0.0


class PromptEncoder:
    """``L`` pre-norm transformer blocks plus the learnable prompt token."""

    def __init__(self, cfg: SpaConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.H, self.d, self.L = cfg.prompt_length, cfg.d, cfg.depth
        self.token0 = Tensor(rng.normal(0.0, 1.0, size=(self.H, self.d)), requires_grad=True, name="pt0")
        self.blocks: list[Block] = [
            init_block(rng, cfg.d, cfg.num_heads, cfg.mlp_ratio, requires_grad=True) for _ in range(cfg.depth)
        ]

    def parameters(self) -> list:
        out = [self.token0]
        for b in self.blocks:
            out.extend(b.tensors())
        return out


class PrefixProjector:
    """Two linear maps turning each ``[PT]_i`` into key and value prefixes."""

    def __init__(self, d: int, rng: np.random.Generator, bias: bool = True):
        std = 1.0 / math.sqrt(d)
        self.wk = Tensor(rng.normal(0.0, std, size=(d, d)), requires_grad=True, name="prefix_wk")
        self.wv = Tensor(rng.normal(0.0, std, size=(d, d)), requires_grad=True, name="prefix_wv")
        self.bk = Tensor(np.zeros(d), requires_grad=bias, name="prefix_bk")
        self.bv = Tensor(np.zeros(d), requires_grad=bias, name="prefix_bv")
        self.bias = bias

    def parameters(self) -> list:
        return [self.wk, self.wv] + ([self.bk, self.bv] if self.bias else [])


@dataclass
class EncodedPrompts:
    tokens: Tensor  # L x H x d

    @property
    def shape(self) -> tuple:
        return self.tokens.shape


def segment_ids(H: int, per_session: int, t: int) -> np.ndarray:
    """Prompt-token rows are segment 0; task ``k``'s pool rows are segment ``k``."""
    pool_ids = 1 + np.arange(per_session * t) // per_session
    return np.concatenate([np.zeros(H, dtype=int), pool_ids])


def build_encoder_input(pool: PromptPool, encoder: PromptEncoder, t: int) -> Tensor:
    seq = T.concat([encoder.token0, pool.visible(t)], axis=0)
    ids = segment_ids(encoder.H, pool.per_session, t)
    pe = np.stack([segment_encoding(int(s), encoder.d) for s in ids])
    return seq + pe


def encode_prompts(pool: PromptPool, encoder: PromptEncoder, t: int) -> EncodedPrompts:
    seq = build_encoder_input(pool, encoder, t)
    H = encoder.H
    tokens = []
    for block in encoder.blocks:
        seq = block_forward(block, seq)
        tokens.append(seq[:H])
    # [SP]_L is discarded: it only exists to feed a next block.
    return EncodedPrompts(T.stack(tokens, axis=0))


def to_prefixes(ep: Union[EncodedPrompts, Tensor], proj: PrefixProjector) -> list:
    tokens = ep.tokens if isinstance(ep, EncodedPrompts) else T.as_tensor(ep)
    if tokens.ndim != 3 or tokens.shape[-1] != proj.wk.shape[0]:
        raise DimensionError(f"expected L x H x {proj.wk.shape[0]} tokens, got {tokens.shape}")
    pairs = []
    for i in range(tokens.shape[0]):
        tok = tokens[i]
        key, value = tok @ proj.wk, tok @ proj.wv
        if proj.bias:
            key, value = key + proj.bk, value + proj.bv
        pairs.append(PrefixPair(key, value))
    return pairs


def save_prompt_state(prefix, pool: PromptPool, encoder: PromptEncoder, proj: PrefixProjector) -> None:
    arrays = {"pool": pool.prompts.data, "token0": encoder.token0.data}
    for i, b in enumerate(encoder.blocks):
        for name, t in zip(("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2"), b.tensors()):
            arrays[f"block{i}.{name}"] = t.data
    arrays.update({"prefix_wk": proj.wk.data, "prefix_wv": proj.wv.data, "prefix_bk": proj.bk.data, "prefix_bv": proj.bv.data})
    save_arrays(prefix, arrays, meta={"config": asdict(encoder.cfg), "session": pool.session})


def load_prompt_state(prefix, pool: PromptPool, encoder: PromptEncoder, proj: PrefixProjector) -> None:
    arrays, _ = load_arrays(prefix)
    targets = {"pool": pool.prompts, "token0": encoder.token0}
    for i, b in enumerate(encoder.blocks):
        for name, t in zip(("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2"), b.tensors()):
            targets[f"block{i}.{name}"] = t
    targets.update({"prefix_wk": proj.wk, "prefix_wv": proj.wv, "prefix_bk": proj.bk, "prefix_bv": proj.bv})
    for name, t in targets.items():
        if name not in arrays or arrays[name].shape != t.shape:
            raise DimensionError(f"snapshot entry {name} missing or mis-shaped")
        t.data[...] = arrays[name]
