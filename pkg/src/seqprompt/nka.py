"""Negative-feedback mixing of old and new prompt tokens.

Each training step compares the current logits on old classes with the
logits the previous session's prompts produce. A large gap (forgetting)
pushes the mixing weight ``alpha`` up, which pulls the prompts fed to the
backbone back towards the stored ones; a small gap lets ``alpha`` relax and
the new prompts take over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .backbone import Backbone, forward_features
from .errors import ConfigError, ContractError, DimensionError
from .head import AnalyticHead
from .spa import PrefixProjector, to_prefixes
from .tensor import Tensor


@dataclass
class AlphaState:
    alpha0: float = 0.99
    gamma: float = 0.9
    lam: float = 12500.0
    theta_max: float = 0.999
    theta_min: float = 0.7
    sigmoid_center: float = 100.0
    sigmoid_scale: float = 25.0
    alpha: float = field(default=None)
    tau: int = 0

    def __post_init__(self):
        if not 0.0 < self.theta_min < self.theta_max < 1.0:
            raise ConfigError("need 0 < theta_min < theta_max < 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.sigmoid_scale <= 0:
            raise ConfigError("sigmoid_scale must be positive")
        if self.alpha is None:
            self.alpha = self.alpha0

    @property
    def bounds(self) -> tuple[float, float]:
        return min(self.alpha0, self.theta_min), max(self.alpha0, self.theta_max)

    def reset(self) -> None:
        self.alpha = self.alpha0
        self.tau = 0


def compute_mae(l_t, l_prev, lam: float, K: int, t: int) -> float:
    """MAE between the old-class part of ``l_t`` and ``l_prev``, both scaled by ``lam``.

    Accepts single logit vectors or ``B x classes`` batches (averaged over
    everything).
    """
    if t < 2:
        raise ContractError("no previous session before t = 2")
    l_t = np.asarray(l_t.data if isinstance(l_t, Tensor) else l_t, dtype=np.float64)
    l_prev = np.asarray(l_prev.data if isinstance(l_prev, Tensor) else l_prev, dtype=np.float64)
    n_old = K * (t - 1)
    if l_prev.shape[-1] != n_old or l_t.shape[-1] < n_old:
        raise DimensionError(f"need {n_old} previous logits and at least as many current ones")
    return float(np.mean(np.abs(l_t[..., :n_old] * lam - l_prev * lam)))


def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def bounded_sigmoid(state: AlphaState, mae: float) -> float:
    if mae < 0:
        raise ContractError("mae must be non-negative")
    s = _logistic((mae - state.sigmoid_center) / state.sigmoid_scale)
    return state.theta_min + (state.theta_max - state.theta_min) * s


def update_alpha(state: AlphaState, mae: float) -> float:
    state.alpha = state.gamma * state.alpha + (1.0 - state.gamma) * bounded_sigmoid(state, mae)
    state.tau += 1
    return state.alpha


@dataclass
class PromptMemory:
    prev_tokens: Optional[Tensor] = None  # L x H x d, from the last session
    mem_tokens: Optional[Tensor] = None

    def __post_init__(self):
        if self.prev_tokens is not None and self.mem_tokens is not None:
            if self.prev_tokens.shape != self.mem_tokens.shape:
                raise DimensionError("prev and mem token stacks differ in shape")


def mix_prompts(mem: PromptMemory, curr_tokens: Tensor, alpha: float) -> Tensor:
    """``alpha * prev + (1 - alpha) * curr``; ``prev`` is a constant.

    Stores the (taped) result in ``mem.mem_tokens`` and returns it.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha={alpha} outside [0, 1]")
    if mem.prev_tokens is None:
        raise ContractError("no previous tokens to mix with")
    if mem.prev_tokens.shape != curr_tokens.shape:
        raise DimensionError(f"token stacks differ: {mem.prev_tokens.shape} vs {curr_tokens.shape}")
    prev = Tensor(mem.prev_tokens.data)
    mixed = T.scale(prev, alpha) + T.scale(curr_tokens, 1.0 - alpha)
    mem.mem_tokens = mixed
    return mixed


@dataclass
class DualOutput:
    l_prev: np.ndarray   # B x K(t-1), untaped
    l_t: Tensor          # B x C_seen
    features: Tensor     # B x d, on the tape
    mem_tokens: Tensor


def previous_logits(backbone: Backbone, head: AnalyticHead, x, mem: PromptMemory, proj: PrefixProjector) -> np.ndarray:
    with T.no_grad():
        feats = forward_features(backbone, x, to_prefixes(mem.prev_tokens, proj))
    return head.logits(feats.data)[..., : head.range_start]


def dual_forward(
    backbone: Backbone,
    head: AnalyticHead,
    x,
    mem: PromptMemory,
    curr_tokens: Tensor,
    alpha: float,
    proj: PrefixProjector,
    l_prev: Optional[np.ndarray] = None,
) -> DualOutput:
    """Logits under the stored prompts and under the mixed prompts.

    ``l_prev`` may be passed in when already known for ``x``: it depends
    only on frozen state during a session.
    """
    if mem.prev_tokens is None:
        raise ContractError("dual_forward needs a committed previous session")
    if l_prev is None:
        l_prev = previous_logits(backbone, head, x, mem, proj)
    mixed = mix_prompts(mem, curr_tokens, alpha)
    feats = forward_features(backbone, x, to_prefixes(mixed, proj))
    return DualOutput(l_prev=l_prev, l_t=head.logits(feats), features=feats, mem_tokens=mixed)


def session_commit(mem: PromptMemory, state: Optional[AlphaState] = None) -> None:
    """Freeze this session's mixed tokens as the next session's reference."""
    if mem.mem_tokens is not None:
        mem.prev_tokens = Tensor(mem.mem_tokens.data.copy())
    if state is not None:
        state.reset()
