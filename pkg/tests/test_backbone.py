import math

import numpy as np
import pytest

from seqprompt import tensor as T
from seqprompt.backbone import (
    Backbone,
    BackboneConfig,
    PrefixPair,
    embed_input,
    forward_features,
    init_backbone,
    init_block,
    prefix_attention,
)
from seqprompt.errors import ConfigError, ContractError, DimensionError
from seqprompt.tensor import Tensor


def naive_attention(h, wq, wk, wv, wo, heads, pk=None, pv=None):
    """Loop-based reference: explicit concatenated K/V, per-head, per-query."""
    s, d = h.shape
    dh = d // heads
    q, k, v = h @ wq, h @ wk, h @ wv
    if pk is not None:
        k = np.vstack([pk, k])
        v = np.vstack([pv, v])
    out = np.zeros((s, d))
    for head in range(heads):
        cols = slice(head * dh, (head + 1) * dh)
        for i in range(s):
            scores = np.array([q[i, cols] @ k[j, cols] / math.sqrt(dh) for j in range(k.shape[0])])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            out[i, cols] = sum(w[j] * v[j, cols] for j in range(k.shape[0]))
    return out @ wo


def random_attention(rng, d, heads):
    return init_block(rng, d, heads, 2, requires_grad=False).attn


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        init_backbone(BackboneConfig(d=33, num_heads=4))


def test_config_rejects_too_many_prefix_blocks():
    with pytest.raises(ConfigError):
        init_backbone(BackboneConfig(num_blocks=2, prefix_blocks=3))


def test_same_seed_same_weights():
    a, b = init_backbone(BackboneConfig(seed=5)), init_backbone(BackboneConfig(seed=5))
    for x, y in zip(a.tensors(), b.tensors()):
        assert x.data.tobytes() == y.data.tobytes()


def test_different_seed_different_weights():
    a, b = init_backbone(BackboneConfig(seed=5)), init_backbone(BackboneConfig(seed=6))
    assert any(x.data.tobytes() != y.data.tobytes() for x, y in zip(a.tensors(), b.tensors()))


def test_backbone_weights_are_frozen():
    assert not any(t.requires_grad for t in init_backbone(BackboneConfig()).tensors())


def test_embed_zero_input():
    bb = init_backbone(BackboneConfig())
    tokens = embed_input(bb, np.zeros(bb.cfg.input_dim)).data
    assert tokens.shape == (bb.cfg.seq_len, bb.cfg.d)
    np.testing.assert_array_equal(tokens[0], bb.cls_token.data[0])
    np.testing.assert_array_equal(tokens[1:], bb.b_in.data)


def test_embed_distinct_inputs(rng):
    bb = init_backbone(BackboneConfig())
    a = embed_input(bb, rng.normal(size=bb.cfg.input_dim)).data
    b = embed_input(bb, rng.normal(size=bb.cfg.input_dim)).data
    assert not np.array_equal(a, b)


def test_embed_batch_matches_single(rng):
    bb = init_backbone(BackboneConfig())
    x = rng.normal(size=(3, bb.cfg.input_dim))
    batch = embed_input(bb, x).data
    assert batch.shape == (3, bb.cfg.seq_len, bb.cfg.d)
    np.testing.assert_allclose(batch[1], embed_input(bb, x[1]).data, atol=1e-14)


def test_embed_length_mismatch():
    bb = init_backbone(BackboneConfig())
    with pytest.raises(DimensionError):
        embed_input(bb, np.zeros(bb.cfg.input_dim + 1))


def test_prefix_attention_without_prefix_matches_plain(rng):
    attn = random_attention(rng, 16, 4)
    h = rng.normal(size=(5, 16))
    expected = naive_attention(h, *(t.data for t in attn.tensors()), 4)
    np.testing.assert_allclose(prefix_attention(attn, Tensor(h)).data, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_prefix_attention_matches_naive_concatenation(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.choice([1, 2, 4]))
    d = heads * int(rng.integers(1, 9))
    s, H = int(rng.integers(1, 9)), int(rng.integers(1, 5))
    attn = random_attention(rng, d, heads)
    h, pk, pv = rng.normal(size=(s, d)), rng.normal(size=(H, d)), rng.normal(size=(H, d))
    got = prefix_attention(attn, Tensor(h), PrefixPair(Tensor(pk), Tensor(pv))).data
    expected = naive_attention(h, *(t.data for t in attn.tensors()), heads, pk, pv)
    assert np.abs(got - expected).max() < 1e-10


def test_zero_value_prefix_reweights_plain_attention(rng):
    # With p_V = 0 the output is plain attention with each query's weights
    # rescaled by the mass left on the real tokens.
    d, heads, s, H = 8, 1, 4, 3
    attn = random_attention(rng, d, heads)
    wq, wk, wv, wo = (t.data for t in attn.tensors())
    h, pk = rng.normal(size=(s, d)), rng.normal(size=(H, d))
    got = prefix_attention(attn, Tensor(h), PrefixPair(Tensor(pk), Tensor(np.zeros((H, d))))).data
    q, k, v = h @ wq, h @ wk, h @ wv
    own = np.exp(q @ k.T / math.sqrt(d))
    pre = np.exp(q @ pk.T / math.sqrt(d))
    mass = own.sum(1) / (own.sum(1) + pre.sum(1))
    plain = (own / own.sum(1, keepdims=True)) @ v
    np.testing.assert_allclose(got, (mass[:, None] * plain) @ wo, atol=1e-12)


def test_prefix_attention_width_mismatch(rng):
    attn = random_attention(rng, 8, 2)
    with pytest.raises(DimensionError):
        prefix_attention(attn, Tensor(rng.normal(size=(3, 8))), PrefixPair(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4)))))


def test_prefix_attention_batched_matches_rows(rng):
    attn = random_attention(rng, 8, 2)
    h = rng.normal(size=(3, 5, 8))
    pair = PrefixPair(Tensor(rng.normal(size=(2, 8))), Tensor(rng.normal(size=(2, 8))))
    batched = prefix_attention(attn, Tensor(h), pair).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], prefix_attention(attn, Tensor(h[b]), pair).data, atol=1e-13)


def _pairs(rng, n, H, d, requires_grad=False):
    return [
        PrefixPair(Tensor(rng.normal(size=(H, d)), requires_grad=requires_grad),
                   Tensor(rng.normal(size=(H, d)), requires_grad=requires_grad))
        for _ in range(n)
    ]


def test_forward_features_plain_and_deterministic(rng):
    bb = init_backbone(BackboneConfig())
    x = rng.normal(size=bb.cfg.input_dim)
    a = forward_features(bb, x, [None, None]).data
    b = forward_features(bb, x, [None, None]).data
    assert a.shape == (bb.cfg.d,)
    assert a.tobytes() == b.tobytes()


def test_forward_features_block_binding_matters(rng):
    bb = init_backbone(BackboneConfig())
    x = rng.normal(size=bb.cfg.input_dim)
    pairs = _pairs(rng, 2, 4, bb.cfg.d)
    a = forward_features(bb, x, pairs).data
    b = forward_features(bb, x, pairs[::-1]).data
    assert np.abs(a - b).max() > 1e-6


def test_forward_features_prefix_count():
    bb = init_backbone(BackboneConfig())
    with pytest.raises(ContractError):
        forward_features(bb, np.zeros(bb.cfg.input_dim), [None])


def test_gradients_reach_prefixes_not_backbone(rng):
    bb = init_backbone(BackboneConfig())
    pairs = _pairs(rng, 2, 4, bb.cfg.d, requires_grad=True)
    feats = forward_features(bb, rng.normal(size=(4, bb.cfg.input_dim)), pairs)
    T.backward(T.sum_(T.mul(feats, Tensor(rng.normal(size=feats.shape)))))
    for p in pairs:
        assert np.abs(p.key.grad).max() > 0 and np.abs(p.value.grad).max() > 0
    assert all(t.grad is None for t in bb.tensors())


def test_snapshot_round_trip(tmp_path):
    bb = init_backbone(BackboneConfig(seed=3))
    bb.save(tmp_path / "bb")
    loaded = Backbone.load(tmp_path / "bb")
    for a, b in zip(bb.tensors(), loaded.tensors()):
        assert a.data.tobytes() == b.data.tobytes()
