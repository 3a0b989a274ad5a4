"""Encoder-decoder transformer with three video feature-fusion schemes.

Parameters live in a flat name -> ndarray dict; every forward pass wraps them
into autodiff tensors so gradients fall out of one backward() call.  The token
embedding table doubles as the output projection (weight tying): both uses
share one tensor, so their gradients accumulate into the same array.

Fusion modes:
  static             one frame, encoder memory used as-is (N must be 1)
  early              3D patch backbone fuses time before the encoder
  middle-pairwise    fold of shared cross-attention, N-1 applications
  middle-hierarchical levelled reduction over consecutive pairs, N(N-1)/2
  late               per-frame memories + 3D position embedding, concatenated
  first-frame-only   static pipeline on frame 1, trained on N-frame targets
"""

from __future__ import annotations

import math

import numpy as np

from ..autodiff import Tensor, embedding, gelu, layer_norm, logsumexp, softmax, take_along_last
from ..errors import ContractViolation
from .config import ModelConfig

NEG_INF = -1e9


# ---------------------------------------------------------------------------
# parameters


def _attn_params(names, prefix, d, rng, std):
    names[f"{prefix}.ln.g"] = np.ones(d)
    names[f"{prefix}.ln.b"] = np.zeros(d)
    for w in ("wq", "wk", "wv", "wo"):
        names[f"{prefix}.{w}"] = rng.normal(0.0, std, (d, d))
    for b in ("bq", "bk", "bv"):
        names[f"{prefix}.{b}"] = np.zeros(d)


def _mlp_params(names, prefix, d, d_ff, rng):
    names[f"{prefix}.ln.g"] = np.ones(d)
    names[f"{prefix}.ln.b"] = np.zeros(d)
    names[f"{prefix}.w1"] = rng.normal(0.0, 1.0 / math.sqrt(d), (d, d_ff))
    names[f"{prefix}.b1"] = np.zeros(d_ff)
    names[f"{prefix}.w2"] = rng.normal(0.0, 1.0 / math.sqrt(d_ff), (d_ff, d))
    names[f"{prefix}.b2"] = np.zeros(d)


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Fresh parameter dict for a config; deterministic in config.seed."""
    rng = np.random.default_rng(config.seed)
    d, db = config.d_model, config.d_backbone
    d_ff = config.mlp_ratio * d
    s = config.tokens_per_frame
    p2 = config.patch_size**2
    patch_in = p2 * (config.time_patch if config.fusion == "early" else 1)

    names: dict[str, np.ndarray] = {}
    names["backbone.w1"] = rng.normal(0.0, 1.0 / math.sqrt(patch_in), (patch_in, db))
    names["backbone.b1"] = np.zeros(db)
    names["backbone.w2"] = rng.normal(0.0, 1.0 / math.sqrt(db), (db, db))
    names["backbone.b2"] = np.zeros(db)
    names["enc_pos"] = rng.normal(0.0, 0.02, (s, db))
    names["proj.w"] = rng.normal(0.0, 1.0 / math.sqrt(db), (db, d))
    names["proj.b"] = np.zeros(d)
    for i in range(config.enc_layers):
        _attn_params(names, f"enc{i}.attn", d, rng, 1.0 / math.sqrt(d))
        _mlp_params(names, f"enc{i}.mlp", d, d_ff, rng)
    if config.fusion in ("middle-pairwise", "middle-hierarchical"):
        _attn_params(names, "fuse.attn", d, rng, 1.0 / math.sqrt(d))
    if config.fusion == "late":
        names["pos3d"] = rng.normal(0.0, 0.02, (config.window_len, s, d))
    names["dec_pos"] = rng.normal(0.0, 0.02, (config.max_seq_len, d))
    for i in range(config.dec_layers):
        _attn_params(names, f"dec{i}.self", d, rng, 1.0 / math.sqrt(d))
        _attn_params(names, f"dec{i}.cross", d, rng, 1.0 / math.sqrt(d))
        _mlp_params(names, f"dec{i}.mlp", d, d_ff, rng)
    names["embed"] = rng.normal(0.0, 0.02, (config.vocab_size, d))

    dtype = np.dtype(config.dtype)
    return {k: v.astype(dtype) for k, v in names.items()}


def param_tensors(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Wrap every parameter in a fresh graph leaf (one tape per step)."""
    return {k: Tensor(v) for k, v in params.items()}


# ---------------------------------------------------------------------------
# building blocks


def _ln(pt, prefix, x):
    return layer_norm(x, pt[f"{prefix}.ln.g"], pt[f"{prefix}.ln.b"])


def _attention(pt, prefix, q_in, kv_in, heads, mask=None):
    """Multi-head attention; the output projection carries no bias, so an
    all-zero value path contributes exactly nothing to the residual stream."""
    q = q_in @ pt[f"{prefix}.wq"] + pt[f"{prefix}.bq"]
    k = kv_in @ pt[f"{prefix}.wk"] + pt[f"{prefix}.bk"]
    v = kv_in @ pt[f"{prefix}.wv"] + pt[f"{prefix}.bv"]
    b, tq, d = q.shape
    tk = k.shape[1]
    dh = d // heads
    q = q.reshape(b, tq, heads, dh).transpose(0, 2, 1, 3)
    k = k.reshape(b, tk, heads, dh).transpose(0, 2, 3, 1)
    v = v.reshape(b, tk, heads, dh).transpose(0, 2, 1, 3)
    scores = (q @ k) * (1.0 / math.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    out = softmax(scores, axis=-1) @ v
    out = out.transpose(0, 2, 1, 3).reshape(b, tq, d)
    return out @ pt[f"{prefix}.wo"]


def _mlp(pt, prefix, x):
    h = gelu(x @ pt[f"{prefix}.w1"] + pt[f"{prefix}.b1"])
    return h @ pt[f"{prefix}.w2"] + pt[f"{prefix}.b2"]


def _encoder_block(pt, i, x, heads):
    h = _ln(pt, f"enc{i}.attn", x)
    x = x + _attention(pt, f"enc{i}.attn", h, h, heads)
    return x + _mlp(pt, f"enc{i}.mlp", _ln(pt, f"enc{i}.mlp", x))


def _decoder_block(pt, i, x, memory, heads, causal_mask):
    h = _ln(pt, f"dec{i}.self", x)
    x = x + _attention(pt, f"dec{i}.self", h, h, heads, mask=causal_mask)
    x = x + _attention(pt, f"dec{i}.cross", _ln(pt, f"dec{i}.cross", x), memory, heads)
    return x + _mlp(pt, f"dec{i}.mlp", _ln(pt, f"dec{i}.mlp", x))


def _fuse_cross(pt, acc, nxt, heads, stats):
    if stats is not None:
        stats["fusion_cross_attention"] = stats.get("fusion_cross_attention", 0) + 1
    return acc + _attention(pt, "fuse.attn", _ln(pt, "fuse.attn", acc), nxt, heads)


# ---------------------------------------------------------------------------
# forward passes


def _patchify(frames: np.ndarray, patch: int) -> np.ndarray:
    """(M, D, D) images -> (M, S, patch*patch) flattened non-overlapping patches."""
    m, d, _ = frames.shape
    pp = d // patch
    x = frames.reshape(m, pp, patch, pp, patch).transpose(0, 1, 3, 2, 4)
    return x.reshape(m, pp * pp, patch * patch)


def _check_images(images: np.ndarray, config: ModelConfig) -> np.ndarray:
    expected = (config.window_len, config.image_size, config.image_size)
    if images.ndim != 4 or images.shape[1:] != expected:
        raise ContractViolation(
            f"expected clip batch of shape (B, {expected[0]}, {expected[1]}, {expected[2]}), "
            f"got {images.shape}"
        )
    return images.astype(config.dtype, copy=False)


def backbone_forward(pt, images: np.ndarray, config: ModelConfig) -> Tensor:
    """Patch-embedding backbone.

    Returns (B*N, S, d_backbone) per-frame features for middle/late fusion,
    or (B, S, d_backbone) fused/sliced features for early, static and
    first-frame-only modes.
    """
    images = _check_images(images, config)
    b, n, d, _ = images.shape
    p = config.patch_size
    if config.fusion == "early":
        tp = config.time_patch
        steps = n - tp + 1
        pat = _patchify(images.reshape(b * n, d, d), p).reshape(b, n, config.tokens_per_frame, -1)
        stacked = np.concatenate([pat[:, t : t + steps] for t in range(tp)], axis=-1)
        x = Tensor(stacked)  # (B, steps, S, tp*p*p)
        h = gelu(x @ pt["backbone.w1"] + pt["backbone.b1"]) @ pt["backbone.w2"] + pt["backbone.b2"]
        return h.sum(axis=1) * (1.0 / steps)  # temporal mean pooling
    if config.fusion in ("static", "first-frame-only"):
        frames = images[:, 0]
    else:
        frames = images.reshape(b * n, d, d)
    x = Tensor(_patchify(frames, p))
    return gelu(x @ pt["backbone.w1"] + pt["backbone.b1"]) @ pt["backbone.w2"] + pt["backbone.b2"]


def encoder_forward(pt, features: Tensor, config: ModelConfig) -> Tensor:
    """Position embedding + projection + E pre-norm self-attention blocks."""
    x = features + pt["enc_pos"]
    x = x @ pt["proj.w"] + pt["proj.b"]
    for i in range(config.enc_layers):
        x = _encoder_block(pt, i, x, config.heads)
    return x


def fuse_middle_pairwise(pt, memory: Tensor, config: ModelConfig, stats=None) -> Tensor:
    """Left fold of shared cross-attention: N-1 applications, identity for N=1."""
    n = config.window_len
    s = config.tokens_per_frame
    x = memory.reshape(-1, n, s, config.d_model)
    acc = x[:, 0]
    for i in range(1, n):
        acc = _fuse_cross(pt, acc, x[:, i], config.heads, stats)
    return acc


def fuse_middle_hierarchical(pt, memory: Tensor, config: ModelConfig, stats=None) -> Tensor:
    """Levelled reduction: consecutive pairs per level, N(N-1)/2 applications."""
    n = config.window_len
    s = config.tokens_per_frame
    x = memory.reshape(-1, n, s, config.d_model)
    maps = [x[:, i] for i in range(n)]
    while len(maps) > 1:
        maps = [
            _fuse_cross(pt, maps[j], maps[j + 1], config.heads, stats)
            for j in range(len(maps) - 1)
        ]
    return maps[0]


def fuse_late(pt, memory: Tensor, config: ModelConfig, stats=None) -> Tensor:
    """Add the learned (frame, position) embedding and concatenate along tokens."""
    n = config.window_len
    s = config.tokens_per_frame
    x = memory.reshape(-1, n, s, config.d_model)
    x = x + pt["pos3d"]
    return x.reshape(-1, n * s, config.d_model)


def fuse_features(pt, memory: Tensor, config: ModelConfig, stats=None) -> Tensor:
    mode = config.fusion
    if mode in ("static", "early", "first-frame-only"):
        return memory
    if mode == "middle-pairwise":
        return fuse_middle_pairwise(pt, memory, config, stats)
    if mode == "middle-hierarchical":
        return fuse_middle_hierarchical(pt, memory, config, stats)
    if mode == "late":
        return fuse_late(pt, memory, config, stats)
    raise ContractViolation(f"unknown fusion mode {mode!r}")


def causal_mask(length: int, dtype) -> np.ndarray:
    """Additive mask: NEG_INF above the diagonal."""
    m = np.zeros((length, length), dtype=dtype)
    m[np.triu_indices(length, k=1)] = NEG_INF
    return m


def decoder_forward(pt, memory: Tensor, tokens: np.ndarray, config: ModelConfig) -> Tensor:
    """Causally masked decoder; logits reuse the embedding table (tied weights)."""
    tokens = np.asarray(tokens)
    if tokens.max(initial=0) >= config.vocab_size:
        raise ContractViolation("target token id outside the vocabulary")
    lt = tokens.shape[1]
    if lt > config.max_seq_len:
        raise ContractViolation(
            f"target length {lt} exceeds the model's max sequence length {config.max_seq_len}"
        )
    emb = pt["embed"]
    x = embedding(emb, tokens) + pt["dec_pos"][:lt]
    mask = causal_mask(lt, memory.data.dtype)
    for i in range(config.dec_layers):
        x = _decoder_block(pt, i, x, memory, config.heads, mask)
    return x @ emb.transpose(1, 0)


def model_forward(pt, images: np.ndarray, tokens: np.ndarray, config: ModelConfig, stats=None) -> Tensor:
    """Full pipeline: backbone, encoder, fusion, decoder."""
    feats = backbone_forward(pt, images, config)
    memory = encoder_forward(pt, feats, config)
    memory = fuse_features(pt, memory, config, stats)
    return decoder_forward(pt, memory, tokens, config)


def encode_memory(pt, images: np.ndarray, config: ModelConfig, stats=None) -> Tensor:
    """Encoder side only; reused across autoregressive decoding steps."""
    feats = backbone_forward(pt, images, config)
    memory = encoder_forward(pt, feats, config)
    return fuse_features(pt, memory, config, stats)


def sequence_loss(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted cross-entropy, normalized by the total weight.

    Zero-weight positions contribute nothing; an all-zero weight batch is an
    error rather than a silent 0/0.
    """
    weights = np.asarray(weights, dtype=logits.data.dtype)
    total = float(weights.sum())
    if total <= 0.0:
        raise ValueError("empty target: all token weights are zero")
    nll = logsumexp(logits, axis=-1) - take_along_last(logits, np.asarray(targets))
    return (nll * weights).sum() * (1.0 / total)
