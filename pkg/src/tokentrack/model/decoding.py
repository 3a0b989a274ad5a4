"""Autoregressive token emission: greedy by default, nucleus sampling optional."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor
from .config import ModelConfig
from .network import causal_mask, embedding, encode_memory, _decoder_block


@dataclass(frozen=True)
class DecodeStrategy:
    kind: str = "greedy"  # "greedy" or "nucleus"
    top_p: float = 0.9
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("greedy", "nucleus"):
            raise ValueError(f"unknown decoding strategy {self.kind!r}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


@dataclass
class DecodedSequence:
    tokens: list[int]  # emitted tokens, EOS included when reached
    probs: list[float]  # softmax probability of each emitted token
    truncated: bool  # hit the length limit without emitting EOS


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _nucleus_pick(probs: np.ndarray, top_p: float, temperature: float, rng) -> int:
    scaled = probs ** (1.0 / temperature)
    scaled /= scaled.sum()
    order = np.argsort(-scaled)
    csum = np.cumsum(scaled[order])
    keep = int(np.searchsorted(csum, top_p) + 1)
    kept = order[:keep]
    kept_p = scaled[kept] / scaled[kept].sum()
    return int(rng.choice(kept, p=kept_p))


def autoregressive_decode(
    params: dict[str, np.ndarray],
    images: np.ndarray,
    config: ModelConfig,
    eos_id: int,
    pad_id: int,
    strategy: DecodeStrategy = DecodeStrategy(),
    max_len: int | None = None,
    stats=None,
) -> list[DecodedSequence]:
    """Decode a batch of clips token by token.

    The encoder memory is computed once; the decoder is re-run over the
    growing prefix each step.  Finished sequences are fed PAD until the whole
    batch stops, and their extra emissions are discarded.
    """
    from .network import param_tensors

    limit = min(max_len or config.max_seq_len, config.max_seq_len)
    pt = param_tensors(params)
    memory = encode_memory(pt, images, config, stats)
    batch = images.shape[0]
    rng = np.random.default_rng(strategy.seed)

    emitted = [[] for _ in range(batch)]
    probs = [[] for _ in range(batch)]
    done = np.zeros(batch, dtype=bool)
    inputs = np.full((batch, 1), pad_id, dtype=np.int64)

    for _ in range(limit):
        logits = _decode_logits(pt, memory, inputs, config)
        step_probs = _softmax_rows(logits[:, -1, :])
        for row in range(batch):
            if done[row]:
                continue
            p = step_probs[row]
            if strategy.kind == "greedy":
                tok = int(np.argmax(p))
            else:
                tok = _nucleus_pick(p, strategy.top_p, strategy.temperature, rng)
            emitted[row].append(tok)
            probs[row].append(float(p[tok]))
            if tok == eos_id:
                done[row] = True
        if done.all():
            break
        nxt = np.array(
            [seq[-1] if not d else pad_id for seq, d in zip(emitted, done)], dtype=np.int64
        )
        inputs = np.concatenate([inputs, nxt[:, None]], axis=1)

    return [
        DecodedSequence(tokens=emitted[i], probs=probs[i], truncated=not done[i])
        for i in range(batch)
    ]


def _decode_logits(pt, memory: Tensor, tokens: np.ndarray, config: ModelConfig) -> np.ndarray:
    lt = tokens.shape[1]
    emb = pt["embed"]
    x = embedding(emb, tokens) + pt["dec_pos"][:lt]
    mask = causal_mask(lt, memory.data.dtype)
    for i in range(config.dec_layers):
        x = _decoder_block(pt, i, x, memory, config.heads, mask)
    return (x @ emb.transpose(1, 0)).data
