"""Adam optimization and the single training step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .config import ModelConfig
from .network import model_forward, param_tensors, sequence_loss


@dataclass
class Batch:
    """One training batch: clips plus teacher-forcing targets."""

    images: np.ndarray  # (B, N, D, D)
    targets: np.ndarray  # (B, Lt) int token ids
    weights: np.ndarray  # (B, Lt), PAD positions carry 0
    pad_id: int

    def decoder_inputs(self) -> np.ndarray:
        """Targets shifted right with a BOS-role PAD in front."""
        inputs = np.empty_like(self.targets)
        inputs[:, 0] = self.pad_id
        inputs[:, 1:] = self.targets[:, :-1]
        return inputs


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @staticmethod
    def for_params(params: dict[str, np.ndarray]) -> "AdamState":
        return AdamState(
            step=0,
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
        )


def adam_update(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam step with bias correction."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


def warmup_lr(step: int, base_lr: float, total_steps: int, warmup_frac: float = 0.05) -> float:
    """Linear warmup over the first warmup_frac of training, constant after."""
    warmup = max(1, math.ceil(warmup_frac * total_steps))
    return base_lr * min(1.0, (step + 1) / warmup)


def train_step(
    batch: Batch,
    params: dict[str, np.ndarray],
    opt_state: AdamState,
    config: ModelConfig,
    lr: float,
) -> float:
    """One forward/backward/update pass; returns the loss value.

    Deterministic given the parameter values and batch contents.  A non-finite
    loss aborts with a NumericError carrying a per-parameter diagnostic.
    """
    pt = param_tensors(params)
    logits = model_forward(pt, batch.images, batch.decoder_inputs(), config)
    loss = sequence_loss(logits, batch.targets, batch.weights)
    value = float(loss.data)
    if not np.isfinite(value):
        norms = {k: float(np.abs(v).max()) for k, v in params.items()}
        worst = max(norms, key=norms.get)
        raise NumericError(
            f"non-finite loss {value} at optimizer step {opt_state.step}; "
            f"largest parameter magnitude {norms[worst]:.3e} in {worst!r}"
        )
    loss.backward()
    grads = {k: t.grad for k, t in pt.items()}
    adam_update(params, grads, opt_state, lr)
    return value
