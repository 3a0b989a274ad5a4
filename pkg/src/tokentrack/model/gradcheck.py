"""Central finite-difference validation of the analytic gradients."""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .network import model_forward, param_tensors, sequence_loss
from .training import Batch


def _loss_value(params, batch: Batch, config: ModelConfig) -> float:
    pt = param_tensors(params)
    logits = model_forward(pt, batch.images, batch.decoder_inputs(), config)
    return float(sequence_loss(logits, batch.targets, batch.weights).data)


def gradient_check(
    params: dict[str, np.ndarray],
    batch: Batch,
    config: ModelConfig,
    eps: float = 1e-5,
) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients to (f(t+e) - f(t-e)) / 2e in float64.

    Every parameter element is perturbed individually.  The per-element error
    is |analytic - numeric| / max(|analytic|, |numeric|, 1e-5): relative for
    meaningful gradients, absolute at 1e-5 scale for vanishing ones so finite-
    difference noise cannot dominate.  Returns (max error, per-parameter map).
    """
    params64 = {k: v.astype(np.float64) for k, v in params.items()}
    images64 = batch.images.astype(np.float64)
    batch64 = Batch(
        images=images64, targets=batch.targets, weights=batch.weights, pad_id=batch.pad_id
    )
    config64 = ModelConfig.from_dict({**config.to_dict(), "dtype": "float64"})

    pt = param_tensors(params64)
    logits = model_forward(pt, batch64.images, batch64.decoder_inputs(), config64)
    loss = sequence_loss(logits, batch64.targets, batch64.weights)
    loss.backward()
    analytic = {k: t.grad.copy() for k, t in pt.items()}

    per_param: dict[str, float] = {}
    for name, arr in params64.items():
        fd = np.zeros_like(arr)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _loss_value(params64, batch64, config64)
            flat[i] = orig - eps
            down = _loss_value(params64, batch64, config64)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * eps)
        a = analytic[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-5)
        per_param[name] = float((np.abs(a - fd) / denom).max())
    return max(per_param.values()), per_param


def count_params(params: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in params.values())
