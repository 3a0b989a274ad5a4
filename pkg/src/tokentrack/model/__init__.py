"""Miniature encoder-decoder transformer with video feature fusion."""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import FUSION_MODES, ModelConfig
from .decoding import DecodedSequence, DecodeStrategy, autoregressive_decode
from .gradcheck import count_params, gradient_check
from .network import (
    backbone_forward,
    decoder_forward,
    encode_memory,
    encoder_forward,
    fuse_features,
    fuse_late,
    fuse_middle_hierarchical,
    fuse_middle_pairwise,
    init_params,
    model_forward,
    param_tensors,
    sequence_loss,
)
from .training import AdamState, Batch, adam_update, train_step, warmup_lr

__all__ = [
    "AdamState",
    "Batch",
    "DecodeStrategy",
    "DecodedSequence",
    "FUSION_MODES",
    "ModelConfig",
    "adam_update",
    "autoregressive_decode",
    "backbone_forward",
    "count_params",
    "decoder_forward",
    "encode_memory",
    "encoder_forward",
    "fuse_features",
    "fuse_late",
    "fuse_middle_hierarchical",
    "fuse_middle_pairwise",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "model_forward",
    "param_tensors",
    "save_checkpoint",
    "sequence_loss",
    "train_step",
    "warmup_lr",
]
