"""Model configuration shared by all fusion variants."""

from __future__ import annotations

from dataclasses import dataclass, asdict

from ..errors import ConfigurationError

FUSION_MODES = (
    "static",
    "early",
    "middle-pairwise",
    "middle-hierarchical",
    "late",
    "first-frame-only",
)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    image_size: int = 64
    patch_size: int = 8
    d_model: int = 64
    d_backbone: int = 32
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    window_len: int = 2
    fusion: str = "middle-pairwise"
    max_seq_len: int = 64
    batch_size: int = 8
    mlp_ratio: int = 4
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError(
                f"patch size {self.patch_size} must divide image size {self.image_size}"
            )
        if self.d_model % self.heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} must be divisible by heads {self.heads}"
            )
        if self.fusion not in FUSION_MODES:
            raise ConfigurationError(f"unknown fusion mode {self.fusion!r}")
        if self.fusion == "static" and self.window_len != 1:
            raise ConfigurationError("static fusion requires window length 1")
        if self.window_len < 1:
            raise ConfigurationError("window length must be >= 1")
        if self.vocab_size < 4:
            raise ConfigurationError("vocabulary must hold coordinates plus EOS/PAD/NA")
        if self.max_seq_len < 2:
            raise ConfigurationError("max sequence length must be >= 2")

    @property
    def patches_per_axis(self) -> int:
        return self.image_size // self.patch_size

    @property
    def tokens_per_frame(self) -> int:
        """S: spatial feature tokens per frame."""
        return self.patches_per_axis**2

    @property
    def time_patch(self) -> int:
        """Temporal extent of the 3D patches used by early fusion."""
        return min(2, self.window_len)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(**d)
