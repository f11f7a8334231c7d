from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int = 32
    patch_size: int = 4
    channels: int = 1
    model_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: int = 2
    embed_dim: int = 32
    lora_rank: int = 16
    temperature: float = 0.07
    patch_bias: bool = True
    # inputs are standardized as (x - pixel_mean) / pixel_std before patch embedding
    pixel_mean: float = 0.5
    pixel_std: float = 0.25

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if not 0 <= self.lora_rank <= self.model_dim:
            raise ValueError("lora_rank must lie in [0, model_dim]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.pixel_std <= 0:
            raise ValueError("pixel_std must be positive")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


# ViT-B/16 visual tower shape (224px RGB, 12 layers, width 768, 512-d projection).
VIT_B16 = EncoderConfig(
    image_size=224, patch_size=16, channels=3, model_dim=768, num_layers=12,
    num_heads=12, mlp_ratio=4, embed_dim=512, lora_rank=16,
)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    percent: float = 10.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.percent <= 100:
            raise ValueError("few-shot percent must lie in (0, 100]")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")
