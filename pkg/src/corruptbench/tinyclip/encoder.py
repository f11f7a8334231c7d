"""Small pre-norm ViT image encoder with low-rank adapters on the Q/K/V projections.

Base weights are registered as buffers, so autograd never tracks them; the
adapter factors are the only ``nn.Parameter`` objects. Each adapted
projection computes ``h @ W + b + (h @ A) @ B`` with ``A`` (d x r) drawn from
N(0, 0.02^2) and ``B`` (r x d) zero at initialization.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..datamodel import ImageBuffer
from ..seeding import make_rng, seed_from_parts
from .config import EncoderConfig

DTYPE = torch.float64
PROJECTIONS = ("q", "k", "v")
LORA_INIT_STD = 0.02


def _normal(seed: int, tag: str, shape, std: float) -> torch.Tensor:
    arr = make_rng(seed_from_parts(seed, tag)).standard_normal(shape) * std
    return torch.from_numpy(arr).to(DTYPE)


class VisualEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, seed: int = 0, lora_seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        d, p = cfg.model_dim, cfg.patch_dim
        hidden = cfg.mlp_ratio * d

        def buf(name, tensor):
            self.register_buffer(name, tensor.contiguous())

        buf("patch_w", _normal(seed, "patch_w", (p, d), 1 / math.sqrt(p)))
        if cfg.patch_bias:
            buf("patch_b", torch.zeros(d, dtype=DTYPE))
        buf("cls", _normal(seed, "cls", (d,), 1.0))
        buf("pos", _normal(seed, "pos", (cfg.num_patches + 1, d), 0.5))
        for i in range(cfg.num_layers):
            buf(f"l{i}_ln1_g", torch.ones(d, dtype=DTYPE))
            buf(f"l{i}_ln1_b", torch.zeros(d, dtype=DTYPE))
            for name in (*PROJECTIONS, "o"):
                buf(f"l{i}_{name}_w", _normal(seed, f"l{i}_{name}_w", (d, d), 1 / math.sqrt(d)))
                buf(f"l{i}_{name}_b", torch.zeros(d, dtype=DTYPE))
            buf(f"l{i}_ln2_g", torch.ones(d, dtype=DTYPE))
            buf(f"l{i}_ln2_b", torch.zeros(d, dtype=DTYPE))
            buf(f"l{i}_fc1_w", _normal(seed, f"l{i}_fc1_w", (d, hidden), 1 / math.sqrt(d)))
            buf(f"l{i}_fc1_b", torch.zeros(hidden, dtype=DTYPE))
            buf(f"l{i}_fc2_w", _normal(seed, f"l{i}_fc2_w", (hidden, d), 1 / math.sqrt(hidden)))
            buf(f"l{i}_fc2_b", torch.zeros(d, dtype=DTYPE))
        buf("ln_post_g", torch.ones(d, dtype=DTYPE))
        buf("ln_post_b", torch.zeros(d, dtype=DTYPE))
        buf("proj", _normal(seed, "proj", (d, cfg.embed_dim), 1 / math.sqrt(d)))

        self.lora = nn.ParameterDict()
        self.reset_adapters(seed if lora_seed is None else lora_seed)

    def reset_adapters(self, seed: int) -> None:
        """Fresh adapters: A ~ N(0, 0.02^2), B = 0."""
        r, d = self.cfg.lora_rank, self.cfg.model_dim
        self.lora = nn.ParameterDict()
        if r == 0:
            return
        for i in range(self.cfg.num_layers):
            for name in PROJECTIONS:
                self.lora[f"l{i}_{name}_A"] = nn.Parameter(_normal(seed, f"lora_l{i}_{name}_A", (d, r), LORA_INIT_STD))
                self.lora[f"l{i}_{name}_B"] = nn.Parameter(torch.zeros(r, d, dtype=DTYPE))

    def base_state(self) -> dict[str, torch.Tensor]:
        return dict(self.named_buffers())

    def adapter_state(self) -> dict[str, torch.Tensor]:
        return {k: v.detach() for k, v in self.lora.items()}

    def base_checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.base_state().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        b = x.shape[0]
        p, g, c = self.cfg.patch_size, self.cfg.image_size // self.cfg.patch_size, self.cfg.channels
        x = x.reshape(b, g, p, g, p, c).permute(0, 1, 3, 2, 4, 5)
        return x.reshape(b, g * g, p * p * c)

    def _project(self, h, i, name, use_adapters):
        out = h @ getattr(self, f"l{i}_{name}_w") + getattr(self, f"l{i}_{name}_b")
        if use_adapters and self.cfg.lora_rank > 0:
            out = out + (h @ self.lora[f"l{i}_{name}_A"]) @ self.lora[f"l{i}_{name}_B"]
        return out

    def _attention(self, h, i, use_adapters):
        b, n, d = h.shape
        nh, dh = self.cfg.num_heads, self.cfg.head_dim
        q, k, v = (
            self._project(h, i, name, use_adapters).reshape(b, n, nh, dh).transpose(1, 2)
            for name in PROJECTIONS
        )
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)
        out = (att @ v).transpose(1, 2).reshape(b, n, d)
        return out @ getattr(self, f"l{i}_o_w") + getattr(self, f"l{i}_o_b")

    def forward(self, x: torch.Tensor, use_adapters: bool = True) -> torch.Tensor:
        """``x``: (batch, H, W, C) intensities. Returns (batch, embed_dim) unit vectors."""
        cfg = self.cfg
        if tuple(x.shape[1:]) != (cfg.image_size, cfg.image_size, cfg.channels):
            raise ValueError(
                f"expected images of shape {(cfg.image_size, cfg.image_size, cfg.channels)}, got {tuple(x.shape[1:])}"
            )
        d = cfg.model_dim
        x = (x.to(DTYPE) - cfg.pixel_mean) / cfg.pixel_std
        tokens = self.patchify(x) @ self.patch_w
        if cfg.patch_bias:
            tokens = tokens + self.patch_b
        cls = self.cls.expand(x.shape[0], 1, d)
        z = torch.cat([cls, tokens], dim=1) + self.pos
        for i in range(cfg.num_layers):
            h = F.layer_norm(z, (d,), getattr(self, f"l{i}_ln1_g"), getattr(self, f"l{i}_ln1_b"))
            z = z + self._attention(h, i, use_adapters)
            h = F.layer_norm(z, (d,), getattr(self, f"l{i}_ln2_g"), getattr(self, f"l{i}_ln2_b"))
            h = F.gelu(h @ getattr(self, f"l{i}_fc1_w") + getattr(self, f"l{i}_fc1_b"))
            z = z + h @ getattr(self, f"l{i}_fc2_w") + getattr(self, f"l{i}_fc2_b")
        out = F.layer_norm(z[:, 0], (d,), self.ln_post_g, self.ln_post_b) @ self.proj
        return out / out.norm(dim=-1, keepdim=True)


def as_batch(images) -> torch.Tensor:
    """Stack ImageBuffers or an (N, H, W, C) array into a float64 tensor."""
    if isinstance(images, torch.Tensor):
        return images.to(DTYPE)
    if isinstance(images, ImageBuffer):
        images = [images]
    if isinstance(images, np.ndarray):
        arr = images
    else:
        arr = np.stack([im.pixels if isinstance(im, ImageBuffer) else np.asarray(im) for im in images])
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))


@torch.no_grad()
def encode_images(enc: VisualEncoder, images, use_adapters: bool = True, batch_size: int = 256) -> np.ndarray:
    x = as_batch(images)
    chunks = [enc(x[i : i + batch_size], use_adapters) for i in range(0, x.shape[0], batch_size)]
    return torch.cat(chunks).numpy() if chunks else np.zeros((0, enc.cfg.embed_dim))


def encode_image(enc: VisualEncoder, img: ImageBuffer, use_adapters: bool = True) -> np.ndarray:
    return encode_images(enc, [img], use_adapters)[0]


def count_lora_params(cfg: EncoderConfig) -> tuple[int, int, float]:
    """(trainable, total, trainable percent) for an encoder built from ``cfg``.

    Trainable = adapters only: 3 projections x (d*r + r*d) x layers. Total
    includes the adapters.
    """
    d, r, L = cfg.model_dim, cfg.lora_rank, cfg.num_layers
    hidden = cfg.mlp_ratio * d
    trainable = 6 * d * r * L
    per_layer = 4 * d  # two layer norms
    per_layer += 4 * (d * d + d)  # q, k, v, o
    per_layer += d * hidden + hidden + hidden * d + d  # mlp
    base = cfg.patch_dim * d + (d if cfg.patch_bias else 0)
    base += d + (cfg.num_patches + 1) * d  # cls, positions
    base += L * per_layer + 2 * d + d * cfg.embed_dim
    total = base + trainable
    return trainable, total, 100.0 * trainable / total
