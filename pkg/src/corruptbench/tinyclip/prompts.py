"""Frozen text side: one deterministic unit vector per class prompt."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..seeding import make_rng, seed_from_parts

DEFAULT_TEMPLATE = "a photo of a {class}, a {modality} image"


def render_prompt(template: str, class_name: str, modality: str) -> str:
    return template.replace("{class}", class_name).replace("{modality}", modality.replace("_", " "))


@dataclass(frozen=True)
class PromptTable:
    class_names: tuple[str, ...]
    prompts: tuple[str, ...]
    vectors: np.ndarray  # (num_classes, embed_dim), unit rows
    template: str
    modality: str
    seed: int

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def embed_dim(self) -> int:
        return self.vectors.shape[1]


def prompt_vector(prompt: str, embed_dim: int, seed: int) -> np.ndarray:
    v = make_rng(seed_from_parts(seed, "prompt", prompt)).standard_normal(embed_dim)
    return v / np.linalg.norm(v)


def prompt_embeddings(class_names, modality: str, template: str = DEFAULT_TEMPLATE,
                      seed: int = 0, embed_dim: int = 32) -> PromptTable:
    class_names = tuple(class_names)
    if not class_names:
        raise ValueError("need at least one class")
    if len(set(class_names)) != len(class_names):
        raise ValueError("duplicate class names")
    prompts = tuple(render_prompt(template, c, modality) for c in class_names)
    vectors = np.stack([prompt_vector(p, embed_dim, seed) for p in prompts])
    vectors.setflags(write=False)
    return PromptTable(class_names, prompts, vectors, template, modality, seed)


def similarity(f_v, table: PromptTable) -> np.ndarray:
    """Cosine similarity of one image embedding (or a batch of them) with every class vector."""
    f_v = np.asarray(f_v, dtype=np.float64)
    if f_v.shape[-1] != table.embed_dim:
        raise ValueError(f"embedding dim {f_v.shape[-1]} != prompt dim {table.embed_dim}")
    t = table.vectors / np.linalg.norm(table.vectors, axis=1, keepdims=True)
    f = f_v / np.linalg.norm(f_v, axis=-1, keepdims=True)
    return f @ t.T
