"""Few-shot LoRA fine-tuning and zero-shot inference."""
from __future__ import annotations

import logging
import math
from collections import defaultdict

import numpy as np
import torch

from ..datamodel import DatasetManifest, ManifestItem, load_image
from ..seeding import make_rng, seed_from_parts
from .config import TrainConfig
from .encoder import DTYPE, VisualEncoder, as_batch, encode_images
from .prompts import PromptTable, similarity

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


def finetune_loss(scores: torch.Tensor, labels, tau: float) -> torch.Tensor:
    """Mean over the batch of -log softmax(scores / tau)[label]."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    scores = torch.as_tensor(scores, dtype=DTYPE)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.numel() and (labels.min() < 0 or labels.max() >= scores.shape[1]):
        raise ValueError("label outside the class range")
    return torch.nn.functional.cross_entropy(scores / tau, labels)


def _scores(enc: VisualEncoder, x: torch.Tensor, table: PromptTable) -> torch.Tensor:
    # encoder output is unit-norm and table rows are unit-norm, so the dot product is the cosine
    return enc(x) @ torch.tensor(np.asarray(table.vectors), dtype=DTYPE).T


def batch_loss(enc: VisualEncoder, images, labels, table: PromptTable, tau: float) -> torch.Tensor:
    return finetune_loss(_scores(enc, as_batch(images), table), labels, tau)


def loss_gradients(enc: VisualEncoder, images, labels, table: PromptTable, tau: float) -> dict[str, np.ndarray]:
    """Gradients of the fine-tuning loss w.r.t. every adapter factor."""
    enc.zero_grad(set_to_none=True)
    loss = batch_loss(enc, images, labels, table, tau)
    params = list(enc.lora.values())
    grads = torch.autograd.grad(loss, params) if params else []
    return {name: g.detach().numpy().copy() for name, g in zip(enc.lora.keys(), grads)}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def few_shot_sample(manifest: DatasetManifest, percent: float, seed: int) -> list[ManifestItem]:
    """Stratified subset: per class max(1, round(percent * n_class / 100)) items, manifest order kept."""
    if not 0 < percent <= 100:
        raise ValueError("percent must lie in (0, 100]")
    by_class = defaultdict(list)
    for idx, it in enumerate(manifest.items):
        by_class[it.label].append(idx)
    empty = [manifest.class_names[c] for c in range(manifest.num_classes) if not by_class[c]]
    if empty:
        raise ValueError(f"classes without items: {empty}")
    chosen = []
    for c in range(manifest.num_classes):
        idx = np.array(by_class[c])
        k = max(1, _round_half_up(percent * len(idx) / 100.0))
        perm = make_rng(seed_from_parts(seed, "few_shot", manifest.dataset_name, c)).permutation(len(idx))
        chosen.extend(idx[perm[:k]].tolist())
    return [manifest.items[i] for i in sorted(chosen)]


def train_lora(enc: VisualEncoder, images, labels, table: PromptTable, cfg: TrainConfig):
    """Adam on the adapter factors only. Returns (enc, per-epoch mean loss)."""
    x = as_batch(images)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    tau = enc.cfg.temperature
    params = list(enc.lora.parameters())
    trace: list[float] = []
    if cfg.epochs == 0 or not params:
        return enc, trace
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = torch.from_numpy(make_rng(seed_from_parts(cfg.seed, "batch_order", epoch)).permutation(n))
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad(set_to_none=True)
            loss = finetune_loss(_scores(enc, x[idx], table), y[idx], tau)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, loss.item())
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        trace.append(total / n)
        log.debug("epoch %d loss %.5f", epoch, trace[-1])
    return enc, trace


def train_few_shot(enc: VisualEncoder, manifest: DatasetManifest, table: PromptTable, cfg: TrainConfig):
    items = few_shot_sample(manifest, cfg.percent, cfg.seed)
    images = [load_image(manifest.image_path(it)) for it in items]
    return train_lora(enc, images, [it.label for it in items], table, cfg)


def zero_shot_scores(enc: VisualEncoder, images, table: PromptTable, use_adapters: bool = True) -> np.ndarray:
    return similarity(encode_images(enc, images, use_adapters), table)


def zero_shot_predict_batch(enc: VisualEncoder, images, table: PromptTable, use_adapters: bool = True) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the lowest label id
    return np.argmax(zero_shot_scores(enc, images, table, use_adapters), axis=1)


def zero_shot_predict(enc: VisualEncoder, img, table: PromptTable, use_adapters: bool = True) -> int:
    return int(zero_shot_predict_batch(enc, [img], table, use_adapters)[0])
