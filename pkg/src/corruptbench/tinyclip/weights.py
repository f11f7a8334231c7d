"""Weight container: a numpy ``.npz`` archive.

Contents:

* ``__header__`` - a 0-d unicode array holding JSON with ``format``
  (``"corruptbench-weights"``), ``version`` (1), ``encoder`` (EncoderConfig
  fields) and, when present, ``prompts`` (class names, template, modality,
  seed) so predictions can rebuild the frozen prompt table;
* ``base/<name>`` - every frozen encoder tensor (float64);
* ``lora/<name>`` - adapter factors ``l{i}_{q,k,v}_{A,B}`` (float64).
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch

from .config import EncoderConfig
from .encoder import DTYPE, VisualEncoder
from .prompts import PromptTable, prompt_embeddings

FORMAT = "corruptbench-weights"
VERSION = 1


class WeightFileError(ValueError):
    pass


def save_weights(enc: VisualEncoder, path, table: PromptTable | None = None) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    header = {"format": FORMAT, "version": VERSION, "encoder": enc.cfg.to_dict()}
    if table is not None:
        header["prompts"] = {
            "class_names": list(table.class_names),
            "template": table.template,
            "modality": table.modality,
            "seed": table.seed,
        }
    arrays = {"__header__": np.array(json.dumps(header, sort_keys=True))}
    for name, t in enc.base_state().items():
        arrays[f"base/{name}"] = t.detach().numpy()
    for name, t in enc.adapter_state().items():
        arrays[f"lora/{name}"] = t.numpy()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.stem + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    return path


def load_weights(path) -> tuple[VisualEncoder, PromptTable | None]:
    path = Path(path)
    if not path.is_file():
        raise WeightFileError(f"weight file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        try:
            header = json.loads(str(data["__header__"]))
        except KeyError:
            raise WeightFileError(f"{path}: missing __header__") from None
        if header.get("format") != FORMAT or header.get("version") != VERSION:
            raise WeightFileError(f"{path}: unsupported format {header.get('format')} v{header.get('version')}")
        cfg = EncoderConfig(**header["encoder"])
        enc = VisualEncoder(cfg, seed=0)
        expected = {f"base/{n}" for n in enc.base_state()} | {f"lora/{n}" for n in enc.lora}
        missing = sorted(expected - set(data.files))
        if missing:
            raise WeightFileError(f"{path}: missing tensors {missing[:3]}")
        with torch.no_grad():
            for name, buf in enc.base_state().items():
                arr = data[f"base/{name}"]
                if arr.shape != tuple(buf.shape):
                    raise WeightFileError(f"{path}: {name} has shape {arr.shape}, expected {tuple(buf.shape)}")
                buf.copy_(torch.from_numpy(arr).to(DTYPE))
            for name, p in enc.lora.items():
                p.copy_(torch.from_numpy(data[f"lora/{name}"]).to(DTYPE))
    table = None
    if "prompts" in header:
        pr = header["prompts"]
        table = prompt_embeddings(pr["class_names"], pr["modality"], pr["template"], pr["seed"], cfg.embed_dim)
    return enc, table
