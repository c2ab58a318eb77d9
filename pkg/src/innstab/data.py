"""Synthetic corpora for the two reconstruction tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn, operators
from .config import ExperimentConfig, derive_seed
from .errors import ConfigError

SPLITS = ("train", "val", "test")


@dataclass
class Split:
    clean: np.ndarray  # (N, H, W) targets x
    inputs: np.ndarray  # (N, H, W) network inputs x_tilde on [0, 1]
    ids: np.ndarray
    image_seeds: np.ndarray
    noise_seeds: np.ndarray

    def __len__(self):
        return len(self.ids)

    def batch(self, idx):
        return self.inputs[idx][..., None], self.clean[idx][..., None]


def geometry(cfg: ExperimentConfig) -> operators.RadonGeometry:
    wedge = cfg.geometry.missing_wedge
    return operators.RadonGeometry.create(cfg.data.image_size, cfg.geometry.num_angles,
                                          None if wedge is None else tuple(wedge))


def ct_input(images, cfg: ExperimentConfig) -> np.ndarray:
    """Limited-angle FBP of noiseless projections, rescaled to [0, 1]."""
    geom = geometry(cfg)
    rec = operators.fbp(operators.radon(images, geom), geom)
    return np.clip((rec - cfg.data.fbp_offset) / cfg.data.fbp_scale, 0.0, 1.0)


def denoise_input(image, cfg: ExperimentConfig, noise_seed: int) -> np.ndarray:
    noisy = operators.add_noise(image, operators.NoiseModel(cfg.data.noise_sigma, noise_seed))
    return np.clip(noisy, 0.0, 1.0)


def make_inputs(images, cfg: ExperimentConfig, noise_seeds) -> np.ndarray:
    if cfg.task == "ct":
        return ct_input(images, cfg)
    return np.stack([denoise_input(img, cfg, int(s)) for img, s in zip(images, noise_seeds)])


def split_ranges(cfg: ExperimentConfig) -> dict[str, range]:
    d = cfg.data
    a, b = d.n_train, d.n_train + d.n_val
    return {"train": range(0, a), "val": range(a, b), "test": range(b, b + d.n_test)}


def generate_split(cfg: ExperimentConfig, split: str) -> Split:
    """Images are indexed by a global sample id; splits are contiguous id
    blocks so no image appears in two splits."""
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    ids = np.array(split_ranges(cfg)[split])
    kind = "texture" if cfg.task == "denoise" else "random_ellipses"
    image_seeds = np.array([derive_seed(cfg.data.seed, cfg.task, "image", int(i)) for i in ids], dtype=np.uint64)
    noise_seeds = np.array([derive_seed(cfg.data.seed, cfg.task, "noise", int(i)) for i in ids], dtype=np.uint64)
    size = cfg.data.image_size
    clean = np.stack([operators.make_phantom(kind, size, int(s)) for s in image_seeds]) if len(ids) else \
        np.zeros((0, size, size))
    inputs = make_inputs(clean, cfg, noise_seeds) if len(ids) else clean.copy()
    return Split(clean, inputs, ids, image_seeds, noise_seeds)


def generate_corpus(cfg: ExperimentConfig) -> dict[str, Split]:
    return {s: generate_split(cfg, s) for s in SPLITS}


def save_corpus(corpus: dict[str, Split], cfg: ExperimentConfig, out_dir) -> Path:
    """One tensor file per split plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = "texture" if cfg.task == "denoise" else "random_ellipses"
    entries = []
    for name, split in corpus.items():
        fname = f"{name}.tensors"
        nn.save_tensors(out / fname, {"data": {"clean": split.clean, "input": split.inputs}},
                        {"kind": "corpus", "task": cfg.task, "split": name})
        for row, (i, s, ns) in enumerate(zip(split.ids, split.image_seeds, split.noise_seeds)):
            entries.append({"id": int(i), "file": fname, "index": row, "seed": int(s), "noise_seed": int(ns),
                            "split": name, "kind": kind})
    manifest = {"task": cfg.task, "config": cfg.to_dict(), "samples": entries}
    if cfg.task == "ct":
        manifest["input_scaling"] = {"offset": cfg.data.fbp_offset, "scale": cfg.data.fbp_scale}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_corpus(out_dir) -> dict[str, Split]:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    corpus = {}
    for name in SPLITS:
        _, sections = nn.load_tensors(out / f"{name}.tensors")
        rows = [e for e in manifest["samples"] if e["split"] == name]
        corpus[name] = Split(
            sections["data"]["clean"], sections["data"]["input"],
            np.array([e["id"] for e in rows]),
            np.array([e["seed"] for e in rows], dtype=np.uint64),
            np.array([e["noise_seed"] for e in rows], dtype=np.uint64),
        )
    return corpus
