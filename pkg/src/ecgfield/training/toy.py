"""End-to-end toy run: manifest -> images/tokens -> training -> retrieval report."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..composer import ComposeConfig
from ..retrieval import DEFAULT_K_TEST, DEFAULT_KS, EmbeddingIndex, evaluate
from ..signal_io import DatasetManifest, load_manifest
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DEFAULT_IMAGE_SIZE, DEFAULT_MAX_LEN, DEFAULT_WINDOW_S, ImageNorm, load_pairs, toy_compose_config
from .loop import PairSet, TrainConfig, TrainState, embed_pairs, loss_summary, start_state, train
from .model import PARAM_NAMES, ModelConfig
from .momentum import MomentumState
from .text import Tokenizer

log = logging.getLogger(__name__)


@dataclass
class ToyModel:
    """Everything needed to embed new records: weights, vocabulary, image recipe."""
    params: dict
    model_cfg: ModelConfig
    tokenizer: Tokenizer
    norm: ImageNorm
    compose_cfg: ComposeConfig
    max_len: int = DEFAULT_MAX_LEN
    train_cfg: Optional[TrainConfig] = None
    momentum: Optional[MomentumState] = None
    step: int = 0

    def embed(self, pairs: PairSet):
        return embed_pairs(self.params, self.norm.apply_pairs(pairs), self.model_cfg.patch_size)

    def load_pairs(self, entries) -> PairSet:
        return load_pairs(entries, self.tokenizer, self.compose_cfg, max_len=self.max_len)

    def index(self, pairs: PairSet) -> EmbeddingIndex:
        img, txt = self.embed(pairs)
        return EmbeddingIndex.from_arrays(pairs.ids, img, txt)

    # --- persistence ---------------------------------------------------------------

    def tensors(self) -> dict:
        out = {f"param/{k}": v for k, v in self.params.items()}
        out["norm/mean"] = self.norm.mean
        out["norm/std"] = self.norm.std
        if self.momentum is not None:
            out.update({f"momentum/{k}": v for k, v in self.momentum.params.items()})
            out["queue/image"] = self.momentum.image_queue
            out["queue/text"] = self.momentum.text_queue
        return out

    def config(self) -> dict:
        return {
            "model": self.model_cfg.to_dict(),
            "train": self.train_cfg.to_dict() if self.train_cfg else None,
            "compose": asdict(self.compose_cfg),
            "vocab": self.tokenizer.itos,
            "max_len": self.max_len,
            "step": self.step,
            "momentum": ({"capacity": self.momentum.capacity, "mu": self.momentum.mu}
                         if self.momentum is not None else None),
        }

    def save(self, path) -> Path:
        return save_checkpoint(path, self.tensors(), self.config())

    @classmethod
    def load(cls, path) -> "ToyModel":
        tensors, cfg = load_checkpoint(path)
        model_cfg = ModelConfig(**cfg["model"])
        params = {k: tensors[f"param/{k}"] for k in PARAM_NAMES}
        comp = dict(cfg["compose"])
        comp["methods"] = tuple(comp["methods"])
        tok = Tokenizer(w for w in cfg["vocab"])
        momentum = None
        if cfg.get("momentum"):
            momentum = MomentumState({k: tensors[f"momentum/{k}"] for k in PARAM_NAMES},
                                     tensors["queue/image"], tensors["queue/text"],
                                     cfg["momentum"]["capacity"], cfg["momentum"]["mu"])
        train_cfg = TrainConfig(**cfg["train"]) if cfg.get("train") else None
        return cls(params, model_cfg, tok, ImageNorm(tensors["norm/mean"], tensors["norm/std"]),
                   ComposeConfig(**comp), cfg["max_len"], train_cfg, momentum, cfg["step"])


@dataclass
class ToyRun:
    model: ToyModel
    history: list
    reports: list
    loss: dict
    seconds: dict = field(default_factory=dict)
    index: Optional[EmbeddingIndex] = None

    def summary(self) -> dict:
        return {
            "loss_initial": self.loss["initial"],
            "loss_final": self.loss["final"],
            "reports": [r.to_dict() for r in self.reports],
            "rsum": self.reports[0].rsum if self.reports else None,
            "seconds": self.seconds,
        }


def vocabulary(manifest: DatasetManifest) -> Tokenizer:
    texts = [Path(e.report_path).read_text(encoding="utf-8") for e in manifest.entries if e.report_path]
    return Tokenizer.from_texts(texts)


def run_toy(manifest_path, train_cfg: TrainConfig = TrainConfig(), config_name: str = "all_grid_finetune",
            image_size: int = DEFAULT_IMAGE_SIZE, patch_size: int = 8, hidden: int = 64,
            embed_dim: int = 32, window_s: Optional[float] = DEFAULT_WINDOW_S,
            max_len: int = DEFAULT_MAX_LEN, ks=DEFAULT_KS, k_test: int = DEFAULT_K_TEST,
            log_path: Optional[Path] = None) -> ToyRun:
    """Train on the manifest's train split and evaluate on its test split."""
    manifest = load_manifest(manifest_path)
    tok = vocabulary(manifest)
    compose_cfg = toy_compose_config(config_name, image_size, window_s)
    t0 = time.perf_counter()
    train_raw = load_pairs(manifest.split("train"), tok, compose_cfg, max_len=max_len)
    test_raw = load_pairs(manifest.split("test"), tok, compose_cfg, max_len=max_len)
    t_data = time.perf_counter() - t0
    if len(train_raw) < 2:
        raise ValueError("the train split needs at least two records")
    channels = train_raw.images.shape[-1]
    model_cfg = ModelConfig(image_size=image_size, channels=channels, patch_size=patch_size, hidden=hidden,
                            embed_dim=embed_dim, vocab_size=tok.vocab_size)
    norm = ImageNorm.fit(train_raw.images)
    state: TrainState = start_state(model_cfg, train_cfg)
    t1 = time.perf_counter()
    history = train(state, norm.apply_pairs(train_raw), train_cfg, patch_size, tok.vocab_size, log_path)
    t_train = time.perf_counter() - t1
    model = ToyModel(state.params, model_cfg, tok, norm, compose_cfg, max_len, train_cfg, state.momentum,
                     state.step)
    index = model.index(test_raw) if len(test_raw) else None
    reports = evaluate(index, ks, k_test) if index is not None else []
    return ToyRun(model, history, reports, loss_summary(history),
                  {"data": t_data, "train": t_train}, index)
