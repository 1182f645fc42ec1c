"""Turn manifest entries into image / token arrays for the toy model."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..composer import ComposeConfig, compose, configuration
from ..encoders import EncoderConfig
from ..preprocess import preprocess_pipeline
from ..signal_io import ManifestEntry, load_entry
from .loop import PairSet
from .text import Tokenizer

DEFAULT_MAX_LEN = 24
DEFAULT_IMAGE_SIZE = 96
DEFAULT_WINDOW_S = 5.0
STD_FLOOR = 0.05


def toy_compose_config(name: str = "all_grid_finetune", image_size: int = DEFAULT_IMAGE_SIZE,
                       window_s: Optional[float] = DEFAULT_WINDOW_S) -> ComposeConfig:
    """Preset ``name`` shrunk to an ``image_size`` square for the toy model.

    Lead tiles are a third of the output side, so the 4x3 grid is only
    mildly resampled; the plot layout needs at least 16 px per tile.
    """
    cfg = configuration(name)
    cell = max(16 if cfg.layout == "simple_plot" else 8, image_size // 3)
    return configuration(name, cell_size=cell, target_size=image_size, window_s=window_s)


@dataclass(frozen=True)
class ImageNorm:
    """Per-pixel standardisation fitted on the training images."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, images: np.ndarray, floor: float = STD_FLOOR) -> "ImageNorm":
        images = np.asarray(images, dtype=np.float64)
        if images.shape[0] == 0:
            raise ValueError("cannot fit a normaliser on zero images")
        return cls(images.mean(axis=0), images.std(axis=0) + floor)

    @classmethod
    def identity(cls, shape) -> "ImageNorm":
        return cls(np.zeros(shape), np.ones(shape))

    def apply(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        if images.shape[-3:] != self.mean.shape:
            raise ValueError(f"image shape {images.shape[-3:]} does not match normaliser {self.mean.shape}")
        return (images - self.mean) / self.std

    def apply_pairs(self, pairs: PairSet) -> PairSet:
        return PairSet(pairs.ids, self.apply(pairs.images), pairs.token_ids)


def load_pairs(entries: Sequence[ManifestEntry], tokenizer: Tokenizer, compose_cfg: ComposeConfig,
               enc: Optional[EncoderConfig] = None, max_len: int = DEFAULT_MAX_LEN,
               n_points: int = 1) -> PairSet:
    """Preprocess, compose and tokenise every entry (raw [0, 1] pixels)."""
    ids, images, tokens = [], [], []
    for entry in entries:
        record = preprocess_pipeline(load_entry(entry), n_points=n_points)
        if record.report is None:
            raise ValueError(f"record {entry.record_id} has no report")
        ids.append(entry.record_id)
        images.append(compose(record, compose_cfg, enc).pixels)
        tokens.append(tokenizer.encode(record.report.text, max_len).token_ids)
    if not ids:
        side = compose_cfg.target_size or 1
        return PairSet((), np.zeros((0, side, side, 3)), np.zeros((0, max_len), dtype=np.int64))
    return PairSet(tuple(ids), np.stack(images), np.stack(tokens))
