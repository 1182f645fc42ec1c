"""One optimisation step over the three objectives, and the loop around it."""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from ..errors import EmptyBatch, NoTargets
from .losses import itc_loss, itm_loss, mine_hard_negatives, mlm_loss
from .model import NO_DECAY, ModelConfig, embed_images, embed_texts, init_params, zeros_like
from .momentum import DEFAULT_CAPACITY, DEFAULT_MU, MomentumState, queue_push, step_momentum
from .text import TokenizedReport, mlm_mask

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adamw")
SCHEDULES = ("constant", "warmup_linear")
QUEUE_INITS = ("random", "empty")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    steps: int = 200
    learning_rate: float = 0.01
    alpha: float = 0.4
    mask_prob: float = 0.15
    seed: int = 0
    weight_decay: float = 0.05
    momentum: float = DEFAULT_MU
    queue_size: int = DEFAULT_CAPACITY
    queue_init: str = "random"
    optimizer: str = "adamw"
    schedule: str = "constant"
    warmup_steps: int = 20
    decay_rate: float = 0.85
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in [0, 1]")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be positive and steps non-negative")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.queue_init not in QUEUE_INITS:
            raise ValueError(f"queue_init must be one of {QUEUE_INITS}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass(frozen=True)
class PairSet:
    """Aligned images (N, H, W, C) and padded token ids (N, L)."""
    ids: tuple
    images: np.ndarray
    token_ids: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        if not (len(self.ids) == len(self.images) == len(self.token_ids)):
            raise ValueError("ids, images and token_ids must have equal length")

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "PairSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PairSet(tuple(self.ids[i] for i in idx), self.images[idx], self.token_ids[idx])


@dataclass
class TrainState:
    params: dict
    momentum: MomentumState
    step: int = 0
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)


def start_state(model_cfg: ModelConfig, cfg: TrainConfig) -> TrainState:
    params = init_params(model_cfg, cfg.seed)
    fill = cfg.seed + 2 if cfg.queue_init == "random" else None
    mom = MomentumState.start(params, model_cfg.embed_dim, cfg.queue_size, cfg.momentum, fill)
    return TrainState(params, mom)


def learning_rate_at(cfg: TrainConfig, step: int) -> float:
    """Constant, or linear warm-up followed by linear decay to ``decay_rate`` of the peak."""
    if cfg.schedule == "constant":
        return cfg.learning_rate
    if step < cfg.warmup_steps:
        return cfg.learning_rate * (step + 1) / cfg.warmup_steps
    span = max(cfg.steps - cfg.warmup_steps, 1)
    frac = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.learning_rate * (1.0 - (1.0 - cfg.decay_rate) * frac)


def _apply_update(state: TrainState, grads: dict, cfg: TrainConfig, lr: float) -> dict:
    new = {}
    b1, b2 = cfg.betas
    t = state.step + 1
    for k, p in state.params.items():
        g = grads[k]
        if cfg.optimizer == "adamw":
            m = b1 * state.adam_m.get(k, 0.0) + (1 - b1) * g
            v = b2 * state.adam_v.get(k, 0.0) + (1 - b2) * g * g
            state.adam_m[k], state.adam_v[k] = m, v
            g = (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + cfg.adam_eps)
        step = lr * g
        if k not in NO_DECAY:
            step = step + lr * cfg.weight_decay * p
        new[k] = p - step
    return new


def batch_losses(params: dict, momentum: MomentumState, batch: PairSet, cfg: TrainConfig,
                 rng: np.random.Generator, patch: int, vocab_size: int):
    """Loss breakdown, summed gradients and the ITC auxiliaries for one batch."""
    if len(batch) == 0:
        raise EmptyBatch("empty batch")
    l_itc, g_itc, aux = itc_loss(params, momentum, batch.images, batch.token_ids, cfg.alpha, patch,
                                 return_aux=True)
    negatives = mine_hard_negatives(aux["sim"], rng)
    l_itm, g_itm = itm_loss(params, batch.images, batch.token_ids, negatives, patch)
    masked = [mlm_mask(TokenizedReport(row), cfg.mask_prob, rng, vocab_size) for row in batch.token_ids]
    try:
        l_mlm, g_mlm = mlm_loss(params, batch.images, masked, patch)
    except NoTargets:
        l_mlm, g_mlm = 0.0, zeros_like(params)
    grads = {k: g_itc[k] + g_itm[k] + g_mlm[k] for k in params}
    losses = {"l_itc": l_itc, "l_itm": l_itm, "l_mlm": l_mlm, "total": l_itc + l_itm + l_mlm}
    return losses, grads, aux


def train_step(state: TrainState, batch: PairSet, cfg: TrainConfig, rng: np.random.Generator,
               patch: int, vocab_size: int) -> dict:
    """Update ``state`` in place; returns the loss breakdown measured before the update."""
    losses, grads, aux = batch_losses(state.params, state.momentum, batch, cfg, rng, patch, vocab_size)
    lr = learning_rate_at(cfg, state.step)
    state.params = _apply_update(state, grads, cfg, lr)
    state.momentum = step_momentum(state.momentum, state.params)
    state.momentum = queue_push(state.momentum, aux["m_image_feats"], aux["m_text_feats"])
    state.step += 1
    return {"step": state.step - 1, "lr": lr, **losses}


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; reshuffled every pass, short tails dropped."""
    if n < 2:
        raise ValueError("need at least two training pairs")
    b = min(batch_size, n)
    while True:
        order = rng.permutation(n)
        for s in range(0, n - b + 1, b):
            yield order[s:s + b]


def train(state: TrainState, pairs: PairSet, cfg: TrainConfig, patch: int, vocab_size: int,
          log_path: Optional[Path] = None, on_step: Optional[Callable] = None) -> list:
    """Run ``cfg.steps`` steps from ``state``; returns the per-step loss records."""
    rng = np.random.default_rng(cfg.seed + 1)
    stream = batches(len(pairs), cfg.batch_size, rng)
    history = []
    tmp = Path(log_path).with_name(Path(log_path).name + ".tmp") if log_path else None
    fh = open(tmp, "w", encoding="utf-8") if tmp else None
    t0 = time.perf_counter()
    try:
        for _ in range(cfg.steps):
            rec = train_step(state, pairs.take(next(stream)), cfg, rng, patch, vocab_size)
            history.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
            if on_step:
                on_step(rec)
            if rec["step"] % 20 == 0:
                log.info("step %d total %.4f (itc %.4f itm %.4f mlm %.4f)", rec["step"], rec["total"],
                         rec["l_itc"], rec["l_itm"], rec["l_mlm"])
    finally:
        if fh:
            fh.close()
    if tmp:
        os.replace(tmp, log_path)
    log.info("%d steps in %.1fs", cfg.steps, time.perf_counter() - t0)
    return history


def loss_summary(history: list, tail: int = 10) -> dict:
    """Initial (first step) and final (mean of the last ``tail`` steps) total loss."""
    if not history:
        return {"initial": None, "final": None}
    last = [h["total"] for h in history[-tail:]]
    return {"initial": history[0]["total"], "final": float(np.mean(last))}


def embed_pairs(params: dict, pairs: PairSet, patch: int, chunk: int = 32):
    """Unit image and text embeddings for every pair, in order."""
    img = [embed_images(params, pairs.images[s:s + chunk], patch) for s in range(0, len(pairs), chunk)]
    txt = [embed_texts(params, pairs.token_ids[s:s + chunk]) for s in range(0, len(pairs), chunk)]
    return np.concatenate(img), np.concatenate(txt)
