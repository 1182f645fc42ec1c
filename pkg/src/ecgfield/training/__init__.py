"""Toy dual encoder with contrastive, matching and masked-token objectives."""

from .checkpoint import load_checkpoint, save_checkpoint
from .loop import PairSet, TrainConfig, TrainState, start_state, train, train_step
from .model import ModelConfig, encode_image, encode_text, init_params
from .momentum import MomentumState, momentum_update, queue_push
from .text import MaskedReport, TokenizedReport, Tokenizer, mlm_mask
from .toy import ToyModel, ToyRun, run_toy

__all__ = [
    "load_checkpoint", "save_checkpoint", "PairSet", "TrainConfig", "TrainState", "start_state", "train",
    "train_step", "ModelConfig", "encode_image", "encode_text", "init_params", "MomentumState",
    "momentum_update", "queue_push", "MaskedReport", "TokenizedReport", "Tokenizer", "mlm_mask",
    "ToyModel", "ToyRun", "run_toy",
]
