"""Word-level tokenizer for report texts and BERT-style token masking."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from ..errors import NothingToMask

CLS, MASK, PAD, ENCODE = 0, 1, 2, 3
SPECIAL_TOKENS = ("[CLS]", "[MASK]", "[PAD]", "[ENCODE]")
N_SPECIAL = len(SPECIAL_TOKENS)

_WORD_RE = re.compile(r"[a-z0-9]+(?:[./][a-z0-9]+)*")


def words(text: str) -> list:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenizedReport:
    token_ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0 or ids[0] != CLS:
            raise ValueError("a tokenized report starts with [CLS]")
        ids.setflags(write=False)
        object.__setattr__(self, "token_ids", ids)

    def __len__(self):
        return int(self.token_ids.size)

    def maskable(self) -> np.ndarray:
        return np.flatnonzero(self.token_ids >= N_SPECIAL)


@dataclass(frozen=True)
class MaskedReport:
    report: TokenizedReport
    positions: np.ndarray
    targets: np.ndarray


class Tokenizer:
    """Closed vocabulary: the four special tokens followed by sorted words."""

    def __init__(self, vocab: Iterable[str]):
        self.itos = list(SPECIAL_TOKENS) + sorted(set(vocab) - set(SPECIAL_TOKENS))
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Tokenizer":
        vocab = set()
        for t in texts:
            vocab.update(words(t))
        return cls(vocab)

    @property
    def vocab_size(self) -> int:
        return len(self.itos)

    def encode(self, text: str, max_len: Optional[int] = None) -> TokenizedReport:
        ids = [CLS] + [self.stoi[w] for w in words(text) if w in self.stoi]
        if max_len is not None:
            ids = ids[:max_len] + [PAD] * max(0, max_len - len(ids))
        return TokenizedReport(np.array(ids))

    def decode(self, report: TokenizedReport) -> str:
        return " ".join(self.itos[i] for i in report.token_ids if i >= N_SPECIAL)


def mlm_mask(report: TokenizedReport, mask_prob: float, rng, vocab_size: int) -> MaskedReport:
    """Select each non-special token with ``mask_prob``; of the selected,
    80% become [MASK], 10% a random non-special token, 10% stay unchanged.

    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError("mask_prob must lie in [0, 1]")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    cand = report.maskable()
    if cand.size == 0:
        raise NothingToMask("report has no maskable tokens")
    chosen = cand[rng.random(cand.size) < mask_prob]
    ids = report.token_ids.copy()
    targets = ids[chosen].copy()
    action = rng.random(chosen.size)
    to_mask = chosen[action < 0.8]
    to_rand = chosen[(action >= 0.8) & (action < 0.9)]
    ids[to_mask] = MASK
    if to_rand.size:
        ids[to_rand] = rng.integers(N_SPECIAL, vocab_size, size=to_rand.size)
    return MaskedReport(TokenizedReport(ids), chosen, targets)
