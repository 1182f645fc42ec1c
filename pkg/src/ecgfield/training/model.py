"""A small dual encoder with hand-written backward passes.

Image path: non-overlapping patches -> linear projection (+ learned position
embedding) -> tanh -> mean over patches -> ``img_head`` -> L2 normalise.

Text path: token embedding -> mean over non-[PAD] positions -> ``txt_head``
-> L2 normalise.

The pooled vectors (before the heads) are what the matching and
masked-token heads see, concatenated image-first. Parameters live in a plain
``dict`` of float64 arrays so they can be perturbed, checkpointed and
compared directly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import BadPatchGrid, EmptyAfterPadding
from .text import PAD

PARAM_NAMES = ("patch_proj", "patch_pos", "token_emb", "img_head", "txt_head",
               "log_temp", "itm_w", "itm_b", "mlm_w", "mlm_b")
NO_DECAY = ("log_temp", "itm_b", "mlm_b", "patch_pos")
NORM_EPS = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 64
    channels: int = 3
    patch_size: int = 8
    hidden: int = 64
    embed_dim: int = 32
    vocab_size: int = 64
    init_temp: float = 0.07
    init_scale: float = 0.02

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(cfg: ModelConfig, rng) -> dict:
    rng = np.random.default_rng(rng)
    h, d, v = cfg.hidden, cfg.embed_dim, cfg.vocab_size

    def normal(*shape, scale):
        return rng.normal(0.0, scale, size=shape)

    return {
        "patch_proj": normal(cfg.patch_dim, h, scale=1.0 / np.sqrt(cfg.patch_dim)),
        "patch_pos": normal(cfg.n_patches, h, scale=cfg.init_scale),
        "token_emb": normal(v, h, scale=1.0),
        "img_head": normal(h, d, scale=1.0 / np.sqrt(h)),
        "txt_head": normal(h, d, scale=1.0 / np.sqrt(h)),
        "log_temp": np.array(np.log(cfg.init_temp)),
        "itm_w": np.zeros((2 * h, 2)),
        "itm_b": np.zeros(2),
        "mlm_w": np.zeros((2 * h, v)),
        "mlm_b": np.zeros(v),
    }


def copy_params(params: dict) -> dict:
    return {k: np.array(v, copy=True) for k, v in params.items()}


def zeros_like(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


# --- image tower -----------------------------------------------------------------------

def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, H, W, C) -> (B, P, patch*patch*C), patches in row-major order."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    b, hgt, wid, c = images.shape
    if hgt % patch or wid % patch:
        raise BadPatchGrid(f"image {hgt}x{wid} is not divisible into {patch}px patches")
    x = images.reshape(b, hgt // patch, patch, wid // patch, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, (hgt // patch) * (wid // patch), patch * patch * c)


def image_pool(params: dict, images: np.ndarray, patch: int):
    """Pooled image features (B, h) plus the cache for :func:`image_pool_backward`."""
    x = patchify(images, patch)
    if x.shape[1] != params["patch_pos"].shape[0] or x.shape[2] != params["patch_proj"].shape[0]:
        raise BadPatchGrid(f"patch grid {x.shape[1:]} does not match the model")
    z = np.tanh(x @ params["patch_proj"] + params["patch_pos"][None])
    return z.mean(axis=1), (x, z)


def image_pool_backward(grads: dict, cache, dpool: np.ndarray) -> None:
    x, z = cache
    dpre = (dpool[:, None, :] / z.shape[1]) * (1.0 - z * z)
    grads["patch_proj"] += np.einsum("bpi,bph->ih", x, dpre)
    grads["patch_pos"] += dpre.sum(axis=0)


# --- text tower ----------------------------------------------------------------------------

def text_pool(params: dict, token_ids: np.ndarray):
    ids = np.atleast_2d(np.asarray(token_ids, dtype=np.int64))
    mask = (ids != PAD).astype(np.float64)
    count = mask.sum(axis=1)
    if np.any(count == 0):
        raise EmptyAfterPadding("a report contains only [PAD] tokens")
    emb = params["token_emb"][ids]
    pooled = (emb * mask[:, :, None]).sum(axis=1) / count[:, None]
    return pooled, (ids, mask, count)


def text_pool_backward(grads: dict, cache, dpool: np.ndarray) -> None:
    ids, mask, count = cache
    contrib = mask[:, :, None] * (dpool / count[:, None])[:, None, :]
    np.add.at(grads["token_emb"], ids, contrib)


# --- projection heads --------------------------------------------------------------------

def project(pooled: np.ndarray, head: np.ndarray):
    """Linear head then L2 normalisation; a zero vector maps to the first basis vector."""
    e = pooled @ head
    norm = np.linalg.norm(e, axis=1)
    degenerate = norm < NORM_EPS
    safe = np.where(degenerate, 1.0, norm)
    u = e / safe[:, None]
    if np.any(degenerate):
        u[degenerate] = 0.0
        u[degenerate, 0] = 1.0
    return u, (pooled, u, safe, degenerate)


def project_backward(grads: dict, name: str, head: np.ndarray, cache, du: np.ndarray) -> np.ndarray:
    """Accumulate the head gradient; returns d loss / d pooled."""
    pooled, u, norm, degenerate = cache
    de = (du - u * np.sum(u * du, axis=1, keepdims=True)) / norm[:, None]
    de[degenerate] = 0.0
    grads[name] += pooled.T @ de
    return de @ head.T


def embed_images(params: dict, images: np.ndarray, patch: int) -> np.ndarray:
    pooled, _ = image_pool(params, images, patch)
    return project(pooled, params["img_head"])[0]


def embed_texts(params: dict, token_ids: np.ndarray) -> np.ndarray:
    pooled, _ = text_pool(params, token_ids)
    return project(pooled, params["txt_head"])[0]


def encode_image(params: dict, image, patch: int) -> np.ndarray:
    """Unit-norm embedding of one image (an ``ImageTensor`` or H x W x C array)."""
    px = getattr(image, "pixels", image)
    return embed_images(params, np.asarray(px)[None], patch)[0]


def encode_text(params: dict, report) -> np.ndarray:
    ids = getattr(report, "token_ids", report)
    return embed_texts(params, np.asarray(ids)[None])[0]
