"""Contrastive, matching and masked-token objectives with analytic gradients.

Each loss returns ``(loss, grads)`` where ``grads`` has one array per
parameter (zeros where the loss does not depend on it). Anything derived from
the momentum state (candidate features, soft targets) is a constant with
respect to the live parameters.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import BatchTooSmall, EmptyBatch, NoNegativesAvailable, NoTargets
from .model import (
    image_pool,
    image_pool_backward,
    project,
    project_backward,
    text_pool,
    text_pool_backward,
    zeros_like,
)
from .momentum import MomentumState


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def momentum_features(momentum: MomentumState, images, token_ids, patch: int):
    mp = momentum.params
    iv, _ = image_pool(mp, images, patch)
    tv, _ = text_pool(mp, token_ids)
    return project(iv, mp["img_head"])[0], project(tv, mp["txt_head"])[0]


def itc_targets(momentum: MomentumState, m_img, m_txt, alpha: float):
    """Soft targets ``(1 - alpha) onehot + alpha softmax(momentum similarities)``.

    Candidates are the batch's momentum features followed by the queue, so the
    positive for row ``b`` sits in column ``b``.
    """
    b = m_img.shape[0]
    txt_all = np.concatenate([m_txt, momentum.text_queue])
    img_all = np.concatenate([m_img, momentum.image_queue])
    onehot = np.zeros((b, txt_all.shape[0]))
    onehot[np.arange(b), np.arange(b)] = 1.0
    if alpha == 0.0:
        return txt_all, img_all, onehot, onehot.copy()
    mtemp = np.exp(momentum.params["log_temp"])
    q_i2t = softmax(m_img @ txt_all.T / mtemp)
    q_t2i = softmax(m_txt @ img_all.T / mtemp)
    return (txt_all, img_all,
            alpha * q_i2t + (1 - alpha) * onehot,
            alpha * q_t2i + (1 - alpha) * onehot)


def itc_loss(params: dict, momentum: MomentumState, images, token_ids, alpha: float,
             patch: int, return_aux: bool = False):
    """Image-text contrastive loss averaged over both retrieval directions."""
    token_ids = np.atleast_2d(token_ids)
    b = token_ids.shape[0]
    if b == 0:
        raise EmptyBatch("empty batch")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    grads = zeros_like(params)
    iv, icache = image_pool(params, images, patch)
    tv, tcache = text_pool(params, token_ids)
    u, ucache = project(iv, params["img_head"])
    t, tpcache = project(tv, params["txt_head"])

    m_img, m_txt = momentum_features(momentum, images, token_ids, patch)
    txt_all, img_all, y_i2t, y_t2i = itc_targets(momentum, m_img, m_txt, alpha)

    temp = np.exp(params["log_temp"])
    z_i2t = u @ txt_all.T / temp
    z_t2i = t @ img_all.T / temp
    lp_i2t = log_softmax(z_i2t)
    lp_t2i = log_softmax(z_t2i)
    loss_i2t = -np.sum(y_i2t * lp_i2t) / b
    loss_t2i = -np.sum(y_t2i * lp_t2i) / b
    loss = 0.5 * (loss_i2t + loss_t2i)

    # targets rows sum to one, so d/dz of -sum(y log p) is p - y
    dz_i2t = (np.exp(lp_i2t) - y_i2t) / (2 * b)
    dz_t2i = (np.exp(lp_t2i) - y_t2i) / (2 * b)
    du = dz_i2t @ txt_all / temp
    dt = dz_t2i @ img_all / temp
    grads["log_temp"] = np.array(-np.sum(dz_i2t * z_i2t) - np.sum(dz_t2i * z_t2i))
    image_pool_backward(grads, icache, project_backward(grads, "img_head", params["img_head"], ucache, du))
    text_pool_backward(grads, tcache, project_backward(grads, "txt_head", params["txt_head"], tpcache, dt))
    if not return_aux:
        return float(loss), grads
    aux = {
        "p_i2t": np.exp(lp_i2t), "p_t2i": np.exp(lp_t2i),
        "image_feats": u, "text_feats": t,
        "m_image_feats": m_img, "m_text_feats": m_txt,
        "sim": u @ t.T / temp,
    }
    return float(loss), grads, aux


def mine_hard_negatives(sim: np.ndarray, rng):
    """Sample one in-batch negative per image and per text.

    ``sim[i, j]`` scores image ``i`` against text ``j``. Image ``i`` draws text
    ``j != i`` with probability proportional to ``exp(sim[i, j])``; text ``j``
    draws image ``i != j`` from column ``j`` likewise.
    Returns ``(neg_text_for_image, neg_image_for_text)``.
    """
    sim = np.asarray(sim, dtype=np.float64)
    b = sim.shape[0]
    if sim.shape != (b, b):
        raise ValueError("similarity matrix must be square")
    if b < 2:
        raise BatchTooSmall("hard negative mining needs at least two pairs")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    off = ~np.eye(b, dtype=bool)

    def draw(rows):
        out = np.empty(b, dtype=np.int64)
        for i in range(b):
            cand = np.flatnonzero(off[i])
            out[i] = cand[rng.choice(cand.size, p=softmax(rows[i, cand]))]
        return out

    return draw(sim), draw(sim.T)


def itm_loss(params: dict, images, token_ids, negatives, patch: int):
    """Matched / unmatched classification on concatenated pooled features.

    Rows are the ``B`` true pairs (label 1), then each image with its mined
    negative text, then each text with its mined negative image (label 0).
    The loss is the mean cross-entropy over the ``3B`` rows.
    """
    token_ids = np.atleast_2d(token_ids)
    b = token_ids.shape[0]
    if b < 2:
        raise NoNegativesAvailable("a batch of one has no negatives")
    neg_txt, neg_img = (np.asarray(n, dtype=np.int64) for n in negatives)
    grads = zeros_like(params)
    iv, icache = image_pool(params, images, patch)
    tv, tcache = text_pool(params, token_ids)
    ar = np.arange(b)
    img_idx = np.concatenate([ar, ar, neg_img])
    txt_idx = np.concatenate([ar, neg_txt, ar])
    labels = np.concatenate([np.ones(b, dtype=np.int64), np.zeros(2 * b, dtype=np.int64)])
    fused = np.concatenate([iv[img_idx], tv[txt_idx]], axis=1)
    logits = fused @ params["itm_w"] + params["itm_b"]
    lp = log_softmax(logits)
    n = labels.size
    loss = -lp[np.arange(n), labels].mean()

    dlogits = np.exp(lp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads["itm_w"] = fused.T @ dlogits
    grads["itm_b"] = dlogits.sum(axis=0)
    dfused = dlogits @ params["itm_w"].T
    h = iv.shape[1]
    div = np.zeros_like(iv)
    dtv = np.zeros_like(tv)
    np.add.at(div, img_idx, dfused[:, :h])
    np.add.at(dtv, txt_idx, dfused[:, h:])
    image_pool_backward(grads, icache, div)
    text_pool_backward(grads, tcache, dtv)
    return float(loss), grads


def mlm_loss(params: dict, images, masked: Sequence, patch: int):
    """Masked-token prediction from the concatenated (image, masked text) feature.

    ``masked`` holds one ``MaskedReport`` per image. Every target of a report
    is scored against the same fused feature; the loss is the mean
    cross-entropy over all targets in the batch.
    """
    masked = list(masked)
    n_targets = sum(int(m.targets.size) for m in masked)
    if n_targets == 0:
        raise NoTargets("no masked targets in the batch")
    ids = np.stack([m.report.token_ids for m in masked])
    grads = zeros_like(params)
    iv, icache = image_pool(params, images, patch)
    tv, tcache = text_pool(params, ids)
    fused = np.concatenate([iv, tv], axis=1)
    logits = fused @ params["mlm_w"] + params["mlm_b"]
    lp = log_softmax(logits)
    counts = np.zeros_like(logits)
    for k, m in enumerate(masked):
        np.add.at(counts[k], m.targets, 1.0)
    loss = -np.sum(counts * lp) / n_targets

    per_row = counts.sum(axis=1, keepdims=True)
    dlogits = (per_row * np.exp(lp) - counts) / n_targets
    grads["mlm_w"] = fused.T @ dlogits
    grads["mlm_b"] = dlogits.sum(axis=0)
    dfused = dlogits @ params["mlm_w"].T
    h = iv.shape[1]
    image_pool_backward(grads, icache, dfused[:, :h])
    text_pool_backward(grads, tcache, dfused[:, h:])
    return float(loss), grads
