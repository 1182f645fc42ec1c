import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecgfield.errors import (BadPatchGrid, BatchTooSmall, ChecksumMismatch, EmptyAfterPadding,
                             NormViolation, NothingToMask, NoTargets, ShapeMismatch)
from ecgfield.training.checkpoint import checkpoint_from_bytes, checkpoint_to_bytes
from ecgfield.training.data import ImageNorm
from ecgfield.training.gradcheck import finite_diff_check
from ecgfield.training.loop import (PairSet, TrainConfig, batches, learning_rate_at, loss_summary,
                                    start_state, train, train_step)
from ecgfield.training.losses import itc_loss, itm_loss, mine_hard_negatives, mlm_loss
from ecgfield.training.model import ModelConfig, copy_params, encode_image, encode_text, init_params
from ecgfield.training.momentum import MomentumState, momentum_update, queue_push
from ecgfield.training.text import (CLS, MASK, N_SPECIAL, PAD, MaskedReport, Tokenizer, TokenizedReport,
                                    mlm_mask)

from toybatch import CFG, random_batch, random_masks, random_momentum, random_negatives, random_params


# --- tokenizer and masking -------------------------------------------------------------

def test_tokenizer_round_trip():
    tok = Tokenizer.from_texts(["sinus rhythm . heart rate 60 bpm ."])
    rep = tok.encode("Sinus rhythm, heart rate 60 bpm.", max_len=10)
    assert rep.token_ids[0] == CLS and len(rep) == 10 and rep.token_ids[-1] == PAD
    assert tok.decode(rep) == "sinus rhythm heart rate 60 bpm"
    assert tok.itos[:N_SPECIAL] == ["[CLS]", "[MASK]", "[PAD]", "[ENCODE]"]


def test_mask_prob_zero_unchanged():
    rep = TokenizedReport(np.array([CLS, 5, 6, 7, PAD]))
    m = mlm_mask(rep, 0.0, 0, 10)
    assert np.array_equal(m.report.token_ids, rep.token_ids) and m.targets.size == 0


def test_mask_seeded_and_specials_kept():
    rep = TokenizedReport(np.r_[CLS, np.arange(4, 40), PAD, PAD])
    a, b = mlm_mask(rep, 0.5, 11, 40), mlm_mask(rep, 0.5, 11, 40)
    assert np.array_equal(a.report.token_ids, b.report.token_ids) and np.array_equal(a.positions, b.positions)
    assert a.report.token_ids[0] == CLS and np.all(a.report.token_ids[-2:] == PAD)
    assert np.array_equal(a.targets, rep.token_ids[a.positions])


def test_mask_statistics():
    rep = TokenizedReport(np.r_[CLS, np.full(10000, 7)])
    m = mlm_mask(rep, 1.0, 0, 50)
    new = m.report.token_ids[m.positions]
    assert m.positions.size == 10000
    assert abs(np.mean(new == MASK) - 0.8) <= 0.02
    assert np.all(new[new != MASK] >= N_SPECIAL)


def test_nothing_to_mask():
    with pytest.raises(NothingToMask):
        mlm_mask(TokenizedReport(np.array([CLS, PAD])), 0.5, 0, 10)


# --- towers ----------------------------------------------------------------------------

def test_image_embedding_norm_and_identity(rng):
    p = init_params(CFG, 0)
    imgs = rng.random((100, 16, 16, 3))
    norms = [np.linalg.norm(encode_image(p, im, 4)) for im in imgs]
    assert np.max(np.abs(np.array(norms) - 1)) <= 1e-6
    assert np.array_equal(encode_image(p, imgs[3], 4), encode_image(p, imgs[3].copy(), 4))


def test_zero_image_falls_back_to_basis():
    p = init_params(CFG, 0)
    p["patch_pos"][:] = 0.0
    e = encode_image(p, np.zeros((16, 16, 3)), 4)
    assert np.array_equal(e, np.eye(CFG.embed_dim)[0])


def test_text_embedding_rules():
    p = init_params(CFG, 0)
    single = encode_text(p, [CLS])
    g = p["token_emb"][CLS] @ p["txt_head"]
    assert np.allclose(single, g / np.linalg.norm(g))
    assert np.array_equal(encode_text(p, [CLS, 5, 9]), encode_text(p, [CLS, 5, 9, PAD, PAD]))
    with pytest.raises(EmptyAfterPadding):
        encode_text(p, [PAD, PAD])


def test_bad_patch_grid():
    with pytest.raises(BadPatchGrid):
        encode_image(init_params(CFG, 0), np.zeros((15, 15, 3)), 4)


# --- ITC -------------------------------------------------------------------------------

def _two_pair_setup():
    """Image i and text i both embed to basis vector e_i (temperature 1)."""
    cfg = ModelConfig(image_size=4, channels=1, patch_size=2, hidden=4, embed_dim=4, vocab_size=6)
    p = init_params(cfg, 0)
    p["patch_pos"][:] = 0.0
    p["patch_proj"][:] = 0.0
    p["patch_proj"][0, 0] = p["patch_proj"][1, 1] = 5.0
    p["token_emb"][:] = 0.0
    p["token_emb"][4, 0] = p["token_emb"][5, 1] = 1.0
    p["img_head"] = np.eye(4)
    p["txt_head"] = np.eye(4)
    p["log_temp"] = np.array(0.0)
    images = np.zeros((2, 4, 4, 1))
    images[0, ::2, ::2] = 1.0   # first pixel of every patch
    images[1, ::2, 1::2] = 1.0  # second pixel
    p["token_emb"][CLS] = 0.0
    ids = np.array([[CLS, 4], [CLS, 5]])
    return cfg, p, images, ids


def test_itc_equal_similarities_is_ln2(rng):
    p = init_params(CFG, 0)
    img = np.repeat(rng.random((1, 16, 16, 3)), 2, axis=0)
    ids = np.array([[CLS, 5, 6], [CLS, 5, 6]])
    mom = MomentumState.start(p, CFG.embed_dim, capacity=0)
    loss, _ = itc_loss(p, mom, img, ids, 0.0, 4)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_itc_hand_computed():
    cfg, p, images, ids = _two_pair_setup()
    mom = MomentumState.start(p, cfg.embed_dim, capacity=0)
    loss, _ = itc_loss(p, mom, images, ids, 0.0, cfg.patch_size)
    p_true = math.e / (math.e + 1)
    assert p_true == pytest.approx(0.7311, abs=1e-4)
    assert loss == pytest.approx(-math.log(p_true), abs=1e-9)


def test_itc_alpha_one_is_self_entropy():
    p = random_params(0)
    images, ids = random_batch(6, seed=1)
    mom = MomentumState.start(p, CFG.embed_dim, capacity=0)
    loss, _, aux = itc_loss(p, mom, images, ids, 1.0, 4, return_aux=True)
    h = lambda q: -np.sum(q * np.log(q)) / q.shape[0]  # noqa: E731
    assert loss == pytest.approx(0.5 * (h(aux["p_i2t"]) + h(aux["p_t2i"])), rel=1e-12)


def test_itc_rows_normalised_and_nonnegative():
    p = random_params(1)
    images, ids = random_batch(8, seed=2)
    loss, _, aux = itc_loss(p, random_momentum(p, 1), images, ids, 0.4, 4, return_aux=True)
    assert loss >= 0
    assert np.allclose(aux["p_i2t"].sum(axis=1), 1, atol=1e-9)
    assert np.allclose(aux["p_t2i"].sum(axis=1), 1, atol=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_itc_permutation_invariant(seed):
    p = random_params(seed % 7)
    images, ids = random_batch(6, seed=seed)
    mom = MomentumState.start(p, CFG.embed_dim, capacity=0)
    perm = np.random.default_rng(seed).permutation(6)
    a, _ = itc_loss(p, mom, images, ids, 0.0, 4)
    b, _ = itc_loss(p, mom, images[perm], ids[perm], 0.0, 4)
    assert a == pytest.approx(b, rel=1e-12)
    assert a >= 0


# --- ITM / negatives -------------------------------------------------------------------

def test_itm_zero_head_is_ln2():
    p = init_params(CFG, 0)
    images, ids = random_batch(4)
    loss, _ = itm_loss(p, images, ids, random_negatives(4), 4)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_itm_permutation_invariant():
    p = random_params(2)
    images, ids = random_batch(6, seed=4)
    neg_t, neg_i = random_negatives(6, seed=5)
    perm = np.random.default_rng(0).permutation(6)
    inv = np.argsort(perm)
    a, _ = itm_loss(p, images, ids, (neg_t, neg_i), 4)
    b, _ = itm_loss(p, images[perm], ids[perm], (inv[neg_t[perm]], inv[neg_i[perm]]), 4)
    assert a == pytest.approx(b, rel=1e-12)


def test_negatives_examples():
    nt, ni = mine_hard_negatives(np.zeros((2, 2)), 0)
    assert nt.tolist() == [1, 0] and ni.tolist() == [1, 0]
    sim = np.full((4, 4), -10.0)
    sim[0, 2] = 10.0
    rng = np.random.default_rng(0)
    picks = [mine_hard_negatives(sim, rng)[0][0] for _ in range(1000)]
    assert np.mean(np.array(picks) == 2) > 0.99
    a = mine_hard_negatives(np.random.default_rng(1).normal(size=(5, 5)), 9)
    b = mine_hard_negatives(np.random.default_rng(1).normal(size=(5, 5)), 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(np.all(x != np.arange(5)) for x in a)
    with pytest.raises(BatchTooSmall):
        mine_hard_negatives(np.zeros((1, 1)), 0)


@pytest.mark.xfail(strict=True, reason="a linear head on concatenated features cannot detect matching; "
                                      "on this batch the loss plateaus near 0.50")
def test_itm_separable_features_train_below_0_1():
    p = random_params(0)
    images, ids = random_batch(8, seed=0)
    negs = random_negatives(8, seed=1)
    m = {k: np.zeros_like(v) for k, v in p.items()}
    v = {k: np.zeros_like(val) for k, val in p.items()}
    for t in range(1, 1501):
        loss, g = itm_loss(p, images, ids, negs, 4)
        for k in p:
            m[k] = 0.9 * m[k] + 0.1 * g[k]
            v[k] = 0.999 * v[k] + 0.001 * g[k] ** 2
            p[k] = p[k] - 0.02 * (m[k] / (1 - 0.9 ** t)) / (np.sqrt(v[k] / (1 - 0.999 ** t)) + 1e-8)
    assert loss < 0.1


# --- MLM -------------------------------------------------------------------------------

def test_mlm_zero_head_is_ln_v():
    p = init_params(CFG, 0)
    images, ids = random_batch(4)
    loss, _ = mlm_loss(p, images, random_masks(ids), 4)
    assert loss == pytest.approx(math.log(CFG.vocab_size), abs=1e-12)


def test_mlm_forced_head_goes_to_zero():
    p = init_params(CFG, 0)
    images, ids = random_batch(1)
    rep = TokenizedReport(ids[0])
    pos = rep.maskable()[:1]
    masked = MaskedReport(rep, pos, rep.token_ids[pos])
    p["mlm_b"][:] = -50.0
    p["mlm_b"][int(rep.token_ids[pos[0]])] = 50.0
    loss, _ = mlm_loss(p, images, [masked], 4)
    assert loss < 1e-12


def test_mlm_without_targets():
    p = init_params(CFG, 0)
    images, ids = random_batch(2)
    empty = [mlm_mask(TokenizedReport(r), 0.0, 0, CFG.vocab_size) for r in ids]
    with pytest.raises(NoTargets):
        mlm_loss(p, images, empty, 4)


# --- gradient checks -------------------------------------------------------------------

def test_gradcheck_quadratic():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    f = lambda p: (float(p["x"] @ a @ p["x"]), {"x": 2 * a @ p["x"]})  # noqa: E731
    assert finite_diff_check(f, {"x": np.array([0.3, -1.2])}) < 1e-6


@pytest.mark.parametrize("alpha", [0.0, 0.4])
def test_gradcheck_itc(alpha):
    p = random_params(0)
    images, ids = random_batch()
    mom = random_momentum(p)
    assert finite_diff_check(lambda q: itc_loss(q, mom, images, ids, alpha, 4), p, 1e-5, 150) < 1e-4


def test_gradcheck_itm_mlm():
    p = random_params(1)
    images, ids = random_batch(seed=1)
    negs = random_negatives()
    masks = random_masks(ids)
    assert finite_diff_check(lambda q: itm_loss(q, images, ids, negs, 4), p, 1e-5, 150) < 1e-4
    assert finite_diff_check(lambda q: mlm_loss(q, images, masks, 4), p, 1e-5, 150) < 1e-4


# --- momentum ----------------------------------------------------------------------------

def test_momentum_update_examples():
    live, slow = {"w": np.array([2.0])}, {"w": np.array([0.0])}
    assert momentum_update(live, slow, 1.0)["w"][0] == 0.0
    assert momentum_update(live, slow, 0.0)["w"][0] == 2.0
    assert momentum_update(live, slow, 0.5)["w"][0] == 1.0
    with pytest.raises(ShapeMismatch):
        momentum_update(live, {"w": np.zeros(2)}, 0.5)


def test_queue_fifo():
    state = MomentumState.start({"w": np.zeros(1)}, 2, capacity=3)
    vecs = np.eye(2)[[0, 1, 0, 1]]
    grown = queue_push(state, vecs[:2], vecs[:2])
    assert len(grown) == 2
    full = queue_push(grown, vecs[2:], vecs[2:])
    assert len(full) == 3 and np.array_equal(full.image_queue, vecs[1:])
    with pytest.raises(NormViolation):
        queue_push(state, [[1.0, 1.0]], [[1.0, 0.0]])


def test_random_queue_is_unit():
    state = MomentumState.start({"w": np.zeros(1)}, 5, capacity=7, fill_rng=1)
    assert len(state) == 7
    assert np.allclose(np.linalg.norm(state.text_queue, axis=1), 1)


# --- training loop -----------------------------------------------------------------------

def _pairs(n=12, seed=0):
    images, ids = random_batch(n, seed=seed)
    return PairSet(tuple(f"p{k}" for k in range(n)), images, ids)


def test_zero_learning_rate_keeps_params():
    cfg = TrainConfig(batch_size=4, learning_rate=0.0, queue_size=8)
    state = start_state(CFG, cfg)
    before = copy_params(state.params)
    rec = train_step(state, _pairs().take(range(4)), cfg, np.random.default_rng(0), 4, CFG.vocab_size)
    assert all(np.array_equal(before[k], state.params[k]) for k in before)
    assert rec["total"] == pytest.approx(rec["l_itc"] + rec["l_itm"] + rec["l_mlm"])


@pytest.mark.parametrize("optimizer", ["adamw", "sgd"])
def test_replay_is_bit_identical(optimizer):
    cfg = TrainConfig(batch_size=4, steps=6, queue_size=8, optimizer=optimizer,
                      learning_rate=0.01 if optimizer == "adamw" else 0.1)
    runs = []
    for _ in range(2):
        state = start_state(CFG, cfg)
        hist = train(state, _pairs(), cfg, 4, CFG.vocab_size)
        runs.append((hist, state))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1].params:
        assert runs[0][1].params[k].tobytes() == runs[1][1].params[k].tobytes()
    state = runs[0][1]
    assert np.isfinite(np.exp(state.params["log_temp"])) and np.exp(state.params["log_temp"]) > 0
    assert np.allclose(np.linalg.norm(state.momentum.image_queue, axis=1), 1, atol=1e-6)


def test_train_writes_log(tmp_path):
    cfg = TrainConfig(batch_size=4, steps=3, queue_size=8)
    hist = train(start_state(CFG, cfg), _pairs(), cfg, 4, CFG.vocab_size, tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 3 and len(hist) == 3
    assert loss_summary(hist, tail=2)["final"] == pytest.approx(np.mean([h["total"] for h in hist[-2:]]))


def test_batches_cover_each_pass():
    stream = batches(10, 4, np.random.default_rng(0))
    first = np.concatenate([next(stream), next(stream)])
    assert len(set(first.tolist())) == 8


def test_schedule():
    cfg = TrainConfig(learning_rate=1.0, schedule="warmup_linear", warmup_steps=4, steps=14)
    assert learning_rate_at(cfg, 0) == 0.25 and learning_rate_at(cfg, 3) == 1.0
    assert learning_rate_at(cfg, 14) == pytest.approx(0.85)
    assert learning_rate_at(TrainConfig(learning_rate=0.3), 50) == 0.3


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(alpha=1.5)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lion")


# --- persistence and normalisation -----------------------------------------------------------

def test_checkpoint_round_trip(rng):
    tensors = {"a": rng.normal(size=(3, 4)), "s": np.array(0.25), "e": np.zeros((0, 5))}
    blob = checkpoint_to_bytes(tensors, {"x": [1, 2]})
    back, cfg = checkpoint_from_bytes(blob)
    assert cfg == {"x": [1, 2]}
    for k in tensors:
        assert back[k].shape == tensors[k].shape and back[k].tobytes() == tensors[k].tobytes()
    assert checkpoint_to_bytes(back, cfg) == blob
    bad = bytearray(blob)
    bad[len(bad) // 2] ^= 0x10
    with pytest.raises(ChecksumMismatch):
        checkpoint_from_bytes(bytes(bad))


def test_image_norm(rng):
    imgs = rng.random((20, 4, 4, 3))
    norm = ImageNorm.fit(imgs)
    z = norm.apply(imgs)
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12)
    assert np.all(z.std(axis=0) < 1)
    with pytest.raises(ValueError):
        norm.apply(rng.random((2, 5, 5, 3)))
