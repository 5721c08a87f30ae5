import math

import numpy as np
import pytest

from maplink.corpus import gt_predecessor_map, gt_successor_map, relabel, sort_words
from maplink.linker import (
    ABLATIONS,
    CharVocab,
    Linker,
    LinkerConfig,
    ScorePair,
    TokenOverflowError,
    TrainConfig,
    ce_loss,
    focal_loss,
    tile_loss,
    tokenize,
    total_loss,
    train,
)
from maplink.numerics import tensor as T
from maplink.numerics.tensor import check_param_grad
from maplink.polygon_encoder import PolyEncConfig, tile_polygons
from maplink.synth import SynthConfig, synth_tiles

from _helpers import row_stochastic, tile, word

VOCAB = CharVocab()


def tiny_cfg(**kw):
    base = dict(layers=2, dim=16, heads=2, dropout=0.0, poly=PolyEncConfig(dim=16, layers=1, heads=2))
    base.update(kw)
    return LinkerConfig(**base)


def three_words():
    return tile([word(0, "ST", 0, 0), word(1, "", 0, 50, illegible=True), word(2, "PAUL", 150, 0)], [[0, 2], [1]])


# -- tokenisation -------------------------------------------------------------------

def test_tokenize_examples():
    t = three_words()
    tok = tokenize(t, [0, 1, 2], VOCAB)
    assert tok.n_tokens == 3 + (2 + 0 + 4)  # N + sum of text lengths
    assert tok.ids[:3].tolist() == [VOCAB.MARKER, *VOCAB.encode("ST")]
    assert tok.ids[3] == VOCAB.MARKER and tok.word_of_token[3] == 1  # marker only
    assert tok.first_token.tolist() == [0, 3, 4]
    assert tok.within[:3].tolist() == [0, 1, 2]
    tok2 = tokenize(t, [2, 0, 1], VOCAB)
    assert tok2.first_token.tolist() == [5, 8, 0]
    assert len(set(tok2.first_token.tolist())) == 3


def test_tokenize_overflow_and_unknown_chars():
    with pytest.raises(TokenOverflowError, match="split"):
        tokenize(three_words(), [0, 1, 2], VOCAB, max_tokens=8)
    assert VOCAB.encode("é") == [VOCAB.UNK]


def test_config_validation():
    with pytest.raises(ValueError):
        LinkerConfig(gamma=-1)
    with pytest.raises(ValueError):
        LinkerConfig(alpha_self=0.0)
    with pytest.raises(ValueError):
        LinkerConfig(losses=("ce", "dice"))
    cfg = tiny_cfg(losses=ABLATIONS["focal"])
    assert LinkerConfig.from_dict(cfg.to_dict()) == cfg


# -- fusion and forward -------------------------------------------------------------

def test_fusion_properties():
    m = Linker(tiny_cfg(), dtype=np.float64)
    m.eval()
    t = three_words()
    tok = tokenize(t, [0, 1, 2], VOCAB)
    zero = T.Tensor(np.zeros((3, 16)))
    text_only = m.text_norm(m.token(tok.ids) + m.within(tok.within) + m.modality(np.zeros(1, dtype=np.int64)))
    np.testing.assert_allclose(m.embed_and_fuse(tok, zero).data, text_only.data, atol=1e-12)
    # the two tokens of a word carry the same polygon component
    poly = m.polygon_embeddings(tile_polygons(t))
    fused_pre = m.token(tok.ids) + poly[tok.word_of_token]
    diff = fused_pre.data - m.token(tok.ids).data
    np.testing.assert_array_equal(diff[1], diff[2])
    with pytest.raises(T.ShapeError):
        m.embed_and_fuse(tok, T.Tensor(np.zeros((3, 8))))


def test_image_branch_adds_grid_squared_positions():
    cfg = tiny_cfg(image=True, image_size=16, patch_size=8)
    m = Linker(cfg, dtype=np.float64)
    t = three_words()
    tok = tokenize(t, [0, 1, 2], VOCAB)
    poly = m.polygon_embeddings(tile_polygons(t))
    assert m.embed_and_fuse(tok, poly).shape[0] == tok.n_tokens + 4
    off = Linker(tiny_cfg(), dtype=np.float64)
    assert off.embed_and_fuse(tok, poly).shape[0] == tok.n_tokens
    _, sp = m(t)
    assert sp.P.shape == (3, 3)


def test_forward_shapes_and_reverse_identity():
    m = Linker(tiny_cfg(), dtype=np.float64)
    e, sp = m(three_words())
    assert e.shape == (3, 16)
    np.testing.assert_array_equal(sp.S_rev.data, sp.S.data.T)
    for P in (sp.P.data, sp.P_rev.data):
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-6)
        assert (P > 0).all()
    _, one = m(tile([word(0, "A", 0, 0)]))
    np.testing.assert_allclose(one.P.data, [[1.0]])


def test_permutation_equivariance():
    m = Linker(tiny_cfg(), dtype=np.float64)
    t = synth_tiles(SynthConfig(seed=3, phrases=(3, 4)), 1)[0]
    base = m.predict_proba(t, list(range(t.n)))
    rng = np.random.default_rng(0)
    # presentation order alone does not change the output
    np.testing.assert_allclose(m.predict_proba(t, rng.permutation(t.n).tolist()), base, atol=1e-10)
    # relabelling permutes rows and columns together
    perm = rng.permutation(t.n).tolist()
    moved = m.predict_proba(relabel(t, perm), list(range(t.n)))
    np.testing.assert_allclose(moved, base[np.ix_(perm, perm)], atol=1e-10)


# -- losses ---------------------------------------------------------------------------

def test_ce_examples():
    assert ce_loss(np.eye(3), [0, 1, 2]).item() == 0.0
    assert ce_loss(np.full((4, 4), 0.25), [1, 1, 2, 3]).item() == pytest.approx(math.log(4))
    P = row_stochastic(np.random.default_rng(0), 5)
    tg = np.array([1, 2, 2, 4, 4])
    assert ce_loss(P, tg).item() == pytest.approx(-np.mean([math.log(P[i, tg[i]]) for i in range(5)]))


def test_focal_examples():
    assert focal_loss(np.eye(3), [0, 1, 2]).item() == pytest.approx(0.0, abs=1e-10)
    assert focal_loss([[0.5]], [0], gamma=0, alpha_self=1.0).item() == pytest.approx(math.log(2))
    assert focal_loss([[0.9]], [0]).item() == pytest.approx(-0.25 * 0.1**2 * math.log(0.9), rel=1e-9)
    assert focal_loss([[0.9]], [0]).item() == pytest.approx(2.634e-4, abs=5e-8)


def test_focal_reduces_to_bce():
    rng = np.random.default_rng(1)
    for n in (2, 3, 6):
        P = row_stochastic(rng, n)
        tg = rng.integers(0, n, n)
        y = np.zeros((n, n))
        y[np.arange(n), tg] = 1
        bce = -np.sum(y * np.log(P) + (1 - y) * np.log(1 - P))
        got = focal_loss(P, tg, gamma=0, alpha_self=1.0, alpha_other=1.0).item()
        assert abs(got - bce) < 1e-9


def test_focal_hand_oracle_with_alpha():
    P = np.array([[0.7, 0.3], [0.2, 0.8]])
    tg = [1, 1]  # row 0 -> 1 (alpha 1), row 1 self (alpha 0.25)
    expect = -(0.7**2 * math.log(0.3) + 0.7**2 * math.log(0.3))  # row 0: p=.7 negative, p=.3 positive
    expect += -0.25 * (0.2**2 * math.log(0.8) + 0.2**2 * math.log(0.8))  # row 1: p=.2 negative, p=.8 positive
    assert focal_loss(P, tg).item() == pytest.approx(expect, rel=1e-12)


def test_total_loss_terms():
    S = np.array([[0.3, 1.2], [-0.4, 0.9]])
    sp = ScorePair(T.Tensor(S), T.Tensor(S.T), T.row_softmax(T.Tensor(S)), T.row_softmax(T.Tensor(S.T)))
    succ, pred = [1, 1], [0, 0]  # group [0, 1]
    ce_only = total_loss(sp, succ, pred, ("ce",))
    assert ce_only["total"].item() == pytest.approx(ce_loss(sp.P, succ).item(), rel=1e-12)
    full = total_loss(sp, succ, pred)

    def softmax(z):
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def focal(P, tg):
        out = 0.0
        for i in range(2):
            a = 0.25 if tg[i] == i else 1.0
            for j in range(2):
                p = P[i, j]
                out += -a * ((1 - p) ** 2 * math.log(p) if j == tg[i] else p**2 * math.log(1 - p))
        return out

    P, Pr = softmax(S), softmax(S.T)
    parts = [
        -np.mean([math.log(P[i, succ[i]]) for i in range(2)]),
        focal(P, succ),
        -np.mean([math.log(Pr[i, pred[i]]) for i in range(2)]),
        focal(Pr, pred),
    ]
    for key, val in zip(("ce", "focal", "bi_ce", "bi_focal"), parts):
        assert full[key].item() == pytest.approx(val, rel=1e-10)
    assert full["total"].item() == pytest.approx(sum(parts), rel=1e-10)
    with pytest.raises(ValueError):
        total_loss(sp, succ, pred, ())


def test_ablation_rows():
    assert set(ABLATIONS) == {"plain", "focal", "bidirectional", "full"}
    assert ABLATIONS["plain"] == ("ce",)
    assert set(ABLATIONS["full"]) == {"ce", "focal", "bi_ce", "bi_focal"}


def test_full_objective_gradient():
    m = Linker(tiny_cfg(), dtype=np.float64)
    m.eval()
    t = tile([word(0, "AB", 0, 0), word(1, "C", 130, 0), word(2, "DE", 0, 80), word(3, "F", 300, 300)], [[0, 1], [2], [3]])
    polys = tile_polygons(t)
    err = check_param_grad(m.parameters(), lambda: tile_loss(m, t, [0, 1, 2, 3], polys)["total"], per_param=3)
    assert err < 1e-3


# -- training -------------------------------------------------------------------------

SMALL = SynthConfig(seed=40, phrases=(3, 4), distractor_density=0.3)


def test_overfit_small_set():
    tiles = synth_tiles(SynthConfig(seed=40, phrases=(2, 3), distractor_density=0.3), 20)
    cfg = tiny_cfg(dim=32, poly=PolyEncConfig(dim=32, layers=1, heads=2), losses=("ce",))
    res = train(tiles, cfg, TrainConfig(epochs=160, lr=5e-4, batch=1, stop_patience=1000, patience=1000))
    final = np.mean([tile_loss(res.model, t, sort_words(t))["total"].item() for t in tiles])
    assert final < 0.05


def _tiny_run(shuffle=True, seed=0):
    tiles = synth_tiles(SMALL, 3)
    res = train(tiles, tiny_cfg(seed=seed, dropout=0.1), TrainConfig(epochs=2, shuffle=shuffle, seed=seed))
    return res


def test_training_is_seed_deterministic():
    a, b = _tiny_run(), _tiny_run()
    assert [h["loss"] for h in a.history] == [h["loss"] for h in b.history]
    for k, v in a.model.state_dict().items():
        np.testing.assert_array_equal(v, b.model.state_dict()[k])


def test_shuffle_toggle_changes_trajectory():
    a, b = _tiny_run(True), _tiny_run(False)
    assert any(
        not np.array_equal(v, b.model.state_dict()[k]) for k, v in a.model.state_dict().items()
    )


def test_checkpoint_round_trip(tmp_path):
    m = Linker(tiny_cfg(losses=ABLATIONS["bidirectional"]))
    t = three_words()
    m.save(tmp_path / "m.npz", {"note": 1})
    back = Linker.load(tmp_path / "m.npz")
    assert back.cfg == m.cfg
    np.testing.assert_array_equal(back.predict_proba(t), m.predict_proba(t))
    assert gt_successor_map(t).tolist() == [2, 1, 2] and gt_predecessor_map(t).tolist() == [0, 1, 0]
