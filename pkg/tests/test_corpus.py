import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from maplink.corpus import (
    AnnotationError,
    Polygon,
    Tile,
    ValidationError,
    dataset_stats,
    gt_links,
    gt_predecessor_map,
    gt_successor_map,
    load_tiles,
    relabel,
    save_tiles,
    shuffle_words,
    sort_words,
    tile_from_doc,
)
from maplink.geometry import is_clockwise

from _helpers import tile, word


def _rec(x, y, text="AB", **kw):
    return {"text": text, "vertices": [[x, y], [x + 50, y], [x + 50, y + 20], [x, y + 20]], **kw}


def test_minimal_file(tmp_path):
    p = tmp_path / "one.json"
    p.write_text(json.dumps({"image": "t", "width": 100, "height": 100, "groups": [[_rec(0, 0), _rec(60, 0, "CD")]]}))
    (t,) = load_tiles(p)
    assert t.n == 2 and t.groups == ((0, 1),)
    assert [w.text for w in t.words] == ["AB", "CD"]


def test_load_normalizes_to_clockwise_and_clamps():
    ccw = {"text": "A", "vertices": [[0, 0], [0, 20], [50, 20], [50, 0]]}
    out = {"text": "B", "vertices": [[90, 0], [120, 0], [120, 10], [90, 10]]}
    t = tile_from_doc({"width": 100, "height": 100, "groups": [[ccw], [out]]})
    assert all(is_clockwise(w.polygon.points) for w in t.words)
    assert t.words[1].polygon.points[:, 0].max() == 100.0


def test_word_in_two_groups_is_rejected():
    doc = {"groups": [[dict(_rec(0, 0), id=0), dict(_rec(60, 0), id=1)], [dict(_rec(0, 50), id=1)]]}
    with pytest.raises(ValidationError, match="word 1"):
        tile_from_doc(doc)
    with pytest.raises(ValidationError, match="word 5"):
        Tile("x", 10, 10, tuple(word(i, "AB", 0, 0).__class__(i, "AB", word(i, "AB", 0, 0).polygon) for i in range(6)),
             ((0, 1, 2, 5), (3, 4, 5))).validate()


def test_unknown_word_id_and_bad_records(tmp_path):
    with pytest.raises(ValidationError, match="unknown word id"):
        tile([word(0, "AB", 0, 0)], [[0, 3]])
    with pytest.raises(AnnotationError, match="record 0"):
        tile_from_doc({"groups": [[{"text": "A", "vertices": [[0, 0], [1, 1]]}]]})
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps({"groups": [[_rec(0, 0)]]}) + "\n{oops\n")
    with pytest.raises(AnnotationError, match="record 1"):
        load_tiles(p)
    with pytest.raises(ValidationError):
        tile([word(0, "", 0, 0)])  # empty text must be flagged illegible
    # repeated consecutive vertices collapse; fewer than 3 distinct points is an error
    assert len(Polygon(np.array([[0, 0], [0, 0], [1, 1], [2, 0]], dtype=float))) == 3
    with pytest.raises(ValidationError):
        Polygon(np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float))


@pytest.mark.parametrize("suffix", [".json", ".jsonl"])
def test_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    tiles = []
    for k in range(3):
        words = [word(i, "AB" * (i + 1), *rng.uniform(150, 800, 2), angle=rng.uniform(-1, 1)) for i in range(5)]
        words.append(word(5, "", 900, 900, illegible=True))
        tiles.append(tile(words, [[2, 0], [1], [3, 4, 5]], image_id=f"t{k}"))
    p = tmp_path / f"tiles{suffix}"
    save_tiles(tiles, p)
    assert load_tiles(p) == tiles


def test_image_round_trip(tmp_path):
    img = np.random.default_rng(1).random((8, 8, 3)).astype(np.float32)
    np.save(tmp_path / "im.npy", img)
    t = tile([word(0, "AB", 0, 0)], image_id="im")
    p = tmp_path / "t.json"
    save_tiles([t], p, {"im": "im.npy"})
    (back,) = load_tiles(p)
    np.testing.assert_array_equal(back.image, img)


def test_gt_links_examples():
    words = [word(i, "AB", 100 * i, 0) for i in range(3)]
    assert gt_links(tile(words, [[0, 1, 2]])) == {(0, 1), (1, 2)}
    assert gt_links(tile(words, [[0], [1, 2]])) == {(1, 2)}
    assert gt_links(tile(words)) == set()


def test_successor_map_examples():
    words = [word(i, "AB", 100 * i, 0) for i in range(3)]
    assert gt_successor_map(tile(words, [[0, 1], [2]])).tolist() == [1, 1, 2]
    assert gt_successor_map(tile(words)).tolist() == [0, 1, 2]
    assert gt_successor_map(tile(words, [[0, 1, 2]])).tolist() == [1, 2, 2]
    assert gt_predecessor_map(tile(words, [[2, 0, 1]])).tolist() == [2, 0, 2]


@st.composite
def partitioned_tiles(draw):
    n = draw(st.integers(1, 9))
    perm = draw(st.permutations(list(range(n))))
    cuts = sorted(draw(st.sets(st.integers(1, max(1, n - 1)), max_size=n - 1))) if n > 1 else []
    bounds = [0, *cuts, n]
    groups = [list(perm[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
    return tile([word(i, "AB", 60 * i, 30 * (i % 3)) for i in range(n)], groups)


@given(partitioned_tiles())
def test_links_and_successors_are_mutually_derivable(t):
    succ = gt_successor_map(t)
    assert {(i, int(j)) for i, j in enumerate(succ) if i != j} == gt_links(t)
    assert all(a != b for a, b in gt_links(t))
    assert len(gt_links(t)) == sum(len(g) - 1 for g in t.groups)


@given(partitioned_tiles(), st.randoms(use_true_random=False))
def test_relabel_preserves_links(t, rnd):
    order = list(range(t.n))
    rnd.shuffle(order)
    moved = relabel(t, order)
    inv = {old: new for new, old in enumerate(order)}
    assert gt_links(moved) == {(inv[a], inv[b]) for a, b in gt_links(t)}


def test_sort_words_examples():
    t = tile([word(0, "AB", 10, 0), word(1, "AB", 5, 0)])
    assert sort_words(t) == [1, 0]
    same = tile([word(0, "AB", 5, 5), word(1, "AB", 5, 5), word(2, "AB", 5, 5)])
    assert sort_words(same) == [0, 1, 2]


def test_sort_words_matches_lexicographic_oracle():
    rng = np.random.default_rng(7)
    words = [word(i, "AB", *np.round(rng.uniform(0, 50, 2)), angle=rng.uniform(-0.5, 0.5)) for i in range(40)]
    t = tile(words)
    keys = {w.id: (w.polygon.points[:, 1].min(), w.polygon.points[:, 0].min(), w.id) for w in t.words}
    assert sort_words(t) == sorted(keys, key=keys.get)


def test_shuffle_examples():
    t = tile([word(i, "AB", 60 * i, 0) for i in range(5)])
    assert shuffle_words(t, 3) == shuffle_words(t, 3)
    assert sorted(shuffle_words(t, 3)) == list(range(5))
    assert shuffle_words(tile([word(0, "AB", 0, 0)]), 9) == [0]


def test_shuffle_is_uniform_over_three_words():
    t = tile([word(i, "AB", 60 * i, 0) for i in range(3)])
    rng = np.random.default_rng(0)
    counts = Counter(tuple(shuffle_words(t, rng)) for _ in range(10_000))
    assert len(counts) == 6
    _, p = stats.chisquare(list(counts.values()))
    assert p > 0.001


def test_dataset_stats_layout():
    words = [word(0, "AB", 0, 0), word(1, "", 100, 0, illegible=True), word(2, "CD", 200, 0, truncated=True)]
    s = dataset_stats([tile(words, [[0, 1], [2]]), tile(words[:1])])
    assert s == {"tiles": 2, "words": 4, "valid_words": 2, "groups": 3, "multi_word_groups": 1}
