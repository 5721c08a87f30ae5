import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maplink.baselines import (
    HeuristicWeights,
    angle_difference,
    break_cycles,
    caps_class,
    char_distance_link,
    chardist_groups,
    cost_matrix,
    cut_edges,
    heuristic_cost,
    mst_groups,
    mst_link,
    order_paths,
    prim,
    tune,
)

from _helpers import tile, word


# -- character distance ---------------------------------------------------------

def test_char_distance_hand_arithmetic():
    # 100 px wide, 4 letters -> 25 px per character; threshold 2 chars = 50 px
    near = tile([word(0, "ABCD", 0, 0), word(1, "EFGH", 130, 0)])
    far = tile([word(0, "ABCD", 0, 0), word(1, "EFGH", 160, 0)])
    assert char_distance_link(near) == {(0, 1)}  # gap 30 <= 50
    assert char_distance_link(far) == set()  # gap 60 > 50
    assert char_distance_link(far, threshold_chars=2.4) == {(0, 1)}  # 60 <= 60


def test_char_distance_uses_the_narrower_characters():
    # 25 px chars vs 50 px chars: min rule allows 50 px, max rule 100 px
    t = tile([word(0, "ABCD", 0, 0), word(1, "AB", 170, 0)])
    assert char_distance_link(t) == set()
    assert char_distance_link(t, width_rule="max") == {(0, 1)}


def test_char_distance_single_word_and_illegible():
    assert char_distance_link(tile([word(0, "AB", 0, 0)])) == set()
    t = tile([word(0, "AB", 0, 0), word(1, "", 105, 0, illegible=True)])
    assert char_distance_link(t) == set()


def test_char_distance_rotated_boxes():
    a = word(0, "ABCD", 100, 100, angle=math.radians(30))
    # continue along the same rotated baseline, 20 px gap
    c, s = math.cos(math.radians(30)), math.sin(math.radians(30))
    b = word(1, "EFGH", 100 + 120 * c, 100 + 120 * s, angle=math.radians(30))
    assert char_distance_link(tile([a, b])) == {(0, 1)}


@given(st.permutations(list(range(4))))
def test_char_distance_symmetric(perm):
    pos = [(0, 0), (120, 0), (400, 10), (520, 15)]
    words = [word(k, "ABCD", *pos[p]) for k, p in enumerate(perm)]
    links = char_distance_link(tile(words))
    mapped = {tuple(sorted((perm[a], perm[b]))) for a, b in links}
    assert mapped == {(0, 1), (2, 3)}


# -- heuristic cost ---------------------------------------------------------------

def test_identical_words_cost_is_distance_only():
    a, b = word(0, "Main", 0, 0), word(1, "Road", 150, 0)
    w = HeuristicWeights(2.0, 1.0, 1.0, 1.0)
    assert heuristic_cost(a, b, w) == pytest.approx(2.0 * 150 / 20)


def test_height_and_caps_terms():
    a, b = word(0, "Main", 0, 0, h=10), word(1, "Road", 0, 0, h=20)
    only_h = HeuristicWeights(0, 1, 0, 0)
    assert heuristic_cost(a, b, only_h) == pytest.approx(math.log(2))
    c, d = word(0, "MAIN", 0, 0), word(1, "road", 0, 100)
    assert heuristic_cost(c, d, HeuristicWeights(0, 0, 0, 3.0)) == 3.0


def test_angle_term_is_mod_pi():
    assert angle_difference(math.radians(80), math.radians(-80)) == pytest.approx(math.radians(20))
    a = word(0, "AAAA", 0, 0, angle=math.radians(10))
    b = word(1, "BBBB", 0, 200, angle=math.radians(-20))
    assert heuristic_cost(a, b, HeuristicWeights(0, 0, 1, 0)) == pytest.approx(math.radians(30))


def test_caps_classes():
    assert [caps_class(t) for t in ("MAIN", "main", "Main", "McDonald", "12")] == ["upper", "lower", "title", "mixed", "none"]


def test_weights_validation():
    with pytest.raises(ValueError):
        HeuristicWeights(0, 0, 0, 0)
    with pytest.raises(ValueError):
        HeuristicWeights(-1, 1, 1, 1)
    assert HeuristicWeights.parse("1,2,3,4").as_tuple() == (1, 2, 3, 4)
    with pytest.raises(ValueError):
        HeuristicWeights.parse("1,2")


# -- MST -------------------------------------------------------------------------

def prufer_trees(n):
    """Every labelled spanning tree of K_n (Cayley: n^(n-2) of them)."""
    if n == 1:
        yield set()
        return
    if n == 2:
        yield {(0, 1)}
        return
    for seq in itertools.product(range(n), repeat=n - 2):
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        edges = set()
        for x in seq:
            leaf = min(i for i in range(n) if degree[i] == 1)
            edges.add((min(leaf, x), max(leaf, x)))
            degree[leaf] -= 1
            degree[x] -= 1
        u, v = [i for i in range(n) if degree[i] == 1]
        edges.add((u, v))
        yield edges


def test_prufer_counts_match_cayley():
    for n in range(1, 6):
        assert sum(1 for _ in prufer_trees(n)) == max(1, n ** (n - 2))


def test_three_collinear_words():
    t = tile([word(0, "AB", 0, 0), word(1, "AB", 110, 0), word(2, "AB", 222, 0)])
    assert mst_link(t) == {(0, 1), (1, 2)}
    assert mst_link(tile([word(0, "AB", 0, 0)])) == set()


def random_tile(rng, n):
    texts = ["MAIN", "main", "Main", "RIVER", "Oak", "st"]
    words = [
        word(i, texts[rng.integers(len(texts))], *rng.uniform(0, 800, 2), w=rng.uniform(40, 200), h=rng.uniform(10, 40),
             angle=rng.uniform(-0.6, 0.6))
        for i in range(n)
    ]
    return tile(words)


def test_mst_matches_exhaustive_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        t = random_tile(rng, n)
        c = cost_matrix(t)
        got = mst_link(t)
        assert len(got) == max(0, n - 1)
        best = min(sum(c[e] for e in tr) for tr in prufer_trees(n))
        assert sum(c[e] for e in got) == pytest.approx(best)


def test_prim_spanning_and_acyclic():
    rng = np.random.default_rng(1)
    for n in (2, 5, 9):
        c = rng.random((n, n))
        c = c + c.T
        edges = prim(c)
        assert len(edges) == n - 1
        assert break_cycles(edges, c) == edges  # nothing to break: acyclic


# -- cutting and ordering -----------------------------------------------------------

def test_cut_star_removes_heaviest_edge_only():
    links = {(0, 1), (0, 2), (0, 3)}
    costs = {(0, 1): 1.0, (0, 2): 2.0, (0, 3): 3.0}
    assert cut_edges(links, costs) == {(0, 1), (0, 2)}


def test_cut_edges_trivial_cases():
    path = {(0, 1), (1, 2), (2, 3)}
    assert cut_edges(path, {e: 1.0 for e in path}) == path
    assert cut_edges(set(), {}) == set()


def test_cut_edges_tie_break_is_deterministic():
    links = {(0, 1), (0, 2), (0, 3)}
    costs = {e: 1.0 for e in links}
    assert cut_edges(links, costs) == {(0, 1), (0, 2)}


def _degrees(links):
    d = {}
    for a, b in links:
        d[a] = d.get(a, 0) + 1
        d[b] = d.get(b, 0) + 1
    return d


def test_cut_edges_caps_degree_idempotent_and_monotone():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        c = rng.random((n, n))
        c = c + c.T
        links = prim(c)
        if rng.random() < 0.5:  # add a few extra edges so cycles and hubs occur
            links |= {tuple(sorted(rng.choice(n, 2, replace=False).tolist())) for _ in range(3)}
        cut = cut_edges(links, c)
        before, after = _degrees(links), _degrees(cut)
        assert max(after.values(), default=0) <= 2
        assert all(after.get(v, 0) <= before[v] for v in before)
        assert cut_edges(cut, c) == cut
        assert cut <= links


def test_order_paths_examples():
    vertical = tile([word(0, "AB", 0, 100), word(1, "CD", 0, 0)])
    assert order_paths({(0, 1)}, vertical) == [[1, 0]]
    horizontal = tile([word(0, "AB", 200, 0), word(1, "CD", 0, 0)])
    assert order_paths({(0, 1)}, horizontal) == [[1, 0]]


def test_triangle_cycle_loses_heaviest_edge():
    costs = {(0, 1): 1.0, (1, 2): 2.0, (0, 2): 5.0}
    assert break_cycles(set(costs), costs) == {(0, 1), (1, 2)}
    t = tile([word(0, "AB", 0, 0), word(1, "CD", 120, 0), word(2, "EF", 240, 0)])
    assert order_paths(set(costs), t, costs) == [[0, 1, 2]]


def test_groups_partition_words():
    rng = np.random.default_rng(4)
    t = random_tile(rng, 12)
    for groups in (chardist_groups(t), mst_groups(t), mst_groups(t, max_cost=3.0)):
        assert sorted(w for g in groups for w in g) == list(range(12))


def test_tune_picks_a_grid_point():
    rng = np.random.default_rng(5)
    tiles = [random_tile(rng, 6) for _ in range(3)]
    kw, f = tune(tiles, "chardist", [{"threshold_chars": 1.0}, {"threshold_chars": 3.0}])
    assert kw["threshold_chars"] in (1.0, 3.0) and 0.0 <= f <= 1.0
    with pytest.raises(ValueError):
        tune(tiles, "nearest")
