"""Geometry-only reference linkers.

Two methods: link words whose oriented boxes are within a few character
widths of each other, or build a minimum spanning tree under a hand-made
pairwise cost, cap every word at two links, and read each remaining path
top to bottom, left to right.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .corpus import Tile, Word


@dataclass(frozen=True)
class HeuristicWeights:
    w_dist: float = 1.0
    w_height: float = 1.0
    w_angle: float = 1.0
    w_caps: float = 1.0

    def __post_init__(self):
        vals = (self.w_dist, self.w_height, self.w_angle, self.w_caps)
        if any(v < 0 for v in vals):
            raise ValueError("heuristic weights must be non-negative")
        if not any(vals):
            raise ValueError("heuristic weights must not all be zero")

    @classmethod
    def parse(cls, text: str) -> "HeuristicWeights":
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated weights, got {text!r}")
        return cls(*parts)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w_dist, self.w_height, self.w_angle, self.w_caps)


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


# -- character distance ---------------------------------------------------------

def char_distance_ratios(tile: Tile, max_chars: float = 2.0, width_rule: str = "min") -> dict[tuple[int, int], float]:
    """Box distance in character widths for every pair closer than ``max_chars``.

    The character width of a pair is the min (or max) of the two words'
    box-width / letter-count. Words without text are skipped.
    """
    pick = {"min": min, "max": max}[width_rule]
    words = [w for w in tile.words if w.text]
    boxes = {w.id: geometry.oriented_box(w.polygon) for w in words}
    cw = {w.id: boxes[w.id].width / len(w.text) for w in words}
    corners = {k: b.corners() for k, b in boxes.items()}
    lo = {k: c.min(axis=0) for k, c in corners.items()}
    hi = {k: c.max(axis=0) for k, c in corners.items()}
    out = {}
    for a, b in itertools.combinations(words, 2):
        limit = max_chars * pick(cw[a.id], cw[b.id])
        # axis-aligned hulls never sit farther apart than the boxes themselves
        gap = np.maximum(0.0, np.maximum(lo[a.id] - hi[b.id], lo[b.id] - hi[a.id]))
        if float(np.hypot(*gap)) > limit:
            continue
        d = geometry.box_distance(boxes[a.id], boxes[b.id])
        if d <= limit:
            out[_edge(a.id, b.id)] = d / pick(cw[a.id], cw[b.id])
    return out


def char_distance_link(tile: Tile, threshold_chars: float = 2.0, width_rule: str = "min") -> set[tuple[int, int]]:
    """Undirected links between words whose boxes are within ``threshold_chars`` characters."""
    return set(char_distance_ratios(tile, threshold_chars, width_rule))


# -- heuristic MST --------------------------------------------------------------

def caps_class(text: str) -> str:
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return "none"
    if all(c.isupper() for c in letters):
        return "upper"
    if all(c.islower() for c in letters):
        return "lower"
    if letters[0].isupper() and all(c.islower() for c in letters[1:]):
        return "title"
    return "mixed"


def angle_difference(a: float, b: float) -> float:
    """Smallest difference between two undirected line angles (mod pi)."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def _features(word: Word):
    box = geometry.oriented_box(word.polygon)
    return np.array(box.center), max(box.height, 1e-9), box.angle, caps_class(word.text)


def _cost(fa, fb, w: HeuristicWeights) -> float:
    (ca, ha, ta, ka), (cb, hb, tb, kb) = fa, fb
    dist = float(np.hypot(*(ca - cb))) / ((ha + hb) / 2)
    return (
        w.w_dist * dist
        + w.w_height * abs(math.log(ha / hb))
        + w.w_angle * angle_difference(ta, tb)
        + w.w_caps * float(ka != kb)
    )


def heuristic_cost(a: Word, b: Word, weights: HeuristicWeights = HeuristicWeights()) -> float:
    """Weighted sum of relative center distance, log height ratio, angle gap and a case mismatch flag."""
    return _cost(_features(a), _features(b), weights)


def cost_matrix(tile: Tile, weights: HeuristicWeights = HeuristicWeights()) -> np.ndarray:
    feats = [_features(w) for w in tile.words]
    n = len(feats)
    c = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        c[i, j] = c[j, i] = _cost(feats[i], feats[j], weights)
    return c


def prim(costs: np.ndarray) -> set[tuple[int, int]]:
    """Minimum spanning tree of a complete graph given by a symmetric cost matrix."""
    n = len(costs)
    if n <= 1:
        return set()
    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    parent = np.full(n, -1)
    best[0] = 0.0
    edges = set()
    for _ in range(n):
        cand = np.where(in_tree, np.inf, best)
        u = int(np.argmin(cand))
        in_tree[u] = True
        if parent[u] >= 0:
            edges.add(_edge(int(parent[u]), u))
        closer = ~in_tree & (costs[u] < best)
        best[closer] = costs[u][closer]
        parent[closer] = u
    return edges


def mst_link(tile: Tile, weights: HeuristicWeights = HeuristicWeights()) -> set[tuple[int, int]]:
    return prim(cost_matrix(tile, weights))


def edge_costs(links, costs: np.ndarray) -> dict[tuple[int, int], float]:
    return {e: float(costs[e]) for e in links}


def cut_edges(links, costs, max_degree: int = 2) -> set[tuple[int, int]]:
    """Drop the most expensive edge touching an over-full word until no word exceeds ``max_degree``.

    ``costs`` is a mapping edge -> cost or a cost matrix. Ties go to the
    larger edge tuple, so the order is fully determined.
    """
    links = {_edge(*e) for e in links}
    lookup = (lambda e: float(costs[e])) if isinstance(costs, np.ndarray) else (lambda e: float(costs[_edge(*e)]))
    degree: dict[int, int] = {}
    for a, b in links:
        degree[a] = degree.get(a, 0) + 1
        degree[b] = degree.get(b, 0) + 1
    for e in sorted(links, key=lambda e: (lookup(e), e), reverse=True):
        a, b = e
        if degree[a] > max_degree or degree[b] > max_degree:
            links.discard(e)
            degree[a] -= 1
            degree[b] -= 1
    return links


def break_cycles(links, costs) -> set[tuple[int, int]]:
    """Remove the most expensive edge of every cycle (keeps a minimum spanning forest)."""
    lookup = (lambda e: float(costs[e])) if isinstance(costs, np.ndarray) else (lambda e: float(costs[_edge(*e)]))
    parent: dict[int, int] = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    kept = set()
    for e in sorted({_edge(*e) for e in links}, key=lambda e: (lookup(e), e)):
        ra, rb = find(e[0]), find(e[1])
        if ra != rb:
            parent[ra] = rb
            kept.add(e)
    return kept


def components(links, n: int) -> list[list[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in links:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(find(i), []).append(i)
    return list(comps.values())


def order_paths(links, tile: Tile, costs=None) -> list[list[int]]:
    """Connected components, each read by top-left Y then X.

    With ``costs`` any cycle is first cut at its most expensive edge (this
    only matters for callers that inspect the edges; membership is unchanged).
    """
    if costs is not None:
        links = break_cycles(links, costs)
    key = {}
    for w in tile.words:
        x0, y0, _, _ = geometry.bbox(w.polygon)
        key[w.id] = (y0, x0, w.id)
    groups = [sorted(c, key=key.__getitem__) for c in components(links, tile.n)]
    groups.sort(key=lambda g: key[g[0]])
    return groups


# -- full pipelines ---------------------------------------------------------------

def chardist_groups(tile: Tile, threshold_chars: float = 2.0, width_rule: str = "min") -> list[list[int]]:
    return order_paths(char_distance_link(tile, threshold_chars, width_rule), tile)


def mst_groups(tile: Tile, weights: HeuristicWeights = HeuristicWeights(), max_cost: float | None = None) -> list[list[int]]:
    """MST, optional pruning of edges above ``max_cost``, degree cap of two, then path ordering."""
    costs = cost_matrix(tile, weights)
    links = prim(costs)
    if max_cost is not None:
        links = {e for e in links if costs[e] <= max_cost}
    return order_paths(cut_edges(links, costs), tile, costs)


def tune(tiles: list[Tile], method: str, grid=None) -> tuple[dict, float]:
    """Grid search of baseline settings on ``tiles`` maximising pooled link F.

    Returns the best keyword arguments for :func:`chardist_groups` or
    :func:`mst_groups` and the F it reached.
    """
    from .metrics import LinkScore, link_score

    if method == "chardist":
        grid = grid or [{"threshold_chars": t} for t in (0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0)]
        top = max(kw["threshold_chars"] for kw in grid)
        ratios = [char_distance_ratios(t, top) for t in tiles]

        def run(k, kw):
            return order_paths({e for e, r in ratios[k].items() if r <= kw["threshold_chars"]}, tiles[k])

    elif method == "mst":
        ws = [(1, 1, 1, 1), (1, 2, 2, 1), (1, 4, 4, 1), (1, 4, 4, 0), (1, 2, 4, 2), (1, 0, 0, 0)]
        grid = grid or [{"weights": HeuristicWeights(*w), "max_cost": m} for w in ws for m in (None, 2.0, 3.0, 4.0, 6.0)]

        def run(k, kw):
            return mst_groups(tiles[k], **kw)

    else:
        raise ValueError(f"unknown baseline method {method!r}")
    best, best_f = None, -1.0
    for kw in grid:
        total = LinkScore(0, 0, 0)
        for k, t in enumerate(tiles):
            total = total + link_score(run(k, kw), t)
        if total.f > best_f:
            best, best_f = kw, total.f
    return best, best_f
