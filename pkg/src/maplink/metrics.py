"""Link-level and word-level scores and the overall H-mean."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import Tile, gt_links
from .geometry import polygon_iou


def _f(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class LinkScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f(self) -> float:
        return _f(self.precision, self.recall)

    # competition-style aliases
    P_L = precision
    R_L = recall
    F_L = f

    def __add__(self, other: "LinkScore") -> "LinkScore":
        return LinkScore(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"R_L": self.recall, "P_L": self.precision, "F_L": self.f, "tp": self.tp, "fp": self.fp, "fn": self.fn}


def group_links(groups: Iterable[Sequence[int]]) -> set[tuple[int, int]]:
    return {(a, b) for g in groups for a, b in zip(g[:-1], g[1:])}


def link_score(pred_groups: Iterable[Sequence[int]], gt: Tile | set, word_map: dict[int, int] | None = None) -> LinkScore:
    """Compare predicted directed links with the ground truth.

    ``word_map`` maps predicted word ids to ground-truth ids; ``None`` means
    the prediction uses the ground-truth words. A link touching an unmatched
    predicted word is a false positive.
    """
    truth = gt_links(gt) if isinstance(gt, Tile) else set(gt)
    tp = fp = 0
    found = set()
    for a, b in group_links(pred_groups):
        if word_map is not None:
            if a not in word_map or b not in word_map:
                fp += 1
                continue
            a, b = word_map[a], word_map[b]
        if (a, b) in truth and (a, b) not in found:
            tp += 1
            found.add((a, b))
        else:
            fp += 1
    return LinkScore(tp, fp, len(truth) - tp)


def dataset_link_score(scores: Iterable[LinkScore], mode: str = "micro") -> dict:
    """Pool per-tile scores (micro) or average per-tile P/R/F (macro)."""
    scores = list(scores)
    if mode == "micro":
        total = LinkScore(0, 0, 0)
        for s in scores:
            total = total + s
        return total.as_dict()
    if mode == "macro":
        r = float(np.mean([s.recall for s in scores])) if scores else 0.0
        p = float(np.mean([s.precision for s in scores])) if scores else 0.0
        return {"R_L": r, "P_L": p, "F_L": _f(p, r)}
    raise ValueError(f"unknown averaging mode {mode!r}")


# -- words --------------------------------------------------------------------

def levenshtein(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def char_accuracy(pred: str, gt: str) -> float:
    """1 - edit distance / longer length (1 for two empty strings)."""
    longest = max(len(pred), len(gt))
    return 1.0 if longest == 0 else 1.0 - levenshtein(pred, gt) / longest


@dataclass
class Matching:
    pairs: dict[int, int]  # predicted id -> gt id
    ious: dict[int, float]  # predicted id -> IoU of its match

    @classmethod
    def identity(cls, n: int) -> "Matching":
        return cls({i: i for i in range(n)}, {i: 1.0 for i in range(n)})


def word_match(pred_words, gt_words, iou_min: float = 0.5) -> Matching:
    """One-to-one greedy matching by descending IoU; ties by (pred id, gt id)."""
    cand = []
    for p in pred_words:
        for g in gt_words:
            iou = polygon_iou(p.polygon, g.polygon)
            if iou >= iou_min and iou > 0:
                cand.append((-iou, p.id, g.id, iou))
    cand.sort()
    used_p, used_g = set(), set()
    pairs, ious = {}, {}
    for _, pid, gid, iou in cand:
        if pid in used_p or gid in used_g:
            continue
        used_p.add(pid)
        used_g.add(gid)
        pairs[pid] = gid
        ious[pid] = iou
    return Matching(pairs, ious)


@dataclass
class WordScore:
    R: float
    P: float
    F: float
    T: float
    C: float
    matched: int = 0
    n_pred: int = 0
    n_gt: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def word_score(matching: Matching, pred_words, gt_words) -> WordScore:
    """Detection recall/precision over valid gt words, tightness and character accuracy over matches."""
    pred_words = list(pred_words)
    gt_by_id = {w.id: w for w in gt_words}
    pred_by_id = {w.id: w for w in pred_words}
    n_gt = sum(w.valid for w in gt_by_id.values())
    m = len(matching.pairs)
    r = m / n_gt if n_gt else 0.0
    p = m / len(pred_words) if pred_words else 0.0
    if m:
        t = float(np.mean(list(matching.ious.values())))
        c = float(np.mean([char_accuracy(pred_by_id[a].text, gt_by_id[b].text) for a, b in matching.pairs.items()]))
    else:
        t = c = 0.0
    return WordScore(r, p, _f(p, r), t, c, m, len(pred_words), n_gt)


# -- overall ------------------------------------------------------------------

H_MEAN_COMPONENTS = ("R_L", "P_L", "R", "P", "T", "C")


def harmonic_mean(values: Sequence[float]) -> float:
    values = list(values)
    if not values or any(v <= 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


@dataclass
class OverallScore:
    H: float
    components: dict


def h_mean(links: LinkScore | dict, words: WordScore | dict) -> OverallScore:
    """Harmonic mean of link recall/precision, word recall/precision, tightness and character accuracy."""
    ld = links.as_dict() if isinstance(links, LinkScore) else links
    wd = words.as_dict() if isinstance(words, WordScore) else words
    comps = {"R_L": ld["R_L"], "P_L": ld["P_L"], "R": wd["R"], "P": wd["P"], "T": wd["T"], "C": wd["C"]}
    return OverallScore(harmonic_mean(comps.values()), comps)
