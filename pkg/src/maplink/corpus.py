"""Annotation data model and MapText-style file IO.

A file holds one document per tile::

    {"image": "tile_0001", "width": 2000, "height": 2000,
     "groups": [[{"text": "SAINT", "vertices": [[x, y], ...],
                  "illegible": false, "truncated": false}, ...], ...]}

Either a JSON list of such documents, a single document, or JSON Lines.
Group order inside a document is reading order. Word ids follow their
order of appearance unless every record carries an explicit ``"id"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .geometry import as_points, bbox, orient_clockwise

Group = tuple[int, ...]


class AnnotationError(ValueError):
    """Malformed annotation record."""


class ValidationError(ValueError):
    """Well-formed records that violate the data-model invariants."""


@dataclass(frozen=True, eq=False)
class Polygon:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(as_points(self.points), dtype=np.float64)
        if not np.all(np.isfinite(pts)):
            raise ValidationError("polygon has non-finite coordinates")
        keep = np.any(pts != np.roll(pts, 1, axis=0), axis=1)
        keep[0] = True
        pts = pts[keep]
        if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        if len(pts) < 3:
            raise ValidationError(f"polygon needs at least 3 distinct points, got {len(pts)}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self.points, other.points)

    def __hash__(self) -> int:
        return hash(self.points.tobytes())

    def clockwise(self) -> "Polygon":
        return Polygon(orient_clockwise(self.points))


@dataclass(frozen=True)
class Word:
    id: int
    text: str
    polygon: Polygon
    illegible: bool = False
    truncated: bool = False

    @property
    def valid(self) -> bool:
        return not self.illegible and not self.truncated


@dataclass(frozen=True, eq=False)
class Tile:
    image_id: str
    width: float
    height: float
    words: tuple[Word, ...]
    groups: tuple[Group, ...]
    image: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.words)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tile):
            return NotImplemented
        same_image = (self.image is None and other.image is None) or (
            self.image is not None and other.image is not None and np.array_equal(self.image, other.image)
        )
        return (
            self.image_id == other.image_id
            and self.width == other.width
            and self.height == other.height
            and self.words == other.words
            and self.groups == other.groups
            and same_image
        )

    def validate(self) -> "Tile":
        n = len(self.words)
        for i, w in enumerate(self.words):
            if w.id != i:
                raise ValidationError(f"{self.image_id}: word ids must be dense and ordered, found {w.id} at {i}")
            if not w.text and not w.illegible:
                raise ValidationError(f"{self.image_id}: word {i} has empty text but is not illegible")
        seen: dict[int, int] = {}
        for g, group in enumerate(self.groups):
            if not group:
                raise ValidationError(f"{self.image_id}: group {g} is empty")
            for wid in group:
                if not 0 <= wid < n:
                    raise ValidationError(f"{self.image_id}: group {g} references unknown word id {wid}")
                if wid in seen:
                    raise ValidationError(f"{self.image_id}: word {wid} appears in groups {seen[wid]} and {g}")
                seen[wid] = g
        if len(seen) != n:
            missing = sorted(set(range(n)) - set(seen))
            raise ValidationError(f"{self.image_id}: words {missing} belong to no group")
        return self


# -- ground truth views -------------------------------------------------------

def gt_links(tile: Tile) -> set[tuple[int, int]]:
    """Directed reading-order links: consecutive pairs within each group."""
    return {(a, b) for g in tile.groups for a, b in zip(g[:-1], g[1:])}


def gt_successor_map(tile: Tile) -> np.ndarray:
    """Successor index per word; group terminals (and singletons) point to themselves."""
    succ = np.arange(tile.n)
    for a, b in gt_links(tile):
        succ[a] = b
    return succ


def gt_predecessor_map(tile: Tile) -> np.ndarray:
    """Predecessor index per word; group heads point to themselves."""
    pred = np.arange(tile.n)
    for a, b in gt_links(tile):
        pred[b] = a
    return pred


def sort_words(tile: Tile) -> list[int]:
    """Presentation order: bounding-box top-left Y, then X, then id."""
    keys = []
    for w in tile.words:
        x0, y0, _, _ = bbox(w.polygon)
        keys.append((y0, x0, w.id))
    return [k[2] for k in sorted(keys)]


def shuffle_words(tile: Tile, seed) -> list[int]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [int(i) for i in rng.permutation(tile.n)]


def relabel(tile: Tile, order: Iterable[int]) -> Tile:
    """Return a copy whose word ``k`` is the input's word ``order[k]``."""
    order = list(order)
    inv = {old: new for new, old in enumerate(order)}
    words = tuple(
        Word(new, tile.words[old].text, tile.words[old].polygon, tile.words[old].illegible, tile.words[old].truncated)
        for new, old in enumerate(order)
    )
    groups = tuple(tuple(inv[w] for w in g) for g in tile.groups)
    return Tile(tile.image_id, tile.width, tile.height, words, groups, tile.image)


# -- file IO ------------------------------------------------------------------

def _parse_word(rec, where: str, width: float, height: float) -> dict:
    if not isinstance(rec, dict):
        raise AnnotationError(f"{where}: word record must be an object")
    try:
        verts = np.asarray(rec["vertices"], dtype=np.float64)
    except KeyError:
        raise AnnotationError(f"{where}: missing 'vertices'") from None
    except (TypeError, ValueError):
        raise AnnotationError(f"{where}: 'vertices' is not a list of [x, y] pairs") from None
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise AnnotationError(f"{where}: polygon needs at least 3 [x, y] vertices")
    verts = np.clip(verts, 0.0, [width, height])
    try:
        poly = Polygon(verts).clockwise()
    except ValidationError as exc:
        raise AnnotationError(f"{where}: {exc}") from None
    text = rec.get("text", "")
    if text is None:
        text = ""
    if not isinstance(text, str):
        raise AnnotationError(f"{where}: 'text' must be a string")
    return {
        "id": rec.get("id"),
        "text": text,
        "polygon": poly,
        "illegible": bool(rec.get("illegible", False)),
        "truncated": bool(rec.get("truncated", False)),
    }


def _load_image(ref: str, base: Path) -> np.ndarray:
    path = base / ref
    if path.suffix == ".npy":
        return np.load(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def tile_from_doc(doc, index: int = 0, base: Path | None = None) -> Tile:
    where = f"record {index}"
    if not isinstance(doc, dict) or "groups" not in doc:
        raise AnnotationError(f"{where}: expected an object with 'groups'")
    image_id = str(doc.get("image", doc.get("image_id", f"tile_{index:05d}")))
    width = float(doc.get("width", 2000))
    height = float(doc.get("height", 2000))
    if width <= 0 or height <= 0:
        raise AnnotationError(f"{where}: non-positive tile size")
    if not isinstance(doc["groups"], list):
        raise AnnotationError(f"{where}: 'groups' must be a list")
    records = []
    groups_pos = []
    for g, group in enumerate(doc["groups"]):
        if not isinstance(group, list) or not group:
            raise AnnotationError(f"{where}, group {g}: must be a non-empty list of words")
        pos = []
        for k, rec in enumerate(group):
            records.append(_parse_word(rec, f"{where}, group {g}, word {k}", width, height))
            pos.append(len(records) - 1)
        groups_pos.append(pos)

    explicit = [r["id"] for r in records]
    if all(i is not None for i in explicit) and records:
        ids = [int(i) for i in explicit]
        if sorted(ids) != list(range(len(ids))):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            if dup:
                raise ValidationError(f"{image_id}: word {dup[0]} appears in more than one group")
            raise ValidationError(f"{image_id}: word ids must be dense in [0, {len(ids)})")
    else:
        ids = list(range(len(records)))
    words = [None] * len(records)
    for rec, wid in zip(records, ids):
        words[wid] = Word(wid, rec["text"], rec["polygon"], rec["illegible"], rec["truncated"])
    groups = tuple(tuple(ids[p] for p in pos) for pos in groups_pos)
    image = None
    if doc.get("image_path") and base is not None:
        image = _load_image(doc["image_path"], base)
    return Tile(image_id, width, height, tuple(words), groups, image).validate()


def tile_to_doc(tile: Tile, image_path: str | None = None) -> dict:
    groups = []
    for g in tile.groups:
        recs = []
        for wid in g:
            w = tile.words[wid]
            recs.append(
                {
                    "id": w.id,
                    "text": w.text,
                    "vertices": [[float(x), float(y)] for x, y in w.polygon.points],
                    "illegible": w.illegible,
                    "truncated": w.truncated,
                }
            )
        groups.append(recs)
    doc = {"image": tile.image_id, "width": tile.width, "height": tile.height, "groups": groups}
    if image_path:
        doc["image_path"] = image_path
    return doc


def load_tiles(path, format: str = "auto") -> list[Tile]:
    """Read tiles from a JSON document, JSON list, or JSON Lines file."""
    path = Path(path)
    text = path.read_text()
    if format == "auto":
        format = "jsonl" if path.suffix == ".jsonl" else "json"
    if format == "jsonl":
        docs = []
        for lineno, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            try:
                docs.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise AnnotationError(f"record {len(docs)} (line {lineno + 1}): {exc.msg}") from None
    elif format == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"{path}: {exc.msg} at line {exc.lineno}") from None
        docs = data if isinstance(data, list) else [data]
    else:
        raise ValueError(f"unknown annotation format {format!r}")
    return [tile_from_doc(doc, i, path.parent) for i, doc in enumerate(docs)]


def save_tiles(tiles: Iterable[Tile], path, image_paths: dict[str, str] | None = None) -> None:
    path = Path(path)
    image_paths = image_paths or {}
    docs = [tile_to_doc(t, image_paths.get(t.image_id)) for t in tiles]
    if path.suffix == ".jsonl":
        path.write_text("".join(json.dumps(d, separators=(",", ":")) + "\n" for d in docs))
    else:
        path.write_text(json.dumps(docs, separators=(",", ":")))


def dataset_stats(tiles: Iterable[Tile]) -> dict[str, int]:
    """Counts in the layout of the benchmark statistics table."""
    stats = {"tiles": 0, "words": 0, "valid_words": 0, "groups": 0, "multi_word_groups": 0}
    for t in tiles:
        stats["tiles"] += 1
        stats["words"] += t.n
        stats["valid_words"] += sum(w.valid for w in t.words)
        stats["groups"] += len(t.groups)
        stats["multi_word_groups"] += sum(len(g) > 1 for g in t.groups)
    return stats
