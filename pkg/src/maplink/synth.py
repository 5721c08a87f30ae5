"""Synthetic map tiles with known reading-order groups.

Phrases are laid out along straight or circular-arc baselines; words of one
phrase share height, rotation and curvature. Some phrases are spread out
with wide gaps (as region labels on maps are), and distractor words are
dropped either at random or inside those gaps with a different size and
orientation. The optional raster draws one filled box per character.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from shapely.geometry import Polygon as _SPoly
from shapely.strtree import STRtree

from .corpus import Polygon, Tile, Word

PREFIXES = [
    "SAINT", "NEW", "NORTH", "SOUTH", "EAST", "WEST", "LAKE", "MOUNT", "PORT", "FORT", "SAN", "RIO",
    "CAPE", "BIG", "LITTLE", "UPPER", "LOWER", "GRAND", "OLD", "GREAT",
]
SUFFIXES = [
    "RIVER", "CREEK", "LAKE", "BAY", "ISLAND", "HILLS", "VALLEY", "COUNTY", "SPRINGS", "JUNCTION",
    "CITY", "PARK", "ROAD", "AVENUE", "STREET", "MOUNTAINS", "FALLS", "HARBOR", "POINT", "RANGE",
]
CONNECTORS = ["AND", "OF", "DE", "DEL"]
SYLLABLES = [
    "HEL", "EN", "A", "VER", "DEN", "GRAN", "DE", "RO", "SA", "LI", "NA", "MAR", "TON", "WIL", "SON",
    "BER", "KE", "LEY", "MIL", "FORD", "HAM", "CAS", "TER", "NOR", "VAL", "MON", "TE", "RI", "CO", "PA",
]


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    tile_size: float = 2000.0
    phrases: tuple[int, int] = (8, 14)
    # probability of phrase lengths 1, 2, 3, ...
    phrase_length_weights: tuple[float, ...] = (0.35, 0.35, 0.2, 0.1)
    font_height: tuple[float, float] = (28.0, 64.0)
    rotation_deg: tuple[float, float] = (-40.0, 40.0)
    horizontal_prob: float = 0.4
    curved_prob: float = 0.3
    # signed baseline curvature magnitude range in 1/px
    curvature: tuple[float, float] = (1 / 3000, 1 / 1200)
    char_aspect: tuple[float, float] = (0.55, 0.75)
    gap: tuple[float, float] = (0.5, 1.3)  # in font heights
    spread_prob: float = 0.25
    spread_gap: tuple[float, float] = (2.5, 6.0)
    distractor_density: float = 0.6  # distractors per phrase
    interleave_prob: float = 0.5
    margin: float = 8.0
    max_retries: int = 200
    render: bool = False
    render_size: int = 256
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        fields = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**fields)


# -- text ---------------------------------------------------------------------

def _name(rng) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(int(rng.integers(2, 4))))


def _phrase_text(length: int, rng) -> list[str]:
    if length == 1:
        return [_name(rng)]
    if length == 2:
        return [rng.choice(PREFIXES), _name(rng)] if rng.random() < 0.5 else [_name(rng), rng.choice(SUFFIXES)]
    if length == 3:
        r = rng.random()
        if r < 0.4:
            return [rng.choice(PREFIXES), _name(rng), rng.choice(SUFFIXES)]
        if r < 0.7:
            return [_name(rng), rng.choice(CONNECTORS), _name(rng)]
        return [rng.choice(SUFFIXES), rng.choice(CONNECTORS[1:]), _name(rng)]
    words = [_name(rng), "AND", _name(rng), rng.choice(SUFFIXES)]
    while len(words) < length:
        words.insert(0, rng.choice(PREFIXES))
    return words


def _distractor_text(rng) -> str:
    r = rng.random()
    if r < 0.4:
        return str(int(rng.integers(10, 2000)))
    if r < 0.6:
        return rng.choice(["SEC", "TWP", "RR", "STA", "PO", "SCH", "CH", "MT", "FT"]) + str(int(rng.integers(1, 40)))
    return _name(rng)


def _styled(text: str, style: str) -> str:
    if style == "title" and not text.isdigit():
        return text[:1] + text[1:].lower()
    return text


# -- baseline geometry ----------------------------------------------------------

def _baseline(p0, theta0: float, kappa: float, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Points and tangent angles along a straight or circular baseline."""
    s = np.asarray(s, dtype=np.float64)
    if abs(kappa) < 1e-12:
        theta = np.full_like(s, theta0)
        pts = np.stack([p0[0] + s * math.cos(theta0), p0[1] + s * math.sin(theta0)], axis=-1)
    else:
        theta = theta0 + kappa * s
        pts = np.stack(
            [p0[0] + (np.sin(theta) - math.sin(theta0)) / kappa, p0[1] - (np.cos(theta) - math.cos(theta0)) / kappa],
            axis=-1,
        )
    return pts, theta


def _band(p0, theta0, kappa, s0, s1, h, k=8) -> np.ndarray:
    """Quadrilateral-like band between arclength s0..s1: top edge left to right,
    bottom edge right to left (clockwise on screen)."""
    s = np.linspace(s0, s1, k)
    base, theta = _baseline(p0, theta0, kappa, s)
    normal = np.stack([np.sin(theta), -np.cos(theta)], axis=-1)
    top = base + h * normal
    return np.concatenate([top, base[::-1]])


@dataclass
class _Placed:
    texts: list[str]
    polys: list[np.ndarray]
    chars: list[list[np.ndarray]]
    gaps: list[tuple[np.ndarray, float, float]]  # (midpoint, gap length, angle)
    height: float
    angle: float


def _layout(texts, h, theta0, kappa, gaps, aspect, p0) -> _Placed:
    cw = aspect * h
    s = 0.0
    polys, chars, gap_info = [], [], []
    for i, t in enumerate(texts):
        w = cw * len(t)
        polys.append(_band(p0, theta0, kappa, s, s + w, h))
        boxes = []
        for c in range(len(t)):
            a = s + c * cw + 0.12 * cw
            b = s + (c + 1) * cw - 0.12 * cw
            boxes.append(_band(p0, theta0, kappa, a, b, 0.8 * h, k=2))
        chars.append(boxes)
        s += w
        if i < len(texts) - 1:
            g = gaps[i] * h
            mid, ang = _baseline(p0, theta0, kappa, np.array([s + g / 2]))
            normal = np.array([math.sin(ang[0]), -math.cos(ang[0])])
            gap_info.append((mid[0] + 0.5 * h * normal, g, float(ang[0])))
            s += g
    return _Placed(list(texts), polys, chars, gap_info, h, theta0)


class _Canvas:
    """Collision bookkeeping for placed words."""

    def __init__(self, size: float, margin: float):
        self.size = size
        self.margin = margin
        self.shapes: list = []

    def fits(self, polys, pad: float) -> bool:
        lo, hi = self.margin, self.size - self.margin
        for p in polys:
            if p.min() < lo or p.max() > hi:
                return False
        if not self.shapes:
            return True
        cand = [_SPoly(p).buffer(pad) for p in polys]
        tree = STRtree(self.shapes)
        for c in cand:
            if len(tree.query(c, predicate="intersects")):
                return False
        return True

    def add(self, polys) -> None:
        self.shapes.extend(_SPoly(p) for p in polys)


def synth_tile(cfg: SynthConfig, index: int | None = None) -> Tile:
    """Generate one tile. ``index`` selects a tile within a seeded series."""
    rng = np.random.default_rng(cfg.seed if index is None else [cfg.seed, index])
    size = cfg.tile_size
    canvas = _Canvas(size, cfg.margin)
    weights = np.asarray(cfg.phrase_length_weights, dtype=np.float64)
    weights = weights / weights.sum()
    n_phrases = int(rng.integers(cfg.phrases[0], cfg.phrases[1] + 1))

    placed: list[_Placed] = []
    for _ in range(n_phrases):
        length = int(rng.choice(len(weights), p=weights)) + 1
        texts = _phrase_text(length, rng)
        style = "upper" if rng.random() < 0.6 else "title"
        texts = [_styled(t, style) for t in texts]
        for _attempt in range(cfg.max_retries):
            h = rng.uniform(*cfg.font_height)
            if rng.random() < cfg.horizontal_prob:
                theta0 = 0.0
            else:
                theta0 = math.radians(rng.uniform(*cfg.rotation_deg))
            kappa = 0.0
            if length > 1 and rng.random() < cfg.curved_prob:
                kappa = rng.uniform(*cfg.curvature) * rng.choice([-1.0, 1.0])
            spread = length > 1 and rng.random() < cfg.spread_prob
            gap_range = cfg.spread_gap if spread else cfg.gap
            gaps = [rng.uniform(*gap_range) for _ in range(length - 1)]
            aspect = rng.uniform(*cfg.char_aspect)
            p0 = rng.uniform(cfg.margin, size - cfg.margin, 2)
            cand = _layout(texts, h, theta0, kappa, gaps, aspect, p0)
            if canvas.fits(cand.polys, pad=0.25 * h):
                canvas.add(cand.polys)
                placed.append(cand)
                break
        else:
            raise GenerationError(f"could not place phrase {texts} after {cfg.max_retries} attempts")

    n_distract = int(rng.binomial(max(1, round(2 * cfg.distractor_density * n_phrases)), 0.5))
    wide_gaps = [g for p in placed for g in p.gaps if g[1] > 2.0 * p.height]
    for _ in range(n_distract):
        text = _styled(_distractor_text(rng), "upper" if rng.random() < 0.6 else "title")
        for _attempt in range(cfg.max_retries):
            h = rng.uniform(*cfg.font_height)
            aspect = rng.uniform(*cfg.char_aspect)
            w = aspect * h * len(text)
            if wide_gaps and rng.random() < cfg.interleave_prob:
                mid, glen, ang = wide_gaps[int(rng.integers(len(wide_gaps)))]
                theta0 = ang + math.radians(rng.uniform(35, 90)) * rng.choice([-1.0, 1.0])
                theta0 = math.atan2(math.sin(theta0), math.cos(theta0))
                if abs(theta0) > math.pi / 2:
                    theta0 -= math.copysign(math.pi, theta0)
                # centre the word on the gap midpoint
                direction = np.array([math.cos(theta0), math.sin(theta0)])
                normal = np.array([math.sin(theta0), -math.cos(theta0)])
                p0 = mid - direction * w / 2 - normal * h / 2
            else:
                theta0 = 0.0 if rng.random() < cfg.horizontal_prob else math.radians(rng.uniform(*cfg.rotation_deg))
                p0 = rng.uniform(cfg.margin, size - cfg.margin, 2)
            cand = _layout([text], h, theta0, 0.0, [], aspect, p0)
            if canvas.fits(cand.polys, pad=0.15 * h):
                canvas.add(cand.polys)
                placed.append(cand)
                break
        # a distractor that does not fit is dropped; it is optional clutter

    # assign shuffled ids so ids carry no layout information
    entries = [(pi, wi) for pi, p in enumerate(placed) for wi in range(len(p.texts))]
    ids = rng.permutation(len(entries))
    words: list = [None] * len(entries)
    groups = []
    k = 0
    for pi, p in enumerate(placed):
        g = []
        for wi, t in enumerate(p.texts):
            wid = int(ids[k])
            words[wid] = Word(wid, str(t), Polygon(np.clip(p.polys[wi], 0.0, size)))
            g.append(wid)
            k += 1
        groups.append(tuple(g))

    image = render_boxes(placed, size, cfg.render_size) if cfg.render else None
    image_id = f"synth_{cfg.seed}_{index if index is not None else 0:05d}"
    return Tile(image_id, float(size), float(size), tuple(words), tuple(groups), image).validate()


def synth_tiles(cfg: SynthConfig, count: int, start: int = 0) -> list[Tile]:
    return [synth_tile(cfg, i) for i in range(start, start + count)]


def render_boxes(placed: list[_Placed], size: float, out_size: int) -> np.ndarray:
    from PIL import Image, ImageDraw

    scale = out_size / size
    im = Image.new("RGB", (out_size, out_size), (240, 233, 214))
    draw = ImageDraw.Draw(im)
    for p in placed:
        for boxes in p.chars:
            for b in boxes:
                draw.polygon([(float(x * scale), float(y * scale)) for x, y in b], fill=(40, 30, 28))
    return np.asarray(im, dtype=np.float32) / 255.0


def with_seed(cfg: SynthConfig, seed: int) -> SynthConfig:
    return replace(cfg, seed=seed)
