"""Transformer encoder that turns a word polygon into a fixed-size embedding.

A polygon is flattened to ``[SUMMARY] x1 y1 x2 y2 ... [PAD] ...``; each
coordinate scalar goes through one shared linear map, the special slots use
learned vectors, and learned absolute position embeddings tell the encoder
which slot is which. The summary slot's output is the polygon embedding.

Pretraining combines masked-coordinate reconstruction with four auxiliary
targets read off the summary embedding: minimum-rectangle angle, bbox
center, first-to-last point distance, and the index of the spatially
closest other polygon in the same tile.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import geometry
from .corpus import Tile
from .numerics import tensor as T
from .numerics.nn import MLP, Embedding, Encoder, LayerNorm, Linear, Module, attention_mask
from .numerics.optim import Adam, warmup_linear_decay
from .numerics.tensor import Tensor

log = logging.getLogger(__name__)

SUMMARY, COORD, PAD = 0, 1, 2
# rows of the special-slot embedding table
_SPECIAL_SUMMARY, _SPECIAL_PAD, _SPECIAL_MASK = 0, 1, 2


class CapacityError(ValueError):
    pass


@dataclass
class PolyEncConfig:
    max_seq_len: int = 34
    points: int = 16
    layers: int = 2
    dim: int = 64
    heads: int = 4
    ff_dim: int = 0  # 0 -> 4 * dim
    dropout: float = 0.0
    mask_prob: float = 0.15
    lambdas: tuple[float, float, float, float] = (0.1, 0.1, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        if self.max_seq_len < 2 * self.points + 1:
            raise CapacityError(
                f"max_seq_len {self.max_seq_len} cannot hold a summary slot plus {self.points} points"
            )
        if any(x < 0 for x in self.lambdas):
            raise ValueError("auxiliary loss weights must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PolyTokenSequence:
    """A batch of flattened polygons: values, slot kinds and mask flags, each (B, L)."""

    values: np.ndarray
    kinds: np.ndarray
    masked: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.masked is None:
            self.masked = np.zeros(self.kinds.shape, dtype=bool)

    @property
    def valid(self) -> np.ndarray:
        return self.kinds != PAD

    def __len__(self) -> int:
        return len(self.values)


def tokenize_polygon(polys, cfg: PolyEncConfig) -> PolyTokenSequence:
    """Lay out one or more normalised polygons as slot sequences."""
    if isinstance(polys, (geometry.NormalizedPolygon, np.ndarray)) and np.ndim(getattr(polys, "points", polys)) == 2:
        polys = [polys]
    L = cfg.max_seq_len
    values = np.zeros((len(polys), L), dtype=np.float64)
    kinds = np.full((len(polys), L), PAD, dtype=np.int8)
    for b, p in enumerate(polys):
        pts = geometry.as_points(p)
        need = 2 * len(pts) + 1
        if need > L:
            raise CapacityError(
                f"polygon with {len(pts)} points needs {need} slots but max_seq_len is {L}; resample it first"
            )
        if pts.min() < 0 or pts.max() > 1:
            raise ValueError("polygon coordinates must be normalised to [0, 1]")
        kinds[b, 0] = SUMMARY
        kinds[b, 1:need] = COORD
        values[b, 1:need] = pts.reshape(-1)
    return PolyTokenSequence(values, kinds)


def mask_coords(seq: PolyTokenSequence, rng, prob: float = 0.15, forced: np.ndarray | None = None):
    """Hide one coordinate (x or y, chosen uniformly) of each point with probability ``prob``.

    ``forced`` optionally gives a boolean (B, points) selection to use instead
    of sampling. Returns the masked sequence and a target triple
    ``(rows, slots, values)``.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    coord = seq.kinds == COORD
    n_points = coord.sum(axis=1) // 2
    width = (seq.kinds.shape[1] - 1) // 2
    if forced is None:
        pick = rng.random((len(seq), width)) < prob
    else:
        pick = np.asarray(forced, dtype=bool)
    pick &= np.arange(width)[None, :] < n_points[:, None]
    which = rng.integers(0, 2, size=pick.shape)
    rows, pts = np.nonzero(pick)
    slots = 1 + 2 * pts + which[rows, pts]
    masked = seq.masked.copy()
    masked[rows, slots] = True
    targets = (rows, slots, seq.values[rows, slots].copy())
    return PolyTokenSequence(seq.values, seq.kinds, masked), targets


class PolygonEncoder(Module):
    def __init__(self, cfg: PolyEncConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.drop_rng = np.random.default_rng(rng.integers(2**63))
        d = cfg.dim
        ff = cfg.ff_dim or 4 * d
        self.coord_proj = Linear(1, d, rng, dtype=dtype)
        self.special = Embedding(3, d, rng, dtype=dtype)
        self.position = Embedding(cfg.max_seq_len, d, rng, dtype=dtype)
        self.emb_norm = LayerNorm(d, dtype=dtype)
        self.encoder = Encoder(cfg.layers, d, cfg.heads, ff, rng, cfg.dropout, self.drop_rng, dtype)
        self.mlm_head = Linear(d, 1, rng, dtype=dtype)
        self.angle_head = MLP(d, d, 1, rng, activation="relu", dtype=dtype)
        self.center_head = MLP(d, d, 2, rng, activation="relu", dtype=dtype)
        self.distance_head = MLP(d, d, 1, rng, activation="relu", dtype=dtype)

    @property
    def dtype(self):
        return self.coord_proj.weight.dtype

    def embed(self, seq: PolyTokenSequence) -> Tensor:
        dt = self.dtype
        live = ((seq.kinds == COORD) & ~seq.masked).astype(dt)[..., None]
        special_ids = np.where(seq.kinds == SUMMARY, _SPECIAL_SUMMARY, _SPECIAL_PAD)
        special_ids = np.where(seq.masked, _SPECIAL_MASK, special_ids)
        coords = self.coord_proj(Tensor(seq.values[..., None].astype(dt)))
        emb = coords * live + self.special(special_ids) * (1.0 - live)
        pos = self.position(np.arange(seq.values.shape[1]))
        return self.emb_norm(emb + pos)

    def forward(self, seq: PolyTokenSequence) -> tuple[Tensor, Tensor]:
        """Returns (summary embeddings (B, D), per-slot outputs (B, L, D))."""
        if seq.values.shape[1] > self.cfg.max_seq_len:
            raise CapacityError(f"sequence length {seq.values.shape[1]} exceeds {self.cfg.max_seq_len}")
        mask = attention_mask(seq.valid, self.dtype)
        h = self.encoder(self.embed(seq), mask)
        return h[:, 0, :], h

    encode = forward


# -- pretraining objective ------------------------------------------------------

@dataclass
class PolygonTargets:
    angle: np.ndarray  # (B,)
    center: np.ndarray  # (B, 2)
    distance: np.ndarray  # (B,)
    closest: np.ndarray  # (B,) index within its tile, -1 if the tile has one polygon
    tile_slices: list[slice]


def tile_polygons(tile: Tile, points: int = 16) -> list[np.ndarray]:
    """Resampled, normalised polygons of a tile in word-id order."""
    return [
        geometry.normalize(geometry.resample(w.polygon, points), tile).points for w in tile.words
    ]


def polygon_targets(groups: list[list[np.ndarray]]) -> PolygonTargets:
    """Auxiliary regression/classification targets, computed in normalised space."""
    angle, center, dist, closest, slices = [], [], [], [], []
    start = 0
    for polys in groups:
        for p in polys:
            angle.append(geometry.min_rect_angle(p))
            center.append(geometry.bbox_center(p))
            dist.append(geometry.first_last_distance(p))
        if len(polys) >= 2:
            closest.extend(geometry.closest_indices(polys).tolist())
        else:
            closest.extend([-1] * len(polys))
        slices.append(slice(start, start + len(polys)))
        start += len(polys)
    return PolygonTargets(np.array(angle), np.array(center).reshape(-1, 2), np.array(dist), np.array(closest), slices)


def concat_targets(parts: list[PolygonTargets]) -> PolygonTargets:
    """Stack per-tile targets (as cached by :func:`pretrain`) into one batch."""
    slices, start = [], 0
    for t in parts:
        for sl in t.tile_slices:
            slices.append(slice(sl.start + start, sl.stop + start))
        start += len(t.angle)
    return PolygonTargets(
        np.concatenate([t.angle for t in parts]),
        np.concatenate([t.center for t in parts]).reshape(-1, 2),
        np.concatenate([t.distance for t in parts]),
        np.concatenate([t.closest for t in parts]),
        slices,
    )


def closest_logits(summary: Tensor, sl: slice) -> Tensor:
    e = summary[sl]
    return T.matmul(e, e.T)


def closest_loss(summary: Tensor, targets: PolygonTargets) -> Tensor | None:
    """Cross-entropy of the closest-polygon choice, self excluded, averaged over polygons."""
    terms = []
    count = 0
    for sl in targets.tile_slices:
        n = sl.stop - sl.start
        if n < 2:
            continue
        logits = closest_logits(summary, sl)
        diag = np.where(np.eye(n, dtype=bool), -1e9, 0.0).astype(logits.dtype)
        logp = T.log_softmax(logits, axis=-1, mask=diag)
        tgt = targets.closest[sl]
        terms.append(T.sum_(logp[np.arange(n), tgt]))
        count += n
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return T.scale(total, -1.0 / count)


def combine_losses(parts: dict, lambdas) -> Tensor:
    """mlm + l1*angle + l2*center + l3*distance + l4*closest (missing terms skipped)."""
    total = parts["mlm"]
    for lam, key in zip(lambdas, ("angle", "center", "distance", "closest")):
        term = parts.get(key)
        if term is not None and lam != 0:
            total = total + T.scale(term, lam)
    return total


def _mse(pred: Tensor, target: np.ndarray) -> Tensor:
    diff = pred - target.astype(pred.dtype).reshape(pred.shape)
    return T.mean(diff * diff)


def pretrain_losses(model: PolygonEncoder, groups: list[list[np.ndarray]], rng, forced_mask=None, targets=None) -> dict[str, Tensor]:
    """All pretraining terms for a batch of tiles (each a list of normalised polygons)."""
    cfg = model.cfg
    flat = [p for polys in groups for p in polys]
    seq = tokenize_polygon(flat, cfg)
    seq, (rows, slots, values) = mask_coords(seq, rng, cfg.mask_prob, forced=forced_mask)
    if targets is None:
        targets = polygon_targets(groups)
    summary, hidden = model(seq)

    parts: dict[str, Tensor | None] = {}
    if len(rows):
        recon = model.mlm_head(hidden[rows, slots, :])
        parts["mlm"] = _mse(recon, values)
    else:
        parts["mlm"] = Tensor(np.zeros((), dtype=model.dtype))
    parts["angle"] = _mse(model.angle_head(summary), targets.angle)
    parts["center"] = _mse(model.center_head(summary), targets.center)
    parts["distance"] = _mse(model.distance_head(summary), targets.distance)
    parts["closest"] = closest_loss(summary, targets)
    parts["total"] = combine_losses(parts, cfg.lambdas)
    return parts


def evaluate_pretraining(model: PolygonEncoder, groups: list[list[np.ndarray]]) -> dict[str, float]:
    """Closest-polygon accuracy and angle mean absolute error on held-out tiles."""
    model.eval()
    flat = [p for polys in groups for p in polys]
    targets = polygon_targets(groups)
    summary, _ = model(tokenize_polygon(flat, model.cfg))
    angle = model.angle_head(summary).data.reshape(-1)
    hits = total = 0
    for sl in targets.tile_slices:
        n = sl.stop - sl.start
        if n < 2:
            continue
        logits = closest_logits(summary, sl).data.copy()
        np.fill_diagonal(logits, -np.inf)
        hits += int((logits.argmax(axis=1) == targets.closest[sl]).sum())
        total += n
    model.train()
    return {
        "closest_accuracy": hits / max(total, 1),
        "angle_mae": float(np.abs(angle - targets.angle).mean()),
        "center_mae": float(np.abs(model.center_head(summary).data - targets.center).mean()),
    }


def pretrain(
    tiles: list[Tile],
    cfg: PolyEncConfig,
    steps: int = 2000,
    batch: int = 8,
    max_lr: float = 1e-3,
    seed: int = 0,
    model: PolygonEncoder | None = None,
    log_every: int = 100,
    callback=None,
) -> tuple[PolygonEncoder, list[float]]:
    """Pretrain on the polygons of ``tiles`` with warmup + linear decay.

    Returns the model and the per-step total loss curve.
    """
    rng = np.random.default_rng(seed)
    model = model or PolygonEncoder(cfg, np.random.default_rng(cfg.seed))
    model.train()
    opt = Adam(model.parameters(), lr=max_lr, clip_norm=1.0)
    cache = [tile_polygons(t, cfg.points) for t in tiles]
    tcache = [polygon_targets([g]) for g in cache]
    curve = []
    start = time.perf_counter()
    for step in range(steps):
        pick = rng.choice(len(cache), size=min(batch, len(cache)), replace=False)
        parts = pretrain_losses(model, [cache[i] for i in pick], rng, targets=concat_targets([tcache[i] for i in pick]))
        opt.zero_grad()
        parts["total"].backward()
        opt.step(warmup_linear_decay(step + 1, steps, max_lr))
        curve.append(parts["total"].item())
        if log_every and (step + 1) % log_every == 0:
            log.info(
                "poly step %d/%d loss %.5f (mlm %.5f closest %.4f) %.1fs",
                step + 1, steps, np.mean(curve[-log_every:]), parts["mlm"].item(),
                parts["closest"].item() if parts["closest"] is not None else float("nan"),
                time.perf_counter() - start,
            )
        if callback is not None:
            callback(step, parts)
    return model, curve
