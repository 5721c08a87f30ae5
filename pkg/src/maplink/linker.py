"""Multi-modal successor prediction.

Each word becomes a marker token followed by its characters. Every token of
a word gets the word's polygon embedding added to its character embedding,
so geometry rides along with text through the transformer. The output at
each word's marker token feeds two Linear-ReLU-Linear heads (predecessor and
successor views); their product gives the N x N link logits.
"""
from __future__ import annotations

import copy
import logging
import string
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import Tile, gt_predecessor_map, gt_successor_map, shuffle_words, sort_words
from .numerics import checkpoint
from .numerics import tensor as T
from .numerics.nn import MLP, Dropout, Embedding, Encoder, LayerNorm, Linear, Module
from .numerics.optim import Adam, PlateauSchedule
from .numerics.tensor import Tensor
from .polygon_encoder import PolyEncConfig, PolygonEncoder, tile_polygons, tokenize_polygon

log = logging.getLogger(__name__)

LOSS_TERMS = ("ce", "focal", "bi_ce", "bi_focal")
ABLATIONS = {
    "plain": ("ce",),
    "focal": ("ce", "focal"),
    "bidirectional": ("ce", "bi_ce"),
    "full": LOSS_TERMS,
}


class TokenOverflowError(ValueError):
    pass


# -- vocabulary and tokenisation -------------------------------------------------

class CharVocab:
    """Character vocabulary with pad, word-marker and unknown specials."""

    PAD, MARKER, UNK = 0, 1, 2

    def __init__(self, chars: str = string.printable[:95]):
        self.chars = chars
        self.index = {c: i + 3 for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self.chars) + 3

    def encode(self, text: str) -> list[int]:
        return [self.index.get(c, self.UNK) for c in text]


@dataclass
class TokenizedTile:
    ids: np.ndarray  # (T,) token ids
    word_of_token: np.ndarray  # (T,) word id owning each token
    within: np.ndarray  # (T,) position inside the word, marker = 0
    first_token: np.ndarray  # (N,) marker position of each word id
    attention: np.ndarray  # (T,) all True for a single tile

    @property
    def n_tokens(self) -> int:
        return len(self.ids)


def tokenize(tile: Tile, order, vocab: CharVocab, max_tokens: int = 1000, max_within: int = 32) -> TokenizedTile:
    """Words in presentation ``order``; each contributes a marker then its characters."""
    total = tile.n + sum(len(w.text) for w in tile.words)
    if total > max_tokens:
        raise TokenOverflowError(f"{tile.image_id}: {total} tokens exceed max_tokens={max_tokens}; split the tile")
    ids, owner, within = [], [], []
    first = np.zeros(tile.n, dtype=np.int64)
    for wid in order:
        first[wid] = len(ids)
        toks = [vocab.MARKER] + vocab.encode(tile.words[wid].text)
        ids.extend(toks)
        owner.extend([wid] * len(toks))
        within.extend(min(k, max_within - 1) for k in range(len(toks)))
    return TokenizedTile(
        np.array(ids, dtype=np.int64),
        np.array(owner, dtype=np.int64),
        np.array(within, dtype=np.int64),
        first,
        np.ones(len(ids), dtype=bool),
    )


# -- configuration ----------------------------------------------------------------

@dataclass
class LinkerConfig:
    layers: int = 2
    dim: int = 64
    heads: int = 4
    ff_dim: int = 0
    dropout: float = 0.1
    max_tokens: int = 1000
    max_within: int = 32
    image: bool = False
    image_size: int = 64
    patch_size: int = 8
    freeze_polygon_encoder: bool = False
    losses: tuple[str, ...] = LOSS_TERMS
    gamma: float = 2.0
    alpha_self: float = 0.25
    alpha_other: float = 1.0
    focal_reduction: str = "sum"
    poly: PolyEncConfig = field(default_factory=PolyEncConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.poly, dict):
            self.poly = PolyEncConfig(**self.poly)
        self.losses = tuple(self.losses)
        bad = set(self.losses) - set(LOSS_TERMS)
        if bad:
            raise ValueError(f"unknown loss terms {sorted(bad)}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not (0 < self.alpha_self <= 1 and 0 < self.alpha_other <= 1):
            raise ValueError("alpha values must lie in (0, 1]")
        if self.image and self.image_size % self.patch_size:
            raise ValueError("image_size must be a multiple of patch_size")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LinkerConfig":
        d = dict(d)
        if "poly" in d and isinstance(d["poly"], dict):
            d["poly"] = PolyEncConfig(**d["poly"])
        return cls(**d)


@dataclass
class ScorePair:
    S: Tensor
    S_rev: Tensor
    P: Tensor
    P_rev: Tensor


# -- model --------------------------------------------------------------------------

def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) raster in [0, 1] to (size, size, 3)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    img = img[..., :3]
    h, w = img.shape[:2]
    ys = (np.arange(size) + 0.5) * h / size - 0.5
    xs = (np.arange(size) + 0.5) * w / size - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0, 1)[:, None, None]
    wx = np.clip(xs - x0, 0, 1)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def image_patches(image: np.ndarray, size: int, patch: int) -> np.ndarray:
    """Flattened non-overlapping patches, row-major: (grid*grid, patch*patch*3)."""
    img = resize_image(image, size)
    g = size // patch
    return img.reshape(g, patch, g, patch, 3).transpose(0, 2, 1, 3, 4).reshape(g * g, patch * patch * 3)


class Linker(Module):
    def __init__(self, cfg: LinkerConfig, vocab: CharVocab | None = None, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab or CharVocab()
        rng = np.random.default_rng(cfg.seed)
        self.drop_rng = np.random.default_rng(rng.integers(2**63))
        d = cfg.dim
        self.poly_encoder = PolygonEncoder(cfg.poly, np.random.default_rng(rng.integers(2**63)), dtype=dtype)
        self.poly_proj = Linear(cfg.poly.dim, d, rng, dtype=dtype) if cfg.poly.dim != d else None
        self.token = Embedding(len(self.vocab), d, rng, dtype=dtype)
        self.within = Embedding(cfg.max_within, d, rng, dtype=dtype)
        self.modality = Embedding(2, d, rng, dtype=dtype)
        self.text_norm = LayerNorm(d, dtype=dtype)
        self.drop = Dropout(cfg.dropout, self.drop_rng)
        if cfg.image:
            self.patch_proj = Linear(cfg.patch_size * cfg.patch_size * 3, d, rng, dtype=dtype)
            self.patch_pos = Embedding(cfg.grid * cfg.grid, d, rng, dtype=dtype)
            self.image_norm = LayerNorm(d, dtype=dtype)
        self.encoder = Encoder(cfg.layers, d, cfg.heads, cfg.ff_dim or 4 * d, rng, cfg.dropout, self.drop_rng, dtype)
        self.mlp_pre = MLP(d, d, d, rng, activation="relu", dtype=dtype)
        self.mlp_succ = MLP(d, d, d, rng, activation="relu", dtype=dtype)

    @property
    def dtype(self):
        return self.token.weight.dtype

    def trainable(self) -> list:
        if self.cfg.freeze_polygon_encoder:
            frozen = {id(p) for p in self.poly_encoder.parameters()}
            return [p for p in self.parameters() if id(p) not in frozen]
        return self.parameters()

    def polygon_embeddings(self, polys: list[np.ndarray]) -> Tensor:
        summary, _ = self.poly_encoder(tokenize_polygon(polys, self.cfg.poly))
        if self.cfg.freeze_polygon_encoder:
            summary = summary.detach()
        return self.poly_proj(summary) if self.poly_proj is not None else summary

    def embed_and_fuse(self, tok: TokenizedTile, poly_emb: Tensor, image: np.ndarray | None = None) -> Tensor:
        """Token + polygon + modality + within-word embeddings, normalised; image patches appended."""
        d = self.cfg.dim
        if poly_emb.shape[-1] != d:
            raise T.ShapeError(f"embed_and_fuse: polygon embedding dim {poly_emb.shape[-1]} != model dim {d}")
        x = self.token(tok.ids) + poly_emb[tok.word_of_token] + self.within(tok.within) + self.modality(np.zeros(1, dtype=np.int64))
        x = self.drop(self.text_norm(x))
        if self.cfg.image:
            if image is None:
                image = np.ones((self.cfg.image_size, self.cfg.image_size, 3))
            patches = Tensor(image_patches(image, self.cfg.image_size, self.cfg.patch_size).astype(self.dtype))
            v = self.patch_proj(patches) + self.patch_pos(np.arange(self.cfg.grid**2)) + self.modality(np.ones(1, dtype=np.int64))
            x = T.concat([x, self.drop(self.image_norm(v))], axis=0)
        return x

    def word_embeddings(self, tile: Tile, order, polys: list[np.ndarray] | None = None) -> Tensor:
        """E_text: encoder output at each word's marker token, rows in word-id order."""
        tok = tokenize(tile, order, self.vocab, self.cfg.max_tokens, self.cfg.max_within)
        if polys is None:
            polys = tile_polygons(tile, self.cfg.poly.points)
        x = self.embed_and_fuse(tok, self.polygon_embeddings(polys), tile.image)
        h = self.encoder(x.reshape(1, *x.shape))
        return h[0][tok.first_token]

    def forward(self, tile: Tile, order=None, polys=None) -> tuple[Tensor, ScorePair]:
        if order is None:
            order = sort_words(tile)
        e_text = self.word_embeddings(tile, order, polys)
        e_pre = self.mlp_pre(e_text)
        e_succ = self.mlp_succ(e_text)
        s = T.matmul(e_pre, e_succ.T)
        s_rev = s.T  # E_succ . E_pre^T is the transpose of S
        return e_text, ScorePair(s, s_rev, T.row_softmax(s), T.row_softmax(s_rev))

    def predict_proba(self, tile: Tile, order=None, polys=None) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            _, sp = self.forward(tile, order, polys)
        finally:
            self.train(was)
        return sp.P.data.astype(np.float64)

    # -- persistence -----------------------------------------------------------
    def save(self, path, extra: dict | None = None) -> None:
        cfg = {"kind": "linker", "linker": self.cfg.to_dict(), "vocab": self.vocab.chars}
        if extra:
            cfg.update(extra)
        checkpoint.save(path, self.state_dict(), cfg)

    @classmethod
    def load(cls, path) -> "Linker":
        tensors, cfg = checkpoint.load(path)
        if cfg.get("kind") != "linker":
            raise checkpoint.CheckpointError(f"{path} is not a linker checkpoint")
        dtype = next(iter(tensors.values())).dtype
        model = cls(LinkerConfig.from_dict(cfg["linker"]), CharVocab(cfg["vocab"]), dtype=dtype)
        model.load_state_dict(tensors)
        return model


# -- losses ---------------------------------------------------------------------------

def ce_loss(P, targets, log_p: Tensor | None = None) -> Tensor:
    """Mean over rows of -log P[i, target_i]."""
    targets = np.asarray(targets)
    n = len(targets)
    if log_p is None:
        picked = T.log(T.as_tensor(P)[np.arange(n), targets])
    else:
        picked = log_p[np.arange(n), targets]
    return T.scale(T.sum_(picked), -1.0 / n)


def focal_loss(P, targets, gamma: float = 2.0, alpha_self: float = 0.25, alpha_other: float = 1.0, eps: float = 1e-7, reduction: str = "sum") -> Tensor:
    """Binary focal loss over every entry of P.

    ``y`` is 1 exactly at each row's target; the weight of a row is
    ``alpha_self`` when its target is the row itself, else ``alpha_other``.
    """
    P = T.as_tensor(P)
    targets = np.asarray(targets)
    n = len(targets)
    dt = P.dtype
    y = np.zeros(P.shape, dtype=dt)
    y[np.arange(n), targets] = 1.0
    alpha = np.where(targets == np.arange(n), alpha_self, alpha_other).astype(dt)[:, None]
    p = T.clip(P, eps, 1.0 - eps)
    q = 1.0 - p
    pos, neg = T.log(p), T.log(q)
    if gamma:
        pos = q**gamma * pos
        neg = p**gamma * neg
    per = T.scale((pos * y + neg * (1.0 - y)) * alpha, -1.0)
    if reduction == "sum":
        return T.sum_(per)
    if reduction == "mean":
        return T.mean(per)
    raise ValueError(f"unknown reduction {reduction!r}")


def total_loss(scores: ScorePair, succ, pred, toggles=LOSS_TERMS, gamma=2.0, alpha_self=0.25, alpha_other=1.0, reduction="sum") -> dict[str, Tensor]:
    """Sum of the enabled terms among ce, focal, bi_ce, bi_focal."""
    toggles = tuple(toggles)
    parts: dict[str, Tensor] = {}
    if "ce" in toggles:
        parts["ce"] = ce_loss(scores.P, succ, log_p=T.log_softmax(scores.S))
    if "focal" in toggles:
        parts["focal"] = focal_loss(scores.P, succ, gamma, alpha_self, alpha_other, reduction=reduction)
    if "bi_ce" in toggles:
        parts["bi_ce"] = ce_loss(scores.P_rev, pred, log_p=T.log_softmax(scores.S_rev))
    if "bi_focal" in toggles:
        parts["bi_focal"] = focal_loss(scores.P_rev, pred, gamma, alpha_self, alpha_other, reduction=reduction)
    if not parts:
        raise ValueError("at least one loss term must be enabled")
    total = None
    for v in parts.values():
        total = v if total is None else total + v
    parts["total"] = total
    return parts


def tile_loss(model: Linker, tile: Tile, order, polys=None) -> dict[str, Tensor]:
    cfg = model.cfg
    _, sp = model(tile, order, polys)
    return total_loss(
        sp, gt_successor_map(tile), gt_predecessor_map(tile), cfg.losses, cfg.gamma, cfg.alpha_self, cfg.alpha_other, cfg.focal_reduction
    )


# -- training ----------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch: int = 2
    lr: float = 5e-4
    patience: int = 5
    factor: float = 0.9
    stop_patience: int = 9
    shuffle: bool = True
    clip_norm: float = 1.0
    seed: int = 0
    time_budget: float | None = None  # seconds; no epoch is started that would overrun it

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Linker
    best_score: float
    best_epoch: int
    history: list[dict]


def evaluate_f(model: Linker, tiles: list[Tile], caches=None) -> float:
    from .inference import link_probabilities
    from .metrics import LinkScore, link_score

    total = LinkScore(0, 0, 0)
    for k, t in enumerate(tiles):
        polys = caches[k] if caches is not None else None
        total = total + link_score(link_probabilities(model.predict_proba(t, sort_words(t), polys)), t)
    return total.f


def train(
    tiles: list[Tile],
    cfg: LinkerConfig,
    tcfg: TrainConfig | None = None,
    val: list[Tile] | None = None,
    model: Linker | None = None,
    callback=None,
) -> TrainResult:
    """Finetune a linker; keeps the parameters of the best validation epoch.

    Words are reshuffled every time a tile is visited (or presented in
    sorted order when ``tcfg.shuffle`` is off). Validation F_L drives the
    plateau schedule and early stopping.
    """
    tcfg = tcfg or TrainConfig()
    rng = np.random.default_rng(tcfg.seed)
    model = model or Linker(cfg)
    model.train()
    opt = Adam(model.trainable(), lr=tcfg.lr, clip_norm=tcfg.clip_norm)
    sched = PlateauSchedule(tcfg.lr, tcfg.patience, tcfg.factor, tcfg.stop_patience)
    cache = [tile_polygons(t, cfg.poly.points) for t in tiles]
    val = val or []
    val_cache = [tile_polygons(t, cfg.poly.points) for t in val]
    best_state, best_score, best_epoch = None, -1.0, -1
    history = []
    start = time.perf_counter()
    for epoch in range(tcfg.epochs):
        perm = rng.permutation(len(tiles))
        losses = []
        for b in range(0, len(perm), tcfg.batch):
            chunk = perm[b : b + tcfg.batch]
            opt.zero_grad()
            for k in chunk:
                t = tiles[k]
                order = shuffle_words(t, rng) if tcfg.shuffle else sort_words(t)
                parts = tile_loss(model, t, order, cache[k])
                T.scale(parts["total"], 1.0 / len(chunk)).backward()
                losses.append(parts["total"].item())
            opt.step(sched.lr)
        score = evaluate_f(model, val, val_cache) if val else -float(np.mean(losses))
        improved = score > best_score
        if improved:
            best_score, best_epoch = score, epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        stop = sched.step(score)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "val_f": score, "lr": sched.lr, "time": time.perf_counter() - start}
        history.append(entry)
        log.info("epoch %d loss %.4f val F_L %.4f lr %.2e (%.0fs)", epoch, entry["loss"], score, sched.lr, entry["time"])
        if callback is not None:
            callback(entry, model)
        if stop:
            break
        if tcfg.time_budget is not None and entry["time"] * (epoch + 2) / (epoch + 1) > tcfg.time_budget:
            log.info("stopping: next epoch would exceed the %.0fs budget", tcfg.time_budget)
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, best_score, best_epoch, history)
