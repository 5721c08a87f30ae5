"""Command line entry point: ``maplink <subcommand> [flags]``.

Settings resolve as built-in defaults, then the JSON ``--config`` file, then
explicit flags. Every run writes ``<out>.config.json`` with the resolved
settings next to its primary output.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("maplink")


class CLIError(RuntimeError):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file section < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {args.config}: {exc}") from None
        section = doc.get(args.command, doc)
        unknown = set(section) - set(defaults)
        if unknown:
            raise CLIError(f"unknown keys in config for {args.command}: {sorted(unknown)}")
        cfg.update(section)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _snapshot(out, cfg: dict) -> None:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Path(str(out) + ".config.json").write_text(_dump(cfg))


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise CLIError(f"--{k.replace('_', '-')} is required")


def _with_groups(tile, groups):
    return dataclasses.replace(tile, groups=tuple(tuple(int(w) for w in g) for g in groups))


def _map(fn, items, workers: int):
    """Ordered map; threads only when asked (numpy releases the GIL in the heavy parts)."""
    if workers <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


# -- subcommands ---------------------------------------------------------------

SYNTH_DEFAULTS = {"tiles": 100, "start": 0, "seed": 0, "size": 2000, "render": False, "render_size": 256, "out_dir": None, "name": "tiles.jsonl"}


def cmd_synth(cfg: dict) -> None:
    from .corpus import save_tiles
    from .synth import SynthConfig, synth_tiles

    _require(cfg, "out_dir")
    sc = SynthConfig(tile_size=float(cfg["size"]), seed=cfg["seed"], render=bool(cfg["render"]), render_size=cfg["render_size"])
    tiles = synth_tiles(sc, cfg["tiles"], cfg["start"])
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    out = out_dir / cfg["name"]
    paths = {}
    if sc.render:
        from PIL import Image

        img_dir = out_dir / "images"
        img_dir.mkdir(exist_ok=True)
        for t in tiles:
            name = f"{t.image_id}.png"
            Image.fromarray((np.clip(t.image, 0, 1) * 255).round().astype(np.uint8)).save(img_dir / name)
            paths[t.image_id] = f"images/{name}"
    save_tiles(tiles, out, paths)
    _snapshot(out, {**cfg, "synth": sc.to_dict()})
    log.info("wrote %d tiles to %s", len(tiles), out)


PRETRAIN_DEFAULTS = {"data": None, "steps": 1500, "batch": 8, "dim": 64, "layers": 2, "heads": 4, "lr": 2e-3, "seed": 0, "out": None}


def cmd_pretrain_poly(cfg: dict) -> None:
    from .corpus import load_tiles
    from .numerics import checkpoint
    from .polygon_encoder import PolyEncConfig, PolygonEncoder, pretrain

    _require(cfg, "data", "out")
    tiles = load_tiles(cfg["data"])
    pc = PolyEncConfig(dim=cfg["dim"], layers=cfg["layers"], heads=cfg["heads"], seed=cfg["seed"])
    model = PolygonEncoder(pc, np.random.default_rng(pc.seed))
    model, curve = pretrain(tiles, pc, steps=cfg["steps"], batch=cfg["batch"], max_lr=cfg["lr"], seed=cfg["seed"], model=model)
    checkpoint.save(cfg["out"], model.state_dict(), {"kind": "polygon_encoder", "poly": dataclasses.asdict(pc)})
    _snapshot(cfg["out"], {**cfg, "final_loss": float(np.mean(curve[-50:]))})
    log.info("saved polygon encoder to %s", cfg["out"])


TRAIN_DEFAULTS = {
    "data": None, "val": None, "toggles": "ce,focal,bi_ce,bi_focal", "image": "off", "seed": 0, "out": None,
    "epochs": 30, "lr": 5e-4, "batch": 2, "layers": 2, "dim": 64, "heads": 4, "dropout": 0.1,
    "poly": None, "freeze_poly": False, "shuffle": True,
}


def cmd_train(cfg: dict) -> None:
    from .corpus import load_tiles
    from .linker import Linker, LinkerConfig, TrainConfig, train
    from .numerics import checkpoint
    from .polygon_encoder import PolyEncConfig

    _require(cfg, "data", "out")
    tiles = load_tiles(cfg["data"])
    val = load_tiles(cfg["val"]) if cfg["val"] else None
    poly_cfg, poly_state = PolyEncConfig(dim=cfg["dim"]), None
    if cfg["poly"]:
        poly_state, meta = checkpoint.load(cfg["poly"])
        if meta.get("kind") != "polygon_encoder":
            raise CLIError(f"{cfg['poly']} is not a polygon encoder checkpoint")
        poly_cfg = PolyEncConfig(**meta["poly"])
    lc = LinkerConfig(
        layers=cfg["layers"], dim=cfg["dim"], heads=cfg["heads"], dropout=cfg["dropout"],
        image=cfg["image"] == "on", freeze_polygon_encoder=bool(cfg["freeze_poly"]),
        losses=tuple(t for t in cfg["toggles"].split(",") if t), poly=poly_cfg, seed=cfg["seed"],
    )
    model = Linker(lc)
    if poly_state is not None:
        model.poly_encoder.load_state_dict(poly_state)
    tc = TrainConfig(epochs=cfg["epochs"], batch=cfg["batch"], lr=cfg["lr"], shuffle=bool(cfg["shuffle"]), seed=cfg["seed"])
    res = train(tiles, lc, tc, val=val, model=model)
    res.model.save(cfg["out"], {"best_epoch": res.best_epoch})
    _snapshot(cfg["out"], {**cfg, "best_epoch": res.best_epoch, "best_score": res.best_score, "history": res.history})
    log.info("best epoch %d, score %.4f", res.best_epoch, res.best_score)


LINK_DEFAULTS = {"model": None, "data": None, "out": None, "svg_dir": None, "workers": 1}


def cmd_link(cfg: dict) -> None:
    from .corpus import load_tiles
    from .inference import link_tile
    from .linker import Linker

    _require(cfg, "model", "data", "out")
    model = Linker.load(cfg["model"])
    model.eval()
    tiles = load_tiles(cfg["data"])
    groups = _map(lambda t: link_tile(t, model), tiles, cfg["workers"])
    _write_predictions(tiles, groups, cfg)


def _write_predictions(tiles, groups, cfg):
    from .corpus import save_tiles
    from .svg import render_svg

    pred = [_with_groups(t, g) for t, g in zip(tiles, groups)]
    save_tiles(pred, cfg["out"])
    if cfg.get("svg_dir"):
        for t in pred:
            render_svg(t, t.groups, Path(cfg["svg_dir"]) / f"{t.image_id}.svg")
    _snapshot(cfg["out"], cfg)
    log.info("wrote predictions for %d tiles to %s", len(pred), cfg["out"])


BASELINE_DEFAULTS = {"method": "mst", "data": None, "out": None, "weights": "1,1,1,1", "threshold": 2.0, "max_cost": None, "width_rule": "min", "svg_dir": None, "workers": 1}


def cmd_baseline(cfg: dict) -> None:
    from .baselines import HeuristicWeights, chardist_groups, mst_groups
    from .corpus import load_tiles

    _require(cfg, "data", "out")
    tiles = load_tiles(cfg["data"])
    if cfg["method"] == "chardist":
        fn = lambda t: chardist_groups(t, cfg["threshold"], cfg["width_rule"])  # noqa: E731
    elif cfg["method"] == "mst":
        w = HeuristicWeights.parse(cfg["weights"]) if isinstance(cfg["weights"], str) else HeuristicWeights(*cfg["weights"])
        fn = lambda t: mst_groups(t, w, cfg["max_cost"])  # noqa: E731
    else:
        raise CLIError(f"unknown baseline method {cfg['method']!r}")
    _write_predictions(tiles, _map(fn, tiles, cfg["workers"]), cfg)


EVAL_DEFAULTS = {"pred": None, "gt": None, "iou_min": 0.5, "mode": "gt-words", "averaging": "micro", "out": None}


def evaluate(pred_tiles, gt_tiles, mode: str = "gt-words", iou_min: float = 0.5, averaging: str = "micro") -> dict:
    from .metrics import Matching, dataset_link_score, h_mean, link_score, word_match, word_score

    gt_by_id = {t.image_id: t for t in gt_tiles}
    missing = [t.image_id for t in pred_tiles if t.image_id not in gt_by_id]
    if missing:
        raise CLIError(f"predicted tiles without ground truth: {missing[:5]}")
    link_scores, word_counts = [], {"matched": 0, "n_pred": 0, "n_gt": 0, "iou": 0.0, "char": 0.0}
    for p in pred_tiles:
        g = gt_by_id[p.image_id]
        if mode == "gt-words":
            if p.n != g.n:
                raise CLIError(f"{p.image_id}: gt-words mode needs the ground-truth words ({p.n} vs {g.n})")
            m = Matching.identity(g.n)
        elif mode == "spotted":
            m = word_match(p.words, g.words, iou_min)
        else:
            raise CLIError(f"unknown mode {mode!r}")
        link_scores.append(link_score(p.groups, g, None if mode == "gt-words" else m.pairs))
        ws = word_score(m, p.words, g.words)
        word_counts["matched"] += ws.matched
        word_counts["n_pred"] += ws.n_pred
        word_counts["n_gt"] += ws.n_gt
        word_counts["iou"] += ws.T * ws.matched
        word_counts["char"] += ws.C * ws.matched
    for t in gt_tiles:
        if t.image_id not in {p.image_id for p in pred_tiles}:
            raise CLIError(f"ground-truth tile {t.image_id} has no prediction")
    links = dataset_link_score(link_scores, averaging)
    k = word_counts["matched"]
    r = k / word_counts["n_gt"] if word_counts["n_gt"] else 0.0
    p = k / word_counts["n_pred"] if word_counts["n_pred"] else 0.0
    words = {
        "R": r, "P": p, "F": 0.0 if p + r == 0 else 2 * p * r / (p + r),
        "T": word_counts["iou"] / k if k else 0.0, "C": word_counts["char"] / k if k else 0.0,
    }
    overall = h_mean(links, words)
    return {"links": links, "words": words, "H": overall.H, "tiles": len(pred_tiles), "mode": mode, "averaging": averaging}


def format_report(rep: dict) -> str:
    cols = [("R_L", rep["links"]["R_L"]), ("P_L", rep["links"]["P_L"]), ("F_L", rep["links"]["F_L"])]
    cols += [(k, rep["words"][k]) for k in ("R", "P", "F", "T", "C")] + [("H", rep["H"])]
    head = " ".join(f"{k:>7}" for k, _ in cols)
    row = " ".join(f"{100 * v:7.2f}" for _, v in cols)
    return head + "\n" + row + "\n"


def cmd_eval(cfg: dict) -> None:
    from .corpus import load_tiles

    _require(cfg, "pred", "gt")
    rep = evaluate(load_tiles(cfg["pred"]), load_tiles(cfg["gt"]), cfg["mode"], cfg["iou_min"], cfg["averaging"])
    sys.stdout.write(format_report(rep))
    if cfg["out"]:
        Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg["out"]).write_text(_dump(rep))
        _snapshot(cfg["out"], cfg)


RENDER_DEFAULTS = {"data": None, "out": None}


def cmd_render(cfg: dict) -> None:
    from .corpus import load_tiles
    from .svg import render_svg

    _require(cfg, "data", "out")
    out = Path(cfg["out"])
    for t in load_tiles(cfg["data"]):
        render_svg(t, t.groups, out / f"{t.image_id}.svg")
    _snapshot(out / "render", cfg)


COMMANDS = {
    "synth": (cmd_synth, SYNTH_DEFAULTS),
    "pretrain-poly": (cmd_pretrain_poly, PRETRAIN_DEFAULTS),
    "train": (cmd_train, TRAIN_DEFAULTS),
    "link": (cmd_link, LINK_DEFAULTS),
    "baseline": (cmd_baseline, BASELINE_DEFAULTS),
    "eval": (cmd_eval, EVAL_DEFAULTS),
    "render": (cmd_render, RENDER_DEFAULTS),
}


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maplink", description="Group map words into ordered phrases.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file; a top-level key named after the subcommand is used if present")
        return sp

    s = add("synth", "generate synthetic tiles")
    s.add_argument("--tiles", type=int, help="number of tiles")
    s.add_argument("--start", type=int, help="index of the first tile")
    s.add_argument("--seed", type=int)
    s.add_argument("--size", type=float, help="tile side in pixels")
    s.add_argument("--render", type=_bool, nargs="?", const=True)
    s.add_argument("--render-size", dest="render_size", type=int)
    s.add_argument("--out-dir", dest="out_dir")
    s.add_argument("--name", help="annotation file name inside the output directory")

    s = add("pretrain-poly", "pretrain the polygon encoder")
    s.add_argument("--data")
    s.add_argument("--steps", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--heads", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    s = add("train", "train the linker")
    s.add_argument("--data")
    s.add_argument("--val")
    s.add_argument("--toggles", help="comma list from ce,focal,bi_ce,bi_focal")
    s.add_argument("--image", choices=["on", "off"])
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", type=int)
    s.add_argument("--layers", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--heads", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--poly", help="pretrained polygon encoder checkpoint")
    s.add_argument("--freeze-poly", dest="freeze_poly", type=_bool, nargs="?", const=True)
    s.add_argument("--shuffle", type=_bool)

    s = add("link", "predict groups with a trained linker")
    s.add_argument("--model")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--svg-dir", dest="svg_dir")
    s.add_argument("--workers", type=int)

    s = add("baseline", "geometry-only baseline linking")
    s.add_argument("--method", choices=["chardist", "mst"])
    s.add_argument("--weights", help="w_dist,w_height,w_angle,w_caps")
    s.add_argument("--threshold", type=float, help="character-distance threshold in characters")
    s.add_argument("--max-cost", dest="max_cost", type=float)
    s.add_argument("--width-rule", dest="width_rule", choices=["min", "max"])
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--svg-dir", dest="svg_dir")
    s.add_argument("--workers", type=int)

    s = add("eval", "score predictions against ground truth")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--iou-min", dest="iou_min", type=float)
    s.add_argument("--mode", choices=["gt-words", "spotted"])
    s.add_argument("--averaging", choices=["micro", "macro"])
    s.add_argument("--out")

    s = add("render", "draw ground-truth groups as SVG")
    s.add_argument("--data")
    s.add_argument("--out", help="output directory")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    fn, defaults = COMMANDS[args.command]
    try:
        cfg = _resolve(args, defaults)
        fn(cfg)
    except (CLIError, ValueError, OSError, KeyError) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
