import json
import xml.etree.ElementTree as ET

import pytest

from maplink.cli import build_parser, evaluate, run
from maplink.corpus import load_tiles
from maplink.svg import svg_document

from _helpers import tile, word

SVG = "{http://www.w3.org/2000/svg}"


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["synth", "--bogus", "1"])
    assert exc.value.code == 2


def test_missing_required_gives_structured_error(capsys):
    assert run(["train"]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["command"] == "train" and "--data" in err["message"]


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"tiles": 3, "seed": 4, "out_dir": str(tmp_path / "a")}}))
    assert run(["synth", "--config", str(cfg), "--tiles", "2"]) == 0
    snap = json.loads((tmp_path / "a" / "tiles.jsonl.config.json").read_text())
    assert snap["tiles"] == 2 and snap["seed"] == 4
    assert len(load_tiles(tmp_path / "a" / "tiles.jsonl")) == 2
    cfg.write_text(json.dumps({"synth": {"colour": 1}}))
    assert run(["synth", "--config", str(cfg)]) == 1


def test_eval_identical_is_perfect(tmp_path, capsys):
    assert run(["synth", "--tiles", "3", "--seed", "1", "--out-dir", str(tmp_path)]) == 0
    gt = str(tmp_path / "tiles.jsonl")
    for mode in ("gt-words", "spotted"):
        assert run(["eval", "--pred", gt, "--gt", gt, "--mode", mode, "--out", str(tmp_path / f"{mode}.json")]) == 0
        rep = json.loads((tmp_path / f"{mode}.json").read_text())
        vals = [rep["links"][k] for k in ("R_L", "P_L", "F_L")] + [rep["words"][k] for k in "RPFTC"] + [rep["H"]]
        assert all(v == pytest.approx(1.0) for v in vals)


def test_evaluate_rejects_mismatched_sets():
    a = tile([word(0, "AB", 0, 0)], image_id="a")
    b = tile([word(0, "AB", 0, 0)], image_id="b")
    with pytest.raises(Exception):
        evaluate([a], [b])


def test_svg_examples():
    singles = tile([word(0, "AB", 0, 0), word(1, "CD", 200, 0)])
    root = ET.fromstring(svg_document(singles, singles.groups))
    assert root.tag == SVG + "svg"
    assert len(root.findall(f".//{SVG}line")) == 0
    assert len(root.findall(f".//{SVG}polygon")) == 2
    pair = tile([word(0, "A&B", 0, 0), word(1, "<C>", 200, 0)], [[0, 1]])
    root = ET.fromstring(svg_document(pair, pair.groups))
    assert len(root.findall(f".//{SVG}line")) == 1
    fills = {p.get("fill") for p in root.findall(f".//{SVG}polygon")}
    assert len(fills) == 1


def _pipeline(d, seed=0):
    d.mkdir()
    s = str(seed)
    steps = [
        ["synth", "--tiles", "20", "--seed", s, "--out-dir", str(d / "train")],
        ["synth", "--tiles", "5", "--seed", str(seed + 1), "--out-dir", str(d / "test"), "--render"],
        ["pretrain-poly", "--data", str(d / "train/tiles.jsonl"), "--steps", "4", "--dim", "16", "--layers", "1",
         "--heads", "2", "--seed", s, "--out", str(d / "poly.ckpt")],
        ["train", "--data", str(d / "train/tiles.jsonl"), "--val", str(d / "test/tiles.jsonl"), "--poly", str(d / "poly.ckpt"),
         "--dim", "16", "--layers", "1", "--heads", "2", "--epochs", "1", "--seed", s, "--out", str(d / "linker.ckpt")],
        ["link", "--model", str(d / "linker.ckpt"), "--data", str(d / "test/tiles.jsonl"), "--out", str(d / "pred.jsonl"),
         "--svg-dir", str(d / "svg")],
        ["baseline", "--method", "mst", "--data", str(d / "test/tiles.jsonl"), "--out", str(d / "mst.jsonl")],
        ["baseline", "--method", "chardist", "--data", str(d / "test/tiles.jsonl"), "--out", str(d / "cd.jsonl")],
        ["eval", "--pred", str(d / "pred.jsonl"), "--gt", str(d / "test/tiles.jsonl"), "--out", str(d / "report.json")],
        ["render", "--data", str(d / "test/tiles.jsonl"), "--out", str(d / "gt_svg")],
    ]
    for argv in steps:
        assert run(argv) == 0, argv
    return d


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipe")
    return _pipeline(base / "a"), _pipeline(base / "b")


def test_pipeline_outputs(two_runs):
    a, _ = two_runs
    pred = load_tiles(a / "pred.jsonl")
    assert len(pred) == 5
    assert all(sorted(w for g in t.groups for w in g) == list(range(t.n)) for t in pred)
    assert load_tiles(a / "test/tiles.jsonl")[0].image.shape == (256, 256, 3)
    assert len(list((a / "svg").glob("*.svg"))) == 5
    for f in (a / "gt_svg").glob("*.svg"):
        ET.parse(f)
    rep = json.loads((a / "report.json").read_text())
    assert 0.0 <= rep["links"]["F_L"] <= 1.0
    assert (a / "linker.ckpt.config.json").exists()


def test_pipeline_is_byte_reproducible(two_runs):
    a, b = two_runs
    for name in ("train/tiles.jsonl", "poly.ckpt", "linker.ckpt", "pred.jsonl", "mst.jsonl", "cd.jsonl", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for f in (a / "svg").glob("*.svg"):
        assert f.read_bytes() == (b / "svg" / f.name).read_bytes()


def test_parser_lists_all_subcommands():
    text = build_parser().format_help()
    for name in ("synth", "pretrain-poly", "train", "link", "baseline", "eval", "render"):
        assert name in text
