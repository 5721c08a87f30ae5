"""
Synthetic map tiles
===================

Generates a few tiles, prints their phrase structure and writes an SVG
overlay of the ground-truth groups for the first one.
"""
import sys
from pathlib import Path

import numpy as np

from maplink.corpus import dataset_stats, gt_links, save_tiles, sort_words
from maplink.svg import render_svg
from maplink.synth import SynthConfig, synth_tiles

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

cfg = SynthConfig(seed=0, render=True, render_size=128)
tiles = synth_tiles(cfg, 4)
print(dataset_stats(tiles))

t = tiles[0]
# multi-word groups in reading order
for g in t.groups:
    if len(g) > 1:
        print(" -> ".join(t.words[w].text for w in g))
print("links:", len(gt_links(t)), "of", t.n, "words")

# words are presented to models top-to-bottom, then left-to-right
print("first five in presentation order:", [t.words[w].text for w in sort_words(t)[:5]])

# the raster is a plain float array in [0, 1]
print("raster", t.image.shape, "ink fraction %.3f" % np.mean(t.image.mean(axis=2) < 0.5))

save_tiles(tiles, out / "tiles.jsonl")
render_svg(t, t.groups, out / f"{t.image_id}.svg")
print("wrote", out / "tiles.jsonl", "and", out / f"{t.image_id}.svg")
