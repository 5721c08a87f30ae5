"""
Polygon encoder pretraining
===========================

A short pretraining run of the polygon encoder. Longer runs (about 1,200
steps at batch 8) push closest-polygon accuracy past 0.9.
"""
import sys

from maplink.polygon_encoder import PolyEncConfig, evaluate_pretraining, pretrain, tile_polygons, tokenize_polygon
from maplink.synth import SynthConfig, synth_tiles

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 150

train = synth_tiles(SynthConfig(seed=11), 40)
held = [tile_polygons(t) for t in synth_tiles(SynthConfig(seed=12), 10)]

cfg = PolyEncConfig(dim=64, layers=2)

# one polygon = summary slot + 16 (x, y) pairs, padded to the capacity
seq = tokenize_polygon(held[0][0], cfg)
print("slots used:", int(seq.valid.sum()), "of", cfg.max_seq_len)

model, curve = pretrain(train, cfg, steps=steps, batch=8, max_lr=2e-3, log_every=50)
print("loss %.4f -> %.4f" % (curve[0], sum(curve[-10:]) / 10))
print(evaluate_pretraining(model, held))
