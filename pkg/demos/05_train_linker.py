"""
Training the linker
===================

Pretrains a polygon encoder briefly, fine-tunes the linker on synthetic
tiles and links a held-out tile. Sizes are kept small so this finishes in
a few minutes; see the acceptance test for the full-size run.
"""
import sys

from maplink.corpus import sort_words
from maplink.inference import link_tile
from maplink.linker import Linker, LinkerConfig, TrainConfig, evaluate_f, train
from maplink.polygon_encoder import PolyEncConfig, pretrain
from maplink.synth import SynthConfig, synth_tiles

n_train = int(sys.argv[1]) if len(sys.argv) > 1 else 60
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 4

tiles = synth_tiles(SynthConfig(seed=100), n_train)
val = synth_tiles(SynthConfig(seed=300), 10)
test = synth_tiles(SynthConfig(seed=200), 10)

poly_cfg = PolyEncConfig(dim=64, layers=2)
poly, _ = pretrain(tiles, poly_cfg, steps=300, max_lr=2e-3, log_every=100)

cfg = LinkerConfig(poly=poly_cfg)
model = Linker(cfg)
model.poly_encoder.load_state_dict(poly.state_dict())
res = train(tiles, cfg, TrainConfig(epochs=epochs), val=val, model=model)
print("best val F_L %.3f at epoch %d" % (res.best_score, res.best_epoch))
print("test F_L %.3f" % evaluate_f(res.model, test))

t = test[0]
pred = link_tile(t, res.model, sort_words(t))
for g in pred:
    if len(g) > 1:
        print(" ".join(t.words[w].text for w in g))
