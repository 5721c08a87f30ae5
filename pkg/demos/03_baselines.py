"""
Geometry-only baselines
=======================

Character-distance linking and the heuristic spanning tree, tuned on a
small training split and scored on held-out tiles.
"""
from maplink.baselines import chardist_groups, mst_groups, tune
from maplink.metrics import LinkScore, link_score
from maplink.synth import SynthConfig, synth_tiles

train = synth_tiles(SynthConfig(seed=100), 20)
test = synth_tiles(SynthConfig(seed=200), 10)


def score(fn):
    total = LinkScore(0, 0, 0)
    for t in test:
        total = total + link_score(fn(t), t)
    return total


cd_kw, cd_f = tune(train, "chardist")
print("char distance: tuned", cd_kw, "train F_L %.3f" % cd_f)
s = score(lambda t: chardist_groups(t, **cd_kw))
print("  test P_L %.3f R_L %.3f F_L %.3f" % (s.P_L, s.R_L, s.F_L))

mst_kw, mst_f = tune(train, "mst")
print("spanning tree: tuned", mst_kw, "train F_L %.3f" % mst_f)
s = score(lambda t: mst_groups(t, **mst_kw))
print("  test P_L %.3f R_L %.3f F_L %.3f" % (s.P_L, s.R_L, s.F_L))
