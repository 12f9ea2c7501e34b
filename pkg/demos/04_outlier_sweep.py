"""
Outlier sweep
=============

Replace a growing share of relative rotations with random ones and watch
the accuracy at 1 degree.
"""

import math

from gravra import circular, evaluation, synth

DEG = math.pi / 180.0

base = None
for frac in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
    graph, truth = synth.generate(synth.SynthConfig(
        topology="grid", n=400, grav_noise=0.25 * DEG, rot_noise=1.0 * DEG, outliers=frac, seed=4))
    rep = circular.solve(graph)
    auc = evaluation.evaluate(rep.rotations(graph), truth.rotations).auc[DEG]
    base = auc if base is None else base
    print(f"outliers {frac:.0%}: AUC@1deg {auc:5.1f} ({auc / base:.0%} of clean)")
