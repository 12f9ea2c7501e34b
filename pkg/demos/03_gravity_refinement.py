"""
Gravity refinement
==================

A few badly wrong gravity readings bend the 1-DoF problem out of shape.
Neighbors vote on which readings disagree with the relative rotations, and
flagged readings are replaced by a robust fit of the directions their
neighbors predict.
"""

import math

import numpy as np

from gravra import circular, evaluation, refine, synth

DEG = math.pi / 180.0

graph, truth = synth.generate(synth.SynthConfig(
    topology="grid", n=400, grav_noise=0.5 * DEG, grav_outliers=0.05,
    grav_outlier_angle=10 * DEG, rot_noise=1.0 * DEG, seed=7))
refined, report = refine.refine_all(graph)

hits = set(report.flagged) & set(truth.corrupted_gravity)
print(f"corrupted {len(truth.corrupted_gravity)}, flagged {len(report.flagged)}, overlap {len(hits)}")
print(f"refined {len(report.refined)}, skipped {len(report.skipped)}")


def gravity_errors(g):
    return np.array([math.acos(min(1.0, float(g.vertices[v].gravity @ truth.gravities[v]))) for v in g.ids])


for name, g in (("before", graph), ("after", refined)):
    auc = evaluation.evaluate(circular.solve(g).rotations(g), truth.rotations).auc[DEG]
    print(f"{name:>6}: median gravity error {np.degrees(np.median(gravity_errors(g))):.3f} deg, AUC@1deg {auc:.1f}")
