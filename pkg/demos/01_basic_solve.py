"""
Basic 1-DoF solve
=================

Every camera has a gravity reading, so each absolute rotation reduces to one
unknown angle about the aligned y axis. We build a noisy sequential graph,
solve it, and score the result against ground truth.
"""

import math

from gravra import circular, evaluation, synth

DEG = math.pi / 180.0

###############################################################################
# A 300-camera sequence, each camera linked to its 20 nearest indices.
cfg = synth.SynthConfig(topology="sequential", n=300, rot_noise=1.0 * DEG,
                        grav_noise=0.2 * DEG, outliers=0.1, seed=1)
graph, truth = synth.generate(cfg)
print(f"{len(graph)} cameras, {len(graph.edges)} edges, {len(truth.outlier_edges)} outliers")

###############################################################################
# The solver runs an L1 stage followed by a Geman-McClure stage.
rep = circular.solve(graph)
print(f"converged={rep.converged} after {rep.iterations} iterations")
for stage, trace in rep.stage_traces().items():
    print(f"  stage {stage}: {trace[0]:.4f} -> {trace[-1]:.4f}")

###############################################################################
# Errors are measured after removing the global gauge.
ev = evaluation.evaluate(rep.rotations(graph), truth.rotations)
print(f"mean error {ev.mean / DEG:.3f} deg, median {ev.median / DEG:.3f} deg")
for tau, score in ev.auc.items():
    print(f"  AUC@{tau / DEG:g}deg = {score:.1f}")
print("period correct ratio:", evaluation.period_correct_ratio(rep, truth.rotations, graph))
