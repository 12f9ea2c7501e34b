"""Detect and re-estimate unreliable gravity directions.

An edge whose gravity-aligned relative rotation ``U_j.T R_ij U_i`` is far
from a pure y rotation votes against both endpoints; a camera is flagged when
more than ``vote_fraction`` of its neighbors vote against it.  Flagged
gravities are then re-estimated from the directions their neighbors predict,
``(R_ij U_i)[:, 1]``, under an Arctan loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import extract_y_angle, normalize
from .pose_graph import PoseGraph


@dataclass
class RefineConfig:
    offaxis_threshold: float = 0.035
    vote_fraction: float = 0.5
    loss_scale: float = 0.01
    max_iterations: int = 50
    tol: float = 1e-10

    def __post_init__(self):
        if not self.offaxis_threshold > 0:
            raise ValueError("offaxis_threshold must be positive")
        if not 0.0 < self.vote_fraction <= 1.0:
            raise ValueError("vote_fraction must lie in (0, 1]")
        if not self.loss_scale > 0:
            raise ValueError("loss_scale must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class RefineReport:
    votes: dict = field(default_factory=dict)
    neighbor_counts: dict = field(default_factory=dict)
    flagged: list = field(default_factory=list)
    refined: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    old_gravity: dict = field(default_factory=dict)
    new_gravity: dict = field(default_factory=dict)


def edge_offaxis(graph: PoseGraph, i: int, j: int) -> float:
    ui = graph.vertices[i].alignment
    uj = graph.vertices[j].alignment
    return float(extract_y_angle(uj.T @ graph.relative(i, j) @ ui)[1])


def vote(graph: PoseGraph, config: RefineConfig | None = None) -> RefineReport:
    """Count, for each gravity camera, the neighbor edges with a large off-axis error."""
    config = config or RefineConfig()
    report = RefineReport()
    for v in graph.gravity_ids():
        report.votes[v] = 0
        report.neighbor_counts[v] = 0
    for e in graph.edges:
        if not (graph.vertices[e.src].has_gravity and graph.vertices[e.dst].has_gravity):
            continue
        report.neighbor_counts[e.src] += 1
        report.neighbor_counts[e.dst] += 1
        if edge_offaxis(graph, e.src, e.dst) > config.offaxis_threshold:
            report.votes[e.src] += 1
            report.votes[e.dst] += 1
    report.flagged = sorted(
        v for v, c in report.votes.items()
        if c > config.vote_fraction * report.neighbor_counts[v]
    )
    return report


def _arctan_weight(s, a):
    # derivative of a * atan(s / a)
    return 1.0 / (1.0 + (s / a) ** 2)


def _angles(g, candidates):
    cross = np.linalg.norm(np.cross(candidates, g), axis=-1)
    return np.arctan2(cross, candidates @ g)


def robust_direction(candidates, config: RefineConfig | None = None) -> np.ndarray:
    """Unit vector minimizing ``sum(rho(angle(g, c)^2))`` with the Arctan loss.

    Reweighted direction averaging started at the medoid candidate.
    """
    config = config or RefineConfig()
    c = np.asarray(candidates, dtype=float)
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    a = config.loss_scale
    pair = np.arctan2(np.linalg.norm(np.cross(c[:, None], c[None]), axis=-1), c @ c.T) ** 2
    cost = (a * np.arctan(pair / a)).sum(axis=1)
    g = c[int(np.argmin(cost))]
    for _ in range(config.max_iterations):
        w = _arctan_weight(_angles(g, c) ** 2, a)
        new = normalize(w @ c)
        moved = float(_angles(g, new[None])[0])
        g = new
        if moved < config.tol:
            break
    return g


def candidate_directions(graph: PoseGraph, j: int, exclude=()) -> list:
    """Gravity of ``j`` predicted from each neighbor with gravity."""
    out = []
    excluded = set(exclude)
    for i, _ in graph.neighbors(j):
        if i in excluded or not graph.vertices[i].has_gravity:
            continue
        out.append((graph.relative(i, j) @ graph.vertices[i].alignment)[:, 1])
    return out


def refine_direction(j: int, graph: PoseGraph, config: RefineConfig | None = None,
                     exclude=()):
    """Re-estimated gravity of ``j``, or None when fewer than two neighbors can vote."""
    cands = candidate_directions(graph, j, exclude)
    if len(cands) < 2:
        return None
    return robust_direction(cands, config)


def refine_all(graph: PoseGraph, config: RefineConfig | None = None):
    """Vote once, then refit each flagged gravity from the unflagged neighbors."""
    config = config or RefineConfig()
    report = vote(graph, config)
    flagged = set(report.flagged)
    updates = {}
    for j in report.flagged:
        g = refine_direction(j, graph, config, exclude=flagged)
        if g is None:
            g = refine_direction(j, graph, config)
        if g is None:
            report.skipped.append(j)
            continue
        report.refined.append(j)
        report.old_gravity[j] = graph.vertices[j].gravity.copy()
        report.new_gravity[j] = g
        updates[j] = g
    return graph.with_gravities(updates), report
