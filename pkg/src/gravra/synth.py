"""Synthetic pose graphs with known ground truth.

Two topologies are available: ``sequential`` (cameras on a line, each linked
to the ``neighbors`` closest indices) and ``grid`` (cameras on a square grid,
each linked to its Chebyshev block, 24 neighbors for a 5x5 block).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    angle_diff,
    exp_map,
    extract_y_angle,
    gravity_alignment,
    random_rotation,
    random_unit_vector,
    y_rotation,
)
from .pose_graph import PoseGraph, format_rotations, _atomic_write, write_graph

DEFAULT_NEIGHBORS = {"sequential": 20, "grid": 24}


@dataclass
class SynthConfig:
    topology: str = "sequential"
    n: int = 100
    neighbors: int | None = None
    rot_noise: float = 0.0
    grav_noise: float = 0.0
    outliers: float = 0.0
    grav_known: float = 1.0
    alpha: float = 1.0
    grav_outliers: float = 0.0
    grav_outlier_angle: float = math.radians(10.0)
    seed: int = 0

    def __post_init__(self):
        if self.topology not in DEFAULT_NEIGHBORS:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.neighbors is None:
            self.neighbors = DEFAULT_NEIGHBORS[self.topology]
        if self.n < 2:
            raise ValueError("need at least two cameras")
        if self.neighbors < 1:
            raise ValueError("neighbors must be positive")
        if self.rot_noise < 0 or self.grav_noise < 0 or self.alpha < 0:
            raise ValueError("noise levels and alpha must be non-negative")
        if not 0.0 <= self.outliers < 1.0:
            raise ValueError("outlier fraction must lie in [0, 1)")
        if not 0.0 <= self.grav_known <= 1.0:
            raise ValueError("gravity-known fraction must lie in [0, 1]")
        if not 0.0 <= self.grav_outliers <= 1.0:
            raise ValueError("gravity outlier fraction must lie in [0, 1]")
        if self.topology == "grid":
            side = math.isqrt(self.n)
            if side * side != self.n:
                raise ValueError(f"grid topology needs a perfect square, got n={self.n}")
            r = _grid_radius(self.neighbors)
            if r is None:
                raise ValueError(
                    f"grid neighbors must be (2r+1)^2 - 1 for some r, got {self.neighbors}"
                )
        elif self.neighbors % 2:
            raise ValueError("sequential neighbors must be even (half on each side)")


@dataclass
class GroundTruth:
    rotations: dict
    gravities: dict
    periods: dict
    clean: PoseGraph
    outlier_edges: list = field(default_factory=list)
    corrupted_gravity: list = field(default_factory=list)


def _grid_radius(neighbors: int):
    r = 1
    while (2 * r + 1) ** 2 - 1 < neighbors:
        r += 1
    return r if (2 * r + 1) ** 2 - 1 == neighbors else None


def topology_edges(topology: str, n: int, neighbors: int) -> list:
    """Sorted ``(i, j)`` pairs with ``i < j``."""
    edges = []
    if topology == "sequential":
        half = neighbors // 2
        for i in range(n):
            for j in range(i + 1, min(n, i + half + 1)):
                edges.append((i, j))
    elif topology == "grid":
        side = math.isqrt(n)
        r = _grid_radius(neighbors)
        for i in range(n):
            ri, ci = divmod(i, side)
            for rj in range(ri, min(side, ri + r + 1)):
                for cj in range(max(0, ci - r), min(side, ci + r + 1)):
                    j = rj * side + cj
                    if j > i:
                        edges.append((i, j))
    else:
        raise ValueError(f"unknown topology {topology!r}")
    return edges


def perturb_rotation(r: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Left-compose ``r`` with a random-axis rotation of angle ``N(0, sigma)``."""
    if sigma == 0:
        return np.array(r, dtype=float)
    axis = random_unit_vector(rng)
    angle = rng.normal(0.0, sigma)
    return exp_map(axis * angle) @ r


def rotate_direction(v: np.ndarray, angle: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate ``v`` by ``angle`` about a random axis orthogonal to it."""
    w = random_unit_vector(rng)
    axis = w - np.dot(w, v) * v
    axis /= np.linalg.norm(axis)
    out = v * math.cos(angle) + np.cross(axis, v) * math.sin(angle)
    return out / np.linalg.norm(out)


def perturb_direction(v: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return np.array(v, dtype=float)
    return rotate_direction(np.asarray(v, dtype=float), rng.normal(0.0, sigma), rng)


def interpolate_gravity(measured: np.ndarray, truth: np.ndarray, alpha: float) -> np.ndarray:
    """``normalize(alpha * measured + (1 - alpha) * truth)``."""
    if alpha == 1.0:
        return np.array(measured, dtype=float)
    if alpha == 0.0:
        return np.array(truth, dtype=float)
    mix = alpha * np.asarray(measured) + (1.0 - alpha) * np.asarray(truth)
    return mix / np.linalg.norm(mix)


def true_periods(rotations: dict, gravities: dict, edges) -> dict:
    """Period of every edge at the ground-truth angles (zero-residual ``k``)."""
    out = {}
    angle = {}
    for v in {v for e in edges for v in e}:
        angle[v] = extract_y_angle(gravity_alignment(gravities[v]).T @ rotations[v])[0]
    for i, j in edges:
        ti, tj = angle[i], angle[j]
        # residual wrap(tj - ti) - (tj - ti) + 2 k pi vanishes
        out[(i, j)] = int(round(((tj - ti) - angle_diff(tj, ti)) / (2 * math.pi)))
    return out


def generate(config: SynthConfig):
    """Build a noisy pose graph and its ground truth from ``config``."""
    rng = np.random.default_rng(config.seed)
    n = config.n
    rotations, gravities = {}, {}
    for i in range(n):
        g = random_unit_vector(rng)
        theta = rng.uniform(-math.pi, math.pi)
        rotations[i] = gravity_alignment(g) @ y_rotation(theta)
        gravities[i] = rotations[i][:, 1].copy()

    pairs = topology_edges(config.topology, n, config.neighbors)
    clean = PoseGraph()
    for i in range(n):
        clean.add_vertex(i, gravities[i])
    measured_rel = []
    for i, j in pairs:
        rij = rotations[j] @ rotations[i].T
        clean.add_edge(i, j, rij)
        measured_rel.append(perturb_rotation(rij, config.rot_noise, rng))

    n_out = int(round(config.outliers * len(pairs)))
    outlier_idx = sorted(rng.choice(len(pairs), size=n_out, replace=False).tolist()) if n_out else []
    for e in outlier_idx:
        measured_rel[e] = random_rotation(rng)

    measured_grav = {i: perturb_direction(gravities[i], config.grav_noise, rng) for i in range(n)}
    n_bad = int(round(config.grav_outliers * n))
    corrupted = sorted(rng.choice(n, size=n_bad, replace=False).tolist()) if n_bad else []
    for i in corrupted:
        measured_grav[i] = rotate_direction(measured_grav[i], config.grav_outlier_angle, rng)
    for i in range(n):
        measured_grav[i] = interpolate_gravity(measured_grav[i], gravities[i], config.alpha)

    n_drop = int(round((1.0 - config.grav_known) * n))
    dropped = set(rng.choice(n, size=n_drop, replace=False).tolist()) if n_drop else set()

    graph = PoseGraph()
    for i in range(n):
        graph.add_vertex(i, None if i in dropped else measured_grav[i])
    for (i, j), rel in zip(pairs, measured_rel):
        graph.add_edge(i, j, rel)

    truth = GroundTruth(
        rotations=rotations,
        gravities=gravities,
        periods=true_periods(rotations, gravities, pairs),
        clean=clean,
        outlier_edges=[pairs[e] for e in outlier_idx],
        corrupted_gravity=corrupted,
    )
    return graph, truth


def write_dataset(graph: PoseGraph, truth: GroundTruth, graph_path, gt_path) -> None:
    write_graph(graph, graph_path)
    _atomic_write(gt_path, format_rotations(truth.rotations))


__all__ = [
    "SynthConfig",
    "GroundTruth",
    "generate",
    "perturb_rotation",
    "perturb_direction",
    "rotate_direction",
    "interpolate_gravity",
    "topology_edges",
    "true_periods",
    "write_dataset",
]
