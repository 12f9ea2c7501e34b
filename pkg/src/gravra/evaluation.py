"""Accuracy metrics against ground truth.

All angles are radians.  Estimates and ground truth are ``{id: rotation}``
dictionaries; the global gauge ``R_i -> R_i @ S`` is removed by :func:`align`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    extract_y_angle,
    exp_map,
    geodesic_distance,
    gravity_alignment,
    log_map,
    project_to_rotation,
    y_rotation,
)
from .circular import optimal_period
from .pose_graph import PoseGraph

DEFAULT_AUC_THRESHOLDS = (math.radians(0.5), math.radians(1.0), math.radians(2.0))


@dataclass
class EvalReport:
    ids: list
    errors: np.ndarray
    mean: float
    median: float
    auc: dict
    cdf_samples: list
    gravity_bound_errors: np.ndarray | None = None
    period_correct_ratio: float | None = None
    alignment: np.ndarray = field(default_factory=lambda: np.eye(3))


def _common(estimates: dict, ground_truth: dict):
    ids = sorted(set(estimates) & set(ground_truth))
    if not ids:
        raise ValueError("estimates and ground truth share no vertices")
    est = np.array([estimates[i] for i in ids])
    gt = np.array([ground_truth[i] for i in ids])
    return ids, est, gt


def align(estimates: dict, ground_truth: dict, scale: float = 0.1,
          max_iterations: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Gauge rotation ``S`` with ``estimates[i] @ S ~ ground_truth[i]``.

    Minimizes the Cauchy loss of the geodesic residuals by IRLS on the
    rotation manifold, starting from the chordal mean.
    """
    _, est, gt = _common(estimates, ground_truth)
    targets = np.swapaxes(est, -1, -2) @ gt
    s = project_to_rotation(targets.sum(axis=0))
    for _ in range(max_iterations):
        tangent = log_map(s.T @ targets)
        r = np.linalg.norm(tangent, axis=1)
        w = 1.0 / (1.0 + (r / scale) ** 2)
        step = (w[:, None] * tangent).sum(axis=0) / w.sum()
        s = s @ exp_map(step)
        if np.linalg.norm(step) < tol:
            break
    return s


def apply_alignment(estimates: dict, s: np.ndarray) -> dict:
    return {i: r @ s for i, r in estimates.items()}


def rotation_errors(estimates: dict, ground_truth: dict) -> np.ndarray:
    _, est, gt = _common(estimates, ground_truth)
    return np.atleast_1d(geodesic_distance(est, gt))


def auc(errors, threshold: float) -> float:
    """Normalized area under the recall curve on ``[0, threshold]``, in [0, 100].

    ``recall(t)`` is the fraction of errors ``<= t``; the step function is
    integrated exactly: ``100 / (N tau) * sum(max(0, tau - e))``.
    """
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        raise ValueError("auc of an empty error list")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return float(100.0 * np.sum(np.maximum(0.0, threshold - errors)) / (errors.size * threshold))


def cdf_samples(errors) -> list:
    errors = np.sort(np.asarray(errors, dtype=float))
    n = errors.size
    return [(float(e), (i + 1) / n) for i, e in enumerate(errors)]


def gravity_bound(gt_rotations: dict, gravities: dict) -> dict:
    """Smallest error reachable by any rotation that respects the measured gravity."""
    out = {}
    for vid in sorted(set(gt_rotations) & set(gravities)):
        g = gravities[vid]
        if g is None:
            continue
        out[vid] = extract_y_angle(gravity_alignment(g).T @ gt_rotations[vid])[1]
    return out


def period_correct_ratio(report, gt_rotations: dict, graph: PoseGraph) -> float:
    """Fraction of edges whose estimated period matches the ground-truth one.

    ``report`` is a :class:`~gravra.circular.SolveReport` (or anything with
    ``ids``, ``theta``, ``k`` and ``edges``).
    """
    ids = [int(v) for v in report.ids]
    theta = {v: float(t) for v, t in zip(ids, report.theta)}
    est = {v: graph.vertices[v].alignment @ y_rotation(theta[v]) for v in ids}
    s = align({v: gt_rotations[v] for v in ids}, est)
    gt_theta = {}
    for v in ids:
        t, _ = extract_y_angle(graph.vertices[v].alignment.T @ gt_rotations[v] @ s)
        # keep the reference within pi of the estimate
        gt_theta[v] = theta[v] + math.remainder(t - theta[v], 2 * math.pi)
    correct = 0
    for (i, j), k_est in zip(report.edges, report.k):
        aligned = graph.vertices[j].alignment.T @ graph.relative(i, j) @ graph.vertices[i].alignment
        tt, _ = extract_y_angle(aligned)
        k_gt = optimal_period(tt, gt_theta[i], gt_theta[j])
        correct += int(k_gt == int(k_est))
    return correct / max(1, len(report.edges))


def evaluate(estimates: dict, ground_truth: dict, thresholds=DEFAULT_AUC_THRESHOLDS,
             gravities: dict | None = None) -> EvalReport:
    s = align(estimates, ground_truth)
    aligned = apply_alignment(estimates, s)
    ids = sorted(set(estimates) & set(ground_truth))
    errors = rotation_errors(aligned, ground_truth)
    bound = None
    if gravities is not None:
        b = gravity_bound(ground_truth, gravities)
        bound = np.array([b.get(v, np.nan) for v in ids])
    return EvalReport(
        ids=ids,
        errors=errors,
        mean=float(np.mean(errors)),
        median=float(np.median(errors)),
        auc={float(t): auc(errors, t) for t in thresholds},
        cdf_samples=cdf_samples(errors),
        gravity_bound_errors=bound,
        alignment=s,
    )


def _g9(x: float) -> str:
    return format(float(x), ".9g")


def format_report(report: EvalReport) -> str:
    lines = [
        f"vertices={len(report.ids)}",
        f"mean={_g9(report.mean)}",
        f"median={_g9(report.median)}",
    ]
    for t, score in sorted(report.auc.items()):
        lines.append(f"auc@{_g9(t)}={_g9(score)}")
    if report.gravity_bound_errors is not None:
        b = report.gravity_bound_errors[np.isfinite(report.gravity_bound_errors)]
        if b.size:
            lines.append(f"gravity_bound_mean={_g9(np.mean(b))}")
            lines.append(f"gravity_bound_median={_g9(np.median(b))}")
    if report.period_correct_ratio is not None:
        lines.append(f"period_correct_ratio={_g9(report.period_correct_ratio)}")
    return "\n".join(lines) + "\n"


def format_errors_csv(report: EvalReport) -> str:
    header = "vertex,error_rad"
    if report.gravity_bound_errors is not None:
        header += ",gravity_bound_rad"
    lines = [header]
    for k, (vid, e) in enumerate(zip(report.ids, report.errors)):
        row = f"{vid},{_g9(e)}"
        if report.gravity_bound_errors is not None:
            b = report.gravity_bound_errors[k]
            row += "," + ("" if not np.isfinite(b) else _g9(b))
        lines.append(row)
    return "\n".join(lines) + "\n"


def format_cdf_csv(report: EvalReport) -> str:
    lines = ["error_rad,fraction"]
    lines += [f"{_g9(e)},{_g9(f)}" for e, f in report.cdf_samples]
    return "\n".join(lines) + "\n"
