"""Gravity-aligned rotation averaging by circular regression.

With every camera's gravity known, ``R_i = U_i @ y_rotation(theta_i)`` and each
edge reduces to a scalar measurement ``theta_tilde_ij ~ theta_j - theta_i``
modulo ``2*pi``.  :func:`solve` alternates between a robust weighted linear
fit of the angles with the periods ``k_ij`` held fixed and a closed-form
re-assignment of the periods with the angles held fixed.

The robust angle fit runs in two stages: an L1 stage (IRLS with weights
``1 / max(|eps|, delta)``) followed by a Geman-McClure stage (IRLS with
weights ``sigma^4 / (sigma^2 + eps^2)^2``).  Both weightings are
majorize-minimize steps, so together with the period update the stage
objective never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .geometry import TWO_PI, extract_y_angle, wrap, y_rotation
from .pose_graph import PoseGraph, is_connected

L1, GEMAN_MCCLURE = 1, 2


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    max_iterations: int = 100
    convergence_tol: float = 1e-7
    l1_iterations: int = 10
    l1_inner_iterations: int = 10
    gm_iterations: int = 100
    gm_scale: float = 0.1
    l1_delta: float = 1e-6

    def __post_init__(self):
        for name in ("max_iterations", "l1_iterations", "l1_inner_iterations", "gm_iterations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("convergence_tol", "gm_scale", "l1_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class OneDofProblem:
    """Scalar edge measurements of a fully gravity-annotated graph.

    Edge ``e`` measures ``theta[dst[e]] - theta[src[e]]``.
    """

    ids: np.ndarray
    index: dict
    src: np.ndarray
    dst: np.ndarray
    theta_tilde: np.ndarray
    offaxis: np.ndarray
    kappa: np.ndarray
    gauge: int
    alignments: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)


@dataclass
class SolveReport:
    ids: np.ndarray
    theta: np.ndarray
    k: np.ndarray
    objective_trace: list
    trace_stages: list
    iterations: int
    converged: bool
    edges: list = field(default_factory=list)
    theta_history: list = field(default_factory=list)
    k_history: list = field(default_factory=list)
    final_objective: float = float("nan")

    def angles(self) -> dict:
        return {int(v): float(t) for v, t in zip(self.ids, self.theta)}

    def periods(self) -> dict:
        return {pair: int(k) for pair, k in zip(self.edges, self.k)}

    def rotations(self, graph: PoseGraph) -> dict:
        """Absolute rotations ``U_i @ y_rotation(theta_i)``."""
        return {
            int(v): graph.vertices[int(v)].alignment @ y_rotation(t)
            for v, t in zip(self.ids, self.theta)
        }

    def stage_traces(self) -> dict:
        out = {}
        for stage, value in zip(self.trace_stages, self.objective_trace):
            out.setdefault(stage, []).append(value)
        return out


def build_problem(graph: PoseGraph) -> OneDofProblem:
    missing = [v for v in graph.ids if not graph.vertices[v].has_gravity]
    if missing:
        raise SolverError(f"vertices without gravity: {missing[:10]}")
    if len(graph) == 0:
        raise SolverError("empty graph")
    if not is_connected(graph):
        raise SolverError("graph is disconnected; solve each component separately")
    arr = graph.arrays
    align = np.array([graph.vertices[int(v)].alignment for v in arr.ids])
    aligned_rel = np.swapaxes(align[arr.dst], -1, -2) @ arr.rel @ align[arr.src]
    if len(arr.src):
        theta_tilde, offaxis = extract_y_angle(aligned_rel)
    else:
        theta_tilde, offaxis = np.zeros(0), np.zeros(0)
    return OneDofProblem(
        ids=arr.ids,
        index=arr.index,
        src=arr.src,
        dst=arr.dst,
        theta_tilde=np.atleast_1d(theta_tilde),
        offaxis=np.atleast_1d(offaxis),
        kappa=arr.kappa,
        gauge=0,
        alignments=align,
    )


def optimal_period(theta_tilde, theta_i, theta_j):
    """Integer ``k`` minimizing ``|theta_tilde - (theta_j - theta_i) + 2*k*pi|``.

    Ties at ``|residual| = pi`` resolve to the residual ``-pi``.  For wrapped
    arguments ``k`` is in ``{-1, 0, 1}``.  Works elementwise on arrays.
    """
    raw = np.asarray(theta_tilde, dtype=float) - (
        np.asarray(theta_j, dtype=float) - np.asarray(theta_i, dtype=float)
    )
    k = np.rint((wrap(raw) - raw) / TWO_PI).astype(int)
    if k.ndim == 0:
        return int(k)
    return k


def residuals(problem: OneDofProblem, theta: np.ndarray, k: np.ndarray) -> np.ndarray:
    return problem.theta_tilde + TWO_PI * k - (theta[problem.dst] - theta[problem.src])


def robust_weights(eps: np.ndarray, config: SolverConfig, stage: int) -> np.ndarray:
    if stage == L1:
        return 1.0 / np.maximum(np.abs(eps), config.l1_delta)
    s2 = config.gm_scale**2
    return s2 * s2 / (s2 + eps**2) ** 2


def robust_loss(eps: np.ndarray, config: SolverConfig, stage: int) -> np.ndarray:
    """Per-edge loss; L1 is smoothed quadratically below ``l1_delta``."""
    if stage == L1:
        a = np.abs(eps)
        d = config.l1_delta
        return np.where(a >= d, a, a * a / (2 * d) + d / 2)
    s2 = config.gm_scale**2
    e2 = eps**2
    return s2 * e2 / (s2 + e2)


def objective(problem: OneDofProblem, theta, k, config: SolverConfig, stage: int = GEMAN_MCCLURE) -> float:
    eps = residuals(problem, np.asarray(theta, dtype=float), np.asarray(k))
    return float(np.sum(problem.kappa * robust_loss(eps, config, stage)))


class _ReducedLaplacian:
    """Fixed sparsity pattern of the gauge-reduced weighted graph Laplacian."""

    def __init__(self, n: int, src: np.ndarray, dst: np.ndarray, gauge: int):
        keep = np.ones(n, dtype=bool)
        keep[gauge] = False
        col = np.cumsum(keep) - 1
        col[gauge] = -1
        m = len(src)
        # per edge: (s, s), (d, d), (s, d), (d, s)
        rows = np.concatenate([col[src], col[dst], col[src], col[dst]])
        cols = np.concatenate([col[src], col[dst], col[dst], col[src]])
        sign = np.concatenate([np.ones(2 * m), -np.ones(2 * m)])
        valid = (rows >= 0) & (cols >= 0)
        size = n - 1
        # unique keys sorted column-major give the CSC layout directly
        keys = cols[valid] * size + rows[valid]
        uniq, self.slots = np.unique(keys, return_inverse=True)
        self.indices = (uniq % size).astype(np.int32)
        self.indptr = np.searchsorted(uniq // size, np.arange(size + 1)).astype(np.int32)
        self.sign = sign[valid]
        self.edge_of = np.tile(np.arange(m), 4)[valid]
        self.nnz = len(uniq)
        self.size = size
        self.keep = keep

    def matrix(self, weights: np.ndarray) -> sp.csc_matrix:
        data = np.bincount(self.slots, weights[self.edge_of] * self.sign, minlength=self.nnz)
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.size, self.size))


def _laplacian(problem: OneDofProblem) -> _ReducedLaplacian:
    cached = problem.__dict__.get("_laplacian")
    if cached is None:
        cached = _ReducedLaplacian(problem.n_vertices, problem.src, problem.dst, problem.gauge)
        problem.__dict__["_laplacian"] = cached
    return cached


def solve_linear_stage(problem: OneDofProblem, k: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Exact minimizer of ``sum w (theta_tilde + 2 pi k - (theta_j - theta_i))^2``.

    The gauge vertex is pinned to 0.  The returned angles are not wrapped.
    """
    n = problem.n_vertices
    if n == 1:
        return np.zeros(1)
    weights = np.asarray(weights, dtype=float)
    if np.any(~(weights > 0)):
        raise SolverError("IRLS weights must be positive")
    src, dst = problem.src, problem.dst
    b = problem.theta_tilde + TWO_PI * np.asarray(k)
    rhs = np.bincount(dst, weights * b, minlength=n) - np.bincount(src, weights * b, minlength=n)
    lap = _laplacian(problem)
    with np.errstate(all="ignore"):
        sol = spsolve(lap.matrix(weights), rhs[lap.keep], permc_spec="MMD_AT_PLUS_A")
    sol = np.atleast_1d(sol)
    if not np.all(np.isfinite(sol)):
        raise SolverError("singular normal equations (is the graph connected?)")
    theta = np.zeros(n)
    theta[lap.keep] = sol
    return theta


def _theta_step(problem, theta, k, config, stage):
    """Robust angle fit with the periods held fixed.

    The L1 stage iterates reweighted solves towards the fixed-period L1
    minimizer; the Geman-McClure stage takes a single reweighted solve.
    """
    inner = config.l1_inner_iterations if stage == L1 else 1
    current = theta
    for _ in range(inner):
        eps = residuals(problem, current, k)
        w = robust_weights(eps, config, stage) * problem.kappa
        raw = solve_linear_stage(problem, k, w)
        step = float(np.max(np.abs(raw - current)))
        current = raw
        if step < config.convergence_tol:
            break
    return wrap(current)


def _initial_angles(problem: OneDofProblem, graph: PoseGraph, init) -> np.ndarray:
    theta = np.zeros(problem.n_vertices)
    if init is None:
        return theta
    if isinstance(init, dict):
        for vid, t in init.items():
            theta[problem.index[int(vid)]] = t
    else:
        theta[:] = np.asarray(init, dtype=float)
    return wrap(theta - theta[problem.gauge])


def solve(graph: PoseGraph, config: SolverConfig | None = None, init=None,
          record_history: bool = False) -> SolveReport:
    """Estimate every camera's angle about its gravity axis.

    ``init`` optionally maps vertex id to a starting angle (defaults to 0).
    The gauge is the smallest vertex id, pinned at angle 0.
    """
    config = config or SolverConfig()
    problem = build_problem(graph)
    theta = _initial_angles(problem, graph, init)
    k = optimal_period(problem.theta_tilde, theta[problem.src], theta[problem.dst])
    k = np.atleast_1d(k)
    tol = config.convergence_tol

    trace, stages = [], []
    theta_hist, k_hist = [], []
    if record_history:
        theta_hist.append(theta.copy())
        k_hist.append(k.copy())
    iterations = 0
    converged = False
    exact = problem.n_edges == 0 or np.max(np.abs(residuals(problem, theta, k))) < tol

    for stage, cap in ((L1, config.l1_iterations), (GEMAN_MCCLURE, config.gm_iterations)):
        if exact:
            break
        f_prev = objective(problem, theta, k, config, stage)
        stage_done = False
        for _ in range(cap):
            if iterations >= config.max_iterations:
                break
            new_theta = _theta_step(problem, theta, k, config, stage)
            new_k = optimal_period(problem.theta_tilde, new_theta[problem.src], new_theta[problem.dst])
            new_k = np.atleast_1d(new_k)
            f_new = objective(problem, new_theta, new_k, config, stage)
            iterations += 1
            if f_new > f_prev:
                # only reachable through round-off at a stationary point
                trace.append(f_prev)
                stages.append(stage)
                stage_done = True
                break
            delta = float(np.max(np.abs(wrap(new_theta - theta))))
            theta, k, f_prev = new_theta, new_k, f_new
            trace.append(f_new)
            stages.append(stage)
            if record_history:
                theta_hist.append(theta.copy())
                k_hist.append(k.copy())
            if np.max(np.abs(residuals(problem, theta, k))) < tol:
                exact = True
                stage_done = True
                break
            if delta < tol:
                stage_done = True
                break
        if stage == GEMAN_MCCLURE:
            converged = stage_done
    if exact:
        converged = True

    edges = [(int(problem.ids[s]), int(problem.ids[d])) for s, d in zip(problem.src, problem.dst)]
    return SolveReport(
        ids=problem.ids.copy(),
        theta=theta,
        k=k,
        objective_trace=trace,
        trace_stages=stages,
        iterations=iterations,
        converged=converged,
        edges=edges,
        theta_history=theta_hist,
        k_history=k_hist,
        final_objective=objective(problem, theta, k, config, GEMAN_MCCLURE),
    )
