"""Rotation averaging with gravity known for only part of the cameras.

Cameras with gravity keep the single angle unknown, ``R = U @ y_rotation(theta)``;
cameras without gravity carry a full rotation updated through axis-angle
increments, ``R <- R @ exp(w)``.  Edges fall into three classes:

* both endpoints with gravity: the scalar circular residual,
* neither endpoint with gravity: the 3-vector residual ``log(R_j.T R_ij R_i)``,
* one of each: the same 3-vector residual where the gravity side only moves
  about its local y axis (the x and z increments are pinned to zero).

The solve is stratified.  The largest gravity-connected component is first
solved with the 1-DoF circular solver, all other cameras start at identity
(gravity cameras at ``U`` itself), and then every unknown is refined jointly
by robust Gauss-Newton with the same L1 then Geman-McClure schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import circular
from .circular import GEMAN_MCCLURE, L1, SolverConfig, SolverError, robust_loss, robust_weights
from .geometry import (
    TWO_PI,
    exp_map,
    extract_y_angle,
    left_jacobian_inv,
    log_map,
    right_jacobian_inv,
    wrap,
    y_rotation,
)
from .pose_graph import PoseGraph, connected_components, is_connected

MAX_HALVINGS = 10


@dataclass
class MixedReport:
    rotations: dict
    iterations: int
    objective_trace: list
    trace_stages: list
    converged: bool
    gravity_ids: list = field(default_factory=list)
    free_ids: list = field(default_factory=list)
    theta: dict = field(default_factory=dict)
    stage_a: circular.SolveReport | None = None
    final_objective: float = float("nan")

    def stage_traces(self) -> dict:
        out = {}
        for stage, value in zip(self.trace_stages, self.objective_trace):
            out.setdefault(stage, []).append(value)
        return out


def _linearize(rel, rot_i, rot_j):
    """Batched 3-vector residual and its Jacobians w.r.t. right increments."""
    e = np.swapaxes(rot_j, -1, -2) @ rel @ rot_i
    phi = log_map(e)
    return phi, right_jacobian_inv(phi), -left_jacobian_inv(phi)


def linearize_edge(rel, rot_i, rot_j, gravity_i: bool, gravity_j: bool,
                   theta_tilde: float | None = None, theta_i: float | None = None,
                   theta_j: float | None = None):
    """Linear model ``r + B_i d_i + B_j d_j`` of one edge residual.

    Returns ``(B_i, B_j, r)``.  A gravity endpoint contributes one column
    (its angle increment), a free endpoint three (its axis-angle increment).
    For an edge between two gravity cameras the residual is the scalar
    ``theta_tilde + 2 k pi - (theta_j - theta_i)`` with the optimal ``k`` and
    the blocks are ``[[1]]`` and ``[[-1]]``.
    """
    if gravity_i and gravity_j:
        k = circular.optimal_period(theta_tilde, theta_i, theta_j)
        eps = theta_tilde + TWO_PI * k - (theta_j - theta_i)
        return np.array([[1.0]]), np.array([[-1.0]]), np.array([eps])
    phi, ji, jj = _linearize(np.asarray(rel)[None], np.asarray(rot_i)[None], np.asarray(rot_j)[None])
    ji, jj = ji[0], jj[0]
    # y_rotation(d) = exp(-d * e_y)
    if gravity_i:
        ji = -ji[:, 1:2]
    if gravity_j:
        jj = -jj[:, 1:2]
    return ji, jj, phi[0]


class _MixedState:
    """Unknown layout and residual evaluation for one mixed problem."""

    def __init__(self, graph: PoseGraph):
        arr = graph.arrays
        self.graph = graph
        self.ids = arr.ids
        self.has_g = np.array([graph.vertices[int(v)].has_gravity for v in arr.ids])
        eye = np.eye(3)
        self.align = np.array([
            graph.vertices[int(v)].alignment if g else eye for v, g in zip(arr.ids, self.has_g)
        ])
        self.src, self.dst, self.rel, self.kappa = arr.src, arr.dst, arr.rel, arr.kappa
        gg = self.has_g[self.src] & self.has_g[self.dst]
        self.gg = np.flatnonzero(gg)
        self.other = np.flatnonzero(~gg)
        if len(self.gg):
            aligned = (np.swapaxes(self.align[self.dst[self.gg]], -1, -2)
                       @ self.rel[self.gg] @ self.align[self.src[self.gg]])
            self.theta_tilde = np.atleast_1d(extract_y_angle(aligned)[0])
        else:
            self.theta_tilde = np.zeros(0)

    def setup_columns(self, gauge: int):
        self.gauge = gauge
        width = np.where(self.has_g, 1, 3)
        width[gauge] = 0
        self.col0 = np.concatenate([[0], np.cumsum(width)[:-1]])
        self.width = width
        self.n_unknowns = int(width.sum())

    def rotations(self, theta, rots):
        out = rots.copy()
        g = self.has_g
        out[g] = self.align[g] @ y_rotation(theta[g])
        return out

    def residual_norms(self, theta, rots):
        """Per-edge residual magnitudes (scalar GG first, then the rest)."""
        r = np.zeros(len(self.src))
        if len(self.gg):
            s, d = self.src[self.gg], self.dst[self.gg]
            k = circular.optimal_period(self.theta_tilde, theta[s], theta[d])
            r[self.gg] = np.abs(self.theta_tilde + TWO_PI * k - (theta[d] - theta[s]))
        if len(self.other):
            full = self.rotations(theta, rots)
            s, d = self.src[self.other], self.dst[self.other]
            e = np.swapaxes(full[d], -1, -2) @ self.rel[self.other] @ full[s]
            r[self.other] = np.linalg.norm(log_map(e), axis=1)
        return r

    def objective(self, theta, rots, config, stage):
        r = self.residual_norms(theta, rots)
        return float(np.sum(self.kappa * robust_loss(r, config, stage)))

    def step(self, theta, rots, config, stage):
        """Solve the reweighted linearized system; returns the increment."""
        rows, cols, vals = [], [], []
        rhs_parts, w_parts = [], []
        row = 0
        r_all = self.residual_norms(theta, rots)
        w_edge = robust_weights(r_all, config, stage) * self.kappa
        if len(self.gg):
            s, d = self.src[self.gg], self.dst[self.gg]
            k = circular.optimal_period(self.theta_tilde, theta[s], theta[d])
            eps = self.theta_tilde + TWO_PI * k - (theta[d] - theta[s])
            r_idx = row + np.arange(len(self.gg))
            for vert, sign in ((s, 1.0), (d, -1.0)):
                keep = self.width[vert] > 0
                rows.append(r_idx[keep])
                cols.append(self.col0[vert[keep]])
                vals.append(np.full(keep.sum(), sign))
            rhs_parts.append(eps)
            w_parts.append(w_edge[self.gg])
            row += len(self.gg)
        if len(self.other):
            full = self.rotations(theta, rots)
            s, d = self.src[self.other], self.dst[self.other]
            phi, ji, jj = _linearize(self.rel[self.other], full[s], full[d])
            m = len(self.other)
            r_idx = row + 3 * np.arange(m)
            for vert, jac in ((s, ji), (d, jj)):
                g = self.has_g[vert]
                for a in range(3):
                    # gravity vertices: single column, -J[:, 1]
                    sel = g & (self.width[vert] > 0)
                    rows.append(r_idx[sel] + a)
                    cols.append(self.col0[vert[sel]])
                    vals.append(-jac[sel, a, 1])
                    sel = ~g & (self.width[vert] > 0)
                    for b in range(3):
                        rows.append(r_idx[sel] + a)
                        cols.append(self.col0[vert[sel]] + b)
                        vals.append(jac[sel, a, b])
            rhs_parts.append(phi.reshape(-1))
            w_parts.append(np.repeat(w_edge[self.other], 3))
            row += 3 * m
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        jmat = sp.csr_matrix((vals, (rows, cols)), shape=(row, self.n_unknowns))
        r = np.concatenate(rhs_parts)
        w = np.concatenate(w_parts)
        jt_w = jmat.T.multiply(w).tocsr()
        normal = (jt_w @ jmat).tocsc()
        with np.errstate(all="ignore"):
            delta = np.atleast_1d(spsolve(normal, -(jt_w @ r), permc_spec="MMD_AT_PLUS_A"))
        if not np.all(np.isfinite(delta)):
            raise SolverError("singular linearized system")
        return delta

    def retract(self, theta, rots, delta, alpha):
        theta = theta.copy()
        rots = rots.copy()
        g = self.has_g & (self.width > 0)
        theta[g] = wrap(theta[g] + alpha * delta[self.col0[g]])
        f = ~self.has_g & (self.width > 0)
        if np.any(f):
            idx = self.col0[f][:, None] + np.arange(3)
            rots[f] = rots[f] @ exp_map(alpha * delta[idx])
        return theta, rots


def solve_mixed(graph: PoseGraph, config: SolverConfig | None = None,
                delegate: bool = True) -> MixedReport:
    """Stratified solve for graphs where only some cameras know gravity.

    With every camera carrying gravity the 1-DoF solver is used directly,
    unless ``delegate`` is False, which forces the joint refinement as well.
    """
    config = config or SolverConfig()
    if len(graph) == 0:
        raise SolverError("empty graph")
    if not is_connected(graph):
        raise SolverError("graph is disconnected; solve each component separately")
    gravity_ids = graph.gravity_ids()
    free_ids = [v for v in graph.ids if v not in set(gravity_ids)]

    if not free_ids and delegate:
        rep = circular.solve(graph, config)
        return MixedReport(
            rotations=rep.rotations(graph),
            iterations=rep.iterations,
            objective_trace=list(rep.objective_trace),
            trace_stages=list(rep.trace_stages),
            converged=rep.converged,
            gravity_ids=gravity_ids,
            free_ids=[],
            theta=rep.angles(),
            stage_a=rep,
            final_objective=rep.final_objective,
        )

    state = _MixedState(graph)
    index = graph.arrays.index
    n = len(state.ids)
    theta = np.zeros(n)
    rots = np.tile(np.eye(3), (n, 1, 1))
    stage_a = None
    if gravity_ids:
        comps = connected_components(graph, "gravity_only")
        largest = max(comps, key=len)
        gauge = index[min(largest)]
        if len(largest) > 1:
            stage_a = circular.solve(graph.subgraph(largest), config)
            for vid, t in stage_a.angles().items():
                theta[index[vid]] = t
    else:
        gauge = index[free_ids[0]]
    state.setup_columns(gauge)

    tol = config.convergence_tol
    trace, stages = [], []
    iterations = 0
    converged = False
    exact = np.max(state.residual_norms(theta, rots), initial=0.0) < tol
    caps = ((L1, config.l1_iterations * config.l1_inner_iterations), (GEMAN_MCCLURE, config.gm_iterations))
    for stage, cap in caps:
        if exact:
            break
        f_prev = state.objective(theta, rots, config, stage)
        stage_done = False
        for _ in range(cap):
            delta = state.step(theta, rots, config, stage)
            iterations += 1
            alpha = 1.0
            for _ in range(MAX_HALVINGS + 1):
                cand_theta, cand_rots = state.retract(theta, rots, delta, alpha)
                f_new = state.objective(cand_theta, cand_rots, config, stage)
                if f_new <= f_prev:
                    break
                alpha *= 0.5
            if f_new > f_prev:
                trace.append(f_prev)
                stages.append(stage)
                stage_done = True
                break
            theta, rots, f_prev = cand_theta, cand_rots, f_new
            trace.append(f_new)
            stages.append(stage)
            if np.max(state.residual_norms(theta, rots), initial=0.0) < tol:
                exact = stage_done = True
                break
            if alpha * np.max(np.abs(delta), initial=0.0) < tol:
                stage_done = True
                break
        if stage == GEMAN_MCCLURE:
            converged = stage_done
    if exact:
        converged = True

    full = state.rotations(theta, rots)
    rotations = {int(v): full[k] for k, v in enumerate(state.ids)}
    return MixedReport(
        rotations=rotations,
        iterations=iterations,
        objective_trace=trace,
        trace_stages=stages,
        converged=converged,
        gravity_ids=gravity_ids,
        free_ids=free_ids,
        theta={int(v): float(theta[k]) for k, v in enumerate(state.ids) if state.has_g[k]},
        stage_a=stage_a,
        final_objective=state.objective(theta, rots, config, GEMAN_MCCLURE),
    )
