import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gravra import circular, evaluation, synth
from gravra import geometry as geo
from gravra.circular import GEMAN_MCCLURE, L1, SolverConfig, SolverError
from gravra.pose_graph import PoseGraph

from oracles import UP, complete_one_dof_graph, dense_weighted_lsq, gm_loss, grid_search_4, wrap_ref


def aligned_graph(n, measurements):
    g = PoseGraph()
    for i in range(n):
        g.add_vertex(i, UP)
    for (i, j), t in measurements.items():
        g.add_edge(i, j, geo.y_rotation(t))
    return g


def rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


class TestBuildProblem:
    def test_aligned(self):
        p = circular.build_problem(aligned_graph(2, {(0, 1): 0.7}))
        assert p.theta_tilde[0] == pytest.approx(0.7, abs=1e-12)
        assert p.offaxis[0] == pytest.approx(0.0, abs=1e-7)
        assert p.gauge == 0

    def test_tilted_gravity(self):
        rng = np.random.default_rng(0)
        gi, gj = geo.random_unit_vector(rng), geo.random_unit_vector(rng)
        ui, uj = geo.gravity_alignment(gi), geo.gravity_alignment(gj)
        g = PoseGraph()
        g.add_vertex(0, gi)
        g.add_vertex(1, gj)
        g.add_edge(0, 1, uj @ geo.y_rotation(0.7) @ ui.T)
        assert circular.build_problem(g).theta_tilde[0] == pytest.approx(0.7, abs=1e-12)

    def test_offaxis_edge(self):
        g = aligned_graph(2, {})
        g.add_edge(0, 1, rx(0.2))
        p = circular.build_problem(g)
        assert p.theta_tilde[0] == pytest.approx(0.0, abs=1e-12)
        assert p.offaxis[0] == pytest.approx(0.2, abs=1e-12)

    def test_errors(self):
        g = aligned_graph(2, {(0, 1): 0.1})
        g.add_vertex(2)
        g.add_edge(1, 2, np.eye(3))
        with pytest.raises(SolverError, match="gravity"):
            circular.build_problem(g)
        with pytest.raises(SolverError, match="disconnected"):
            circular.build_problem(aligned_graph(3, {(0, 1): 0.1}))
        with pytest.raises(SolverError):
            circular.build_problem(PoseGraph())


class TestOptimalPeriod:
    def test_examples(self):
        assert circular.optimal_period(0.5, 0.0, 0.4) == 0
        # (theta_tilde, theta_i, theta_j) = (3, 0, -3): raw residual 6
        k = circular.optimal_period(3.0, 0.0, -3.0)
        assert k == -1
        assert 3.0 + 2 * math.pi * k - (-3.0 - 0.0) == pytest.approx(6.0 - 2 * math.pi, abs=1e-12)
        k = circular.optimal_period(-3.0, 0.0, 3.0)
        assert k == 1
        assert -3.0 + 2 * math.pi * k - 3.0 == pytest.approx(2 * math.pi - 6.0, abs=1e-12)
        assert 6.0 - 2 * math.pi == pytest.approx(-0.28319, abs=1e-5)

    def test_tie_goes_to_minus_pi(self):
        # raw residual +pi must become -pi
        k = circular.optimal_period(0.0, 0.0, -math.pi)
        assert 0.0 + 2 * math.pi * k + math.pi == -math.pi
        assert circular.optimal_period(-math.pi, 0.0, 0.0) == 0

    @given(st.floats(-math.pi, math.pi, exclude_max=True),
           st.floats(-math.pi, math.pi, exclude_max=True),
           st.floats(-math.pi, math.pi, exclude_max=True))
    def test_brute_force(self, t, a, b):
        k = circular.optimal_period(t, a, b)
        assert k in (-1, 0, 1)
        eps = t + 2 * math.pi * k - (b - a)
        assert -math.pi - 1e-12 <= eps < math.pi + 1e-12
        best = min(abs(t + 2 * math.pi * kk - (b - a)) for kk in range(-3, 4))
        assert abs(eps) <= best + 1e-12

    def test_vectorized(self):
        k = circular.optimal_period(np.array([3.0, 0.5]), np.zeros(2), np.array([-3.0, 0.4]))
        np.testing.assert_array_equal(k, [-1, 0])


class TestLinearStage:
    def test_single_edge(self):
        p = circular.build_problem(aligned_graph(2, {(0, 1): 0.5}))
        np.testing.assert_allclose(circular.solve_linear_stage(p, np.zeros(1), np.ones(1)), [0, 0.5], atol=1e-14)

    def test_consistent_triangle(self):
        p = circular.build_problem(aligned_graph(3, {(0, 1): 0.3, (1, 2): 0.4, (2, 0): -0.7}))
        theta = circular.solve_linear_stage(p, np.zeros(3, int), np.ones(3))
        np.testing.assert_allclose(circular.residuals(p, theta, np.zeros(3, int)), 0.0, atol=1e-14)

    def test_inconsistent_triangle(self):
        p = circular.build_problem(aligned_graph(3, {(0, 1): 0.3, (1, 2): 0.4, (2, 0): -0.6}))
        theta = circular.solve_linear_stage(p, np.zeros(3, int), np.ones(3))
        np.testing.assert_allclose(circular.residuals(p, theta, np.zeros(3, int)), 1 / 30, atol=1e-14)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(1)
        graph, _ = synth.generate(synth.SynthConfig(topology="grid", n=49, neighbors=8,
                                                    rot_noise=0.05, seed=2))
        p = circular.build_problem(graph)
        k = rng.integers(-1, 2, p.n_edges)
        w = rng.uniform(0.1, 3.0, p.n_edges)
        got = circular.solve_linear_stage(p, k, w)
        edges = list(zip(p.src, p.dst))
        ref = dense_weighted_lsq(p.n_vertices, edges, p.theta_tilde + 2 * math.pi * k, w)
        assert np.max(np.abs(got - ref)) < 1e-10
        assert got[p.gauge] == 0.0

    def test_rejects_bad_weights(self):
        p = circular.build_problem(aligned_graph(2, {(0, 1): 0.5}))
        with pytest.raises(SolverError):
            circular.solve_linear_stage(p, np.zeros(1), np.zeros(1))


class TestObjective:
    def test_zero_and_saturation(self):
        p = circular.build_problem(aligned_graph(2, {(0, 1): 0.5}))
        cfg = SolverConfig()
        assert circular.objective(p, np.array([0, 0.5]), np.zeros(1), cfg) == 0.0
        eps = np.array([0.05, 1.0, 1e6])
        loss = circular.robust_loss(eps, cfg, GEMAN_MCCLURE)
        np.testing.assert_allclose(loss, gm_loss(eps, 0.1), rtol=1e-12)
        assert np.all(loss < 0.1**2)

    def test_weights_are_irls_of_loss(self):
        # w = rho'(e) / (2 e), unit at zero
        cfg = SolverConfig()
        eps = np.array([1e-3, 0.05, 0.3, 2.0])
        h = 1e-7
        deriv = (circular.robust_loss(eps + h, cfg, GEMAN_MCCLURE) - circular.robust_loss(eps - h, cfg, GEMAN_MCCLURE)) / (2 * h)
        np.testing.assert_allclose(circular.robust_weights(eps, cfg, GEMAN_MCCLURE), deriv / (2 * eps), rtol=1e-5)
        assert circular.robust_weights(np.zeros(1), cfg, GEMAN_MCCLURE)[0] == 1.0
        np.testing.assert_allclose(circular.robust_weights(eps, cfg, L1), 1 / eps)

    def test_trace_matches_recomputation(self):
        graph, _ = synth.generate(synth.SynthConfig(n=40, neighbors=6, rot_noise=0.02, outliers=0.1, seed=4))
        cfg = SolverConfig()
        rep = circular.solve(graph, cfg)
        p = circular.build_problem(graph)
        eps = wrap_ref(p.theta_tilde - (rep.theta[p.dst] - rep.theta[p.src]))
        ref = float(np.sum(gm_loss(eps, cfg.gm_scale)))
        assert rep.trace_stages[-1] == GEMAN_MCCLURE
        assert rep.objective_trace[-1] == pytest.approx(ref, rel=1e-12, abs=1e-15)
        assert rep.final_objective == pytest.approx(ref, rel=1e-12, abs=1e-15)


class TestSolve:
    def test_single_edge(self):
        rep = circular.solve(aligned_graph(2, {(0, 1): 0.9}))
        np.testing.assert_allclose(rep.theta, [0.0, 0.9], atol=1e-12)
        np.testing.assert_array_equal(rep.k, [0])
        assert rep.converged and rep.iterations == 1

    def test_single_vertex(self):
        g = PoseGraph()
        g.add_vertex(3, UP)
        rep = circular.solve(g)
        assert rep.converged and rep.iterations == 0
        assert rep.angles() == {3: 0.0}

    def test_noise_free_sequential(self):
        graph, truth = synth.generate(synth.SynthConfig(n=50, neighbors=10, seed=5))
        rep = circular.solve(graph)
        ev = evaluation.evaluate(rep.rotations(graph), truth.rotations)
        assert ev.errors.max() < 1e-8
        assert rep.converged
        assert rep.final_objective < 1e-15
        assert evaluation.period_correct_ratio(rep, truth.rotations, graph) == 1.0

    def test_gauge_invariance(self):
        rng = np.random.default_rng(6)
        theta = rng.uniform(-math.pi, math.pi, 8)
        pairs = [(i, j) for i in range(8) for j in range(i + 1, min(8, i + 4))]
        noise = rng.normal(0, 0.03, len(pairs))
        sols = []
        for c in (0.0, 1.234):
            t = theta + c
            meas = {(i, j): float(wrap_ref(t[j] - t[i] + n)) for (i, j), n in zip(pairs, noise)}
            sols.append(circular.solve(aligned_graph(8, meas)).theta)
        np.testing.assert_allclose(sols[0], sols[1], atol=1e-12)

    def test_init_is_used(self):
        graph, truth = synth.generate(synth.SynthConfig(n=30, neighbors=6, seed=7))
        p = circular.build_problem(graph)
        exact = {v: geo.extract_y_angle(graph.vertices[v].alignment.T @ truth.rotations[v])[0] for v in graph.ids}
        rep = circular.solve(graph, init=exact)
        assert rep.iterations == 0 and rep.converged
        assert p.gauge == 0

    def test_history(self):
        graph, _ = synth.generate(synth.SynthConfig(n=30, neighbors=6, rot_noise=0.01, seed=8))
        rep = circular.solve(graph, record_history=True)
        assert len(rep.theta_history) == rep.iterations + 1
        assert len(rep.k_history) == rep.iterations + 1
        np.testing.assert_array_equal(rep.theta_history[-1], rep.theta)

    def test_max_iterations_cap(self):
        graph, _ = synth.generate(synth.SynthConfig(n=60, neighbors=6, rot_noise=0.05, outliers=0.2, seed=9))
        rep = circular.solve(graph, SolverConfig(max_iterations=3))
        assert rep.iterations == 3
        assert not rep.converged

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_grid_search_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        graph, _, meas = complete_one_dof_graph(4, 0.05, rng)
        cfg = SolverConfig()
        rep = circular.solve(graph, cfg)
        p = circular.build_problem(graph)
        f_solver = circular.objective(p, rep.theta, rep.k, cfg, GEMAN_MCCLURE)
        f_grid, theta_grid = grid_search_4(meas, cfg.gm_scale)
        assert f_solver <= f_grid + 1e-4
        assert abs(f_solver - f_grid) < 1e-4
        assert np.max(np.abs(wrap_ref(rep.theta - theta_grid))) < 2e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["sequential", "grid"]),
       st.floats(0.0, 0.1), st.floats(0.0, 0.4))
def test_descent_and_ranges(seed, topology, noise, outliers):
    n, nb = (36, 8) if topology == "grid" else (40, 6)
    graph, _ = synth.generate(synth.SynthConfig(topology=topology, n=n, neighbors=nb,
                                                rot_noise=noise, outliers=outliers, seed=seed))
    rep = circular.solve(graph)
    for trace in rep.stage_traces().values():
        assert np.all(np.diff(trace) <= 1e-12)
    assert set(np.unique(rep.k)) <= {-1, 0, 1}
    assert np.all(rep.theta >= -math.pi) and np.all(rep.theta < math.pi)
    p = circular.build_problem(graph)
    assert np.all(np.abs(circular.residuals(p, rep.theta, rep.k)) <= math.pi + 1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(gm_scale=0.0)
