import itertools
import unittest

import numpy as np
import pytest

from block_linalg import BlockMatrix, BlockPartition, BlockVector
from exceptions import ConfigurationError, DimensionError, DivergenceError
from pdmm_solver import (
    PDMMSolver,
    Problem,
    Sampler,
    SamplingScheme,
    SolverConfig,
    solve,
)
from prox_library import L1Norm, SquaredDistance
from stepsize import table1_step_sizes
from toy_qp import ToyQPSpec, build_toy_qp


def relative_error(x, x_star):
    return np.linalg.norm(x.data - x_star.data) / (1.0 + x_star.norm())


@pytest.fixture
def toy():
    return build_toy_qp(ToyQPSpec(J=3, I=2, seed=0))


@pytest.fixture
def wide_toy():
    return build_toy_qp(ToyQPSpec(J=5, I=2, seed=4))


@pytest.fixture
def two_scalars():
    # min (x1^2 + x2^2)/2  s.t.  x1 + x2 = 2
    A = BlockMatrix(BlockPartition((1,), (1, 1)), {(0, 0): np.ones((1, 1)), (0, 1): np.ones((1, 1))})
    return build_toy_qp(ToyQPSpec(matrix=A, rhs=np.array([2.0]), centers=np.zeros(2)))


class TestConvergence:

    def test_hand_example_kkt_pair(self, two_scalars):
        np.testing.assert_allclose(two_scalars.x_star.data, [1.0, 1.0])
        np.testing.assert_allclose(two_scalars.y_star.data, [-1.0])

    def test_hand_example_solve(self, two_scalars):
        result = solve(two_scalars, SolverConfig(tol=1e-12, max_iter=5000))
        assert result.stop_reason == "tolerance"
        np.testing.assert_allclose(result.x.data, [1.0, 1.0], atol=1e-8)
        np.testing.assert_allclose(result.y.data, [-1.0], atol=1e-8)

    def test_full_sampling_reaches_kkt_point(self, toy):
        result = PDMMSolver(toy, SolverConfig(tol=1e-12, max_iter=20000)).solve()
        assert result.stop_reason == "tolerance"
        assert relative_error(result.x, toy.x_star) <= 1e-6
        assert relative_error(result.y, toy.y_star) <= 1e-5

    def test_single_block_sampling_reaches_kkt_point(self, toy):
        result = PDMMSolver(toy, SolverConfig(K=1, tol=1e-12, max_iter=200000, seed=3)).solve()
        assert relative_error(result.x, toy.x_star) <= 1e-5

    def test_sadmm_reaches_kkt_point(self, toy):
        result = PDMMSolver(toy, SolverConfig(variant="sadmm", tol=1e-12, max_iter=20000)).solve()
        assert relative_error(result.x, toy.x_star) <= 1e-6

    def test_dual_block_sampling_reaches_kkt_point(self, toy):
        config = SolverConfig(variant="rdbcd", K=2, K_I=1, tol=1e-12, max_iter=200000, seed=1)
        result = PDMMSolver(toy, config).solve()
        assert relative_error(result.x, toy.x_star) <= 1e-5

    @pytest.mark.parametrize("mode", ["linearized-penalty", "linearized-f", "linearized-both"])
    def test_linearized_updates(self, toy, mode):
        config = SolverConfig(update_mode=mode, tol=1e-12, max_iter=50000)
        result = PDMMSolver(toy, config).solve()
        assert relative_error(result.x, toy.x_star) <= 1e-5

    def test_residual_and_R_are_recorded(self, toy):
        result = PDMMSolver(toy, SolverConfig(K=2, max_iter=50, tol=1e-14)).solve()
        trace = result.trace
        assert trace.records[0].t == 0
        assert trace.iterations == 50
        assert trace.stop_reason == "max_iter"
        assert all(r.R_value >= 0.0 for r in trace.records[1:])
        assert all(len(r.selected_blocks) == 2 for r in trace.records[1:])


class TestDeterminism:

    def test_same_seed_same_trajectory(self, wide_toy):
        config = dict(K=2, max_iter=300, tol=1e-14, seed=7)
        first = PDMMSolver(wide_toy, SolverConfig(**config)).solve()
        second = PDMMSolver(wide_toy, SolverConfig(**config)).solve()
        np.testing.assert_array_equal(first.x.data, second.x.data)
        np.testing.assert_array_equal(first.trace.column("objective"), second.trace.column("objective"))

    def test_thread_count_does_not_change_iterates(self, wide_toy):
        config = dict(K=3, max_iter=300, tol=1e-14, seed=2)
        serial = PDMMSolver(wide_toy, SolverConfig(threads=1, **config)).solve()
        threaded = PDMMSolver(wide_toy, SolverConfig(threads=4, **config)).solve()
        np.testing.assert_array_equal(serial.x.data, threaded.x.data)
        np.testing.assert_array_equal(serial.y.data, threaded.y.data)

    def test_different_seeds_differ(self, wide_toy):
        a = PDMMSolver(wide_toy, SolverConfig(K=2, max_iter=20, tol=1e-14, seed=1)).solve()
        b = PDMMSolver(wide_toy, SolverConfig(K=2, max_iter=20, tol=1e-14, seed=2)).solve()
        selections_a = [r.selected_blocks for r in a.trace.records]
        selections_b = [r.selected_blocks for r in b.trace.records]
        assert selections_a != selections_b

    def test_thread_cap_from_environment(self, toy, monkeypatch):
        monkeypatch.setenv("PDMM_THREADS", "2")
        assert PDMMSolver(toy, SolverConfig(threads=8)).threads == 2
        monkeypatch.setenv("PDMM_THREADS", "many")
        with pytest.raises(ConfigurationError):
            PDMMSolver(toy, SolverConfig(threads=8))


class TestConfiguration:

    @pytest.mark.parametrize("overrides", [
        {"variant": "gradient-descent"},
        {"update_mode": "inexact"},
        {"sampler": "shuffled"},
        {"rho": 0.0},
        {"tol": -1.0},
        {"max_iter": 0},
        {"threads": 0},
        {"K": 0},
        {"K": 4},
        {"variant": "sadmm", "K": 2},
        {"variant": "pjadmm", "eta": 1.0},
        {"variant": "sadmm", "preset": "tuned-rpca"},
        {"eta": [1.0, 1.0]},
        {"eta": -1.0},
    ])
    def test_rejected(self, toy, overrides):
        with pytest.raises(ConfigurationError):
            PDMMSolver(toy, SolverConfig(**overrides))

    def test_uncertified_steps_rejected_unless_allowed(self, toy):
        base = table1_step_sizes(3, 3, toy.A.degrees)
        tripled = type(base)(tuple(3 * t for t in base.tau), base.nu, 3, 2, base.K_tilde, 2, "manual")
        with pytest.raises(ConfigurationError):
            PDMMSolver(toy, SolverConfig(step_sizes=tripled))
        solver = PDMMSolver(toy, SolverConfig(step_sizes=tripled, allow_invalid_steps=True))
        assert not solver.report.ok

    def test_linearized_eta_below_bound(self, toy):
        with pytest.raises(ConfigurationError):
            PDMMSolver(toy, SolverConfig(update_mode="linearized-penalty", eta=1e-6))

    def test_problem_shape_checks(self, toy):
        with pytest.raises(DimensionError):
            Problem(toy.A, toy.a, toy.f[:2])
        with pytest.raises(DimensionError):
            Problem(toy.A, BlockVector.zeros((1,)), toy.f)

    def test_non_orthogonal_nonsmooth_block_needs_inner_solver(self):
        A = BlockMatrix(BlockPartition((2,), (2, 2)),
                        {(0, 0): np.array([[1.0, 2.0], [0.0, 1.0]]), (0, 1): np.eye(2)})
        problem = Problem(A, BlockVector((2,), np.array([1.0, 1.0])),
                          [L1Norm(0.1, 2), SquaredDistance(np.array([0.5, -0.5]))])
        with pytest.raises(ConfigurationError):
            PDMMSolver(problem, SolverConfig(max_iter=5)).solve()
        result = PDMMSolver(problem, SolverConfig(max_iter=2000, tol=1e-10, inner_max_iter=500)).solve()
        assert np.all(np.isfinite(result.x.data))
        assert result.trace.last.primal_residual <= 1e-4


class TestIterationPieces(unittest.TestCase):

    def setUp(self):
        self.problem = build_toy_qp(ToyQPSpec(J=3, I=2, seed=0))

    def test_default_start(self):
        state = PDMMSolver(self.problem).initial_state()
        np.testing.assert_array_equal(state.x.data, 0.0)
        np.testing.assert_array_equal(state.y_hat.data, 0.0)
        np.testing.assert_allclose(state.r.data, -self.problem.a.data)

    def test_backward_step_applied_to_supplied_dual(self):
        solver = PDMMSolver(self.problem, SolverConfig(K=2))
        y0 = BlockVector(self.problem.a.sizes, np.arange(1.0, 5.0))
        state = solver.initial_state(y0=y0)
        nu = self.problem.a.expand(solver.steps.nu_array())
        expected = y0.data - nu * solver.rho * state.r.data
        np.testing.assert_allclose(state.y_hat.data, expected)

    def test_dual_sampling_updates_selected_rows_only(self):
        solver = PDMMSolver(self.problem, SolverConfig(variant="rdbcd", K=3, K_I=1))
        state = solver.initial_state()
        y_before = state.y.copy()
        solver.iterate(state, selected=(0, 1, 2), dual_selected=(0,), record=False)
        np.testing.assert_array_equal(state.y.block(1), y_before.block(1))
        tau0 = float(solver.steps.tau[0])
        np.testing.assert_allclose(state.y.block(0), y_before.block(0) + tau0 * solver.rho * state.r.block(0))
        nu = self.problem.a.expand(solver.steps.nu_array())
        np.testing.assert_allclose(state.y_hat.data, state.y.data - nu * solver.rho * state.r.data)

    def test_incremental_residual_tracks_full_recompute(self):
        solver = PDMMSolver(self.problem, SolverConfig(K=1, residual_refresh=10 ** 6, seed=5))
        state = solver.initial_state()
        for _ in range(500):
            solver.iterate(state, record=False)
        np.testing.assert_allclose(state.r.data, self.problem.residual(state.x).data, atol=1e-10)

    def test_divergence_keeps_partial_trace(self):
        solver = PDMMSolver(self.problem, SolverConfig(divergence_threshold=1e-30))
        with self.assertRaises(DivergenceError) as ctx:
            solver.solve()
        trace = ctx.exception.trace
        self.assertEqual(trace.stop_reason, "diverged")
        self.assertEqual(len(trace), 2)

    def test_ergodic_average_of_one_iterate(self):
        result = PDMMSolver(self.problem, SolverConfig(max_iter=1, track_ergodic=True)).solve()
        np.testing.assert_allclose(result.ergodic_x.data, result.x.data)

    def test_ergodic_average_of_several_iterates(self):
        config = SolverConfig(max_iter=3, tol=1e-14, track_ergodic=True)
        result = PDMMSolver(self.problem, config).solve()
        solver = PDMMSolver(self.problem, SolverConfig(max_iter=3, tol=1e-14))
        state = solver.initial_state()
        iterates = []
        for _ in range(3):
            solver.iterate(state, record=False)
            iterates.append(state.x.data.copy())
        np.testing.assert_allclose(result.ergodic_x.data, np.mean(iterates, axis=0))


class TestSampler:

    def test_uniform_draws_distinct_sorted(self):
        rng = np.random.default_rng(0)
        sampler = Sampler(SamplingScheme.UNIFORM, 3, 7)
        for t in range(50):
            draw = sampler.draw(rng, t)
            assert len(set(draw)) == 3
            assert list(draw) == sorted(draw)
            assert all(0 <= j < 7 for j in draw)

    def test_uniform_covers_every_subset(self):
        rng = np.random.default_rng(1)
        sampler = Sampler(SamplingScheme.UNIFORM, 2, 4)
        seen = {sampler.draw(rng, t) for t in range(400)}
        assert seen == set(itertools.combinations(range(4), 2))
        assert len(sampler.all_subsets()) == 6

    def test_cyclic_visits_every_block_each_sweep(self):
        sampler = Sampler(SamplingScheme.CYCLIC, 2, 5, np.random.default_rng(3))
        assert len(sampler.groups) == 3
        covered = sorted(j for t in range(3) for j in sampler.draw(None, t))
        assert covered == list(range(5))
        assert sampler.draw(None, 0) == sampler.draw(None, 3)
        with pytest.raises(ConfigurationError):
            sampler.all_subsets()

    def test_cyclic_short_last_group_keeps_K_steps(self, toy):
        solver = PDMMSolver(toy, SolverConfig(K=2, sampler="cyclic", max_iter=5))
        sampler = solver._primal_sampler
        assert sorted(len(g) for g in sampler.groups) == [1, 2]
        assert solver.steps == table1_step_sizes(3, 2, toy.A.degrees)
        result = solver.solve()
        assert [len(r.selected_blocks) for r in result.trace.records[1:4]] in ([2, 1, 2], [1, 2, 1])

    def test_full_selection(self):
        sampler = Sampler(SamplingScheme.UNIFORM, 4, 4)
        assert sampler.draw(None, 0) == (0, 1, 2, 3)

    def test_bad_size(self):
        with pytest.raises(ConfigurationError):
            Sampler(SamplingScheme.UNIFORM, 0, 3)


if __name__ == '__main__':
    unittest.main()
