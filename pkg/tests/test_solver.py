import math
from dataclasses import replace
from fractions import Fraction

import pytest

from madspip.merit import Partition
from madspip.problem import Cache, Evaluation, Problem
from madspip.solver import (
    InitializationError,
    SolverConfig,
    check_run_invariants,
    init_state,
    iterate,
    reselect_incumbent,
    solve,
    solve_extreme_barrier,
    speculative_search,
    summary_line,
)
from madspip.suite import builtin_problem, initial_point

INF = math.inf


def constrained_problem(g_of_x, name="toy", n=2, bounds=None):
    def evaluator(x):
        return sum(v * v for v in x), tuple(g(x) for g in g_of_x), ()

    return Problem(name, n, len(g_of_x), 0, evaluator, bounds)


class TestInitState:
    def test_partition_split(self):
        problem = constrained_problem([lambda x: -0.5, lambda x: 0.3])
        state = init_state(problem, (0.0, 0.0), SolverConfig(max_evaluations=10))
        assert state.partition.g_int == {0}
        assert state.partition.g_ext == {1}

    def test_all_violated_gives_empty_interior(self):
        problem = constrained_problem([lambda x: 0.1, lambda x: 0.2])
        state = init_state(problem, (0.0, 0.0), SolverConfig(max_evaluations=10))
        assert state.partition.g_int == set()
        assert state.partition.g_ext == {0, 1}

    def test_boundary_within_tolerance_goes_exterior(self):
        problem = constrained_problem([lambda x: -1e-16])
        state = init_state(problem, (0.0, 0.0), SolverConfig(max_evaluations=10))
        assert state.partition.g_ext == {0}

    def test_b_ext_from_f0(self):
        def evaluator(x):
            return 523.0, (), ()

        problem = Problem("f523", 1, 0, 0, evaluator)
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=10))
        assert state.merit_params.b_ext == 100.0

    def test_failed_x0_is_error(self):
        problem = Problem("nanstart", 1, 0, 0, lambda x: (float("nan"), (), ()))
        with pytest.raises(InitializationError):
            init_state(problem, (0.0,), SolverConfig(max_evaluations=10))

    def test_x0_out_of_bounds_is_error(self):
        problem = constrained_problem([lambda x: -1.0], bounds=((0.0, 0.0), (1.0, 1.0)))
        with pytest.raises(InitializationError):
            init_state(problem, (2.0, 0.0), SolverConfig(max_evaluations=10))

    def test_x0_wrong_length(self):
        problem = constrained_problem([lambda x: -1.0])
        with pytest.raises(InitializationError):
            init_state(problem, (0.0,), SolverConfig(max_evaluations=10))


class TestIterate:
    def test_accepts_tiny_strict_decrease(self):
        # objective with a minuscule slope still yields successful iterations
        def evaluator(x):
            return 1e-12 * x[0], (), ()

        problem = Problem("flat", 1, 0, 0, evaluator)
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=50, search_enabled=False))
        delta_before = state.mesh.delta_frame
        outcome = iterate(state)
        assert outcome == "successful"
        assert state.mesh.delta_frame == 2 * delta_before

    def test_unsuccessful_iteration_shrinks(self):
        problem = Problem("bowl", 1, 0, 0, lambda x: (x[0] ** 2, (), ()))
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=50, search_enabled=False))
        delta_before = state.mesh.delta_frame
        outcome = iterate(state)
        assert outcome == "unsuccessful"
        assert state.mesh.delta_frame == 0.5 * delta_before

    def test_rho_cut_gated_by_criterion(self):
        problem = Problem("bowl", 1, 0, 0, lambda x: (x[0] ** 2, (), ()))
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=500, search_enabled=False))
        # frame starts at 1 (no bounds): the first failures do not satisfy
        # delta <= ~1 until the frame halves below it, then rho drops by 100
        rhos = [state.merit_params.rho]
        for _ in range(3):
            iterate(state)
            rhos.append(state.merit_params.rho)
        assert rhos[0] == 0.1
        assert rhos[-1] == pytest.approx(0.001)
        trace = state.record.rho_trace
        assert len(trace) == 1 and trace[0][1] == pytest.approx(0.001)

    def test_no_rho_cut_at_large_frame(self):
        problem = Problem("bowl", 1, 0, 0, lambda x: (x[0] ** 2, (), ()), bounds=((-50.0,), (50.0,)))
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=500, search_enabled=False))
        iterate(state)  # frame 10 -> 5, far above the criterion bound ~1
        assert state.merit_params.rho == 0.1
        assert state.record.rho_trace == []


class TestSpeculativeSearch:
    def _state_after_success(self):
        problem = Problem("slope", 2, 0, 0, lambda x: (x[0] + x[1], (), ()))
        state = init_state(problem, (1.0, 1.0), SolverConfig(max_evaluations=100))
        while state.last_success_offset is None:
            iterate(state)
        return state

    def test_no_candidate_without_success(self):
        problem = Problem("slope", 2, 0, 0, lambda x: (x[0] + x[1], (), ()))
        state = init_state(problem, (1.0, 1.0), SolverConfig(max_evaluations=100))
        assert speculative_search(state) is None

    def test_doubles_last_displacement(self):
        state = self._state_after_success()
        q = speculative_search(state)
        assert q is not None
        expected = tuple(
            qi + 2 * off for qi, off in zip(state.q_incumbent, state.last_success_offset)
        )
        assert q == expected

    def test_skips_cached_candidate(self):
        state = self._state_after_success()
        q = speculative_search(state)
        state.cache.store(q, Evaluation(tuple(map(float, q)), 0.0, (), (), 99))
        assert speculative_search(state) is None

    def test_skips_out_of_bounds(self):
        problem = Problem(
            "slope",
            2,
            0,
            0,
            lambda x: (x[0] + x[1], (), ()),
            bounds=((-2.0, -2.0), (2.0, 2.0)),
        )
        state = init_state(problem, (-1.9, -1.9), SolverConfig(max_evaluations=100))
        state.last_success_offset = (Fraction(-10), Fraction(-10))
        evals_before = state.cache.eval_count
        assert speculative_search(state) is None
        assert state.cache.eval_count == evals_before


class TestReselectIncumbent:
    def _state_with_cache(self, entries):
        problem = Problem("stub", 1, 0, 0, lambda x: (100.0, (), ()))
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=10))
        state.partition = Partition(frozenset(), frozenset())
        for key, ev in entries.items():
            state.cache.entries[key] = ev
        return state

    def test_argmin_selected(self):
        state = self._state_with_cache(
            {
                ("a",): Evaluation((1.0,), 3.2, (), (), 1),
                ("b",): Evaluation((2.0,), 3.1, (), (), 2),
            }
        )
        reselect_incumbent(state)
        assert state.incumbent.eval_index == 2

    def test_tie_breaks_to_earliest(self):
        state = self._state_with_cache(
            {
                ("b",): Evaluation((2.0,), 3.1, (), (), 2),
                ("a",): Evaluation((1.0,), 3.1, (), (), 7),
            }
        )
        reselect_incumbent(state)
        assert state.incumbent.eval_index == 2

    def test_rho_reduction_reranks_infeasible(self):
        # A: feasible with f=5; B: cext=0.04 with f=1. At rho=0.1 B wins
        # (z=1.4), at rho=0.001 the penalty dominates and A wins.
        problem = Problem("stub", 1, 0, 1, lambda x: (0.0, (), (0.0,)))
        state = init_state(problem, (0.0,), SolverConfig(max_evaluations=10))
        a = Evaluation((1.0,), 5.0, (), (0.0,), 1)
        b = Evaluation((2.0,), 1.0, (), (0.2,), 2)  # h=0.2 -> cext=0.04
        state.cache.entries.clear()
        state.cache.entries[("a",)] = a
        state.cache.entries[("b",)] = b
        state.merit_params = replace(state.merit_params, rho=0.1, b_ext=1.0)
        reselect_incumbent(state)
        assert state.incumbent is b
        state.merit_params = replace(state.merit_params, rho=0.001)
        reselect_incumbent(state)
        assert state.incumbent is a
        assert state.incumbent_merit == 5.0

    def test_all_infinite_keeps_incumbent_and_flags(self):
        state = self._state_with_cache({})
        state.cache.entries.clear()
        state.cache.entries[("a",)] = Evaluation((1.0,), INF, (), (), 1, failed=True)
        incumbent_before = state.incumbent
        reselect_incumbent(state)
        assert state.incumbent is incumbent_before
        assert any("no-finite-merit" in f for f in state.record.flags)


class TestSolve:
    def test_unit_disk_reaches_optimum(self):
        problem, optimum = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=1500, seed=1), x0_id="feasible-0")
        assert record.best_feasible_f == pytest.approx(optimum.f_star, abs=1e-4)

    def test_budget_exhausted_after_init(self):
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=1, seed=1))
        assert record.outcome == "budget-exhausted"
        assert record.evals_used == 1
        assert len(record.rows) == 1 and record.rows[0]["incumbent"]

    def test_histories_byte_identical(self, tmp_path):
        from madspip.problem import write_history

        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        paths = []
        for run in range(2):
            record = solve(problem, x0, SolverConfig(max_evaluations=400, seed=5))
            path = tmp_path / f"run{run}.jsonl"
            write_history(record.rows, path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_merit_monotone_and_rho_trace(self):
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=1500, seed=2))
        violations, _ = check_run_invariants(record)
        assert violations == []
        assert len(record.rho_trace) >= 1

    def test_incumbent_strictly_interior_throughout(self):
        problem, _ = builtin_problem("two-ring")
        x0 = initial_point(problem, "infeasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=800, seed=4))
        assert all(e["incumbent_cint"] < 0 for e in record.iterations)

    def test_partition_switch_recorded_on_entry(self):
        # infeasible start: the disk constraint begins exterior and moves
        # interior once the incumbent crosses in
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "infeasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=1500, seed=1))
        assert record.partition_trace
        assert [idx for _, idx in record.partition_trace] == [0]

    def test_summary_line_fields(self):
        problem, _ = builtin_problem("unit-disk")
        record = solve(
            problem, initial_point(problem, "feasible-0"), SolverConfig(max_evaluations=50, seed=1)
        )
        line = summary_line(record)
        for token in ("problem=unit-disk", "seed=1", "evals=", "best_feasible_f=", "rho=", "delta="):
            assert token in line


class TestExtremeBarrier:
    def test_unit_disk_baseline(self):
        problem, optimum = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve_extreme_barrier(problem, x0, SolverConfig(max_evaluations=1500, seed=1))
        assert record.mode == "extreme-barrier"
        assert record.best_feasible_f == pytest.approx(optimum.f_star, abs=1e-3)

    def test_infeasible_start_rejected(self):
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "infeasible-0")
        with pytest.raises(InitializationError):
            solve_extreme_barrier(problem, x0, SolverConfig(max_evaluations=100, seed=1))

    def test_equality_problem_rejected(self):
        problem, _ = builtin_problem("sphere-eq")
        x0 = initial_point(problem, "feasible-0")
        with pytest.raises(InitializationError):
            solve_extreme_barrier(problem, x0, SolverConfig(max_evaluations=100, seed=1))

    def test_matches_pip_on_unconstrained(self):
        # with no constraints the merit equals f, so both modes follow the
        # same trajectory given the same seed
        problem = Problem("sphere", 2, 0, 0, lambda x: (x[0] ** 2 + x[1] ** 2, (), ()))
        config = SolverConfig(max_evaluations=300, seed=7, search_enabled=False)
        pip = solve(problem, (1.0, -0.7), config)
        baseline = solve_extreme_barrier(problem, (1.0, -0.7), config)
        pip_rows = [(r["x"], r["f"], r["status"], r["iteration"]) for r in pip.rows]
        eb_rows = [(r["x"], r["f"], r["status"], r["iteration"]) for r in baseline.rows]
        assert pip_rows == eb_rows


class TestInvariantChecker:
    def test_clean_run_has_no_violations(self):
        problem, _ = builtin_problem("maxabs-lin")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=1000, seed=3))
        violations, warnings = check_run_invariants(record)
        assert violations == []

    def test_detects_corrupted_rho_trace(self):
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=600, seed=3))
        record.rho_trace[0] = (record.rho_trace[0][0], 0.05)
        violations, _ = check_run_invariants(record)
        assert any("expected" in v for v in violations)

    def test_detects_merit_increase(self):
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=600, seed=3))
        span_ids = [
            i
            for i, e in enumerate(record.iterations[1:], start=1)
            if not e["rho_reduced"]
            and e["rho"] == record.iterations[i - 1]["rho"]
            and e["partition_version"] == record.iterations[i - 1]["partition_version"]
        ]
        record.iterations[span_ids[-1]]["incumbent_merit"] += 1.0
        violations, _ = check_run_invariants(record)
        assert violations

    def test_rho_reductions_only_at_failures(self):
        problem, _ = builtin_problem("two-ring")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=1500, seed=5))
        reduction_iterations = {it for it, _ in record.rho_trace}
        for entry in record.iterations:
            if entry["iteration"] in reduction_iterations:
                assert not entry["success"]

    def test_many_reductions_on_converged_run(self):
        # bounded-level-set run allowed to stop naturally shows the penalty
        # parameter marching to zero
        problem, _ = builtin_problem("unit-disk")
        x0 = initial_point(problem, "feasible-0")
        record = solve(problem, x0, SolverConfig(max_evaluations=100_000, seed=1))
        assert record.outcome == "delta-converged"
        assert len(record.rho_trace) >= 3
