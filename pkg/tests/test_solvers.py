"""VI, PI, optimistic PI, perturbation, LP and the VI rate bounds."""

import math

import numpy as np
import pytest

from conftest import MU, MU_PRIME, ssp_instance
from regular_dp.errors import ImproperPolicyError, LpError, PreconditionError, SolverError
from regular_dp.extreal import CostFunction, WeightedNorm
from regular_dp.model import Action, FiniteModel, Outcome, StationaryPolicy
from regular_dp.models import DiscountedParams, GridControlParams, build_discounted, build_grid_control
from regular_dp.oracle import brute_force_optima, exact_policy_cost, expected_termination_steps
from regular_dp.regions import SRegionDescriptor
from regular_dp.solvers import (
    Evaluation,
    Outcome as RunOutcome,
    PerturbationSchedule,
    TieBreakRule,
    audit_optimistic_trace,
    contraction_modulus,
    find_proper_policy,
    hitting_time_norm,
    improve_policy,
    lp_solve,
    optimistic_pi,
    perturbation_solve,
    policy_iteration,
    value_iteration,
    vi_rate_check,
    vi_region_check,
)

ALL_REAL = SRegionDescriptor.all_real()


def _swap_model() -> FiniteModel:
    return FiniteModel.from_actions(
        [[Action("swap", (Outcome(1.0, 1),), 1.0)], [Action("swap", (Outcome(1.0, 0),), -1.0)]]
    )


class TestValueIteration:
    def test_stops_at_b_in_two_iterations(self, detsp):
        model = detsp(0.0, 3.0)
        trace = value_iteration(model, model.lift(5.0))
        assert trace.outcome is RunOutcome.CONVERGED
        assert trace.final.to_json() == [3.0, 0.0]
        assert trace.iterations == 2

    def test_stalls_at_a_fixed_point_below_b(self, detsp):
        model = detsp(0.0, 3.0)
        trace = value_iteration(model, model.lift(1.0))
        assert trace.outcome is RunOutcome.STALLED
        assert trace.final.to_json() == [1.0, 0.0]
        assert not trace.exhausted

    def test_climbs_to_the_unique_fixed_point(self, detsp):
        model = detsp(1.0, 5.0)
        trace = value_iteration(model, model.lift(0.0))
        assert trace.outcome is RunOutcome.CONVERGED
        assert trace.final.to_json() == [5.0, 0.0]
        assert [J[0] for J in trace.iterates] == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        assert trace.iterations == 6

    def test_negative_cycle_diverges(self, detsp):
        model = detsp(-1.0, 5.0)
        trace = value_iteration(model, model.lift(0.0))
        assert trace.outcome is RunOutcome.DIVERGED
        assert trace.diverged_states == (0,)

    def test_rising_state_waits_for_the_blowup_bound(self):
        # the loop has positive drift, but only falling states are certified by drift
        model = FiniteModel.from_actions([[Action("loop", (Outcome(1.0, 0),), 1.0)]])
        trace = value_iteration(model, CostFunction([0.0]), max_iter=200)
        assert trace.outcome is RunOutcome.STALLED
        assert trace.exhausted
        assert trace.final.to_json() == [200.0]

    def test_target_mismatch_is_a_stall(self, detsp):
        model = detsp(0.0, 3.0)
        trace = value_iteration(model, model.lift(5.0), target=CostFunction([0.0, 0.0]))
        assert trace.outcome is RunOutcome.STALLED
        trace = value_iteration(model, model.lift(5.0), target=CostFunction([3.0, 0.0]))
        assert trace.outcome is RunOutcome.CONVERGED

    def test_max_iter(self, detsp):
        model = detsp(1.0, 5.0)
        trace = value_iteration(model, model.lift(0.0), max_iter=3)
        assert trace.outcome is RunOutcome.STALLED
        assert trace.exhausted
        assert trace.final.to_json() == [3.0, 0.0]

    def test_period_two_oscillation(self):
        trace = value_iteration(_swap_model(), CostFunction([0.0, 0.0]))
        assert trace.outcome is RunOutcome.OSCILLATING

    def test_thinning_keeps_the_last_iterate(self, detsp):
        model = detsp(1.0, 5.0)
        trace = value_iteration(model, model.lift(0.0), thin=4)
        assert trace.steps == [0, 4, 5]
        assert trace.final.to_json() == [5.0, 0.0]

    def test_bad_tolerance(self, detsp):
        model = detsp(1.0, 5.0)
        with pytest.raises(ValueError):
            value_iteration(model, model.lift(0.0), tol=0.0)

    def test_discounted_matches_oracle(self):
        for seed in range(10):
            model = build_discounted(DiscountedParams(n_states=3, n_controls=2, alpha=0.9, seed=seed))
            j_star = brute_force_optima(model, ALL_REAL).j_star
            trace = value_iteration(model, model.terminal, tol=1e-11)
            assert trace.outcome is RunOutcome.CONVERGED
            assert trace.final.isclose(j_star, 1e-7)


class TestVIRegion:
    def test_zero_cycle(self, detsp):
        report = vi_region_check(detsp(0.0, 3.0), ALL_REAL, samples=8, seed=1)
        assert report.j_star_s.to_json() == [3.0, 0.0]
        assert report.inside and report.inside_converged
        assert all(limit == start for start, limit in report.outside)
        assert report.outside_below_bound

    def test_positive_cycle(self, detsp):
        report = vi_region_check(detsp(1.0, 5.0), ALL_REAL, samples=8, seed=1)
        assert report.inside_converged
        assert all(limit.to_json() == [5.0, 0.0] for _, limit in report.outside)


class TestPolicyIteration:
    def test_keep_current_stops_at_the_proper_policy(self, detsp):
        trace = policy_iteration(detsp(0.0, 3.0), MU, TieBreakRule.KEEP_CURRENT_IF_TIED)
        assert trace.outcome is RunOutcome.CONVERGED
        assert trace.policies[-1] == MU
        assert trace.final.to_json() == [3.0, 0.0]

    def test_always_switch_oscillates(self, detsp):
        trace = policy_iteration(detsp(0.0, -2.0), MU, TieBreakRule.ALWAYS_SWITCH_IF_TIED)
        assert trace.outcome is RunOutcome.OSCILLATING
        assert trace.cycle == (MU, MU_PRIME)

    def test_negative_cycle_diverges(self, detsp):
        trace = policy_iteration(detsp(-1.0, 5.0), MU)
        assert trace.outcome is RunOutcome.DIVERGED
        assert trace.diverged_states == (0,)

    def test_exact_evaluation_rejects_improper_policies(self, detsp):
        with pytest.raises(ImproperPolicyError):
            policy_iteration(detsp(0.0, 3.0), MU_PRIME, evaluation=Evaluation.EXACT_LINEAR_SOLVE)

    def test_iterative_evaluation_handles_improper_start(self, detsp):
        trace = policy_iteration(detsp(1.0, 5.0), MU_PRIME)
        assert trace.outcome is RunOutcome.CONVERGED
        assert trace.iterates[0].to_json() == ["+inf", 0.0]
        assert trace.policies[-1] == MU

    @pytest.mark.parametrize("rule", list(TieBreakRule))
    def test_random_proper_models(self, rule):
        for seed in range(15):
            model = ssp_instance(seed)
            j_star = brute_force_optima(model, ALL_REAL).j_star
            trace = policy_iteration(model, StationaryPolicy((0,) * model.n_states), rule)
            assert trace.outcome is RunOutcome.CONVERGED
            assert trace.final.isclose(j_star, 1e-7)

    def test_improve_policy_rules(self, detsp):
        model = detsp(0.0, 3.0)
        J = CostFunction([3.0, 0.0])
        assert improve_policy(model, MU, J, TieBreakRule.KEEP_CURRENT_IF_TIED) == MU
        assert improve_policy(model, MU, J, TieBreakRule.LOWEST_CONTROL_ID) == MU_PRIME
        assert improve_policy(model, MU, J, TieBreakRule.ALWAYS_SWITCH_IF_TIED) == MU_PRIME
        assert improve_policy(model, MU_PRIME, J, TieBreakRule.ALWAYS_SWITCH_IF_TIED) == MU


class TestOptimisticPi:
    def test_constant_iterates_between_optima(self, detsp):
        model = detsp(0.0, 3.0)
        trace = optimistic_pi(model, model.lift(1.0), m_schedule=5)
        assert all(J.to_json() == [1.0, 0.0] for J in trace.iterates)
        assert trace.outcome is RunOutcome.STALLED

    def test_converges_from_above(self, detsp):
        model = detsp(1.0, 5.0)
        trace = optimistic_pi(model, model.lift(10.0), m_schedule=3)
        assert trace.outcome is RunOutcome.CONVERGED
        assert trace.final.to_json() == [5.0, 0.0]

    def test_schedule_sequence(self):
        model = ssp_instance(23)
        J0 = model.lift(100.0)
        j_star = brute_force_optima(model, ALL_REAL).j_star
        trace = optimistic_pi(model, J0, m_schedule=[1, 2, 4, 8], tol=1e-11)
        assert trace.outcome is RunOutcome.CONVERGED
        assert trace.final.isclose(j_star, 1e-7)

    def test_precondition(self, detsp):
        model = detsp(1.0, 5.0)
        with pytest.raises(PreconditionError):
            optimistic_pi(model, model.lift(0.0))

    def test_bad_schedule(self, detsp):
        model = detsp(1.0, 5.0)
        with pytest.raises(ValueError):
            optimistic_pi(model, model.lift(10.0), m_schedule=[2, 0])

    def test_audit(self, detsp):
        model = detsp(1.0, 5.0)
        audit = audit_optimistic_trace(model, optimistic_pi(model, model.lift(10.0), m_schedule=3), ALL_REAL)
        assert audit.all_regular and audit.all_in_region

        model = detsp(0.0, 3.0)
        audit = audit_optimistic_trace(model, optimistic_pi(model, model.lift(1.0)), ALL_REAL)
        assert not audit.all_regular
        assert audit.irregular_policies == (MU_PRIME,)


class TestPerturbation:
    def test_shortest_path_curve(self, detsp):
        result = perturbation_solve(detsp(0.0, 3.0))
        for delta, J in zip(result.deltas, result.values):
            assert J[0] == pytest.approx(3.0 + delta, abs=1e-9)
        assert result.extrapolated
        assert result.estimate[0] == pytest.approx(3.0, abs=1e-9)
        assert result.estimate[1] == 0.0

    def test_inner_value_iteration(self, detsp):
        result = perturbation_solve(detsp(0.0, 3.0), PerturbationSchedule((1.0, 0.5)), inner="vi")
        assert [J[0] for J in result.values] == [4.0, 3.5]
        assert result.estimate[0] == pytest.approx(3.0, abs=1e-9)

    def test_cost_shift_is_delta_times_steps(self):
        model = ssp_instance(8)
        mu = find_proper_policy(model)
        delta = 0.01
        shift = exact_policy_cost(model.perturbed(delta), mu).values - exact_policy_cost(model, mu).values
        np.testing.assert_allclose(shift, delta * expected_termination_steps(model, mu), atol=1e-9)

    def test_unknown_inner(self, detsp):
        with pytest.raises(ValueError):
            perturbation_solve(detsp(0.0, 3.0), PerturbationSchedule((1.0,)), inner="lp")

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            PerturbationSchedule((0.5, 1.0))
        with pytest.raises(ValueError):
            PerturbationSchedule((1.0, 0.0))
        assert PerturbationSchedule.geometric(3).deltas == (1.0, 0.5, 0.25)

    def test_inner_failure(self, detsp):
        with pytest.raises(SolverError):
            perturbation_solve(detsp(0.0, 3.0), PerturbationSchedule((0.001,)), inner="vi", max_iter=10)


class TestFindProperPolicy:
    def test_shortest_path(self, detsp):
        assert find_proper_policy(detsp(0.0, 3.0)) == MU

    def test_grid_goes_left(self):
        model = build_grid_control(GridControlParams(n=4))
        assert find_proper_policy(model).labels(model) == ["stop", "left", "left", "left"]

    def test_discounted_model(self):
        model = build_discounted(DiscountedParams(n_states=3, n_controls=2, alpha=0.5))
        assert find_proper_policy(model) == StationaryPolicy((0, 0, 0))

    def test_unreachable_stop_set(self):
        model = FiniteModel.from_actions(
            [[Action("loop", (Outcome(1.0, 0),), 1.0)], [Action("stay", (Outcome(1.0, 1),))]], stop_set=[1]
        )
        with pytest.raises(SolverError):
            find_proper_policy(model)


class TestLinearProgram:
    def test_positive_cycle(self, detsp):
        result = lp_solve(detsp(1.0, 5.0))
        assert result.values[0] == pytest.approx(5.0, abs=1e-9)
        assert result.box_active == ()

    def test_zero_cycle_gives_regular_optimum(self, detsp):
        assert lp_solve(detsp(0.0, 3.0)).values.to_json() == [pytest.approx(3.0, abs=1e-9), 0.0]

    def test_negative_cycle_is_infeasible(self, detsp):
        with pytest.raises(LpError):
            lp_solve(detsp(-1.0, 5.0))

    def test_active_box(self, detsp):
        result = lp_solve(detsp(0.0, 500.0), box=100.0)
        assert result.box_active == (0,)
        assert result.values[0] == pytest.approx(100.0)

    def test_weights(self, detsp):
        with pytest.raises(ValueError):
            lp_solve(detsp(1.0, 5.0), beta=[1.0, 0.0])
        with pytest.raises(ValueError):
            lp_solve(detsp(1.0, 5.0), box=math.inf)


class TestRateBounds:
    def _discounted(self, seed=0):
        model = build_discounted(DiscountedParams(n_states=3, n_controls=2, alpha=0.9, seed=seed))
        return model, brute_force_optima(model, ALL_REAL).j_star

    def test_shifted_optimum(self):
        model, j_star = self._discounted()
        J = CostFunction(j_star.values + 2.0)
        check = vi_rate_check(model, J, WeightedNorm.uniform(3), 0.9, j_star_s=j_star)
        assert check.contraction_lhs <= check.contraction_rhs + 1e-9
        assert check.error_lhs <= check.error_rhs + 1e-9
        assert check.contraction_lhs == pytest.approx(1.8, abs=1e-9)
        assert not check.modulus_exceeds

    def test_at_the_optimum(self):
        model, j_star = self._discounted(1)
        check = vi_rate_check(model, j_star, WeightedNorm.uniform(3), 0.9, j_star_s=j_star)
        assert check.contraction_lhs == pytest.approx(0.0, abs=1e-9)
        assert check.contraction_rhs == 0.0

    def test_needs_J_above_optimum(self):
        model, j_star = self._discounted()
        with pytest.raises(PreconditionError):
            vi_rate_check(model, CostFunction(j_star.values - 1.0), WeightedNorm.uniform(3), 0.9, j_star_s=j_star)

    def test_beta_range(self):
        model, j_star = self._discounted()
        with pytest.raises(ValueError):
            vi_rate_check(model, j_star, WeightedNorm.uniform(3), 1.0, j_star_s=j_star)

    def test_hitting_time_weights(self):
        model = build_grid_control(GridControlParams(n=4, moves=("left", "right")))
        left = StationaryPolicy((0, 0, 0, 0))
        v, beta = hitting_time_norm(model, left)
        assert v.weights == pytest.approx((1.0, 1.0, 2.0, 3.0))
        assert beta == pytest.approx(2.0 / 3.0)
        assert contraction_modulus(model, left, v) == pytest.approx(2.0 / 3.0)

    def test_proper_model_with_hitting_time_norm(self):
        model = ssp_instance(9)
        result = brute_force_optima(model, ALL_REAL)
        mu = result.optimal_policies()[0]
        v, beta = hitting_time_norm(model, mu)
        assert 0.0 < beta < 1.0
        J = CostFunction(np.where(model.stop_mask, 0.0, result.j_star.values + 1.0))
        check = vi_rate_check(model, J, v, beta, j_star_s=result.j_star_s, optimal_policy=mu)
        assert check.modulus <= beta + 1e-12
        assert not check.modulus_exceeds
