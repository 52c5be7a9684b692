import math

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import nonneg_instance, ssp_instance
from regular_dp.extreal import CostFunction
from regular_dp.model import Action, FiniteModel, Outcome
from regular_dp.models import (
    DetSpParams,
    GridControlParams,
    RandomSspParams,
    build,
    build_detsp,
    build_grid_control,
    build_random_ssp,
    finite_cost_states,
    scaled,
)
from regular_dp.oracle import brute_force_optima
from regular_dp.regions import SRegionDescriptor


class TestDetSp:
    def test_layout(self):
        model = build_detsp(DetSpParams(a=1.0, b=5.0))
        assert model.state_labels == ("1", "t")
        assert model.controls == (("self", "to-t"), ("stay",))
        assert model.stop_set == frozenset({1})
        np.testing.assert_allclose(model.costs[0], [1.0, 5.0])

    def test_name_carries_the_parameters(self):
        assert build_detsp(DetSpParams(a=0.0, b=-2.0)).name == "detsp(a=0,b=-2)"


class TestGrid:
    def test_edges_drop_moves(self):
        model = build_grid_control(GridControlParams(n=4))
        assert model.controls[0] == ("stop",)
        assert model.controls[1] == ("left", "right", "stay")
        assert model.controls[3] == ("left", "stay")

    def test_unit_costs_give_distance_to_the_stop_cell(self):
        model = build_grid_control(GridControlParams(n=10, moves=("left", "right")))
        result = brute_force_optima(model, SRegionDescriptor.all_real())
        assert result.j_star.values.tolist() == pytest.approx([float(i) for i in range(10)])

    def test_free_stay_separates_the_optima(self):
        model = build_grid_control(GridControlParams(n=4))
        result = brute_force_optima(model, SRegionDescriptor.all_real())
        assert result.j_star.to_json() == [0.0, 0.0, 0.0, 0.0]
        assert result.j_star_s.values.tolist() == pytest.approx([0.0, 1.0, 2.0, 3.0])

    def test_entry_cost(self):
        params = GridControlParams(n=4, moves=("left", "right"), left_cost=0.0, right_cost=0.0, entry_cost=-5.0)
        result = brute_force_optima(build_grid_control(params), SRegionDescriptor.all_real())
        assert result.j_star.values.tolist() == pytest.approx([0.0, -5.0, -5.0, -5.0])

    def test_step_cost_override(self):
        model = build_grid_control(GridControlParams(n=3, step_costs={"2:left": 7.0}))
        assert model.costs[2, 0] == 7.0
        assert model.costs[1, 0] == 1.0

    def test_validation(self):
        with pytest.raises(ValidationError):
            GridControlParams(n=1)
        with pytest.raises(ValidationError):
            GridControlParams(n=3, moves=("right", "stay"))
        with pytest.raises(ValidationError):
            GridControlParams(n=3, moves=("left", "left"))


class TestRandomInstances:
    def test_seed_fixes_the_instance(self):
        assert ssp_instance(7).fingerprint == ssp_instance(7).fingerprint
        assert ssp_instance(7).fingerprint != ssp_instance(12).fingerprint

    def test_rows_are_distributions(self):
        for seed in range(20):
            model = ssp_instance(seed)
            rows = model.transitions.sum(axis=2)[model.legal]
            np.testing.assert_allclose(rows, 1.0)
            assert model.stop_set == frozenset({model.n_states - 1})

    def test_nonneg_costs(self):
        for seed in range(20):
            model = nonneg_instance(seed)
            assert (model.costs[model.legal] >= 0.0).all()

    def test_zero_bias_allows_stalling_controls(self):
        model = build_random_ssp(RandomSspParams(n_states=4, n_controls=3, proper_bias=0.0, seed=5))
        terminal = model.n_states - 1
        assert np.all(model.transitions[:terminal, :, terminal] == 0.0)

    def test_defaults_need_only_a_seed(self):
        model = build("random-ssp", {"seed": 7})
        assert (model.n_states, model.max_controls) == (5, 2)
        assert build("nonneg-mdp", {}).n_states == 5
        assert build("discounted", {}).discount == 0.9

    def test_empty_cost_range(self):
        with pytest.raises(ValidationError):
            RandomSspParams(n_states=3, n_controls=1, cost_range=(1.0, 0.0))

    def test_discounted(self):
        model = build("discounted", {"n_states": 3, "n_controls": 2, "alpha": 0.8, "seed": 4})
        assert model.discount == 0.8
        assert not model.stop_set
        with pytest.raises(ValidationError):
            build("discounted", {"n_states": 3, "n_controls": 2, "alpha": 1.0})


class TestRegistry:
    def test_build_by_name(self):
        assert build("detsp", {"a": 1, "b": 5}) == build_detsp(DetSpParams(a=1.0, b=5.0))

    def test_unknown_builder(self):
        with pytest.raises(KeyError):
            build("torus", {})


class TestHelpers:
    def test_finite_cost_states(self):
        assert finite_cost_states(build_detsp(DetSpParams(a=1.0, b=5.0))) == (0, 1)
        loop = FiniteModel.from_actions([[Action("loop", (Outcome(1.0, 0),), 1.0)]])
        assert finite_cost_states(loop) == ()

    def test_scaled_keeps_infinities(self):
        J = scaled(CostFunction([0.0, 2.0, math.inf, -math.inf]), 3.0)
        assert J.to_json() == [0.0, 6.0, "+inf", "-inf"]
