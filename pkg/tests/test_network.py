import math

import numpy as np
import pytest

from scacopf.core.network import (
    ContingencyDef,
    NetworkCase,
    PenaltyTables,
    PwlCost,
    default_penalty_cost,
    eval_pwl,
)
from scacopf.core.validator import CaseValidationError


class TestPwlCost:
    def test_default_table_hand_values(self):
        cost = default_penalty_cost(100.0)
        assert eval_pwl(cost, 1.0) == pytest.approx(48_252_000.0, rel=1e-9)
        assert eval_pwl(cost, 0.2) == pytest.approx(92_000.0, rel=1e-9)
        assert eval_pwl(cost, 0.05) == pytest.approx(17_000.0, rel=1e-9)
        assert eval_pwl(cost, 0.0) == 0.0

    def test_per_unit_scaling(self):
        cost = default_penalty_cost(100.0)
        assert cost.lengths[:2] == pytest.approx((0.02, 0.5))
        assert math.isinf(cost.lengths[2])
        assert cost.slopes == pytest.approx((1e5, 5e5, 1e8))

    def test_vectorized_matches_scalar(self):
        cost = default_penalty_cost(100.0)
        xs = np.array([0.0, 0.01, 0.3, 2.5])
        np.testing.assert_allclose(cost.evaluate(xs), [eval_pwl(cost, x) for x in xs])

    def test_negative_argument_rejected(self):
        with pytest.raises(ValueError):
            eval_pwl(default_penalty_cost(100.0), -1e-3)

    @pytest.mark.parametrize(
        "lengths, slopes",
        [
            ((1.0, 1.0), (2.0, 1.0)),
            ((math.inf, 1.0), (1.0, 2.0)),
            ((1.0,), (1.0, 2.0)),
            ((0.0,), (1.0,)),
        ],
    )
    def test_invalid_tables(self, lengths, slopes):
        with pytest.raises(ValueError):
            PwlCost(lengths, slopes)

    def test_split_fills_pieces_in_order(self):
        cost = PwlCost((1.0, 2.0, math.inf), (1.0, 2.0, 3.0))
        np.testing.assert_allclose(cost.split(4.5), [1.0, 2.0, 1.5])


class TestTopology:
    def test_generator_outage_removes_generator(self, case5):
        topo = case5.topology(case5.contingency_index["c_G2"])
        assert [case5.generators[i].id for i in topo.gen_idx] == ["G1"]
        assert topo.n_branch == 7

    def test_line_outage_islands_radial_bus(self, case5):
        topo = case5.topology(case5.contingency_index["c_L5"])
        np.testing.assert_array_equal(topo.ref_buses, [0, 4])
        assert topo.n_branch == 6

    def test_base_has_one_reference(self, case5):
        np.testing.assert_array_equal(case5.topology(0).ref_buses, [0])

    @pytest.mark.parametrize("k", [-1, 4, 2.0])
    def test_state_index_checked(self, case5, k):
        with pytest.raises(ValueError):
            case5.topology(k)

    def test_contingency_index_is_one_based(self, case5):
        assert case5.contingency_index == {"c_G2": 1, "c_L2": 2, "c_L5": 3}

    def test_delta_bound(self, case5):
        assert case5.delta_bound() == pytest.approx(5.5)


class TestValidation:
    def test_invalid_case_lists_every_problem(self, case5):
        with pytest.raises(CaseValidationError) as info:
            NetworkCase(
                buses=list(case5.buses) + [case5.buses[0]],
                generators=case5.generators,
                lines=case5.lines,
                transformers=case5.transformers,
                contingencies=list(case5.contingencies) + [ContingencyDef("c_X", "line", "LX")],
                s_base=case5.s_base,
                penalty_tables=PenaltyTables.default(case5.s_base),
                delta_weight=1.5,
            )
        problems = info.value.problems
        assert any("duplicate bus" in p for p in problems)
        assert any("no line with id 'LX'" in p for p in problems)
        assert any("delta_weight" in p for p in problems)
        assert isinstance(info.value, ValueError)
