import numpy as np
import pytest

from scacopf.core.evaluation import disjunction_violation, flat_start, penalty_cost
from scacopf.core.recourse import (
    RecourseOptions,
    RecoursePath,
    RestrictionSets,
    default_solution,
    restriction_sets,
    solve_contingency,
    solve_restricted_recourse,
    solve_smoothed_recourse,
    violation_check,
    warm_start_state,
)
from scacopf.core.smoothing import SmoothingParams


@pytest.fixture
def loaded_base(case5):
    base = flat_start(case5, 0)
    base.p = np.array([2.9, 1.0])
    return base


@pytest.fixture
def response(case5, loaded_base):
    """Solution de contingence L2 : Δ = 0.2, G1 au maximum réactif, G2 au minimum."""
    k = case5.contingency_index["c_L2"]
    sol = flat_start(case5, k)
    sol.delta = 0.2
    sol.p = np.array([2.5, 1.2])
    sol.q = np.array([1.5, -1.0])
    return k, sol


class TestDefaults:
    def test_islanded_bus_default_penalty(self, case5, flat_base):
        k = case5.contingency_index["c_L5"]
        result = default_solution(case5, k, flat_base)
        assert result.path == RecoursePath.FALLBACK
        assert result.flagged
        b5 = case5.bus_index["b5"]
        tables = case5.penalties(k)
        part = tables.p.evaluate(np.array([result.state.sigma_p_minus[b5]]))[0]
        part += tables.q.evaluate(np.array([result.state.sigma_q_minus[b5]]))[0]
        assert part == pytest.approx(109_000.0, rel=1e-9)
        assert result.penalty == pytest.approx(penalty_cost(case5, k, result.state))

    def test_default_satisfies_disjunctions(self, case5, flat_base):
        for k in range(1, case5.n_ctg + 1):
            result = default_solution(case5, k, flat_base)
            assert disjunction_violation(case5, k, flat_base, result.state) == (0.0, 0.0)

    def test_warm_start_spreads_lost_generation(self, case5, loaded_base):
        k = case5.contingency_index["c_G2"]
        sv = warm_start_state(case5, k, loaded_base)
        assert sv.delta == pytest.approx(1.0)
        np.testing.assert_allclose(sv.p, [3.0])

    def test_base_state_index_rejected(self, case5, flat_base):
        with pytest.raises(ValueError):
            default_solution(case5, 0, flat_base)


class TestRestrictionSets:
    def test_sets_from_response(self, case5, loaded_base, response):
        k, sol = response
        sets = restriction_sets(case5, k, loaded_base, sol, 1e-4)
        assert sets == RestrictionSets(
            p_minus=frozenset(), p_plus=frozenset({"G1"}),
            q_minus=frozenset({"G2"}), q_plus=frozenset({"G1"}),
        )
        assert not sets.empty
        assert RestrictionSets().empty

    def test_violation_detected(self, case5, loaded_base, response):
        k, sol = response
        violated, _ = violation_check(case5, k, loaded_base, sol, 1e-4)
        assert violated

    def test_exact_response_not_violated(self, case5, loaded_base, response):
        k, sol = response
        sol.p = np.array([3.0, 1.2])
        sol.q = np.array([0.3, 0.1])
        violated, sets = violation_check(case5, k, loaded_base, sol, 1e-4)
        assert not violated
        assert sets.q_plus == frozenset() and sets.q_minus == frozenset()


class TestSolveContingency:
    @pytest.mark.parametrize("ctg_id", ["c_G2", "c_L2", "c_L5"])
    def test_final_solution_meets_exact_disjunctions(self, case5, solved_base, ctg_id):
        k = case5.contingency_index[ctg_id]
        result = solve_contingency(case5, k, solved_base)
        active, reactive = disjunction_violation(case5, k, solved_base, result.state)
        assert active <= 1e-12
        assert reactive <= 1e-12
        assert result.penalty == pytest.approx(penalty_cost(case5, k, result.state))
        assert result.contingency_id == ctg_id

    def test_generator_outage_is_covered_by_response(self, case5, solved_base):
        k = case5.contingency_index["c_G2"]
        result = solve_contingency(case5, k, solved_base, SmoothingParams(), RecourseOptions())
        assert result.path != RecoursePath.FALLBACK
        assert result.state.delta > 0.0
        assert result.penalty < 100.0
        assert result.penalty < default_solution(case5, k, solved_base).penalty

    def test_islanded_bus_keeps_its_penalty(self, case5, solved_base):
        k = case5.contingency_index["c_L5"]
        result = solve_contingency(case5, k, solved_base)
        assert result.penalty >= 109_000.0 * (1 - 1e-9)


class TestRecourseModels:
    def test_smoothed_model_keeps_raw_solution(self, case5, solved_base):
        k = case5.contingency_index["c_G2"]
        result = solve_smoothed_recourse(case5, k, solved_base)
        assert result.path == RecoursePath.SMOOTHED
        assert result.raw_state is not None
        assert all(np.isfinite(v) and v >= 0.0 for v in result.raw_violation)
        assert disjunction_violation(case5, k, solved_base, result.state) == pytest.approx((0.0, 0.0), abs=1e-12)
        assert result.penalty == pytest.approx(penalty_cost(case5, k, result.state))

    def test_restricted_model_uses_given_sets(self, case5, solved_base):
        k = case5.contingency_index["c_G2"]
        smoothed = solve_smoothed_recourse(case5, k, solved_base)
        _, sets = violation_check(case5, k, solved_base, smoothed.raw_state, SmoothingParams().mu)

        result = solve_restricted_recourse(case5, k, solved_base, sets, start=smoothed.raw_state)
        assert result.path != RecoursePath.SMOOTHED
        assert result.sets == sets
        assert disjunction_violation(case5, k, solved_base, result.state) == pytest.approx((0.0, 0.0), abs=1e-12)
        assert result.penalty == pytest.approx(penalty_cost(case5, k, result.state))

    def test_restricted_model_rejects_base_index(self, case5, flat_base):
        with pytest.raises(ValueError):
            solve_restricted_recourse(case5, 0, flat_base, RestrictionSets())
