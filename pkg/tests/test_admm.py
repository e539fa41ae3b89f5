import time

import numpy as np
import pytest

from scacopf.core.admm import (
    AdmmConfig,
    AdmmDiagnostics,
    AdmmState,
    BetaRule,
    BoxBlock,
    InnerRecord,
    al_value,
    build_relaxation,
    complexity_bounds,
    consensus_violation,
    eta_constant,
    inner_iterate,
    inner_should_stop,
    is_stationary,
    l_lower,
    outer_update,
    run_admm,
    start_round,
    stationarity_residuals_original,
)
from scacopf.core.model import Coupling

LO, HI = np.zeros(3), np.ones(3)


def box_state(config=None, starts=((0.1, 0.2, 0.3), (0.5, 0.9, 0.0))):
    """Relaxation convexe de référence : f ≡ 0 sur [0, 1]³, deux blocs de contingence."""
    config = config or AdmmConfig(keep_history=True)
    base = BoxBlock(LO, HI, np.full(3, 0.9), "base")
    blocks = {
        k + 1: BoxBlock(LO, HI, np.asarray(s, dtype=float), f"ctg-{k + 1}")
        for k, s in enumerate(starts)
    }
    return AdmmState.from_blocks(base, blocks, config)


def set_multipliers(state, values):
    for k, lam in values.items():
        state.couplings[k].lam = np.asarray(lam, dtype=float)
    state.diagnostics.rounds.clear()
    start_round(state)


def _row(**kwargs):
    defaults = dict(t=1, r=1, al_value=0.0, s_max=1.0, r_max=1.0, d0=0.0, dk_max=0.0,
                    beta=1.0, rho=2.0, wall_time=0.0, base_descent=True, ctg_descent=True)
    defaults.update(kwargs)
    return InnerRecord(**defaults)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [dict(tau=1.0), dict(beta0=0.0), dict(c=1.0), dict(lambda_lo=1.0, lambda_hi=0.0),
         dict(coupling=Coupling.RESTRICTED), dict(workers=0), dict(max_inner=0)],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(ValueError):
            AdmmConfig(**kwargs)

    def test_inner_tolerance_shrinks_with_rounds(self):
        config = AdmmConfig()
        assert config.inner_tol(1) == pytest.approx(0.1)
        assert config.inner_tol(4) == pytest.approx(0.025)
        with pytest.raises(ValueError):
            config.inner_tol(0)

    def test_initial_beta(self):
        assert AdmmConfig().initial_beta() == 2000.0
        assert AdmmConfig(beta_rule=BetaRule.GEOMETRIC).initial_beta() == 16000.0

    def test_eta_constant(self):
        assert eta_constant(1e9, 2.0) == pytest.approx(1.0)
        assert eta_constant(0.3, 2.0) == pytest.approx(0.3)


class TestInnerIterations:
    def test_empty_block_set_rejected(self):
        with pytest.raises(ValueError):
            AdmmState.from_blocks(BoxBlock(LO, HI, LO), {}, AdmmConfig())

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            AdmmState.from_blocks(
                BoxBlock(LO, HI, LO), {1: BoxBlock(np.zeros(2), np.ones(2), np.zeros(2))},
                AdmmConfig(),
            )

    def test_initialization_closes_multiplier_identity(self):
        state = box_state()
        set_multipliers(state, {1: [1.0, -2.0, 0.5], 2: [-1.0, 2.0, -0.5]})
        for cb in state.couplings.values():
            np.testing.assert_allclose(cb.lam + state.beta * cb.z + cb.y, 0.0)

    def test_box_relaxation_reaches_consensus(self):
        state = box_state()
        for _ in range(50):
            inner_iterate(state)
            if consensus_violation(state) <= 1e-8:
                break
        assert consensus_violation(state) <= 1e-8
        assert state.t <= 50

    def test_multiplier_identity_and_residual_relation(self):
        state = box_state()
        set_multipliers(state, {1: [1.0, -2.0, 0.5], 2: [-1.0, 2.0, -0.5]})
        ratio = state.beta / state.rho
        for _ in range(10):
            z_prev = {k: cb.z.copy() for k, cb in state.couplings.items()}
            inner_iterate(state)
            for k, cb in state.couplings.items():
                s = state.x0 - cb.x_base_copy + cb.z
                np.testing.assert_allclose(s, ratio * (z_prev[k] - cb.z), atol=1e-9)
                np.testing.assert_allclose(cb.lam + state.beta * cb.z + cb.y, 0.0, atol=1e-9)

    def test_augmented_lagrangian_monotone_and_bounded(self):
        state = box_state()
        set_multipliers(state, {1: [1.0, -2.0, 0.5], 2: [-1.0, 2.0, -0.5]})
        previous = al_value(state)
        lower = l_lower(state)
        for _ in range(20):
            row = inner_iterate(state)
            assert row.certificates_ok
            assert row.al_value <= previous + 1e-9 * (1.0 + abs(previous))
            assert row.al_value >= lower - 1e-6
            previous = row.al_value

    def test_history_replays_residuals(self):
        state = box_state()
        set_multipliers(state, {1: [0.3, 0.0, -0.3], 2: [0.0, 0.1, 0.0]})
        for _ in range(5):
            inner_iterate(state)
        for row, snap in zip(state.diagnostics.rows, state.diagnostics.history):
            s_max = max(
                float(np.max(np.abs(snap["x0"] - snap["x_base_copy"][k] + snap["z"][k])))
                for k in snap["z"]
            )
            assert s_max == row.s_max

    def test_stationarity_after_two_iterations(self):
        state = box_state()
        with pytest.raises(ValueError):
            stationarity_residuals_original(state)
        inner_iterate(state)
        inner_iterate(state)
        assert is_stationary(state, 1e-9)

    def test_diagnostics_frame(self):
        state = box_state()
        inner_iterate(state)
        frame = state.diagnostics.frame()
        assert {"t", "r", "al_value", "s_max", "r_max", "certificates_ok"} <= set(frame.columns)
        assert len(frame) == 1


class TestStopRules:
    def test_tolerance(self):
        diag = AdmmDiagnostics(rows=[_row(s_max=0.01)])
        assert inner_should_stop(diag, 1, AdmmConfig()).reason == "tolerance"

    def test_inner_cap(self):
        diag = AdmmDiagnostics(rows=[_row()])
        assert inner_should_stop(diag, 1, AdmmConfig(max_inner=1)).reason == "inner-cap"

    def test_total_cap(self):
        diag = AdmmDiagnostics(rows=[_row(r=1), _row(t=2, r=2)])
        decision = inner_should_stop(diag, 2, AdmmConfig(max_total_inner=2))
        assert decision.reason == "total-cap"

    def test_deadline(self):
        diag = AdmmDiagnostics(rows=[_row()])
        decision = inner_should_stop(diag, 1, AdmmConfig(), deadline=time.perf_counter() - 1.0)
        assert decision and decision.reason == "deadline"

    def test_continue(self):
        assert not inner_should_stop(AdmmDiagnostics(rows=[_row()]), 1, AdmmConfig())


class TestOuterUpdate:
    def _state_with_violation(self, config, violation, previous):
        state = box_state(config)
        state.x0 = np.zeros(3)
        for cb in state.couplings.values():
            cb.x_base_copy = np.array([violation, 0.0, 0.0])
        state.prev_violation = previous
        return state

    def test_practical_rule_grows_when_violation_stalls(self):
        state = self._state_with_violation(AdmmConfig(), 0.15, 0.2)
        _, beta = outer_update(state)
        assert beta == pytest.approx(8 * 2000.0)
        assert state.r == 2

    def test_practical_rule_keeps_beta_when_violation_halves(self):
        state = self._state_with_violation(AdmmConfig(), 0.05, 0.2)
        _, beta = outer_update(state)
        assert beta == pytest.approx(2000.0)

    def test_practical_rule_keeps_beta_at_first_update(self):
        state = self._state_with_violation(AdmmConfig(), 0.15, None)
        _, beta = outer_update(state)
        assert beta == pytest.approx(2000.0)

    def test_geometric_rule(self):
        config = AdmmConfig(beta_rule=BetaRule.GEOMETRIC)
        state = self._state_with_violation(config, 0.15, None)
        _, beta = outer_update(state)
        assert beta == pytest.approx(2000.0 * 8.0**2)

    def test_multipliers_projected(self):
        config = AdmmConfig(lambda_lo=-1.0, lambda_hi=1.0)
        state = box_state(config)
        for cb in state.couplings.values():
            cb.z = np.array([1.0, -1.0, 0.0])
        lam_max, _ = outer_update(state)
        assert lam_max == pytest.approx(1.0)
        for cb in state.couplings.values():
            np.testing.assert_allclose(cb.lam, [1.0, -1.0, 0.0])


class TestDriver:
    def test_run_on_box_relaxation(self):
        state = box_state()
        result = run_admm(state)
        assert result.converged
        assert result.reason == "consensus"
        assert result.consensus <= 1e-4
        assert result.diagnostics.certificates_ok
        assert result.base is None

    def test_complexity_bounds_cover_observed_iterations(self):
        state = box_state()
        run_admm(state)
        bounds = complexity_bounds(state.diagnostics, state.config, n_blocks=2, dimension=3,
                                   lower_cost=0.0)
        assert bounds.certified
        assert bounds.eta == pytest.approx(1.0)
        assert bounds.t_bound >= state.diagnostics.iterations_in_round(1)
        assert bounds.r_bound >= 1

    def test_round_callback_called(self):
        seen = []
        run_admm(box_state(), on_round=lambda s: seen.append(s.r))
        assert seen == [1]

    def test_empty_subset_rejected(self, case5):
        with pytest.raises(ValueError):
            build_relaxation(case5, [])

    def test_network_relaxation_keeps_certified_descent(self, case5):
        config = AdmmConfig(max_outer=2, max_inner=4, max_total_inner=6)
        state = build_relaxation(case5, [1, 3], config)
        result = run_admm(state)
        assert result.base is not None
        assert result.inner_iterations >= 1
        rows = result.diagnostics.rows
        for before, after in zip(rows, rows[1:]):
            if after.r == before.r and after.certificates_ok:
                assert after.al_value <= before.al_value + 1e-6 * (1.0 + abs(before.al_value))
        result.base.check_dimensions(case5, 0)
