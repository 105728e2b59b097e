import dataclasses

import numpy as np
import pytest

from apcd.errors import RiskBreakdownError
from apcd.lqer import (
    LqerCost,
    cost_from_json,
    cost_to_json,
    load_cost,
    lqer_synthesize,
    lqr_synthesize,
    save_cost,
)
from apcd.simulator import BenchmarkSpec, build_tracking_model


@pytest.fixture
def bench(rng):
    spec = BenchmarkSpec(horizon=0.5)
    return build_tracking_model(spec, rng)


class TestRiskLimit:
    def test_small_lambda_matches_lqr(self, bench):
        model, cost = bench
        tiny = dataclasses.replace(cost, lam=1e-10)
        risk = lqer_synthesize(model, tiny)
        neutral = lqr_synthesize(model, cost)
        scale = np.abs(neutral.K).max()
        assert np.abs(risk.K - neutral.K).max() <= 1e-7 * scale

    def test_risk_shifts_gains(self, bench):
        model, cost = bench
        big = dataclasses.replace(cost, lam=1e-3)
        risk = lqer_synthesize(model, big)
        neutral = lqr_synthesize(model, cost)
        assert np.abs(risk.K - neutral.K).max() > 1e-6 * np.abs(neutral.K).max()


class TestStructure:
    def test_stationary_gain_convergence(self, rng):
        # far from the terminal boundary the Riccati gain is stationary
        model, cost = build_tracking_model(BenchmarkSpec(horizon=2.0), rng)
        pol = lqer_synthesize(model, cost)
        assert np.abs(pol.K[1] - pol.K[0]).max() < 1e-6 * np.abs(pol.K[0]).max()

    def test_deterministic_policy(self, bench):
        model, cost = bench
        pol = lqer_synthesize(model, cost)
        assert np.array_equal(pol.S, np.zeros_like(pol.S))
        assert pol.is_deterministic()

    def test_decoupled_axes_give_block_diagonal_gains(self, rng):
        # isotropic noise keeps the two planar axes independent, so the
        # force on axis 1 cannot depend on axis-2 state
        model, cost = build_tracking_model(BenchmarkSpec(horizon=0.5), rng)
        iso = np.zeros((4, 4))
        iso[2:, 2:] = 1e-4 * np.eye(2)
        trs = [
            dataclasses.replace(t, Qcov=model.dims.dt * iso + 1e-12 * np.eye(4))
            for t in model.transitions
        ]
        from apcd.model import build_model

        m2 = build_model(
            model.dims, model.prior, trs, model.emissions, model.prior_policy
        )
        pol = lqer_synthesize(m2, cost)
        K = pol.K[model.dims.steps // 2]
        # columns (x2, v2) of the axis-1 force row vanish and vice versa
        assert abs(K[0, 1]) < 1e-9 * abs(K[0, 0])
        assert abs(K[0, 3]) < 1e-9 * abs(K[0, 2])
        assert abs(K[1, 0]) < 1e-9 * abs(K[1, 1])
        assert abs(K[1, 2]) < 1e-9 * abs(K[1, 3])


class TestBreakdown:
    def test_large_lambda_breaks_with_step(self, bench):
        model, cost = bench
        huge = dataclasses.replace(cost, lam=1e3)
        with pytest.raises(RiskBreakdownError) as exc:
            lqer_synthesize(model, huge)
        assert exc.value.step is not None
        assert 0 <= exc.value.step < model.dims.steps - 1

    def test_breakdown_monotone_in_lambda(self, bench):
        model, cost = bench

        def ok(lam):
            try:
                lqer_synthesize(model, dataclasses.replace(cost, lam=lam))
                return True
            except RiskBreakdownError:
                return False

        results = [ok(lam) for lam in (1e-6, 1e-4, 1e-2, 1.0, 1e2)]
        # once it breaks it stays broken for larger lambda
        assert results == sorted(results, reverse=True)


class TestCostIo:
    def test_round_trip(self, bench, tmp_path):
        _, cost = bench
        save_cost(tmp_path / "c.json", cost)
        back = load_cost(tmp_path / "c.json")
        np.testing.assert_array_equal(back.Rp, cost.Rp)
        np.testing.assert_array_equal(back.reference, cost.reference)
        assert back.lam == cost.lam

    def test_json_symmetry(self, bench):
        _, cost = bench
        back = cost_from_json(cost_to_json(cost))
        np.testing.assert_array_equal(back.Ru, cost.Ru)

    def test_state_helpers(self, bench):
        _, cost = bench
        C = cost.state_weight()
        np.testing.assert_array_equal(C[:2, :2], cost.Rp)
        np.testing.assert_array_equal(C[2:, 2:], cost.Rv)
        tgt = cost.state_target(3)
        np.testing.assert_array_equal(tgt[:2], cost.reference[3])
        np.testing.assert_array_equal(tgt[2:], 0.0)
