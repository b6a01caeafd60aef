import math

import numpy as np
import pytest

import triparty as tp
from triparty.errors import (
    AssumptionViolated,
    BadParams,
    CostOutOfSupport,
    NotRegular,
)
from triparty.mechanism import (
    Agent,
    Contract,
    MarketInstance,
    anonymous_run,
    audit_incentives,
    optimal_anonymous_price,
    run_mechanism,
    sample_costs,
    simulate_market,
    to_auction,
    vwm_run,
)

SQRT3 = math.sqrt(3.0)
HALF = Contract.linear(0.5)


class TestInstanceValidation:
    def test_rho_must_sum_to_one(self):
        with pytest.raises(BadParams):
            Agent((0.5, 0.4), tp.make_uniform(0, 1))

    def test_negative_reward(self):
        with pytest.raises(BadParams):
            MarketInstance([-1.0], [Agent((1.0,), tp.make_uniform(0, 1))])

    def test_derived_quantities(self, example1):
        np.testing.assert_allclose(example1.gamma, [[2.0, 0.0], [2.0, 0.0]])
        np.testing.assert_allclose(example1.r_vec, [2.0, 2.0])

    def test_json_round_trip(self, example1):
        clone = MarketInstance.from_json(example1.to_json())
        assert clone.to_json() == example1.to_json()

    def test_malformed_json(self):
        with pytest.raises(BadParams):
            MarketInstance.from_json({"agents": []})


class TestContract:
    def test_exactly_one_spec(self):
        with pytest.raises(BadParams):
            Contract()
        with pytest.raises(BadParams):
            Contract(transfers=(0.5,), alpha=0.5)

    def test_limited_liability(self):
        with pytest.raises(BadParams):
            Contract(transfers=(-0.1, 0.5))

    def test_share_above_one_allowed_in_transfers(self):
        Contract(transfers=(1.4, 0.0))     # legal: components may exceed 1

    def test_linear_bounds(self):
        with pytest.raises(BadParams):
            Contract.linear(1.2)


class TestVwmRun:
    def test_both_above_reserve_cost_no_assignment(self, example1):
        out = vwm_run(example1, HALF, [0.8, 0.9])
        assert out.winner is None
        assert out.principal_utility == 0.0
        assert out.intermediary_utility == 0.0
        assert out.agent_utilities == (0.0, 0.0)

    def test_reserve_binding_payment(self, example1):
        # rival bid below reserve: the winner is paid down to the reserve
        out = vwm_run(example1, HALF, [0.3, 0.7])
        assert out.winner == 0
        assert out.payments[0] == pytest.approx(0.5, abs=1e-10)
        assert out.intermediary_utility == pytest.approx(0.5, abs=1e-10)

    def test_competitive_payment_is_critical_cost(self, example1):
        # with both below the reserve cost, the winner is paid the rival's
        # cost (her critical report); the auction-side transfer is the
        # rival's value, max(0.5, 1 - 0.4) = 0.6
        out = vwm_run(example1, HALF, [0.3, 0.4])
        assert out.winner == 0
        assert out.payments[0] == pytest.approx(0.4, abs=1e-10)
        view = to_auction(example1, HALF, [0.3, 0.4])
        assert view.buyer_payments[0] == pytest.approx(
            max(0.5, 1.0 - 0.4), abs=1e-10)

    def test_winner_has_max_nonneg_virtual(self, example1, rng):
        F = example1.contribution_dist(0)
        for _ in range(50):
            costs = rng.uniform(0.0, 1.0, 2)
            out = vwm_run(example1, HALF, costs)
            phi = [tp.virtual_value(tp.shift_by_contract(F, 1.0), 1.0 - c)
                   for c in costs]
            if max(phi) < 0.0:
                assert out.winner is None
            else:
                assert out.winner == int(np.argmax(phi))

    def test_payment_bounds(self, example1, rng):
        tg = float(example1.tdotg(HALF)[0])
        for _ in range(50):
            costs = rng.uniform(0.0, 1.0, 2)
            out = vwm_run(example1, HALF, costs)
            if out.winner is None:
                continue
            pay = out.payments[out.winner]
            assert costs[out.winner] - 1e-10 <= pay <= tg + 1e-10

    def test_cost_out_of_support(self, example1):
        with pytest.raises(CostOutOfSupport):
            vwm_run(example1, HALF, [0.5, 1.5])

    def test_not_regular(self):
        g = tp.make_tabulated([0.0, 0.2, 0.8, 1.0], [0.0, 0.3, 0.4, 1.0])
        inst = MarketInstance([2.0], [Agent((1.0,), g)])
        with pytest.raises(NotRegular):
            vwm_run(inst, Contract.linear(1.0), [0.5])


class TestContractInvariance:
    def test_equal_expected_payment_same_outcome(self, example1):
        # lambda = (4, 0): any transfer vector with t_0 * 2 = 1 matches the
        # 50-50 linear split outcome for outcome
        for t2 in (0.0, 0.4, 1.3):
            out_a = vwm_run(example1, Contract(transfers=(0.5, t2)), [0.3, 0.4])
            out_b = vwm_run(example1, HALF, [0.3, 0.4])
            assert out_a == out_b


class TestToAuction:
    def test_values_and_revenue(self, example1):
        view = to_auction(example1, HALF, [0.3, 0.7])
        assert view.values == (pytest.approx(0.7), pytest.approx(0.3))
        assert view.seller_revenue == pytest.approx(0.5, abs=1e-10)
        out = vwm_run(example1, HALF, [0.3, 0.7])
        assert view.seller_revenue == pytest.approx(
            out.intermediary_utility, abs=1e-12)

    def test_no_sale(self, example1):
        view = to_auction(example1, HALF, [0.8, 0.9])
        assert view.seller_revenue == 0.0
        assert view.alloc == (0.0, 0.0)

    def test_full_transfer_values_are_contributions(self, example1):
        view = to_auction(example1, Contract.linear(1.0), [0.3, 0.7])
        assert view.values == (pytest.approx(1.7), pytest.approx(1.3))


class TestAnonymous:
    def test_tie_break_frequency(self, example1):
        hits = 0
        trials = 10_000
        for seed in range(trials):
            out = anonymous_run(example1, HALF, 0.5, [0.3, 0.4], seed=seed)
            hits += out.winner == 0
        assert hits / trials == pytest.approx(0.5, abs=0.01)

    def test_empty_candidate_set(self, example1):
        out = anonymous_run(example1, HALF, 0.5, [0.8, 0.9], seed=1)
        assert out.winner is None
        assert out.principal_utility == 0.0

    def test_singleton_deterministic(self, example1):
        out = anonymous_run(example1, HALF, 0.5, [0.3, 0.9], seed=1)
        assert out.winner == 0
        assert out.payments[0] == pytest.approx(0.5)

    def test_requires_identical(self):
        inst = MarketInstance(
            [4.0, 0.0],
            [Agent((0.5, 0.5), tp.make_uniform(0, 1)),
             Agent((0.5, 0.5), tp.make_uniform(0, 2))])
        with pytest.raises(AssumptionViolated):
            anonymous_run(inst, HALF, 0.5, [0.5, 0.5], seed=0)
        with pytest.raises(AssumptionViolated):
            optimal_anonymous_price(inst, HALF)


class TestOptimalAnonymousPrice:
    def test_running_example(self, example1):
        price = optimal_anonymous_price(example1, HALF)
        assert price == pytest.approx(1.0 - 1.0 / SQRT3, abs=1e-8)

    def test_full_share_single_agent(self):
        inst = MarketInstance([4.0, 0.0],
                              [Agent((0.5, 0.5), tp.make_uniform(0, 1))])
        price = optimal_anonymous_price(inst, Contract.linear(1.0))
        assert price == pytest.approx(1.0, abs=1e-8)

    def test_single_agent_matches_vwm(self):
        # one agent: posted price at the reserve is exactly the optimal
        # mechanism, so expected utilities coincide
        inst = MarketInstance([4.0, 0.0],
                              [Agent((0.5, 0.5), tp.make_uniform(0, 1))])
        mc_v = simulate_market(inst, HALF, "vwm", samples=20_000, seed=3)
        mc_a = simulate_market(inst, HALF, "anonymous", samples=20_000, seed=3)
        assert mc_a.principal == pytest.approx(mc_v.principal, abs=1e-9)
        assert mc_a.intermediary == pytest.approx(mc_v.intermediary, abs=1e-9)


class TestAudits:
    def test_vwm_truthful(self, example1):
        rep = audit_incentives("vwm", example1, HALF, misreport_grid=50,
                               samples=200, seed=11)
        assert rep.max_dsic_violation <= 1e-9
        assert rep.max_ir_violation <= 1e-9

    def test_anonymous_truthful(self, example1):
        rep = audit_incentives("anonymous", example1, HALF, misreport_grid=50,
                               samples=200, seed=11)
        assert rep.max_dsic_violation <= 1e-9
        assert rep.max_ir_violation <= 1e-9

    def test_first_price_fixture_violates(self, example1):
        rep = audit_incentives("first_price", example1, HALF,
                               misreport_grid=50, samples=200, seed=11)
        assert rep.max_dsic_violation > 0.01

    def test_first_price_two_point_oracle(self, example1):
        # brute force on a binary report grid: over-reporting dominates
        truthful = run_mechanism(example1, HALF, "first_price", [0.2, 0.9])
        u_true = truthful.agent_utilities[0]
        shaded = run_mechanism(example1, HALF, "first_price", [0.8, 0.9])
        u_dev = shaded.payments[0] - 0.2 * shaded.alloc[0]
        assert u_dev - u_true > 0.01


class TestSimulateMarket:
    def test_reproducible(self, example1):
        a = simulate_market(example1, HALF, "vwm", samples=5_000, seed=9)
        b = simulate_market(example1, HALF, "vwm", samples=5_000, seed=9)
        assert a == b

    def test_seed_matters(self, example1):
        a = simulate_market(example1, HALF, "vwm", samples=5_000, seed=9)
        b = simulate_market(example1, HALF, "vwm", samples=5_000, seed=10)
        assert a.principal != b.principal

    def test_welfare_accounting_identity(self, example1):
        # total utility of the three parties equals the winner's realised
        # contribution; compare the Monte-Carlo means within 3 standard errors
        est = simulate_market(example1, HALF, "vwm", samples=200_000, seed=4)
        total = est.principal + est.intermediary + sum(est.agents)
        costs = sample_costs(example1, 200_000, 4)
        w = 2.0 - costs
        assigned = (1.0 - costs).max(axis=0) >= 0.5   # reserve at cost 0.5
        welfare = float(np.mean(np.where(assigned, w.max(axis=0), 0.0)))
        spread = 3.0 * (est.principal_stderr + est.intermediary_stderr
                        + sum(est.agents_stderr))
        assert total == pytest.approx(welfare, abs=max(spread, 1e-3))

    def test_full_share_zero_principal(self, example1):
        est = simulate_market(example1, Contract.linear(1.0), "vwm",
                              samples=2_000, seed=5)
        assert est.principal == 0.0

    def test_alpha_star_matches_closed_form(self, example1):
        sol = tp.optimize_contract_iid(example1.contribution_dist(0), 2.0, 2)
        est = simulate_market(example1, sol.contract, "vwm",
                              samples=200_000, seed=21)
        assert abs(est.principal - sol.utility) <= 3.0 * est.principal_stderr
