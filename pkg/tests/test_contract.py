import math

import numpy as np
import pytest

import triparty as tp
from triparty.contract import (
    REGIME_MHR_S,
    REGIME_REGULAR_ELL,
    SearchConfig,
    optimize_contract_general,
    optimize_contract_identical_reward,
    optimize_contract_iid,
    optimize_contract_posted,
    principal_utility_iid,
    robust_contract,
)
from triparty.dist_core import monopoly_point, shift_by_contract
from triparty.errors import (
    AssumptionViolated,
    BadParams,
    BadRange,
    NotRegular,
    OutOfSupport,
)
from triparty.mechanism import Agent, Contract, MarketInstance

SQRT3 = math.sqrt(3.0)


class TestPrincipalUtilityIid:
    def test_running_example_optimum(self, u12):
        z = (3.0 + SQRT3) / 3.0
        assert principal_utility_iid(u12, 2.0, 2, z) == pytest.approx(
            4.0 * SQRT3 / 9.0, abs=1e-12)

    def test_zero_at_reserve(self, u12, ter14):
        for d in (u12,):
            theta, _ = monopoly_point(d)
            assert principal_utility_iid(d, 2.0 * d.support_hi, 3, theta) == \
                pytest.approx(0.0, abs=1e-12)

    def test_staircase_breakpoint_values(self):
        from triparty.dist_catalog import staircase_breakpoints
        K = 6
        st = tp.make_staircase(K)
        r = 2.0 ** K / math.log(2.0)
        zs = staircase_breakpoints(K)
        # the smallest breakpoint is the maximiser; the top atom earns 1/K
        assert principal_utility_iid(st, r, 1, zs[-1]) == pytest.approx(
            (2.0 - 2.0 ** (1 - K)) / K, abs=1e-14)
        assert principal_utility_iid(st, r, 1, zs[0]) == pytest.approx(
            1.0 / K, abs=1e-14)

    def test_out_of_support(self, u12):
        with pytest.raises(OutOfSupport):
            principal_utility_iid(u12, 2.0, 2, 0.5)


class TestOptimizeContractIid:
    def test_running_example(self, u12):
        sol = optimize_contract_iid(u12, 2.0, 2)
        assert sol.alpha == pytest.approx((3.0 - SQRT3) / 3.0, abs=1e-8)
        assert sol.threshold_z == pytest.approx((3.0 + SQRT3) / 3.0, abs=1e-8)
        assert sol.utility == pytest.approx(4.0 * SQRT3 / 9.0, abs=1e-10)
        assert sol.estimator == "closed_form"

    @pytest.mark.parametrize("K", [4, 6, 10])
    def test_staircase(self, K):
        st = tp.make_staircase(K)
        r = 2.0 ** K / math.log(2.0)
        sol = optimize_contract_iid(st, r, 1)
        assert sol.utility == pytest.approx((2.0 - 2.0 ** (1 - K)) / K,
                                            abs=1e-12)

    def test_trunc_equal_revenue_atom_argmax(self, ter14):
        sol = optimize_contract_iid(ter14, 4.0, 1)
        # the only positive virtual value sits on the top point mass
        assert sol.threshold_z == 4.0
        assert sol.utility == pytest.approx(1.0, abs=1e-12)
        assert "atom-argmax" in sol.notes

    def test_threshold_alpha_round_trip(self, rng):
        # alpha = 1 - phi(z)/r inverts to z = (1-alpha) r + theta_alpha
        from conftest import random_regular_dist
        checked = 0
        while checked < 100:
            F = random_regular_dist(rng)
            if F.right_atom > 0.0:
                continue          # reserve-of-shift identity needs smoothness
            r = F.support_hi * rng.uniform(1.0, 1.4)
            sol = optimize_contract_iid(F, r, int(rng.integers(1, 4)))
            off = (1.0 - sol.alpha) * r
            theta, _ = monopoly_point(shift_by_contract(F, off))
            assert off + theta == pytest.approx(sol.threshold_z, abs=1e-8)
            checked += 1

    def test_monotone_dominance_in_n(self, rng):
        from conftest import random_regular_dist
        for _ in range(10):
            F = random_regular_dist(rng)
            r = F.support_hi * 1.2
            prev = None
            for n in range(1, 6):
                u = optimize_contract_iid(F, r, n).utility
                if prev is not None:
                    assert u >= prev - 1e-10
                prev = u

    def test_reward_must_cover_support(self, u12):
        with pytest.raises(BadParams):
            optimize_contract_iid(u12, 1.5, 2)

    def test_not_regular(self):
        d = tp.make_tabulated([0.0, 0.2, 0.8, 1.0], [0.0, 0.6, 0.7, 1.0])
        with pytest.raises(NotRegular):
            optimize_contract_iid(d, 2.0, 2)


class TestOptimizeContractPosted:
    def test_single_agent_equals_iid(self, u12):
        a = optimize_contract_iid(u12, 2.0, 1)
        b = optimize_contract_posted(u12, 2.0, 1)
        assert b.utility == pytest.approx(a.utility, abs=1e-12)
        assert b.threshold_z == pytest.approx(a.threshold_z, abs=1e-9)

    def test_grid_oracle(self, u12):
        # independent oracle: maximize the power-distribution pricing
        # objective on a fine mesh
        zs = np.linspace(1.0 + 1e-9, 2.0, 1_000_001)
        F = zs - 1.0
        phi2 = zs - (1.0 - F ** 2) / (2.0 * F)
        obj = phi2 * (1.0 - F ** 2)
        best = float(np.max(obj))
        sol = optimize_contract_posted(u12, 2.0, 2)
        assert sol.utility == pytest.approx(best, abs=1e-9)
        assert sol.utility == pytest.approx(0.6963455, abs=1e-3)
        assert sol.threshold_z == pytest.approx(1.6485, abs=1e-3)

    def test_never_exceeds_unrestricted(self, rng):
        from conftest import random_regular_dist
        for _ in range(50):
            F = random_regular_dist(rng)
            r = F.support_hi * rng.uniform(1.0, 1.5)
            n = int(rng.integers(1, 5))
            u_star = optimize_contract_iid(F, r, n).utility
            u_posted = optimize_contract_posted(F, r, n).utility
            assert u_posted <= u_star + 1e-9


class TestIdenticalReward:
    def test_symmetric_reduces_to_iid(self, example1):
        sol = optimize_contract_identical_reward(example1)
        iid = optimize_contract_iid(example1.contribution_dist(0), 2.0, 2)
        assert sol.utility == pytest.approx(iid.utility, abs=1e-6)
        assert sol.alpha == pytest.approx(iid.alpha, abs=1e-4)
        assert sol.estimator == "closed_form"

    def test_single_agent_calculus_oracle(self):
        # one agent, contribution U[1,2], r=2: maximize (2z-2)(2-z)
        inst = MarketInstance([4.0, 0.0],
                              [Agent((0.5, 0.5), tp.make_uniform(0, 1))])
        sol = optimize_contract_identical_reward(inst)
        assert sol.threshold_z == pytest.approx(1.5, abs=1e-6)
        assert sol.utility == pytest.approx(0.5, abs=1e-10)
        assert sol.alpha == pytest.approx(0.5, abs=1e-6)

    def test_heterogeneous_local_optimality(self):
        from triparty.contract import _thresholds_for, _win_probability_quad
        inst = MarketInstance(
            [4.0, 0.0],
            [Agent((0.5, 0.5), tp.make_uniform(0.0, 1.0)),
             Agent((0.5, 0.5), tp.make_uniform(0.2, 1.0))])
        sol = optimize_contract_identical_reward(inst)

        def objective(alpha):
            zs, _ = _thresholds_for(inst, alpha, 2.0)
            total = 0.0
            for i, z in enumerate(zs):
                phi = float(inst.contribution_dist(i).virtual_at(z))
                if phi > 0.0:
                    total += phi * _win_probability_quad(inst, i, z)
            return total

        for da in (-0.01, 0.01):
            a = min(max(sol.alpha + da, 0.0), 1.0)
            assert sol.utility >= objective(a) - 1e-9

    def test_monte_carlo_path(self):
        inst = MarketInstance([4.0, 0.0],
                              [Agent((0.5, 0.5), tp.make_uniform(0, 1))] * 4)
        sol = optimize_contract_identical_reward(inst, mc_samples=200_000,
                                                 seed=7)
        iid = optimize_contract_iid(inst.contribution_dist(0), 2.0, 4)
        assert sol.estimator == "monte_carlo"
        assert sol.stderr is not None
        assert abs(sol.utility - iid.utility) <= 3.0 * sol.stderr

    def test_rejects_different_rewards(self):
        inst = MarketInstance(
            [4.0, 0.0],
            [Agent((0.5, 0.5), tp.make_uniform(0, 1)),
             Agent((0.25, 0.75), tp.make_uniform(0, 1))])
        with pytest.raises(AssumptionViolated):
            optimize_contract_identical_reward(inst)


class TestGeneralSearch:
    def test_matches_linear_optimum_under_symmetry(self, example1):
        sol = optimize_contract_general(
            example1, SearchConfig(restarts=6, mc_samples=50_000, seed=5))
        iid = optimize_contract_iid(example1.contribution_dist(0), 2.0, 2)
        assert abs(sol.utility - iid.utility) <= 3.0 * sol.stderr + 1e-3
        assert "heuristic" in sol.notes

    def test_full_transfer_worthless(self, example1):
        # evaluating t = 1 directly: the principal keeps nothing
        from triparty.mechanism import simulate_market
        est = simulate_market(example1, Contract.linear(1.0), "vwm",
                              samples=2_000, seed=1)
        assert est.principal == 0.0

    def test_transfer_equivalence_class(self, example1):
        # only <t, gamma> matters: any t with t_0 * 2 = 2 alpha* is optimal
        from triparty.mechanism import simulate_market
        alpha_star = (3.0 - SQRT3) / 3.0
        iid = optimize_contract_iid(example1.contribution_dist(0), 2.0, 2)
        est = simulate_market(example1,
                              Contract(transfers=(alpha_star, 0.77)), "vwm",
                              samples=400_000, seed=13)
        assert abs(est.principal - iid.utility) <= 3.0 * est.principal_stderr


class TestRobustContract:
    def test_degenerate_range_matches_known_n(self, u12):
        design = robust_contract(u12, 2.0, 2, 2, REGIME_REGULAR_ELL)
        assert design.worst_podm == pytest.approx(SQRT3, abs=1e-9)
        assert design.worst_poa == pytest.approx(5.0 * SQRT3 / 4.0, abs=1e-9)

    def test_range_one_two(self, u12):
        design = robust_contract(u12, 2.0, 1, 2, REGIME_REGULAR_ELL)
        # arithmetic oracle: U(alpha_ell, 1) = (2/sqrt3)(1 - 1/sqrt3)
        u1 = (2.0 / SQRT3) * (1.0 - 1.0 / SQRT3)
        assert design.worst_podm == pytest.approx(max(1.0 / u1, SQRT3),
                                                  abs=1e-3)
        assert design.podm_attained_n == 1
        assert design.alpha == pytest.approx((3.0 - SQRT3) / 3.0, abs=1e-8)

    def test_single_point_range(self, u12):
        a = robust_contract(u12, 2.0, 1, 1, REGIME_REGULAR_ELL)
        b = robust_contract(u12, 2.0, 1, 1, REGIME_MHR_S)
        assert a.alpha == pytest.approx(b.alpha, abs=1e-12)
        iid = optimize_contract_iid(u12, 2.0, 1)
        assert a.alpha == pytest.approx(iid.alpha, abs=1e-12)

    def test_mhr_regime_designs_for_s(self, u12):
        design = robust_contract(u12, 2.0, 1, 3, REGIME_MHR_S)
        iid = optimize_contract_iid(u12, 2.0, 1)
        assert design.alpha == pytest.approx(iid.alpha, abs=1e-12)

    def test_mhr_regime_requires_mhr(self, ter14):
        with pytest.raises(NotRegular):
            robust_contract(ter14, 4.0, 1, 2, REGIME_MHR_S)

    def test_bad_range(self, u12):
        with pytest.raises(BadRange):
            robust_contract(u12, 2.0, 3, 2)
        with pytest.raises(BadRange):
            robust_contract(u12, 2.0, 0, 2)


class TestReserveContinuity:
    def test_theta_alpha_has_no_jumps(self):
        # vectorised sweep of the shifted-reserve map on a 10^4 alpha grid,
        # with a three-point parabolic refinement per column
        for F, r in ((tp.make_uniform(1.0, 2.0), 2.0),
                     (tp.make_cond_exponential(6.0, 3.0), 6.0)):
            xs = np.linspace(F.support_lo, F.support_hi, 4001)
            sf = np.asarray(F.sf_at(xs), dtype=float)
            alphas = np.linspace(0.0, 1.0, 10_001)
            offs = (1.0 - alphas) * r
            thetas = np.empty_like(alphas)
            h = xs[1] - xs[0]
            for start in range(0, len(alphas), 500):
                chunk = offs[start:start + 500]
                M = (xs[:, None] - chunk[None, :]) * sf[:, None]
                j = np.argmax(M, axis=0)
                j = np.clip(j, 1, len(xs) - 2)
                cols = np.arange(M.shape[1])
                va, v0, vb = M[j - 1, cols], M[j, cols], M[j + 1, cols]
                curv = va - 2.0 * v0 + vb
                delta = np.where(curv < 0.0,
                                 0.5 * h * (va - vb) / np.where(curv < 0.0,
                                                                curv, 1.0),
                                 0.0)
                delta = np.clip(delta, -h, h)
                thetas[start:start + 500] = xs[j] + delta - chunk
            step = alphas[1] - alphas[0]
            max_jump = float(np.max(np.abs(np.diff(thetas))))
            assert max_jump <= 10.0 * r * step

            # the sweep agrees with the library reserve at sampled shares
            for a in np.linspace(0.0, 1.0, 25):
                off = (1.0 - a) * r
                theta, _ = monopoly_point(shift_by_contract(F, off))
                k = int(round(a / step))
                assert thetas[k] == pytest.approx(theta, abs=1e-4)
