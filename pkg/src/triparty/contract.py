"""Contract solvers for the principal.

The principal moves first; the intermediary best-responds with the
revenue-optimal mechanism.  For ex-ante identical agents the problem
collapses to one-dimensional *virtual value pricing*: choose a threshold
``z`` in the support of the contribution distribution and collect the
virtual value of ``z`` whenever the best of ``n`` contributions clears it.
The linear share is recovered from the threshold via
``alpha = 1 - phi(z*) / r``.

Heterogeneous cost distributions keep a linear optimum (searched over the
share directly); fully general instances get an explicitly heuristic
multi-start direct search over transfer vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

from . import dist_core
from .dist_core import Distribution, classify, power, shift_by_contract
from .errors import AssumptionViolated, BadParams, BadRange, NotRegular, OutOfSupport
from .mechanism import Contract, MarketInstance

THRESHOLD_GRID = 8192
_QUAD_OPTS = dict(epsabs=1e-11, epsrel=1e-11, limit=400)


@dataclass(frozen=True)
class ContractSolution:
    """A solved contract with its threshold and utility."""

    contract: Contract
    threshold_z: float
    utility: float
    estimator: str = "closed_form"      # closed_form | monte_carlo
    samples: Optional[int] = None
    stderr: Optional[float] = None
    thresholds: Optional[tuple] = None  # per-agent, heterogeneous case
    notes: tuple = ()
    converged: bool = True

    @property
    def alpha(self) -> Optional[float]:
        return self.contract.alpha

    def to_json(self) -> dict:
        out = {
            "contract": self.contract.to_json(),
            "threshold_z": self.threshold_z,
            "utility": self.utility,
            "estimator": self.estimator,
            "converged": self.converged,
        }
        if self.samples is not None:
            out["samples"] = self.samples
        if self.stderr is not None:
            out["stderr"] = self.stderr
        if self.thresholds is not None:
            out["thresholds"] = list(self.thresholds)
        if self.notes:
            out["notes"] = list(self.notes)
        return out


@dataclass(frozen=True)
class RobustDesign:
    """Contract chosen knowing only that the market size lies in [s:ell]."""

    s: int
    ell: int
    regime: str
    alpha: float
    threshold_z: float
    worst_podm: float
    worst_poa: float
    podm_attained_n: int
    poa_attained_n: int
    per_n: tuple = field(default=())    # rows (n, utility, u_sb, u_fb)

    def to_json(self) -> dict:
        return {
            "s": self.s, "ell": self.ell, "regime": self.regime,
            "alpha": self.alpha, "threshold_z": self.threshold_z,
            "worst_podm": self.worst_podm, "worst_poa": self.worst_poa,
            "podm_attained_n": self.podm_attained_n,
            "poa_attained_n": self.poa_attained_n,
            "per_n": [list(row) for row in self.per_n],
        }


# ---------------------------------------------------------------------------
# Virtual value pricing (identical agents)
# ---------------------------------------------------------------------------

def _power_survival(d: Distribution, n: int):
    """Vectorised ``z -> P(max of n draws >= z)`` honouring the top atom."""
    pw = power(d, n)
    return pw.sf_at


def principal_utility_iid(F: Distribution, r: float, n: int, z: float) -> float:
    """Principal's utility from threshold ``z``: ``phi(z) * (1 - F^n(z))``.

    The sale probability is taken inclusive (``P(max >= z)``), so a
    right-endpoint atom contributes when the threshold sits on it.
    """
    if n < 1:
        raise BadParams("n must be >= 1")
    if z < F.support_lo or z > F.support_hi:
        raise OutOfSupport(f"z={z} outside the contribution support")
    if not classify(F).regular:
        raise NotRegular("contribution distribution failed regularity check")
    surv = _power_survival(F, n)
    return float(F.virtual_at(z)) * float(surv(z))


def _maximize_threshold(val_fn, surv_fn, d: Distribution, grid: int):
    """Grid-bracketed, kink-aware maximisation of ``val(z) * surv(z)``."""
    xs = np.linspace(d.support_lo, d.support_hi, grid)
    if d.breakpoints:
        xs = np.union1d(xs, np.asarray(d.breakpoints, dtype=float))
    vals = np.asarray(val_fn(xs), dtype=float) * np.asarray(surv_fn(xs), dtype=float)

    def fn(z):
        return float(val_fn(z)) * float(surv_fn(z))

    return dist_core._refine_maximum(fn, xs, vals)


def optimize_contract_iid(F: Distribution, r: float, n: int,
                          grid: int = THRESHOLD_GRID) -> ContractSolution:
    """Optimal linear contract for ``n`` agents with i.i.d. contributions.

    Sweeps the threshold over the support (largest optimum kept on ties)
    and recovers the share from ``phi(z*) = (1 - alpha) r``.
    """
    if n < 1:
        raise BadParams("n must be >= 1")
    if not classify(F).regular:
        raise NotRegular("contribution distribution failed regularity check")
    if F.support_hi > r + 1e-9 * max(1.0, abs(r)):
        raise BadParams("support must not exceed the expected reward r")
    surv = _power_survival(F, n)
    z_star, u_star = _maximize_threshold(F.virtual_at, surv, F, grid)
    alpha = min(max(1.0 - float(F.virtual_at(z_star)) / r, 0.0), 1.0)
    notes = ()
    if z_star >= F.support_hi and F.right_atom > 0.0:
        notes = ("atom-argmax",)
    return ContractSolution(contract=Contract.linear(alpha),
                            threshold_z=float(z_star), utility=float(u_star),
                            estimator="closed_form", notes=notes)


def optimize_contract_posted(F: Distribution, r: float, n: int,
                             grid: int = THRESHOLD_GRID) -> ContractSolution:
    """Optimal linear contract when the intermediary posts one anonymous
    price: the pricing objective uses the virtual value of ``F^n``."""
    if n < 1:
        raise BadParams("n must be >= 1")
    if not classify(F).regular:
        raise NotRegular("contribution distribution failed regularity check")
    if F.support_hi > r + 1e-9 * max(1.0, abs(r)):
        raise BadParams("support must not exceed the expected reward r")
    pw = power(F, n)
    z_star, u_star = _maximize_threshold(pw.virtual_at, pw.sf_at, pw, grid)
    alpha = min(max(1.0 - float(pw.virtual_at(z_star)) / r, 0.0), 1.0)
    notes = ()
    if z_star >= F.support_hi and F.right_atom > 0.0:
        notes = ("atom-argmax",)
    return ContractSolution(contract=Contract.linear(alpha),
                            threshold_z=float(z_star), utility=float(u_star),
                            estimator="closed_form", notes=notes)


# ---------------------------------------------------------------------------
# Identical rewards, heterogeneous cost distributions
# ---------------------------------------------------------------------------

def _common_reward(inst: MarketInstance) -> float:
    g0 = inst.gamma[0]
    if not all(np.allclose(inst.gamma[i], g0, atol=1e-12)
               for i in range(1, inst.n)):
        raise AssumptionViolated("agents must share one expected reward profile")
    return float(inst.r_vec[0])


def _thresholds_for(inst: MarketInstance, alpha: float, r: float):
    """Per-agent discriminatory thresholds ``z_i = (1-alpha) r + theta_i``.

    Thresholds landing outside an agent's support clamp to the nearest
    edge (flagged), since the reserve of the shifted distribution may sit
    at a support boundary.
    """
    off = (1.0 - alpha) * r
    zs = []
    clamped = False
    for i in range(inst.n):
        F = inst.contribution_dist(i)
        theta, _ = dist_core.monopoly_point(shift_by_contract(F, off))
        z = off + theta
        if z < F.support_lo or z > F.support_hi:
            z = min(max(z, F.support_lo), F.support_hi)
            clamped = True
        zs.append(z)
    return zs, clamped


_GL32 = np.polynomial.legendre.leggauss(32)
_GL64 = np.polynomial.legendre.leggauss(64)


def _panel_quad(fn, lo: float, hi: float, tol: float = 1e-8,
                depth: int = 12) -> float:
    """Adaptive Gauss-Legendre panels over a vectorised integrand."""
    def gl(nodes, weights, a, b):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return half * float(np.dot(weights, fn(mid + half * nodes)))

    def recurse(a, b, d):
        coarse = gl(*_GL32, a, b)
        fine = gl(*_GL64, a, b)
        if abs(fine - coarse) <= tol * max(1.0, abs(fine)) or d <= 0:
            return fine
        m = 0.5 * (a + b)
        return recurse(a, m, d - 1) + recurse(m, b, d - 1)

    return recurse(lo, hi, depth)


def _win_probability_quad(inst: MarketInstance, i: int, z_i: float) -> float:
    """P[w_i >= z_i and agent i has the top virtual value], by quadrature.

    Independence factorises the event through the rivals' CDFs evaluated at
    matched virtual values.  Assumes atomless contribution distributions
    (ties then occur with probability zero).
    """
    F_i = inst.contribution_dist(i)
    lo = max(z_i, F_i.support_lo)
    hi = F_i.support_hi
    if lo >= hi:
        return 0.0
    rivals = [inst.contribution_dist(j) for j in range(inst.n) if j != i]
    key_i = F_i.key()

    def integrand(w):
        w = np.asarray(w, dtype=float)
        p = np.asarray(F_i.pdf(w), dtype=float)
        v = np.asarray(F_i.virtual_at(w), dtype=float)
        for Fj in rivals:
            if Fj.key() == key_i:
                p = p * np.asarray(Fj.cdf(w), dtype=float)
            else:
                zj = dist_core.inverse_virtual_array(Fj, v)
                p = p * np.asarray(Fj.cdf(zj), dtype=float)
        return p

    cuts = sorted({lo, hi, *[b for b in F_i.breakpoints if lo < b < hi]})
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += _panel_quad(integrand, a, b)
    return float(total)


def optimize_contract_identical_reward(inst: MarketInstance,
                                       alpha_points: int = 121,
                                       mc_samples: int = 1_000_000,
                                       seed: int = 0) -> ContractSolution:
    """Optimal linear contract when rewards are identical but cost
    distributions differ.

    The share is searched on a refined one-dimensional grid; the winning
    probabilities are evaluated by quadrature for up to three agents and by
    common-random-number Monte-Carlo beyond that.
    """
    r = _common_reward(inst)
    inst.require_regular()
    use_quad = inst.n <= 3 and all(
        inst.contribution_dist(i).right_atom == 0.0 for i in range(inst.n))

    samples_meta = None
    stderr_meta = None
    if use_quad:
        def objective(alpha):
            zs, _ = _thresholds_for(inst, alpha, r)
            total = 0.0
            for i, z_i in enumerate(zs):
                phi = float(inst.contribution_dist(i).virtual_at(z_i))
                if phi <= 0.0:
                    continue
                total += phi * _win_probability_quad(inst, i, z_i)
            return total
    else:
        from .mechanism import sample_costs
        costs = sample_costs(inst, mc_samples, seed)
        w = inst.r_vec[:, None] - costs
        phi_w = np.stack([
            np.asarray(inst.contribution_dist(i).virtual_at(w[i]), dtype=float)
            for i in range(inst.n)])
        is_top = phi_w >= phi_w.max(axis=0, keepdims=True) - 1e-15
        samples_meta = mc_samples

        def objective(alpha):
            zs, _ = _thresholds_for(inst, alpha, r)
            total = 0.0
            for i, z_i in enumerate(zs):
                phi = float(inst.contribution_dist(i).virtual_at(z_i))
                if phi <= 0.0:
                    continue
                total += phi * float(np.mean(is_top[i] & (w[i] >= z_i)))
            return total

    # two-stage grid, then golden refinement of the best bracket
    grid = np.linspace(0.0, 1.0, alpha_points)
    vals = [objective(a) for a in grid]
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, alpha_points - 1)]
    fine = np.linspace(lo, hi, alpha_points)
    fvals = [objective(a) for a in fine]
    k2 = int(np.argmax(fvals))
    a_lo = fine[max(k2 - 1, 0)]
    a_hi = fine[min(k2 + 1, alpha_points - 1)]
    alpha_star, u_star = dist_core._golden_max(objective, float(a_lo),
                                               float(a_hi), 1e-10)
    if fvals[k2] > u_star:
        alpha_star, u_star = float(fine[k2]), float(fvals[k2])

    zs, clamped = _thresholds_for(inst, alpha_star, r)
    notes = ("threshold-clamped",) if clamped else ()
    same = all(abs(z - zs[0]) <= 1e-9 for z in zs)
    if not use_quad:
        # stderr of the per-sample objective at the optimum
        per_sample = np.zeros(mc_samples)
        for i, z_i in enumerate(zs):
            phi = float(inst.contribution_dist(i).virtual_at(z_i))
            if phi > 0.0:
                per_sample += phi * (is_top[i] & (w[i] >= z_i))
        stderr_meta = float(np.std(per_sample, ddof=1) / math.sqrt(mc_samples))
    return ContractSolution(
        contract=Contract.linear(float(alpha_star)),
        threshold_z=float(zs[0]) if same else math.nan,
        utility=float(u_star),
        estimator="closed_form" if use_quad else "monte_carlo",
        samples=samples_meta, stderr=stderr_meta,
        thresholds=tuple(float(z) for z in zs), notes=notes)


# ---------------------------------------------------------------------------
# General instances (heuristic direct search)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    restarts: int = 16
    max_iters: int = 200
    mc_samples: int = 100_000
    seed: int = 0


def optimize_contract_general(inst: MarketInstance,
                              search: SearchConfig = SearchConfig()
                              ) -> ContractSolution:
    """Heuristic multi-start search over transfer vectors.

    The objective (the principal's expected utility under the
    intermediary's best response) is estimated by Monte-Carlo with common
    random numbers across candidate contracts; simplex-style direct search
    explores transfer space.  Returned contracts carry a non-convergence
    flag instead of any optimality claim.
    """
    inst.require_regular()
    from .mechanism import sample_costs
    costs = sample_costs(inst, search.mc_samples, search.seed)
    w = inst.r_vec[:, None] - costs
    phi_w = np.stack([
        np.asarray(inst.contribution_dist(i).virtual_at(w[i]), dtype=float)
        for i in range(inst.n)])

    def neg_objective(u):
        t = np.abs(u)
        tg = inst.gamma @ t
        off = inst.r_vec - tg
        phi_t = phi_w - off[:, None]
        top = phi_t.max(axis=0)
        winner = np.argmax(phi_t, axis=0)
        has = top >= 0.0
        val = float(np.mean(np.where(has, off[winner], 0.0)))
        return -val

    rng = np.random.default_rng(search.seed)
    best_u = None
    best_val = -math.inf
    converged = False
    starts = [np.full(inst.m, 0.5)]
    starts += [rng.uniform(0.0, 1.0, inst.m) for _ in range(search.restarts - 1)]
    for u0 in starts:
        res = optimize.minimize(neg_objective, u0, method="Nelder-Mead",
                                options={"maxiter": search.max_iters,
                                         "xatol": 1e-6, "fatol": 1e-10})
        if -res.fun > best_val:
            best_val = -res.fun
            best_u = np.abs(res.x)
            converged = bool(res.success)

    t_best = tuple(float(v) for v in best_u)
    tg = inst.gamma @ np.asarray(t_best)
    off = inst.r_vec - tg
    phi_t = phi_w - off[:, None]
    per_sample = np.where(phi_t.max(axis=0) >= 0.0,
                          off[np.argmax(phi_t, axis=0)], 0.0)
    stderr = float(np.std(per_sample, ddof=1) / math.sqrt(search.mc_samples))
    return ContractSolution(
        contract=Contract(transfers=t_best), threshold_z=math.nan,
        utility=float(best_val), estimator="monte_carlo",
        samples=search.mc_samples, stderr=stderr,
        notes=("heuristic",), converged=converged)


# ---------------------------------------------------------------------------
# Unknown market size
# ---------------------------------------------------------------------------

REGIME_REGULAR_ELL = "regular_design_for_ell"
REGIME_MHR_S = "mhr_design_for_s"


def robust_contract(F: Distribution, r: float, s: int, ell: int,
                    regime: str = REGIME_REGULAR_ELL) -> RobustDesign:
    """Design a linear contract knowing only ``n in [s:ell]``.

    The regular regime designs for the largest market (``ell``); the MHR
    regime designs for the smallest (``s``).  Exact per-n utilities and
    benchmarks are evaluated for every market size in the range and the
    worst-case ratios reported with the attaining ``n``.
    """
    if not (1 <= s <= ell):
        raise BadRange(f"need 1 <= s <= ell, got [{s}:{ell}]")
    cls = classify(F)
    if not cls.regular:
        raise NotRegular("contribution distribution failed regularity check")
    if regime == REGIME_REGULAR_ELL:
        design_n = ell
    elif regime == REGIME_MHR_S:
        if not cls.mhr:
            raise NotRegular("MHR regime requires an MHR contribution "
                             "distribution")
        design_n = s
    else:
        raise BadParams(f"unknown regime '{regime}'")

    from . import benchmarks

    design = optimize_contract_iid(F, r, design_n)
    z_dag = design.threshold_z
    phi_at = float(F.virtual_at(z_dag))

    rows = []
    worst_podm = -math.inf
    worst_poa = -math.inf
    n_podm = n_poa = s
    for n in range(s, ell + 1):
        surv = _power_survival(F, n)
        u_n = phi_at * float(surv(z_dag))
        u_sb = benchmarks.second_best(F, n)
        u_fb = benchmarks.first_best(F, n)
        rows.append((n, u_n, u_sb, u_fb))
        if u_n <= 0.0:
            podm = poa = math.inf
        else:
            podm = u_sb / u_n
            poa = u_fb / u_n
        if podm > worst_podm:
            worst_podm, n_podm = podm, n
        if poa > worst_poa:
            worst_poa, n_poa = poa, n

    return RobustDesign(s=int(s), ell=int(ell), regime=regime,
                        alpha=float(design.alpha), threshold_z=float(z_dag),
                        worst_podm=float(worst_podm), worst_poa=float(worst_poa),
                        podm_attained_n=int(n_podm), poa_attained_n=int(n_poa),
                        per_n=tuple(rows))
