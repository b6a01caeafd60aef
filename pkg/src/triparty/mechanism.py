"""Executable mechanisms for the intermediary and the market simulator.

Implements the revenue-optimal direct mechanism (a virtual welfare maximiser
over contracted contributions), the anonymous-pricing mechanism, the
mechanism-to-auction conversion, incentive audits, and a deterministic
seeded Monte-Carlo estimator of the three parties' expected utilities.

Randomness policy: every random draw comes from a counter-based Philox
stream keyed on ``(seed, stream_id)``; agent ``i`` owns stream ``i`` and the
tie-break lottery owns a dedicated stream.  Runs are bit-reproducible for a
fixed seed and independent of any batching of the sample index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import dist_core
from .dist_catalog import contribution_from_cost, from_json as dist_from_json
from .dist_core import Distribution, classify, inverse_virtual_array
from .errors import (
    AssumptionViolated,
    BadParams,
    CostOutOfSupport,
    NotRegular,
)

_MASK64 = (1 << 64) - 1
_TIEBREAK_STREAM = 1 << 32

MECHANISM_KINDS = ("vwm", "anonymous", "first_price", "second_price_always",
                   "never_assign")


def _philox(seed: int, stream: int) -> np.random.Generator:
    key = ((int(seed) & _MASK64) << 64) | (int(stream) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Agent:
    """Outcome distribution and private-cost prior of one agent."""

    rho: tuple
    cost_dist: Distribution

    def __post_init__(self):
        total = math.fsum(self.rho)
        if abs(total - 1.0) > 1e-12:
            raise BadParams(f"outcome probabilities sum to {total}, not 1")
        if any(p < 0.0 for p in self.rho):
            raise BadParams("outcome probabilities must be non-negative")


@dataclass(frozen=True)
class Contract:
    """Outcome-indexed reward shares paid by the principal.

    Either an explicit non-negative transfer vector (components may exceed
    one) or a linear share ``alpha * 1``.
    """

    transfers: Optional[tuple] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if (self.transfers is None) == (self.alpha is None):
            raise BadParams("specify exactly one of transfers or alpha")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise BadParams("a linear contract share must lie in [0, 1]")
        if self.transfers is not None and any(t < 0.0 for t in self.transfers):
            raise BadParams("limited liability: transfers must be >= 0")

    @staticmethod
    def linear(alpha: float) -> "Contract":
        return Contract(alpha=float(alpha))

    def vector(self, m: int) -> np.ndarray:
        if self.alpha is not None:
            return np.full(m, self.alpha, dtype=float)
        if len(self.transfers) != m:
            raise BadParams(f"contract has {len(self.transfers)} components, "
                            f"instance has {m} outcomes")
        return np.asarray(self.transfers, dtype=float)

    def to_json(self) -> dict:
        if self.alpha is not None:
            return {"alpha": self.alpha}
        return {"transfers": list(self.transfers)}


class MarketInstance:
    """An n-agent market: rewards per outcome and per-agent primitives."""

    def __init__(self, lam: Sequence[float], agents: Sequence[Agent]):
        if len(agents) < 1:
            raise BadParams("need at least one agent")
        if any(l < 0.0 for l in lam):
            raise BadParams("outcome rewards must be non-negative")
        self.lam = np.asarray(lam, dtype=float)
        self.agents = tuple(agents)
        for a in self.agents:
            if len(a.rho) != self.m:
                raise BadParams("agent outcome vector length mismatch")
        # gamma_i[j] = lambda_j * rho_ij ; r_i = sum_j gamma_ij
        self.gamma = np.asarray([self.lam * np.asarray(a.rho) for a in agents])
        self.r_vec = self.gamma.sum(axis=1)
        self._contrib = [contribution_from_cost(a.cost_dist, r)
                         for a, r in zip(self.agents, self.r_vec)]

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def m(self) -> int:
        return len(self.lam)

    def contribution_dist(self, i: int) -> Distribution:
        return self._contrib[i]

    def tdotg(self, t: Contract) -> np.ndarray:
        return self.gamma @ t.vector(self.m)

    def require_regular(self):
        for i, d in enumerate(self._contrib):
            if not classify(d).regular:
                raise NotRegular(f"agent {i} contribution distribution is "
                                 "not (numerically) regular")

    def check_costs(self, costs: np.ndarray):
        costs = np.atleast_2d(np.asarray(costs, dtype=float))
        for i, a in enumerate(self.agents):
            g = a.cost_dist
            tol = 1e-9 * max(1.0, abs(g.support_hi))
            if np.any(costs[i] < g.support_lo - tol) or \
               np.any(costs[i] > g.support_hi + tol):
                raise CostOutOfSupport(f"cost for agent {i} outside "
                                       f"[{g.support_lo}, {g.support_hi}]")

    def is_identical(self) -> bool:
        """Ex-ante identical agents: same reward profile and cost prior."""
        g0 = self.gamma[0]
        k0 = self.agents[0].cost_dist.key()
        return all(
            np.allclose(self.gamma[i], g0, atol=1e-12)
            and self.agents[i].cost_dist.key() == k0
            for i in range(1, self.n)
        )

    def to_json(self) -> dict:
        return {
            "lambda": [float(v) for v in self.lam],
            "agents": [
                {"rho": [float(p) for p in a.rho],
                 "cost_dist": a.cost_dist.to_json()}
                for a in self.agents
            ],
        }

    @staticmethod
    def from_json(obj: dict) -> "MarketInstance":
        try:
            lam = obj["lambda"]
            agents = [Agent(rho=tuple(a["rho"]),
                            cost_dist=dist_from_json(a["cost_dist"]))
                      for a in obj["agents"]]
        except (KeyError, TypeError) as exc:
            raise BadParams(f"malformed instance JSON: {exc}") from exc
        return MarketInstance(lam, agents)


@dataclass(frozen=True)
class MechanismOutcome:
    """Result of one mechanism run on a single cost profile.

    Utilities are expectations over the task outcome (and, for randomised
    allocations, over the tie-break lottery) conditional on the costs.
    """

    winner: Optional[int]
    alloc: tuple
    payments: tuple
    principal_utility: float
    intermediary_utility: float
    agent_utilities: tuple

    def to_json(self) -> dict:
        return {
            "winner": self.winner,
            "alloc": list(self.alloc),
            "payments": list(self.payments),
            "principal_utility": self.principal_utility,
            "intermediary_utility": self.intermediary_utility,
            "agent_utilities": list(self.agent_utilities),
        }


@dataclass(frozen=True)
class AuctionView:
    """Single-item auction equivalent of a mechanism run."""

    values: tuple
    alloc: tuple
    buyer_payments: tuple
    seller_revenue: float


@dataclass(frozen=True)
class UtilityEstimate:
    principal: float
    intermediary: float
    agents: tuple
    principal_stderr: float
    intermediary_stderr: float
    agents_stderr: tuple
    samples: int
    seed: int
    mech_kind: str

    def to_json(self) -> dict:
        return {
            "principal": self.principal,
            "intermediary": self.intermediary,
            "agents": list(self.agents),
            "principal_stderr": self.principal_stderr,
            "intermediary_stderr": self.intermediary_stderr,
            "agents_stderr": list(self.agents_stderr),
            "samples": self.samples,
            "seed": self.seed,
            "mech_kind": self.mech_kind,
            "estimator": "monte_carlo",
        }


@dataclass(frozen=True)
class AuditReport:
    max_dsic_violation: float
    max_ir_violation: float
    mech_kind: str
    samples: int
    misreport_grid: int
    seed: int


# ---------------------------------------------------------------------------
# Batch mechanism cores (vectorised over cost profiles)
# ---------------------------------------------------------------------------

@dataclass
class _BatchResult:
    winner: np.ndarray        # int index, -1 for none
    alloc: np.ndarray         # (n, S) allocation probabilities
    payments: np.ndarray      # (n, S) payments to agents
    principal: np.ndarray     # (S,)
    intermediary: np.ndarray  # (S,)
    agent_util: np.ndarray    # (n, S) true-cost utilities


def _vwm_batch(inst: MarketInstance, t: Contract, costs: np.ndarray,
               true_costs: Optional[np.ndarray] = None) -> _BatchResult:
    """Virtual-welfare-maximiser outcomes for a batch of reported costs."""
    n, S = costs.shape
    tv = t.vector(inst.m)
    tg = inst.gamma @ tv
    off = inst.r_vec - tg
    if true_costs is None:
        true_costs = costs

    w = tg[:, None] - costs
    phi_t = np.empty_like(w)
    for i in range(n):
        base = inst.contribution_dist(i)
        phi_t[i] = np.asarray(base.virtual_at(w[i] + off[i]), dtype=float) - off[i]

    top = phi_t.max(axis=0)
    has = top >= 0.0
    winner = np.argmax(phi_t, axis=0)          # ties -> lowest index
    if n >= 2:
        second = np.partition(phi_t, n - 2, axis=0)[n - 2]
    else:
        second = np.full(S, -np.inf)
    second_plus = np.maximum(second, 0.0)

    payments = np.zeros((n, S))
    alloc = np.zeros((n, S))
    agent_util = np.zeros((n, S))
    for i in range(n):
        rows = has & (winner == i)
        if not np.any(rows):
            continue
        base = inst.contribution_dist(i)
        y = inverse_virtual_array(base, second_plus[rows] + off[i]) - off[i]
        pay = tg[i] - y
        payments[i, rows] = pay
        alloc[i, rows] = 1.0
        agent_util[i, rows] = pay - true_costs[i, rows]

    widx = np.where(has, winner, -1)
    principal = np.where(has, off[np.clip(widx, 0, n - 1)], 0.0)
    intermediary = np.where(
        has, tg[np.clip(widx, 0, n - 1)] - payments.sum(axis=0), 0.0)
    return _BatchResult(widx, alloc, payments, principal, intermediary,
                        agent_util)


def _anonymous_batch(inst: MarketInstance, t: Contract, price: float,
                     costs: np.ndarray,
                     true_costs: Optional[np.ndarray] = None) -> _BatchResult:
    """Anonymous posted price: uniform lottery over agents at or below it.

    Allocation probabilities, payments and utilities are the exact
    expectations over the tie-break lottery given the cost profile.
    """
    n, S = costs.shape
    tv = t.vector(inst.m)
    tg = inst.gamma @ tv
    off = inst.r_vec - tg
    if true_costs is None:
        true_costs = costs

    member = costs <= price
    size = member.sum(axis=0)
    safe = np.maximum(size, 1)
    alloc = member / safe
    payments = price * alloc
    agent_util = payments - true_costs * alloc
    principal = (off[:, None] * alloc).sum(axis=0)
    intermediary = ((tg[:, None] * alloc) - payments).sum(axis=0)
    winner = np.full(S, -1)
    return _BatchResult(winner, alloc, payments, principal, intermediary,
                        agent_util)


def _first_price_batch(inst, t, costs, true_costs=None) -> _BatchResult:
    """Deliberately non-truthful fixture: lowest reported cost wins and is
    paid her own report."""
    n, S = costs.shape
    tv = t.vector(inst.m)
    tg = inst.gamma @ tv
    off = inst.r_vec - tg
    if true_costs is None:
        true_costs = costs
    winner = np.argmin(costs, axis=0)
    cols = np.arange(S)
    alloc = np.zeros((n, S))
    alloc[winner, cols] = 1.0
    payments = np.zeros((n, S))
    payments[winner, cols] = costs[winner, cols]
    agent_util = payments - true_costs * alloc
    principal = off[winner]
    intermediary = tg[winner] - payments[winner, cols]
    return _BatchResult(winner, alloc, payments, principal, intermediary,
                        agent_util)


def _second_price_always_batch(inst, t, costs, true_costs=None) -> _BatchResult:
    """Restricted intermediary that always assigns to the lowest cost and
    pays the second-lowest cost (no reserve)."""
    n, S = costs.shape
    if n < 2:
        raise BadParams("second_price_always needs at least two agents")
    tv = t.vector(inst.m)
    tg = inst.gamma @ tv
    off = inst.r_vec - tg
    if true_costs is None:
        true_costs = costs
    order = np.argsort(costs, axis=0)
    winner = order[0]
    runner = order[1]
    cols = np.arange(S)
    alloc = np.zeros((n, S))
    alloc[winner, cols] = 1.0
    payments = np.zeros((n, S))
    payments[winner, cols] = costs[runner, cols]
    agent_util = payments - true_costs * alloc
    principal = off[winner]
    intermediary = tg[winner] - payments[winner, cols]
    return _BatchResult(winner, alloc, payments, principal, intermediary,
                        agent_util)


def _never_assign_batch(inst, t, costs, true_costs=None) -> _BatchResult:
    n, S = costs.shape
    z = np.zeros((n, S))
    return _BatchResult(np.full(S, -1), z, z.copy(), np.zeros(S), np.zeros(S),
                        z.copy())


_BATCHES = {
    "vwm": _vwm_batch,
    "first_price": _first_price_batch,
    "second_price_always": _second_price_always_batch,
    "never_assign": _never_assign_batch,
}


# ---------------------------------------------------------------------------
# Single-profile front ends
# ---------------------------------------------------------------------------

def _outcome_from_batch(res: _BatchResult, col: int = 0,
                        winner_override=None) -> MechanismOutcome:
    w = winner_override if winner_override is not None else (
        int(res.winner[col]) if res.winner[col] >= 0 else None)
    return MechanismOutcome(
        winner=w,
        alloc=tuple(float(x) for x in res.alloc[:, col]),
        payments=tuple(float(x) for x in res.payments[:, col]),
        principal_utility=float(res.principal[col]),
        intermediary_utility=float(res.intermediary[col]),
        agent_utilities=tuple(float(x) for x in res.agent_util[:, col]),
    )


def vwm_run(inst: MarketInstance, t: Contract, costs) -> MechanismOutcome:
    """Run the intermediary's optimal mechanism on one reported cost profile.

    The winner is the agent with the maximum non-negative virtual value of
    her contracted contribution (ties to the lowest index); her payment is
    the contracted reward minus the inverse virtual value of the strongest
    competing bid.
    """
    inst.require_regular()
    costs = np.asarray(costs, dtype=float).reshape(inst.n, 1)
    inst.check_costs(costs)
    return _outcome_from_batch(_vwm_batch(inst, t, costs))


def to_auction(inst: MarketInstance, t: Contract, costs) -> AuctionView:
    """Equivalent single-item auction view of a mechanism run.

    Buyer ``i`` values the item at her contracted contribution; the seller's
    revenue equals the intermediary's utility (asserted on every call).
    """
    inst.require_regular()
    costs = np.asarray(costs, dtype=float).reshape(inst.n, 1)
    inst.check_costs(costs)
    res = _vwm_batch(inst, t, costs)
    tg = inst.gamma @ t.vector(inst.m)
    values = tg - costs[:, 0]
    buyer_payments = tg * res.alloc[:, 0] - res.payments[:, 0]
    revenue = float(buyer_payments.sum())
    scale = max(1.0, abs(float(res.intermediary[0])))
    assert abs(revenue - float(res.intermediary[0])) <= 1e-12 * scale, \
        "auction revenue must equal intermediary utility"
    return AuctionView(values=tuple(float(v) for v in values),
                       alloc=tuple(float(x) for x in res.alloc[:, 0]),
                       buyer_payments=tuple(float(p) for p in buyer_payments),
                       seller_revenue=revenue)


def require_identical(inst: MarketInstance):
    if not inst.is_identical():
        raise AssumptionViolated(
            "anonymous pricing requires ex-ante identical agents")


def anonymous_run(inst: MarketInstance, t: Contract, price: float, costs,
                  seed: int = 0) -> MechanismOutcome:
    """Anonymous posted-price mechanism on one cost profile.

    Every agent with cost at most the price enters a uniform lottery; the
    realised winner is drawn from the seeded tie-break stream, while the
    reported utilities are exact expectations over that lottery.
    """
    require_identical(inst)
    costs = np.asarray(costs, dtype=float).reshape(inst.n, 1)
    inst.check_costs(costs)
    res = _anonymous_batch(inst, t, float(price), costs)
    members = np.flatnonzero(res.alloc[:, 0] > 0.0)
    winner = None
    if len(members):
        gen = _philox(seed, _TIEBREAK_STREAM)
        winner = int(members[gen.integers(0, len(members))])
    return _outcome_from_batch(res, winner_override=winner)


def optimal_anonymous_price(inst: MarketInstance, t: Contract) -> float:
    """Revenue-optimal posted price: contracted reward minus the monopoly
    reserve of the n-th power of the contracted contribution."""
    require_identical(inst)
    tg = float(inst.tdotg(t)[0])
    off = float(inst.r_vec[0]) - tg
    shifted = dist_core.shift_by_contract(inst.contribution_dist(0), off)
    theta_n, _ = dist_core.monopoly_point(dist_core.power(shifted, inst.n))
    return tg - theta_n


def run_mechanism(inst: MarketInstance, t: Contract, mech_kind: str, costs,
                  seed: int = 0, price: Optional[float] = None):
    """Dispatch a single-profile run by mechanism kind."""
    if mech_kind == "vwm":
        return vwm_run(inst, t, costs)
    if mech_kind == "anonymous":
        p = optimal_anonymous_price(inst, t) if price is None else price
        return anonymous_run(inst, t, p, costs, seed=seed)
    if mech_kind in _BATCHES:
        costs = np.asarray(costs, dtype=float).reshape(inst.n, 1)
        inst.check_costs(costs)
        return _outcome_from_batch(_BATCHES[mech_kind](inst, t, costs))
    raise BadParams(f"unknown mechanism kind '{mech_kind}'")


# ---------------------------------------------------------------------------
# Monte-Carlo estimation and incentive audits
# ---------------------------------------------------------------------------

def sample_costs(inst: MarketInstance, samples: int, seed: int) -> np.ndarray:
    """Inverse-CDF cost draws from per-agent counter-based streams."""
    if samples < 1:
        raise BadParams("samples must be >= 1")
    costs = np.empty((inst.n, samples))
    for i, a in enumerate(inst.agents):
        u = _philox(seed, i).random(samples)
        costs[i] = np.asarray(a.cost_dist.quantile(u), dtype=float)
    return costs


def _batch_for(inst, t, mech_kind, costs, price, true_costs=None):
    if mech_kind == "anonymous":
        p = optimal_anonymous_price(inst, t) if price is None else float(price)
        return _anonymous_batch(inst, t, p, costs, true_costs)
    if mech_kind not in _BATCHES:
        raise BadParams(f"unknown mechanism kind '{mech_kind}'")
    return _BATCHES[mech_kind](inst, t, costs, true_costs)


def simulate_market(inst: MarketInstance, t: Contract, mech_kind: str = "vwm",
                    samples: int = 10000, seed: int = 0,
                    price: Optional[float] = None) -> UtilityEstimate:
    """Estimate expected utilities by i.i.d. cost sampling.

    Deterministic for a fixed seed.  The per-sample utilities satisfy the
    accounting identity: their total equals the realised contribution of
    the assigned agent (zero when the task is withheld).
    """
    if mech_kind in ("vwm",):
        inst.require_regular()
    if mech_kind == "anonymous":
        require_identical(inst)
    costs = sample_costs(inst, samples, seed)
    res = _batch_for(inst, t, mech_kind, costs, price)

    def mstats(x):
        mean = float(np.mean(x))
        if samples > 1:
            err = float(np.std(x, ddof=1) / math.sqrt(samples))
        else:
            err = 0.0
        return mean, err

    pr, pr_e = mstats(res.principal)
    im, im_e = mstats(res.intermediary)
    ag = []
    ag_e = []
    for i in range(inst.n):
        m_, e_ = mstats(res.agent_util[i])
        ag.append(m_)
        ag_e.append(e_)
    return UtilityEstimate(principal=pr, intermediary=im, agents=tuple(ag),
                           principal_stderr=pr_e, intermediary_stderr=im_e,
                           agents_stderr=tuple(ag_e), samples=samples,
                           seed=seed, mech_kind=mech_kind)


def audit_incentives(mech_kind: str, inst: MarketInstance, t: Contract,
                     misreport_grid: int = 50, samples: int = 200,
                     seed: int = 0, price: Optional[float] = None) -> AuditReport:
    """Sweep misreports against sampled profiles and measure truthfulness.

    For every sampled profile and agent, each grid report (plus the true
    cost) replaces the agent's report while her utility is evaluated at the
    true cost.  Reported violations are signed: the largest utility gain
    from deviating and the largest individual-rationality shortfall.
    """
    if misreport_grid < 10 or samples < 1:
        raise BadParams("need misreport_grid >= 10 and samples >= 1")
    if mech_kind == "vwm":
        inst.require_regular()
    if mech_kind == "anonymous" and price is None:
        price = optimal_anonymous_price(inst, t)

    costs = sample_costs(inst, samples, seed)
    truth = _batch_for(inst, t, mech_kind, costs, price)

    max_dsic = -math.inf
    max_ir = -math.inf
    for i in range(inst.n):
        g = inst.agents[i].cost_dist
        grid = np.linspace(g.support_lo, g.support_hi, misreport_grid)
        R = misreport_grid + 1
        reports = np.empty((samples, R))
        reports[:, :misreport_grid] = grid[None, :]
        reports[:, misreport_grid] = costs[i]

        dev_costs = np.repeat(costs, R, axis=1)
        dev_costs[i] = reports.reshape(-1)
        true_rep = np.repeat(costs, R, axis=1)
        dev = _batch_for(inst, t, mech_kind, dev_costs, price,
                         true_costs=true_rep)
        dev_util = dev.agent_util[i].reshape(samples, R)
        truth_util = truth.agent_util[i]
        max_dsic = max(max_dsic, float((dev_util - truth_util[:, None]).max()))
        max_ir = max(max_ir, float((-truth_util).max()))
    return AuditReport(max_dsic_violation=max_dsic, max_ir_violation=max_ir,
                       mech_kind=mech_kind, samples=samples,
                       misreport_grid=misreport_grid, seed=seed)
