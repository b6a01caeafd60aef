"""First-best and second-best benchmarks, efficiency ratios, harmonic
machinery, the MHR pricing-ratio bound table, and the mechanism-space
non-monotonicity demonstration.

Benchmarks compare the principal's delegated utility against direct access
to the agents:

* first best   ``U_fb = E[(max_i w_i)^+]``  (full information),
* second best  ``U_sb = E[max_i (phi(w_i))^+]``  (optimal direct mechanism).

``PoDM = U_sb / U*`` isolates the delegation loss; ``PoA = U_fb / U*`` adds
the information-asymmetry loss.  Posted variants divide by the anonymous
pricing optimum instead.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Optional

import numpy as np
from scipy import integrate

from .contract import optimize_contract_iid, optimize_contract_posted
from .dist_core import Distribution, classify, monopoly_point, power
from .errors import BadParams, MissingTau, NotRegular, UnboundedSupport
from .mechanism import Agent, Contract, MarketInstance, simulate_market

# Anonymous pricing is an e/(e-1)-approximation to the optimal auction for
# i.i.d. regular buyers; under MHR the tight constant is 1.2683.
ETA = math.e / (math.e - 1.0)
MHR_PRICING_RATIO = 1.2683

_QUAD_OPTS = dict(epsabs=1e-12, epsrel=1e-12, limit=500)
_FB_CAP = 1e6


@dataclass(frozen=True)
class RatioReport:
    """Benchmarks, optima and all four efficiency ratios for one instance."""

    u_fb: float
    u_sb: float
    u_star: float
    u_posted: float
    podm: float
    poa: float
    podm_posted: float
    poa_posted: float
    estimators: dict

    def to_json(self) -> dict:
        return {
            "u_fb": self.u_fb, "u_sb": self.u_sb,
            "u_star": self.u_star, "u_posted": self.u_posted,
            "podm": self.podm, "poa": self.poa,
            "podm_posted": self.podm_posted, "poa_posted": self.poa_posted,
            "estimators": self.estimators,
        }


@dataclass(frozen=True)
class OrderStatSummary:
    n: int
    mu: float
    method: str      # closed_form | quadrature | monte_carlo


def _survival_power(F: Distribution, n: int):
    return power(F, n).sf_at


def first_best(F: Distribution, n: int) -> float:
    """``E[(max of n draws)^+] = integral of 1 - F^n over the positive axis``."""
    if n < 1:
        raise BadParams("n must be >= 1")
    lo = max(F.support_lo, 0.0)
    hi = F.support_hi
    if math.isinf(hi):
        hi = _FB_CAP
        if float(_survival_power(F, n)(hi)) > 1e-12:
            raise UnboundedSupport("first-best mass remains beyond the cap")
    if hi <= lo:
        return 0.0
    surv = _survival_power(F, n)
    pts = [b for b in F.breakpoints if lo < b < hi]
    val, _ = integrate.quad(lambda z: float(surv(z)), lo, hi,
                            points=pts or None, **_QUAD_OPTS)
    return float(val + lo)      # contributions below lo survive with prob. 1


def second_best(F: Distribution, n: int) -> float:
    """Expected revenue of the optimal direct mechanism,
    ``E[max_i (phi(w_i))^+]`` for ``n`` i.i.d. draws."""
    if n < 1:
        raise BadParams("n must be >= 1")
    if not classify(F).regular:
        raise NotRegular("second best requires a regular distribution")
    lo, hi = F.support_lo, F.support_hi
    theta, _ = monopoly_point(F)
    pw = power(F, n)

    def integrand(z):
        phi = float(F.virtual_at(z))
        if phi <= 0.0:
            return 0.0
        return phi * float(pw.pdf(z))

    pts = sorted({theta, *[b for b in F.breakpoints if lo < b < hi]})
    pts = [p for p in pts if lo < p < hi]
    val, _ = integrate.quad(integrand, lo, hi, points=pts or None, **_QUAD_OPTS)
    atom_mass = float(pw.sf_at(hi)) if F.right_atom > 0.0 else 0.0
    if atom_mass > 0.0 and hi > 0.0:
        val += hi * atom_mass
    return float(val)


def ratios(F: Distribution, r: float, n: int) -> RatioReport:
    """Assemble both benchmarks, both optima, and the four ratios."""
    u_fb = first_best(F, n)
    u_sb = second_best(F, n)
    star = optimize_contract_iid(F, r, n)
    posted = optimize_contract_posted(F, r, n)
    u_star = star.utility
    u_posted = posted.utility

    def ratio(num, den):
        return math.inf if den <= 0.0 else num / den

    return RatioReport(
        u_fb=u_fb, u_sb=u_sb, u_star=u_star, u_posted=u_posted,
        podm=ratio(u_sb, u_star), poa=ratio(u_fb, u_star),
        podm_posted=ratio(u_sb, u_posted), poa_posted=ratio(u_fb, u_posted),
        estimators={
            "u_fb": {"method": "quadrature"},
            "u_sb": {"method": "quadrature"},
            "u_star": {"method": "closed_form"},
            "u_posted": {"method": "closed_form"},
        })


# ---------------------------------------------------------------------------
# Harmonic machinery
# ---------------------------------------------------------------------------

def harmonic(n: int) -> float:
    """n-th harmonic number; exact rational summation for small ``n``."""
    if n < 0:
        raise BadParams("harmonic number needs n >= 0")
    if n <= 128:
        return float(sum(Fraction(1, k) for k in range(1, n + 1)))
    return math.fsum(1.0 / k for k in range(1, n + 1))


def h_hat(n: int, t: float) -> float:
    """Diluted harmonic sum ``sum_{k<=n} (1 - (1-t)^k) / k``.

    Equals the integral of ``(1 - (t z + 1 - t)^n) / (1 - z)`` over [0, 1];
    the telescoping sum avoids the removable singularity at ``z = 1``.
    """
    if n < 0:
        raise BadParams("h_hat needs n >= 0")
    if not 0.0 <= t <= 1.0:
        raise BadParams("t must lie in [0, 1]")
    if n == 0 or t == 0.0:
        return 0.0
    k = np.arange(1, n + 1, dtype=float)
    if t >= 1.0:
        terms = 1.0 / k
    else:
        terms = -np.expm1(k * math.log1p(-t)) / k
    return float(math.fsum(terms))


def fb_exponential_mixture(F0: float, n: int) -> float:
    """First-best benchmark when the positive part of the contribution is a
    standard exponential and ``P(w <= 0) = F0``."""
    if not 0.0 <= F0 < 1.0:
        raise BadParams("F0 must lie in [0, 1)")
    if n < 1:
        raise BadParams("n must be >= 1")
    return h_hat(n, 1.0 - F0)


def first_order_stat_mean(F: Distribution, n: int) -> OrderStatSummary:
    """Expectation of the maximum of ``n`` i.i.d. draws (quadrature)."""
    if n < 1:
        raise BadParams("n must be >= 1")
    surv = _survival_power(F, n)
    lo, hi = F.support_lo, F.support_hi
    pts = [b for b in F.breakpoints if lo < b < hi]
    val, _ = integrate.quad(lambda z: float(surv(z)), lo, hi,
                            points=pts or None, **_QUAD_OPTS)
    return OrderStatSummary(n=int(n), mu=float(lo + val), method="quadrature")


# ---------------------------------------------------------------------------
# MHR bound table and asymptotics
# ---------------------------------------------------------------------------

def z_factor(n: int, z: float) -> float:
    """``Z_n(z) = (1 - z^n) / (1 - (1 - (1-z)/e)^n)``, evaluated stably."""
    if n < 1:
        raise BadParams("n must be >= 1")
    if not 0.0 <= z < 1.0:
        raise BadParams("z must lie in [0, 1)")
    if z == 0.0:
        num = 1.0
    else:
        num = -math.expm1(n * math.log(z))
    den = -math.expm1(n * math.log1p(-(1.0 - z) / math.e))
    return num / den


def load_taus(path: Optional[str] = None) -> dict:
    """Per-n tight pricing ratios ``tau_n`` (optimal auction over anonymous
    pricing, i.i.d. MHR buyers), keyed by integer ``n``.

    These are external inputs quoted from the anonymous-pricing
    approximation literature; the library never claims to derive them.
    """
    if path is None:
        blob = resources.files("triparty").joinpath("data/taus.json").read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            blob = fh.read()
    obj = json.loads(blob)
    values = obj["values"] if isinstance(obj, dict) and "values" in obj else obj
    return {int(k): float(v) for k, v in values.items()}


def podm_upper_table(taus: dict, n_max: int):
    """Rows ``(n, tau_n * Z_n((1 - 1/e)^(1/n)))`` for ``n = 2 .. n_max``.

    This is the delegation-loss upper bound for MHR contribution
    distributions as a function of market size.
    """
    if n_max < 2:
        raise BadParams("n_max must be >= 2")
    rows = []
    base = 1.0 - 1.0 / math.e
    for n in range(2, n_max + 1):
        if n not in taus:
            raise MissingTau(f"no tau value for n={n}")
        z = base ** (1.0 / n)
        rows.append((n, taus[n] * z_factor(n, z)))
    return rows


def asymptotic_poa_bound(n: int, F0: float) -> float:
    """Market-size-dependent upper bound on the efficiency ratios for MHR
    contributions; decreases toward 1 as the market grows."""
    if n < 1:
        raise BadParams("n must be >= 1")
    if not 0.0 <= F0 < 1.0:
        raise BadParams("F0 must lie in [0, 1)")
    hn = harmonic(n)
    first = 1.0 if n == 1 else 1.0 / (1.0 - math.log(hn) / hn)
    inner = (1.0 - F0) / math.exp(hn - math.log(hn) + 1.0)
    second = 1.0 / (-math.expm1(n * math.log1p(-inner)))
    return first * second


# ---------------------------------------------------------------------------
# Mechanism-space non-monotonicity demo
# ---------------------------------------------------------------------------

def nonmonotonicity_demo(samples: int = 200_000, seed: int = 0) -> dict:
    """Principal's utility against intermediaries with nested mechanism
    spaces need not be monotone in the space.

    On a two-agent binary-outcome instance, a restricted intermediary that
    never assigns is strictly worse for the principal than the unrestricted
    one, while a restricted intermediary locked into always assigning at
    the second-lowest cost is strictly better.
    """
    from .dist_catalog import make_uniform

    inst = MarketInstance([4.0, 0.0], [Agent((0.5, 0.5), make_uniform(0.0, 1.0)),
                                       Agent((0.5, 0.5), make_uniform(0.0, 1.0))])
    F = inst.contribution_dist(0)
    r = float(inst.r_vec[0])

    unrestricted = optimize_contract_iid(F, r, inst.n)

    # never-assign intermediary: zero utility under every contract
    never = simulate_market(inst, Contract.linear(0.5), "never_assign",
                            samples=1, seed=seed)

    # always-assign second-price intermediary: utility (1 - alpha) r, so the
    # principal keeps everything as alpha -> 0
    always = simulate_market(inst, Contract.linear(0.0), "second_price_always",
                             samples=samples, seed=seed)

    return {
        "instance": inst.to_json(),
        "u_unrestricted": unrestricted.utility,
        "u_never_assign": never.principal,
        "u_second_price_always": always.principal,
        "u_second_price_always_stderr": always.principal_stderr,
        "never_worse_than_unrestricted":
            never.principal < unrestricted.utility,
        "always_better_than_unrestricted":
            always.principal > unrestricted.utility,
        "samples": samples,
        "seed": seed,
    }
