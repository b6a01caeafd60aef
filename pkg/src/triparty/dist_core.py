"""Single-distribution analytics: hazard rates, virtual values, revenue
curves, monopoly reserves, regularity/MHR classification, order-statistic
powers and contract shifts.

A :class:`Distribution` bundles vectorised closures for the CDF, the density
and the survival function together with the support and an optional
point-mass at the right endpoint.  All operations in this module are pure
functions of immutable distribution values and are safe to call
concurrently.

Conventions
-----------
* ``sf(z)`` is the *left-limit* survival function ``P(v >= z)``.  In the
  interior it coincides with ``1 - cdf(z)``; at a right-endpoint atom it
  returns the atom mass instead of zero.
* At a right-endpoint atom the virtual value is defined as the endpoint
  itself (selling exactly at the endpoint keeps the atom revenue).  This
  convention is flagged as ``atom_virtual_value`` in serialised reports.
* The density is evaluated right-continuously; at kinks the virtual value
  may jump upward, which is harmless for non-decreasing virtual values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    BadParams,
    NotRegular,
    OutOfSupport,
    SaturatedCdf,
    UnboundedSupport,
    ZeroDensity,
)

# Numerical policy shared by the searches below.
CLASSIFY_GRID = 4096
CLASSIFY_TOL = 1e-9
MONOPOLY_GRID = 4096
MONOPOLY_ZTOL = 1e-10
MONOPOLY_VTOL = 1e-15
SEARCH_CAP = 1e6
BISECT_ITERS = 100

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


@dataclass(frozen=True, eq=False)
class Distribution:
    """A contribution (or cost) distribution on a single interval.

    Any probability mass sits at the right endpoint only.  The closures
    accept scalars or numpy arrays and must be pure.
    """

    cdf: Callable
    pdf: Callable
    support_lo: float
    support_hi: float
    right_atom: float = 0.0
    sf: Optional[Callable] = None          # P(v >= z); exact when supplied
    ppf: Optional[Callable] = None         # quantile: inf{z : cdf(z) >= q}
    virtual: Optional[Callable] = None     # exact virtual value, if known
    breakpoints: tuple = ()                # interior kinks, sorted ascending
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    capped: bool = False                   # support was truncated at a cap

    def __post_init__(self):
        if not self.support_lo < self.support_hi and not (
            self.support_lo == self.support_hi and self.right_atom == 1.0
        ):
            raise BadParams("support must be a non-empty interval")
        if not 0.0 <= self.right_atom <= 1.0:
            raise BadParams("right_atom must lie in [0, 1]")

    # -- evaluation helpers -------------------------------------------------

    def cdf_at(self, z):
        return self.cdf(z)

    def sf_at(self, z):
        """Survival P(v >= z), honouring a right-endpoint atom."""
        if self.sf is not None:
            return self.sf(z)
        z = np.asarray(z, dtype=float)
        out = 1.0 - self.cdf(z)
        if self.right_atom > 0.0:
            out = np.where(z == self.support_hi, self.right_atom, out)
        out = np.where(z > self.support_hi, 0.0, out)
        out = np.where(z <= self.support_lo, 1.0, out)
        return out if out.ndim else float(out)

    def pdf_at(self, z):
        return self.pdf(z)

    def quantile(self, q):
        """Generalised inverse ``inf{z : cdf(z) >= q}``."""
        if self.ppf is not None:
            return self.ppf(q)
        return _bisect_quantile(self, q)

    def virtual_at(self, z):
        """Virtual value with the right-endpoint conventions applied."""
        if self.virtual is not None:
            return self.virtual(z)
        z = np.asarray(z, dtype=float)
        sf = np.asarray(self.sf_at(z), dtype=float)
        den = np.asarray(self.pdf(z), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = z - np.where(den > 0.0, sf / np.where(den > 0.0, den, 1.0), np.inf)
        out = np.where(z >= self.support_hi, self.support_hi, out)
        return out if out.ndim else float(out)

    def key(self):
        """Structural identity used for equality and caching."""
        return (
            self.kind,
            _freeze(self.params),
            self.support_lo,
            self.support_hi,
            self.right_atom,
        )

    def same_as(self, other: "Distribution") -> bool:
        return self.key() == other.key()

    def grid(self, size: int, pad: float = 0.0):
        """Evaluation mesh over the support including interior kinks."""
        lo, hi = self.support_lo, self.support_hi
        span = hi - lo
        pts = np.linspace(lo + pad * span, hi - pad * span, size)
        if self.breakpoints:
            pts = np.union1d(pts, np.asarray(self.breakpoints, dtype=float))
        return pts

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "params": dict(self.params),
            "support": [self.support_lo, self.support_hi],
            "right_atom": self.right_atom,
        }


def _freeze(obj):
    if isinstance(obj, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in obj.items()))
    if isinstance(obj, (list, tuple)):
        return tuple(_freeze(v) for v in obj)
    if isinstance(obj, Distribution):
        return obj.key()
    return obj


@dataclass(frozen=True)
class DistClass:
    """Sampling-based regularity/MHR classification (not a proof)."""

    regular: bool
    mhr: bool
    check_grid_size: int
    tolerance: float


def _bisect_quantile(d: Distribution, q):
    q = np.asarray(q, dtype=float)
    lo = np.full(q.shape, d.support_lo)
    hi = np.full(q.shape, d.support_hi)
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        below = d.cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return hi if hi.ndim else float(hi)


# ---------------------------------------------------------------------------
# Point operations
# ---------------------------------------------------------------------------

def virtual_value(d: Distribution, z: float) -> float:
    """Virtual value ``z - (1 - F(z)) / f(z)``.

    At a right-endpoint atom the hazard term vanishes by convention and the
    endpoint itself is returned.
    """
    if z < d.support_lo or z > d.support_hi:
        raise OutOfSupport(f"z={z} outside support [{d.support_lo}, {d.support_hi}]")
    if z >= d.support_hi:
        return float(d.support_hi)
    if d.virtual is not None:
        return float(d.virtual(z))
    den = float(d.pdf(z))
    sf = float(d.sf_at(z))
    if den <= 0.0:
        if sf <= 0.0:
            return float(z)
        raise ZeroDensity(f"pdf vanishes at interior point z={z}")
    return float(z - sf / den)


def hazard_profile(d: Distribution, z: float) -> tuple:
    """Hazard rate ``f/(1-F)`` and cumulative hazard ``-ln(1-F)`` at ``z``.

    The cumulative hazard comes straight from the survival function, not
    from quadrature of the hazard rate.
    """
    if z < d.support_lo or z > d.support_hi:
        raise OutOfSupport(f"z={z} outside support [{d.support_lo}, {d.support_hi}]")
    sf = float(d.sf_at(z)) if z < d.support_hi else 0.0
    if sf <= 0.0:
        raise SaturatedCdf(f"cdf saturates at z={z}")
    h = float(d.pdf(z)) / sf
    return h, -math.log(sf)


def revenue_curve(d: Distribution, q: float) -> float:
    """Revenue curve ``R(q) = q * F^{-1}(1 - q)`` with ``R(0) = 0``."""
    if not 0.0 <= q <= 1.0:
        raise BadParams(f"quantile q={q} outside [0, 1]")
    if q == 0.0:
        return 0.0
    return float(q) * float(d.quantile(1.0 - q))


def _revenue_at(d: Distribution, p):
    """Posted-price revenue ``p * P(v >= p)``."""
    return np.asarray(p, dtype=float) * np.asarray(d.sf_at(p), dtype=float)


def monopoly_point(d: Distribution, search_cap: float = SEARCH_CAP):
    """Largest maximiser and maximum of the posted-price revenue.

    A coarse grid brackets every local maximum (kinks included as explicit
    candidates), golden-section refines each bracket, and value ties are
    broken toward the largest price.
    """
    lo, hi = d.support_lo, d.support_hi
    capped = False
    if math.isinf(hi):
        hi = max(search_cap, lo + 1.0)
        capped = True
    xs = np.linspace(lo, hi, MONOPOLY_GRID)
    if d.breakpoints:
        bp = np.asarray([b for b in d.breakpoints if lo <= b <= hi], dtype=float)
        xs = np.union1d(xs, bp)
    vals = _revenue_at(d, xs)

    best_z, best_v = _refine_maximum(lambda p: float(_revenue_at(d, p)), xs, vals)
    if capped:
        at_cap = best_z >= hi - max(1e-6 * (hi - lo), MONOPOLY_ZTOL)
        rev_cap = float(_revenue_at(d, hi))
        if at_cap or rev_cap >= best_v - 1e-6 * max(1.0, abs(best_v)):
            raise UnboundedSupport(
                f"revenue has not decayed by the search cap {hi:g}; "
                "no maximum attained")
    return best_z, best_v


def _refine_maximum(fn, xs, vals, ztol: float = MONOPOLY_ZTOL,
                    vtol: float = MONOPOLY_VTOL):
    """Golden-section refinement of every grid-local maximum of ``fn``.

    A parabolic polish sharpens smooth interior maxima past the value-noise
    plateau of golden section; the largest argument wins among value-ties
    (relative tie window ``vtol``).
    """
    n = len(xs)
    vals = np.where(np.isnan(vals), -np.inf, np.asarray(vals, dtype=float))
    finite = vals[np.isfinite(vals)]
    scale = max(1.0, float(np.max(np.abs(finite))) if len(finite) else 1.0)

    # structural candidates: the evaluation mesh itself (grid points, kinks,
    # endpoints); plateau ties resolve toward the largest argument
    vmax = float(np.max(vals))
    tie = 1e-12 * scale
    plateau = np.flatnonzero(vals >= vmax - tie)
    s_z, s_v = float(xs[plateau[-1]]), float(vals[plateau[-1]])

    # refined candidates: golden section plus a parabolic polish per bracket;
    # these replace the structural answer only on a strict improvement
    refine = set(int(i) for i in np.argsort(vals)[-4:])
    refine.update(
        i for i in range(1, n - 1)
        if vals[i] >= vals[i - 1] and vals[i] >= vals[i + 1]
    )
    r_z, r_v = None, -math.inf
    for i in sorted(refine)[:64]:
        a = float(xs[max(i - 1, 0)])
        b = float(xs[min(i + 1, n - 1)])
        if b - a <= ztol:
            continue
        z, v = _golden_max(fn, a, b, ztol)
        polished = _parabolic_polish(fn, z, a, b)
        # a vertex whose value ties within roundoff is the sharper argmax
        if polished is not None and polished[1] >= v - 1e-13 * scale:
            z, v = polished[0], max(polished[1], v)
        if v > r_v:
            r_z, r_v = z, v

    if r_z is not None and r_v > s_v + vtol * scale:
        return r_z, r_v
    return s_z, s_v


def _parabolic_polish(fn, z: float, lo: float, hi: float):
    """One quadratic-fit step around ``z``; None when the fit is unusable.

    Golden section stalls once value differences sink below roundoff; a
    parabola through wider-spaced samples recovers several more digits of
    the argmax for smooth maxima.
    """
    h = max(1e-5 * max(abs(hi - lo), 1.0), 1e-9)
    if z - h < lo or z + h > hi:
        return None
    va, v0, vb = fn(z - h), fn(z), fn(z + h)
    curv = va - 2.0 * v0 + vb
    if not curv < 0.0:
        return None
    step = 0.5 * h * (va - vb) / curv
    step = min(max(step, -h), h)
    znew = z + step
    return znew, fn(znew)


def _golden_max(fn, a: float, b: float, ztol: float):
    """Golden-section search for a maximum of ``fn`` on ``[a, b]``."""
    h = b - a
    if h <= ztol:
        z = 0.5 * (a + b)
        return z, fn(z)
    steps = max(1, int(math.ceil(math.log(ztol / h) / math.log(_INV_PHI))))
    c = a + _INV_PHI2 * h
    e = a + _INV_PHI * h
    yc, ye = fn(c), fn(e)
    for _ in range(steps):
        if yc > ye:
            b, e, ye = e, c, yc
            h *= _INV_PHI
            c = a + _INV_PHI2 * h
            yc = fn(c)
        else:
            a, c, yc = c, e, ye
            h *= _INV_PHI
            e = a + _INV_PHI * h
            ye = fn(e)
    z = c if yc > ye else e
    return z, max(yc, ye)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

_CLASSIFY_CACHE: dict = {}


def classify(d: Distribution, grid: int = CLASSIFY_GRID,
             tol: float = CLASSIFY_TOL) -> DistClass:
    """Numerically classify regularity and MHR on a mesh.

    This is a sampling-based check, not a proof: a distribution that
    violates monotonicity between mesh points can be misclassified.
    """
    if grid < 2:
        raise BadParams("classification grid must have at least 2 points")
    if d.support_lo == d.support_hi:
        return DistClass(True, True, grid, tol)
    cache_key = (d.key(), int(grid), float(tol))
    hit = _CLASSIFY_CACHE.get(cache_key)
    if hit is not None:
        return hit

    pts = d.grid(grid)
    pts = pts[pts < d.support_hi]
    phi = np.asarray(d.virtual_at(pts), dtype=float)
    regular = bool(np.all(np.diff(phi) >= -tol))
    sf = np.asarray(d.sf_at(pts), dtype=float)
    pdf = np.asarray(d.pdf(pts), dtype=float)
    ok = sf > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        haz = np.where(ok, pdf / np.where(ok, sf, 1.0), np.nan)
    haz = haz[np.isfinite(haz)]
    mhr = bool(len(haz) > 1 and np.all(np.diff(haz) >= -tol))
    if mhr and not regular:
        raise AssertionError("classification produced MHR without regularity")
    result = DistClass(regular=regular, mhr=mhr, check_grid_size=int(grid),
                       tolerance=float(tol))
    if len(_CLASSIFY_CACHE) >= 4096:
        _CLASSIFY_CACHE.clear()
    _CLASSIFY_CACHE[cache_key] = result
    return result


def require_regular(d: Distribution):
    if not classify(d).regular:
        raise NotRegular(f"distribution {d.kind} failed regularity classification")


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------

def power(d: Distribution, n: int) -> Distribution:
    """Distribution of the maximum of ``n`` i.i.d. draws (CDF ``F^n``)."""
    if n < 1 or int(n) != n:
        raise BadParams("power exponent must be a positive integer")
    n = int(n)
    if n == 1:
        return d
    if d.kind == "power":
        return power(d.params["base"], n * d.params["n"])

    base_cdf, base_sf, base_pdf = d.cdf, d.sf_at, d.pdf
    hi = d.support_hi

    def cdf(z):
        return np.asarray(base_cdf(z), dtype=float) ** n

    def sf(z):
        s = np.asarray(base_sf(z), dtype=float)
        with np.errstate(divide="ignore"):
            out = -np.expm1(n * np.log1p(-np.minimum(s, 1.0)))
        out = np.where(s >= 1.0, 1.0, out)
        return out if out.ndim else float(out)

    def pdf(z):
        c = np.asarray(base_cdf(z), dtype=float)
        return n * c ** (n - 1) * np.asarray(base_pdf(z), dtype=float)

    ppf = None
    if d.ppf is not None:
        base_ppf = d.ppf

        def ppf(q):
            q = np.asarray(q, dtype=float)
            return base_ppf(q ** (1.0 / n))

    def virt(z):
        z = np.asarray(z, dtype=float)
        s = np.asarray(sf(z), dtype=float)
        den = np.asarray(pdf(z), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = z - np.where(den > 0.0, s / np.where(den > 0.0, den, 1.0), np.inf)
        out = np.where(z >= hi, hi, out)
        return out if out.ndim else float(out)

    if d.right_atom >= 1.0:
        atom = 1.0
    elif d.right_atom > 0.0:
        atom = float(-math.expm1(n * math.log1p(-d.right_atom)))
    else:
        atom = 0.0
    return Distribution(
        cdf=cdf, pdf=pdf, sf=sf, ppf=ppf, virtual=virt,
        support_lo=d.support_lo, support_hi=d.support_hi,
        right_atom=atom, breakpoints=d.breakpoints, kind="power",
        params={"base": d, "n": n}, capped=d.capped,
    )


def shift_by_contract(d: Distribution, offset: float) -> Distribution:
    """Contracted-contribution transform: ``cdf_out(z) = cdf_in(z + offset)``.

    The caller supplies ``offset = <1 - t, gamma>``; the support shifts left
    by the offset and virtual values satisfy
    ``phi_out(z) = phi_in(z + offset) - offset``.
    """
    offset = float(offset)
    if offset == 0.0:
        return d
    if d.kind == "shift":
        return shift_by_contract(d.params["base"], offset + d.params["offset"])

    base = d
    hi = d.support_hi - offset

    def cdf(z):
        return base.cdf(np.asarray(z, dtype=float) + offset)

    def pdf(z):
        return base.pdf(np.asarray(z, dtype=float) + offset)

    def sf(z):
        return base.sf_at(np.asarray(z, dtype=float) + offset)

    ppf = None
    if base.ppf is not None:
        def ppf(q):
            return np.asarray(base.ppf(q), dtype=float) - offset

    def virt(z):
        z = np.asarray(z, dtype=float)
        out = np.asarray(base.virtual_at(z + offset), dtype=float) - offset
        return out if out.ndim else float(out)

    return Distribution(
        cdf=cdf, pdf=pdf, sf=sf, ppf=ppf, virtual=virt,
        support_lo=d.support_lo - offset, support_hi=hi,
        right_atom=d.right_atom,
        breakpoints=tuple(b - offset for b in d.breakpoints),
        kind="shift", params={"base": d, "offset": offset}, capped=d.capped,
    )


def inverse_virtual_value(d: Distribution, v: float, tol: float = 1e-10) -> float:
    """Largest ``z`` in the support with ``phi(z) <= v``.

    Requires a regular distribution.  Values below the virtual-value range
    clamp to the support floor (thresholds never leave the support).
    """
    require_regular(d)
    a, b = d.support_lo, d.support_hi
    for _ in range(BISECT_ITERS):
        if b - a <= tol:
            break
        mid = 0.5 * (a + b)
        if virtual_value(d, mid) <= v:
            a = mid
        else:
            b = mid
    if virtual_value(d, b) <= v or (b == d.support_hi and
                                    virtual_value(d, b - min(tol, (b - a))) <= v):
        return float(b)
    return float(a)


def inverse_virtual_array(d: Distribution, v, tol: float = 1e-12):
    """Vectorised ``inverse_virtual_value`` (no per-call classification)."""
    v = np.asarray(v, dtype=float)
    a = np.full(v.shape, float(d.support_lo))
    b = np.full(v.shape, float(d.support_hi))
    span = d.support_hi - d.support_lo
    iters = max(1, int(math.ceil(math.log2(max(span / max(tol, 1e-300), 2.0)))) + 2)
    for _ in range(min(iters, BISECT_ITERS)):
        mid = 0.5 * (a + b)
        le = np.asarray(d.virtual_at(mid), dtype=float) <= v
        a = np.where(le, mid, a)
        b = np.where(le, b, mid)
    top = np.asarray(d.virtual_at(np.full(v.shape, d.support_hi)), dtype=float) <= v
    out = np.where(top, d.support_hi, a)
    return out if out.ndim else float(out)
