"""Command-line front end.

Subcommands map one-to-one onto library calls: distribution analytics,
contract optimisation (known or unknown market size), Monte-Carlo
simulation, benchmark ratios, axis sweeps, bound tables, and canned
reproduction targets.  Every output embeds a reproducibility manifest
(seed, library version, estimator kinds, sample counts) and all randomised
paths are bit-reproducible for a fixed ``--seed``.

Exit codes: 0 success, 2 validation error, 3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__, benchmarks, contract as contract_mod, dist_core
from .dist_catalog import (
    from_json as dist_from_json,
    make_cond_exponential,
    make_staircase,
    make_trunc_equal_revenue,
    make_uniform,
)
from .errors import BadParams, NonConvergence, TripartyError
from .mechanism import (
    Agent,
    Contract,
    MarketInstance,
    audit_incentives,
    optimal_anonymous_price,
    simulate_market,
)

REPRODUCE_TARGETS = ("example1", "staircase", "condexp", "table4",
                     "appendixB", "asymptotic")


def _fmt(x) -> str:
    """15-significant-digit, locale-free decimal rendering."""
    if isinstance(x, float):
        return f"{x:.15g}"
    return str(x)


def _manifest(args, extra=None) -> dict:
    out = {
        "library_version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "samples": getattr(args, "samples", None),
        "conventions": {"right_atom_virtual_value": "support_hi"},
    }
    if extra:
        out.update(extra)
    return out


def _emit(args, payload: dict, csv_rows=None, csv_header=None,
          csv_comments=()):
    """Write the report as JSON or CSV to ``--out`` (default stdout)."""
    fmt = getattr(args, "format", "json") or "json"
    if fmt == "csv":
        if csv_rows is None:
            raise BadParams(f"command '{args.command}' has no CSV form")
        lines = [f"# {c}" for c in csv_comments]
        lines.append(",".join(csv_header))
        for row in csv_rows:
            lines.append(",".join(_fmt(v) for v in row))
        text = "\n".join(lines) + "\n"
    else:
        text = json.dumps(payload, indent=1, sort_keys=True,
                          default=_fmt) + "\n"
    out = getattr(args, "out", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise BadParams(f"instance file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise BadParams(f"invalid JSON in {path}: {exc}") from exc


def _load_instance(args) -> MarketInstance:
    if not getattr(args, "instance", None):
        raise BadParams("this command requires --instance")
    return MarketInstance.from_json(_load_json(args.instance))


def _iid_view(inst: MarketInstance):
    """(F, r, n) of an ex-ante identical instance."""
    if not inst.is_identical():
        raise BadParams("this command requires ex-ante identical agents")
    return inst.contribution_dist(0), float(inst.r_vec[0]), inst.n


def _parse_range(spec: str, integer: bool):
    """Parse ``lo:hi[:step]`` into an inclusive monotone list."""
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise BadParams(f"range must be lo:hi[:step], got '{spec}'")
    try:
        lo = float(parts[0])
        hi = float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError as exc:
        raise BadParams(f"non-numeric range '{spec}'") from exc
    if step <= 0.0 or hi < lo:
        raise BadParams(f"range must be non-empty and increasing: '{spec}'")
    vals = []
    k = 0
    while True:
        v = lo + k * step
        if v > hi + 1e-12 * max(1.0, abs(hi)):
            break
        vals.append(v)
        k += 1
    if integer:
        ivals = [int(round(v)) for v in vals]
        if any(abs(v - i) > 1e-9 for v, i in zip(vals, ivals)):
            raise BadParams(f"range '{spec}' must contain integers")
        return ivals
    return vals


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("WORKBENCH_THREADS", "1")))
    except ValueError:
        return 1


def _contract_from_args(args, inst) -> Contract:
    if getattr(args, "transfers", None):
        parts = tuple(float(v) for v in args.transfers.split(","))
        return Contract(transfers=parts)
    alpha = getattr(args, "alpha", None)
    if alpha is None:
        raise BadParams("specify --alpha or --transfers")
    return Contract.linear(alpha)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_dist_analyze(args) -> int:
    d = dist_from_json(_load_json(args.instance))
    cls = dist_core.classify(d)
    theta, rstar = dist_core.monopoly_point(d)
    payload = {
        "distribution": d.to_json(),
        "classification": {"regular": cls.regular, "mhr": cls.mhr,
                           "check_grid_size": cls.check_grid_size,
                           "tolerance": cls.tolerance},
        "monopoly_reserve": theta,
        "monopoly_revenue": rstar,
        "manifest": _manifest(args, {"estimators": {"method": "closed_form"}}),
    }
    _emit(args, payload)
    return 0


def cmd_contract_optimize(args) -> int:
    inst = _load_instance(args)
    scenario = args.scenario
    if scenario == "auto":
        if inst.is_identical():
            scenario = "iid"
        elif all(abs(r - inst.r_vec[0]) < 1e-12 for r in inst.r_vec):
            scenario = "identical-reward"
        else:
            scenario = "general"
    if scenario == "iid":
        F, r, n = _iid_view(inst)
        sol = contract_mod.optimize_contract_iid(F, r, n)
    elif scenario == "posted":
        F, r, n = _iid_view(inst)
        sol = contract_mod.optimize_contract_posted(F, r, n)
    elif scenario == "identical-reward":
        sol = contract_mod.optimize_contract_identical_reward(
            inst, mc_samples=args.samples, seed=args.seed)
    elif scenario == "general":
        sol = contract_mod.optimize_contract_general(
            inst, contract_mod.SearchConfig(mc_samples=args.samples,
                                            seed=args.seed))
    else:
        raise BadParams(f"unknown scenario '{args.scenario}'")
    payload = {
        "scenario": scenario,
        "solution": sol.to_json(),
        "manifest": _manifest(args, {"estimators": {"method": sol.estimator,
                                                    "stderr": sol.stderr}}),
    }
    _emit(args, payload)
    if not sol.converged:
        raise NonConvergence("contract search did not converge")
    return 0


def cmd_contract_robust(args) -> int:
    inst = _load_instance(args)
    F, r, n = _iid_view(inst)
    if not args.range:
        raise BadParams("contract-robust requires --range s:ell")
    vals = _parse_range(args.range, integer=True)
    s, ell = vals[0], vals[-1]
    design = contract_mod.robust_contract(F, r, s, ell, regime=args.regime)
    payload = {
        "design": design.to_json(),
        "manifest": _manifest(args, {"estimators": {"method": "closed_form"}}),
    }
    rows = [(n_, u, usb, ufb) for (n_, u, usb, ufb) in design.per_n]
    _emit(args, payload,
          csv_rows=rows,
          csv_header=["n", "utility", "u_sb", "u_fb"],
          csv_comments=[f"robust design alpha={_fmt(design.alpha)} "
                        f"regime={design.regime}",
                        "utility columns in money units"])
    return 0


def cmd_simulate(args) -> int:
    inst = _load_instance(args)
    t = _contract_from_args(args, inst)
    est = simulate_market(inst, t, mech_kind=args.mech, samples=args.samples,
                          seed=args.seed, price=args.price)
    audit = None
    if args.audit:
        audit = audit_incentives(args.mech, inst, t,
                                 misreport_grid=args.misreport_grid,
                                 samples=min(args.samples, 200),
                                 seed=args.seed, price=args.price)
    payload = {
        "estimate": est.to_json(),
        "contract": t.to_json(),
        "manifest": _manifest(args, {
            "estimators": {"method": "monte_carlo",
                           "samples": est.samples,
                           "stderr": est.principal_stderr}}),
    }
    if args.mech == "anonymous":
        payload["price"] = (args.price if args.price is not None
                            else optimal_anonymous_price(inst, t))
    if audit is not None:
        payload["audit"] = {
            "max_dsic_violation": audit.max_dsic_violation,
            "max_ir_violation": audit.max_ir_violation,
            "misreport_grid": audit.misreport_grid,
            "samples": audit.samples,
        }
    _emit(args, payload)
    return 0


def cmd_ratios(args) -> int:
    inst = _load_instance(args)
    F, r, n = _iid_view(inst)
    rep = benchmarks.ratios(F, r, n)
    payload = {
        "n": n, "r": r,
        "report": rep.to_json(),
        "manifest": _manifest(args, {"estimators": rep.estimators}),
    }
    _emit(args, payload,
          csv_rows=[(n, rep.u_fb, rep.u_sb, rep.u_star, rep.u_posted,
                     rep.podm, rep.poa, rep.podm_posted, rep.poa_posted)],
          csv_header=["n", "u_fb", "u_sb", "u_star", "u_posted", "podm",
                      "poa", "podm_posted", "poa_posted"],
          csv_comments=["utilities in money units; ratios dimensionless"])
    return 0


def cmd_table4(args) -> int:
    taus = benchmarks.load_taus(args.taus)
    rows = benchmarks.podm_upper_table(taus, args.n_max)
    payload = {
        "rows": [[n, b] for n, b in rows],
        "manifest": _manifest(args, {"taus_file": args.taus or "packaged",
                                     "estimators": {"method": "closed_form"}}),
    }
    _emit(args, payload, csv_rows=rows, csv_header=["n", "podm_upper_bound"],
          csv_comments=["delegation-loss upper bound for MHR contributions",
                        "bound = tau_n * Z_n((1-1/e)^(1/n)), dimensionless"])
    return 0


# -- sweeps -----------------------------------------------------------------

def _sweep_row_n(inst, n):
    F, r, _ = _iid_view(inst)
    rep = benchmarks.ratios(F, r, n)
    return (n, rep.u_fb, rep.u_sb, rep.u_star, rep.u_posted,
            rep.podm, rep.poa, rep.podm_posted, rep.poa_posted)


def _sweep_row_alpha(inst, alpha):
    F, r, n = _iid_view(inst)
    off = (1.0 - alpha) * r
    theta, _ = dist_core.monopoly_point(dist_core.shift_by_contract(F, off))
    z = min(max(off + theta, F.support_lo), F.support_hi)
    u = contract_mod.principal_utility_iid(F, r, n, z)
    return (alpha, z, u)


def _sweep_row_z(inst, z):
    F, r, n = _iid_view(inst)
    u = contract_mod.principal_utility_iid(F, r, n, z)
    return (z, float(F.virtual_at(z)), u)


def _sweep_row_kappa(inst, kappa):
    n = inst.n
    F = make_trunc_equal_revenue(1.0, kappa)
    rep = benchmarks.ratios(F, kappa, n)
    return (kappa, rep.u_fb, rep.u_sb, rep.u_star, rep.u_posted,
            rep.podm, rep.poa, rep.podm_posted, rep.poa_posted)


_SWEEPS = {
    "n": (_sweep_row_n, True,
          ["n", "u_fb", "u_sb", "u_star", "u_posted", "podm", "poa",
           "podm_posted", "poa_posted"],
          "benchmarks and ratios vs market size; utilities in money units"),
    "alpha": (_sweep_row_alpha, False,
              ["alpha", "threshold_z", "utility"],
              "principal utility vs linear share; money units"),
    "z": (_sweep_row_z, False,
          ["z", "virtual_value", "utility"],
          "pricing objective vs threshold; money units"),
    "kappa": (_sweep_row_kappa, False,
              ["kappa", "u_fb", "u_sb", "u_star", "u_posted", "podm", "poa",
               "podm_posted", "poa_posted"],
              "worst-case family (equal-revenue, truncated) vs support ratio"),
}


def cmd_sweep(args) -> int:
    inst = _load_instance(args)
    if args.axis not in _SWEEPS:
        raise BadParams(f"unknown sweep axis '{args.axis}'")
    row_fn, integer, header, comment = _SWEEPS[args.axis]
    values = _parse_range(args.range, integer=integer)
    if not values:
        raise BadParams("sweep range is empty")
    workers = min(_threads(), len(values))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda v: row_fn(inst, v), values))
    else:
        rows = [row_fn(inst, v) for v in values]
    rows.sort(key=lambda r: r[0])
    payload = {
        "axis": args.axis,
        "rows": [list(r) for r in rows],
        "header": header,
        "manifest": _manifest(args, {"estimators": {"method": "closed_form"},
                                     "threads": workers}),
    }
    _emit(args, payload, csv_rows=rows, csv_header=header,
          csv_comments=[comment, f"axis={args.axis} range={args.range}"])
    return 0


# -- reproduction targets ---------------------------------------------------

def _example1_instance() -> MarketInstance:
    return MarketInstance([4.0, 0.0],
                          [Agent((0.5, 0.5), make_uniform(0.0, 1.0)),
                           Agent((0.5, 0.5), make_uniform(0.0, 1.0))])


def _reproduce_example1(args) -> dict:
    inst = _example1_instance()
    F, r, n = _iid_view(inst)
    sol = contract_mod.optimize_contract_iid(F, r, n)
    rep = benchmarks.ratios(F, r, n)
    est = simulate_market(inst, sol.contract, "vwm",
                          samples=args.samples, seed=args.seed)
    return {
        "alpha_star": sol.alpha,
        "z_star": sol.threshold_z,
        "u_star": sol.utility,
        "u_fb": rep.u_fb,
        "u_sb": rep.u_sb,
        "poa": rep.poa,
        "podm": rep.podm,
        "u_posted": rep.u_posted,
        "mc_principal": est.principal,
        "mc_stderr": est.principal_stderr,
        "instance": inst.to_json(),
    }


def _reproduce_staircase(args) -> dict:
    rows = []
    for K in (4, 6, 10):
        st = make_staircase(K)
        r = (2.0 ** K) / math.log(2.0)
        sol = contract_mod.optimize_contract_iid(st, r, 1)
        usb = benchmarks.second_best(st, 1)
        rows.append({
            "K": K,
            "u_star": sol.utility,
            "u_star_formula": (2.0 - 2.0 ** (1 - K)) / K,
            "u_sb": usb,
            "podm": usb / sol.utility,
            "podm_formula": K / (2.0 - 2.0 ** (1 - K)),
        })
    return {"rows": rows}


def _reproduce_condexp(args) -> dict:
    r, n = 10.0, 2
    K = n ** (r + 1.0) / (1.0 - math.exp(-r))
    ce = make_cond_exponential(r, K)
    rep = benchmarks.ratios(ce, r, n)
    return {
        "r": r, "K": K, "n": n,
        "poa": rep.poa, "poa_limit": math.e ** 2,
        "podm": rep.podm, "podm_limit": math.e,
        "report": rep.to_json(),
    }


def _reproduce_table4(args) -> dict:
    taus = benchmarks.load_taus(args.taus)
    rows = benchmarks.podm_upper_table(taus, min(args.n_max, max(taus)))
    return {"rows": [[n, b] for n, b in rows]}


def _reproduce_appendix_b(args) -> dict:
    return benchmarks.nonmonotonicity_demo(samples=args.samples,
                                           seed=args.seed)


def _reproduce_asymptotic(args) -> dict:
    ce = make_cond_exponential(10.0, 2.0)
    f0 = float(ce.cdf(0.0))
    rows = []
    for n in (10, 100, 1000):
        rep = benchmarks.ratios(ce, 10.0, n)
        rows.append({"n": n, "poa": rep.poa,
                     "bound": benchmarks.asymptotic_poa_bound(n, f0)})
    return {"f0": f0, "rows": rows}


_REPRODUCERS = {
    "example1": _reproduce_example1,
    "staircase": _reproduce_staircase,
    "condexp": _reproduce_condexp,
    "table4": _reproduce_table4,
    "appendixB": _reproduce_appendix_b,
    "asymptotic": _reproduce_asymptotic,
}


def cmd_reproduce(args) -> int:
    if args.target not in _REPRODUCERS:
        raise BadParams(f"unknown reproduce target '{args.target}'; choose "
                        f"from {', '.join(REPRODUCE_TARGETS)}")
    payload = _REPRODUCERS[args.target](args)
    payload["manifest"] = _manifest(args, {"target": args.target})
    csv_rows = None
    csv_header = None
    if args.target == "table4":
        csv_rows = [tuple(r) for r in payload["rows"]]
        csv_header = ["n", "podm_upper_bound"]
    _emit(args, payload, csv_rows=csv_rows, csv_header=csv_header,
          csv_comments=[f"reproduce {args.target}"])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="triparty",
        description="Contract and mechanism analytics for "
                    "principal-intermediary-agent markets.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, instance=True):
        if instance:
            sp.add_argument("--instance", help="instance JSON path")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--samples", type=int, default=100_000)
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")

    sp = sub.add_parser("dist-analyze", help="classify a distribution and "
                        "report its monopoly point")
    common(sp)
    sp.set_defaults(fn=cmd_dist_analyze)

    sp = sub.add_parser("contract-optimize", help="solve for the optimal "
                        "contract")
    common(sp)
    sp.add_argument("--scenario", default="auto",
                    choices=("auto", "iid", "posted", "identical-reward",
                             "general"))
    sp.set_defaults(fn=cmd_contract_optimize)

    sp = sub.add_parser("contract-robust", help="design for an unknown "
                        "market size in --range s:ell")
    common(sp)
    sp.add_argument("--range", help="market size range s:ell")
    sp.add_argument("--regime", default=contract_mod.REGIME_REGULAR_ELL,
                    choices=(contract_mod.REGIME_REGULAR_ELL,
                             contract_mod.REGIME_MHR_S))
    sp.set_defaults(fn=cmd_contract_robust)

    sp = sub.add_parser("simulate", help="Monte-Carlo market simulation")
    common(sp)
    sp.add_argument("--mech", default="vwm",
                    choices=("vwm", "anonymous", "first_price",
                             "second_price_always", "never_assign"))
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--transfers", help="comma-separated transfer vector")
    sp.add_argument("--price", type=float, help="posted price (anonymous)")
    sp.add_argument("--audit", action="store_true",
                    help="also run an incentive audit")
    sp.add_argument("--misreport-grid", type=int, default=50)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("ratios", help="benchmarks and efficiency ratios")
    common(sp)
    sp.set_defaults(fn=cmd_ratios)

    sp = sub.add_parser("table4", help="delegation-loss bound table for MHR "
                        "contributions")
    common(sp, instance=False)
    sp.add_argument("--taus", help="tau data file (default: packaged)")
    sp.add_argument("--n-max", type=int, default=44, dest="n_max")
    sp.set_defaults(fn=cmd_table4)

    sp = sub.add_parser("sweep", help="write one row per axis value")
    common(sp)
    sp.add_argument("--axis", required=True,
                    choices=("n", "alpha", "z", "kappa"))
    sp.add_argument("--range", required=True, help="lo:hi[:step]")
    sp.set_defaults(fn=cmd_sweep)

    sp = sub.add_parser("reproduce", help="canned reproduction targets: "
                        + ", ".join(REPRODUCE_TARGETS))
    sp.add_argument("target")
    common(sp, instance=False)
    sp.add_argument("--taus", help="tau data file (default: packaged)")
    sp.add_argument("--n-max", type=int, default=44, dest="n_max")
    sp.set_defaults(fn=cmd_reproduce)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NonConvergence as exc:
        sys.stderr.write(json.dumps(
            {"error": "non_convergence", "message": str(exc)}) + "\n")
        return 3
    except TripartyError as exc:
        sys.stderr.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 2
    except OSError as exc:
        sys.stderr.write(json.dumps(
            {"error": "io_error", "message": str(exc)}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
