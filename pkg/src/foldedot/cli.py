"""Command-line front end.

Exit codes: 0 success, 2 parse or validation error, 3 suite failure,
4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .classical_ot import kantorovich_lp
from .convex_generic import HermiteTruncation, PhasePoint, gp_cost_eval, gp_folded_cost
from .errors import FoldedError, ValidationError
from .folded_core import (
    SolveConfig,
    as_density,
    chain_relax,
    folded_kantorovich_upper,
    norm_lower_bound,
    subadditivity_probe,
)
from .io import dump_report, read_cost, read_matrix, read_measure, states_payload
from .suites import random_density, run_suite

log = logging.getLogger("foldedot")

EXIT_OK, EXIT_INPUT, EXIT_SUITE, EXIT_INTERNAL = 0, 2, 3, 4


def _config(args) -> SolveConfig:
    return SolveConfig(p=args.p, metric=args.metric, restarts=args.restarts, seed=args.seed,
                       atom_budget=args.atom_budget, tol_value=args.tol, threads=args.threads)


def _density(path):
    return as_density(read_matrix(path))


def _plan_payload(plan):
    return {"weights": plan.weights, "left": states_payload(plan.left),
            "right": states_payload(plan.right), "objective": plan.value}


def _envelope(args, command, payload, started):
    manifest = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    return {
        "artifact": "foldedot",
        "version": __version__,
        "command": command,
        "manifest": manifest,
        "seed": args.seed,
        "result": payload,
        "timing": {"wall_clock_s": round(time.perf_counter() - started, 6),
                   "finished_utc": datetime.now(timezone.utc).isoformat(timespec="seconds")},
    }


def cmd_dist(args):
    rho, sigma = _density(args.rho), _density(args.sigma)
    cfg = _config(args)
    rep = folded_kantorovich_upper(rho, sigma, cfg)
    rl, rr = rep.plan.residuals(rho, sigma)
    out = {
        "value": rep.value,
        "plan": _plan_payload(rep.plan),
        "restart_values": rep.restart_values,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "norm_lower_bound": norm_lower_bound(rho, sigma, cfg.metric),
        "marginal_residuals": [rl, rr],
        "sparse_plan_size": None if rep.sparse_plan is None else len(rep.sparse_plan),
        "sparse_value": rep.sparse_value,
        "diag_only_value": rep.diag_only_value,
    }
    if args.trace:
        rows = ["restart\tvalue"] + [f"{i}\t{v:.17g}" for i, v in enumerate(rep.restart_values)]
        with open(args.trace, "w") as fh:
            fh.write("\n".join(rows) + "\n")
    return out, EXIT_OK


def cmd_chain(args):
    rho, sigma = _density(args.rho), _density(args.sigma)
    cfg = _config(args)
    ns = sorted({int(x) for x in args.n.split(",")})
    totals, best = {}, []
    base = None
    for n in ns:
        w = chain_relax(rho, sigma, n, cfg, trials=args.trials)
        totals[str(n)] = {"total": w.total, "links": w.link_values}
        if n == 1:
            base = w.total
        best.append(min([w.total] + ([best[-1]] if best else [])))
    if base is not None:
        for n, rec in totals.items():
            if rec["total"] > base + 1e-9:
                raise FoldedError(f"chain of length {n} exceeds the direct bound")
    return {"chains": totals, "best_so_far": best}, EXIT_OK


def cmd_probe(args):
    cfg = _config(args)
    if args.random:
        rng = np.random.default_rng(args.seed)
        triples = [tuple(random_density(args.dim, rng) for _ in range(3)) for _ in range(args.random)]
    else:
        if not (args.rho and args.sigma and args.gamma):
            raise ValidationError("probe needs --rho, --sigma and --gamma, or --random K")
        triples = [(_density(args.rho), _density(args.sigma), _density(args.gamma))]
    slacks, violations = [], []
    for i, (r, s, g) in enumerate(triples):
        rep = subadditivity_probe(r, s, g, cfg)
        slacks.append(rep.slack)
        if rep.certified_violation:
            log.error("CERTIFIED triangle violation on triple %d: norm bound %.12g > detour %.12g",
                      i, rep.norm_lower, rep.via)
            violations.append(i)
    counts, edges = np.histogram(slacks, bins=min(10, max(1, len(slacks))))
    return {"slacks": slacks, "min_slack": min(slacks),
            "histogram": {"counts": counts, "edges": edges},
            "certified_violations": violations}, EXIT_OK


def cmd_classical(args):
    wa, xa = read_measure(args.mu)
    wb, xb = read_measure(args.nu)
    if args.cost:
        dist = read_cost(args.cost)
    else:
        if xa.shape[1] != xb.shape[1]:
            raise ValidationError("measures live in spaces of different dimension")
        dist = np.linalg.norm(xa[:, None, :] - xb[None, :, :], axis=-1)
    res = kantorovich_lp(dist ** args.p, wa, wb)
    return {"value": max(res.value, 0.0) ** (1.0 / args.p), "objective": res.value,
            "plan": res.plan, "support": res.support, "pivots": res.iterations}, EXIT_OK


def cmd_gp(args):
    rho = _density(args.rho)
    w, pts = read_measure(args.nu)
    if pts.shape[1] != 2:
        raise ValidationError("phase-space atoms need two coordinates (x, xi)")
    trunc = HermiteTruncation(rho.shape[0], hbar=args.hbar, lam=args.lam)
    rep = gp_folded_cost(rho, w, pts, trunc, _config(args))
    per_atom = [gp_cost_eval(a, PhasePoint(*b), trunc, index=i)
                for i, (a, b) in enumerate(zip(rep.plan.left, rep.plan.right))]
    return {"value": rep.value, "objective": rep.objective, "lower_bound": rep.lower_bound,
            "converged": rep.converged, "weights": rep.plan.weights,
            "quantum_atoms": states_payload(rep.plan.left), "phase_points": rep.plan.right,
            "atom_costs": per_atom, "tail_masses": rep.tail_masses}, EXIT_OK


def cmd_suite(args):
    checks = run_suite(args.name, seed=args.seed)
    rows = [{"check": c.name, "worst": c.worst, "tol": c.tol, "passed": c.passed} for c in checks]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: worst {c.worst:.3e} (tol {c.tol:g})",
              file=sys.stderr)
    ok = all(c.passed for c in checks)
    return {"suite": args.name, "checks": rows, "passed": ok}, EXIT_OK if ok else EXIT_SUITE


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--metric", default="frobenius", choices=["frobenius", "fubini-study"])
    common.add_argument("--p", type=float, default=1.0)
    common.add_argument("--restarts", type=int, default=4)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--atom-budget", type=int, default=None)
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=None, help="report path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="foldedot", description="Folded transport distances between quantum states.")
    ap.add_argument("--version", action="version", version=f"foldedot {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", parents=[common], help="upper bound on the folded distance")
    p.add_argument("rho")
    p.add_argument("sigma")
    p.add_argument("--trace", default=None, help="optional TSV of restart values")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("chain", parents=[common], help="chain-relaxed bounds for several lengths")
    p.add_argument("rho")
    p.add_argument("sigma")
    p.add_argument("--n", default="1,2,3", help="comma-separated chain lengths")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_chain)

    p = sub.add_parser("probe", parents=[common], help="triangle-inequality probe")
    p.add_argument("--rho")
    p.add_argument("--sigma")
    p.add_argument("--gamma")
    p.add_argument("--random", type=int, default=0, help="number of random triples")
    p.add_argument("--dim", type=int, default=2)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("classical", parents=[common], help="discrete Wasserstein distance")
    p.add_argument("mu")
    p.add_argument("nu")
    p.add_argument("--cost", default=None, help="distance matrix file (default: Euclidean)")
    p.set_defaults(func=cmd_classical)

    p = sub.add_parser("gp", parents=[common], help="phase-space cost of a state vs a discrete measure")
    p.add_argument("rho")
    p.add_argument("nu")
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--hbar", type=float, default=1.0)
    p.set_defaults(func=cmd_gp)

    p = sub.add_parser("suite", parents=[common], help="run an invariant suite")
    p.add_argument("name")
    p.set_defaults(func=cmd_suite)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        payload, code = args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FoldedError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - surfaced as exit status 4
        log.exception("unexpected failure")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    text = dump_report(_envelope(args, args.command, payload, started), args.out)
    if args.out is None:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
