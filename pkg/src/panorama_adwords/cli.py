"""Command-line front end.

Exit status: 0 success, 1 a verification failed, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from . import allocators, evaluation, factor_lp, panocs
from .instance import FAMILIES, InstanceError, dump_instance, generate_instance, load_instance


class UsageError(Exception):
    pass


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(text)
    except OSError as e:
        raise UsageError(f"cannot write {path}: {e.strerror}") from None


def _load_instance(path: str):
    try:
        return load_instance(_read(path))
    except InstanceError as e:
        raise UsageError(f"{path}: {e}") from None


# -- commands -----------------------------------------------------------------

def cmd_gen(args) -> int:
    inst = generate_instance(args.family, args.advertisers, args.impressions, args.seed, args.scale)
    text = dump_instance(inst) + "\n"
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def _replay_chunk(job):
    inst_text, algo, table_json, seeds = job
    inst = load_instance(inst_text)
    table = factor_lp.table_from_json(table_json) if table_json else None
    return [(o.P, o.panorama) for o in evaluation.replay_trials(inst, algo, seeds, table=table)]


def cmd_run(args) -> int:
    inst = _load_instance(args.instance)
    table = None
    table_json = None
    if args.table:
        table_json = json.loads(_read(args.table))
        table = factor_lp.table_from_json(table_json)
    first = allocators.make_allocator(args.algo, inst, evaluation.trial_seed(args.seed, 0), table=table).run()
    if args.trace:
        _write(args.trace, first.dump() + "\n")
    opt = evaluation.offline_opt(inst)
    seeds = [evaluation.trial_seed(args.seed, t) for t in range(args.trials)]
    if args.jobs > 1 and args.trials > 1:
        chunks = [seeds[i::args.jobs] for i in range(args.jobs)]
        text = _read(args.instance)
        with ProcessPoolExecutor(args.jobs) as ex:
            parts = list(ex.map(_replay_chunk, [(text, args.algo, table_json, c) for c in chunks]))
        # restore trial order
        outs = [None] * args.trials
        for j, part in enumerate(parts):
            for i, v in enumerate(part):
                outs[j + i * args.jobs] = v
        ps = [o[0] for o in outs]
    else:
        ps = [o.P for o in evaluation.replay_trials(inst, args.algo, seeds, table=table)]
    est = _estimate_from(ps, args, opt)
    name = args.instance
    tname = args.table or ("default" if args.algo in ("basic", "hybrid", "independent") else "-")
    row = evaluation.report_row(name, est, tname, evaluation.guarantee_for(args.algo, first, inst),
                                sum(a.budget for a in inst.advertisers))
    if args.report:
        evaluation.append_report(args.report, [row])
    sys.stdout.write(evaluation.format_rows([row]))
    return 0


def _estimate_from(ps, args, opt):
    mean = statistics.fmean(ps)
    sd = statistics.pstdev(ps) if len(ps) > 1 else 0.0
    half = 1.96 * sd / math.sqrt(len(ps))
    o = float(opt.value) or 1.0
    return evaluation.RatioEstimate(args.algo, len(ps), args.seed, mean, float("nan"), opt.value,
                                    mean / o, (mean - half) / o, (mean + half) / o, opt.method)


def cmd_opt(args) -> int:
    inst = _load_instance(args.instance)
    res = evaluation.offline_opt(inst)
    print(f"OPT = {res.value} (method={res.method}{', upper bound' if res.flagged else ''})")
    for i, a in res.assignment.items():
        print(f"  {i} -> {a if a is not None else '-'}")
    return 0


def _print_basic_table(t: factor_lp.ParamTable, rows: int = 8) -> None:
    print(f"{'k':>3} {'dx':>14} {'dalpha':>14} {'dbeta':>14}")
    for k in range(1, rows + 1):
        print(f"{k:>3} {float(t.dx(k)):>14.10f} {float(t.alpha(k)):>14.10f} {float(t.beta(k)):>14.10f}")


def cmd_lp(args) -> int:
    if args.export_lp and args.closed_form:
        raise UsageError("--export-lp needs a solved LP, not --closed-form")
    if args.family == "basic":
        gamma = args.gamma if args.gamma is not None else factor_lp.GAMMA_LARGE_FROZEN
        if args.closed_form:
            t = factor_lp.closed_form_basic(gamma, kmax=args.kmax)
            worst = factor_lp.certify_basic_table(t, 64 if args.kmax is None else args.kmax + 2)
            print(f"Gamma = {float(t.Gamma):.10f}  ({t.Gamma})")
            print(f"certificate: worst slack {worst} over every constraint, "
                  f"{'ok' if worst >= 0 else 'VIOLATED'}")
            _print_basic_table(t)
            if args.output:
                _write(args.output, factor_lp.table_to_json(t) + "\n")
            return 0 if worst >= 0 else 1
        kmax = args.kmax or 18
        lp = factor_lp.build_basic_lp(gamma, kmax, "truncated" if args.truncated else "closed-tail")
        sol = factor_lp.solve(lp)
        if args.export_lp:
            _write(args.export_lp, lp.to_text())
        t = factor_lp.export_table(sol, "basic", gamma=gamma)
        print(f"Gamma = {float(sol.objective):.10f}  (max violation {float(sol.max_violation):.3g}, "
              f"{sol.pivots} pivots)")
        _print_basic_table(t)
        if args.output:
            _write(args.output, factor_lp.table_to_json(t) + "\n")
        return 0 if sol.certified else 1
    gamma = args.gamma if args.gamma is not None else factor_lp.GAMMA_LARGE_FROZEN
    kmax = args.kmax or 20
    lp = factor_lp.build_hybrid_lp(gamma, kmax)
    if args.export_lp:
        _write(args.export_lp, lp.to_text())
    sol = factor_lp.solve(lp)
    table = factor_lp.export_table(sol, "hybrid", gamma=gamma, kmax=kmax)
    worst, where = factor_lp.certify_hybrid_table(table)
    print(f"Gamma = {float(table.Gamma):.10f}  (solver {float(sol.objective):.10f}, "
          f"{len(lp.rows)} rows, {sol.pivots} pivots)")
    print(f"certificate: max violation {float(max(-worst, 0)):.3g} after rationalization"
          f"{'' if worst >= 0 else ' at ' + where}")
    if args.output:
        _write(args.output, factor_lp.table_to_json(table) + "\n")
    return 0 if worst >= 0 else 1


def cmd_panocs_verify(args) -> int:
    if args.chain is not None:
        rounds = panocs.chain(args.chain)
    else:
        try:
            rounds = evaluation.load_script(json.loads(_read(args.script)))
        except (KeyError, ValueError, TypeError) as e:
            raise UsageError(f"{args.script}: malformed script ({e})") from None
    try:
        rep = evaluation.verify_panocs_bound(args.variant, rounds, args.mode, trials=args.trials,
                                             delta=args.delta, seed=args.seed or 0, kmax=args.kmax)
    except panocs.EnumerationBudgetExceeded as e:
        raise UsageError(str(e)) from None
    print(f"variant={args.variant} mode={args.mode} rounds={len(rounds)}")
    for c in rep.checks:
        prob = str(c.probability) if args.mode == "exact" else f"{c.probability:.6f}"
        print(f"  {c.advertiser}@{c.point} k={c.k} kL={c.kl} P={prob} ({float(c.probability):.8f}) "
              f"bound={float(c.bound):.8f} {'ok' if c.ok else 'FAIL'}")
    if args.mode == "exact":
        fair = all(m == Fraction(1, 2) for m in rep.marginals)
        print(f"  marginals exactly 1/2: {fair}")
    else:
        fair = True
    return 0 if rep.ok and fair else 1


def cmd_certify(args) -> int:
    try:
        trace = allocators.trace_from_json(_read(args.trace))
    except (KeyError, ValueError, TypeError, InstanceError) as e:
        raise UsageError(f"{args.trace}: malformed trace ({e})") from None
    problems = allocators.certify_trace(trace)
    G = args.gamma if args.gamma is not None else trace.Gamma
    if G is not None and trace.algo != "greedy":
        try:
            slack, a, S = allocators.trace_dual_feasibility(trace, G)
        except allocators.EnumerationLimit as e:
            raise UsageError(str(e)) from None
        print(f"dual feasibility at Gamma={float(G):.6f}: min slack {float(slack):.6g} "
              f"(advertiser {a}, subset {S})")
        if slack < 0:
            problems.append("approximate dual feasibility violated")
    print(f"P={trace.P} panorama={trace.panorama} Pbar={float(trace.Pbar):.6f} D={float(trace.D):.6f}")
    for p in problems:
        print(f"FAIL: {p}")
    if not problems:
        print("certified")
    return 1 if problems else 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="panorama-adwords", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate an instance")
    g.add_argument("--family", choices=FAMILIES, required=True)
    g.add_argument("--advertisers", type=int, required=True)
    g.add_argument("--impressions", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--scale", type=int, default=10)
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_gen)

    r = sub.add_parser("run", help="run an allocator and report its ratio")
    r.add_argument("--algo", choices=allocators.ALGOS, required=True)
    r.add_argument("--instance", required=True)
    r.add_argument("--table")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--report")
    r.add_argument("--trace", help="write the first trial's run trace")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(fn=cmd_run)

    o = sub.add_parser("opt", help="offline optimum")
    o.add_argument("--instance", required=True)
    o.set_defaults(fn=cmd_opt)

    lp = sub.add_parser("lp", help="solve a factor-revealing LP")
    lp.add_argument("family", choices=("basic", "hybrid"))
    lp.add_argument("--gamma", type=_fraction)
    lp.add_argument("--kmax", type=int)
    lp.add_argument("--closed-form", action="store_true")
    lp.add_argument("--truncated", action="store_true", help="basic LP with zero tails past kmax")
    lp.add_argument("--export-lp", help="write the LP in CPLEX LP text format")
    lp.add_argument("-o", "--output")
    lp.set_defaults(fn=cmd_lp)

    v = sub.add_parser("panocs-verify", help="check a selection engine's guarantee")
    v.add_argument("--variant", choices=panocs.VARIANTS, required=True)
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--chain", type=int)
    src.add_argument("--script")
    v.add_argument("--mode", choices=("exact", "mc"), required=True)
    v.add_argument("--trials", type=int, default=100000)
    v.add_argument("--delta", type=float, default=0.01)
    v.add_argument("--seed", type=int, help="required with --mode mc")
    v.add_argument("--kmax", type=int, default=18)
    v.set_defaults(fn=cmd_panocs_verify)

    c = sub.add_parser("certify", help="re-check a dumped run trace")
    c.add_argument("--trace", required=True)
    c.add_argument("--gamma", type=_fraction)
    c.set_defaults(fn=cmd_certify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    for name in ("trials", "jobs", "advertisers", "impressions", "kmax", "chain"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            ap.error(f"--{name} must be >= 1")
    if args.cmd == "panocs-verify" and args.mode == "mc":
        if not 0 < args.delta < 1:
            ap.error("--delta must lie in (0, 1)")
        if args.seed is None:
            ap.error("--seed is required with --mode mc")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (InstanceError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
