"""Command-line front end.

Exit codes: 0 pass, 1 finding (inconsistency, violation, no answer,
discrepancy), 2 tool error (bad input, unreadable file, engine error).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .abduce import AbducibleSpec, SearchExhausted, UnboundedWindow, abduce_events, abduce_parameters
from .engine import (DEFAULT_DEPTH, DEFAULT_ZENO_BOUND, CacheStats, EngineError, GoalError, Stats, query,
                     trigger_closure)
from .engine.proof import render_text
from .model import (NarrativeError, NonStratifiedError, diagnostics_json, has_errors, parse_domain,
                    parse_narrative, validate_model)
from .syntax import ParseError

log = logging.getLogger("ecrv")

EXIT_OK, EXIT_FINDING, EXIT_ERROR = 0, 1, 2
INPUT_ERRORS = (OSError, ParseError, NarrativeError, GoalError, NonStratifiedError, ValueError)

_COLORS = {"consistent": "32", "pass": "32", "inconsistent": "31", "violation": "31", "error": "35"}


class CliError(Exception):
    """Input problem reported with exit code 2."""


def _color(text: str, verdict: str) -> str:
    if os.environ.get("ECRV_COLOR", "1") == "0" or not sys.stdout.isatty():
        return text
    code = _COLORS.get(verdict)
    return f"\x1b[{code}m{text}\x1b[0m" if code else text


def _dump(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _rational(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise CliError(f"not a rational number: {text!r}") from None


def load_model(path):
    text = Path(path).read_text()
    model = parse_domain(text)
    diags = validate_model(model)
    for d in diags:
        if d.severity == "warning":
            log.warning("%s: %s", path, d)
    if has_errors(diags):
        raise CliError(f"{path}: model has errors\n" + "\n".join(str(d) for d in diags if d.severity == "error"))
    return model


def load_narrative(path):
    return parse_narrative(Path(path).read_text())


def _stats_dict(stats: Stats) -> dict:
    c = CacheStats.of(stats)
    return {"hits": c.hits, "misses": c.misses, "stored_failures": c.stored_failures,
            "expansions": stats.expansions, "segments_visited": len(stats.visited)}


def _print_stats(args, stats: Stats) -> None:
    if args.stats and not args.json:
        d = _stats_dict(stats)
        print("stats: " + ", ".join(f"{k}={v}" for k, v in d.items()))


def _closure(args, model, narrative, stats=None):
    return trigger_closure(model, narrative, args.zeno_bound, depth_bound=args.depth, stats=stats,
                           tabling=not args.no_cache, clip="closed" if args.mutant == "closed-clip" else "open")


# -- commands ---------------------------------------------------------------------


def cmd_parse(args) -> int:
    model = parse_domain(Path(args.model).read_text())
    diags = validate_model(model)
    if args.json:
        _dump({"counts": model.counts(), "diagnostics": json.loads(diagnostics_json(diags))})
    else:
        for d in diags:
            print(d)
        if args.print:
            print(model.to_text(), end="")
        else:
            print(", ".join(f"{k}: {v}" for k, v in model.counts().items()))
    return EXIT_ERROR if has_errors(diags) else EXIT_OK


def cmd_check(args) -> int:
    from .validate import Report, check_scenario, load_scenario

    model = load_model(args.model)
    reports = []
    stats = Stats()
    for path in args.scenarios:
        try:
            sc = load_scenario(path)
        except INPUT_ERRORS as e:
            reports.append(Report(Path(path).stem, "scenario", "error", explanation=f"{type(e).__name__}: {e}"))
            continue
        reports.append(check_scenario(model, sc, zeno_bound=args.zeno_bound, tabling=not args.no_cache,
                                      stats=stats, depth_bound=args.depth))
    if args.json:
        out = {"reports": [r.to_dict(stats=args.stats) for r in reports]}
        if args.stats:
            out["stats"] = _stats_dict(stats)
        _dump(out)
    else:
        for r in reports:
            head, _, rest = r.text().partition("\n")
            print(_color(head, r.verdict) + ("\n" + rest if rest else ""))
        _print_stats(args, stats)
    verdicts = {r.verdict for r in reports}
    if "error" in verdicts:
        return EXIT_ERROR
    return EXIT_FINDING if "inconsistent" in verdicts else EXIT_OK


def cmd_query(args) -> int:
    model = load_model(args.model)
    narrative = load_narrative(args.narrative)
    stats = Stats()
    tl = _closure(args, model, narrative, stats)
    answers = list(query(tl, args.goal, tabling=not args.no_cache, stats=stats, depth_bound=args.depth))
    if args.json:
        out = {"goal": args.goal, "answers": [a.to_dict(with_proof=args.proof) for a in answers]}
        if args.stats:
            out["stats"] = _stats_dict(stats)
        _dump(out)
    else:
        if not answers:
            print("no")
        for a in answers:
            print(a)
            if args.proof:
                print(render_text(a.proof, a.names, indent="  "))
        _print_stats(args, stats)
    return EXIT_OK if answers else EXIT_FINDING


def _fixes(items) -> dict:
    out = {}
    for item in items or ():
        name, sep, val = item.partition("=")
        if not sep:
            raise CliError(f"--fix expects NAME=VALUE, got {item!r}")
        out[name.strip()] = _rational(val)
    return out


def cmd_abduce(args) -> int:
    if not args.abducible and not args.param:
        raise CliError("abduce needs at least one --abducible or --param")
    try:
        specs = [AbducibleSpec.parse(a) for a in args.abducible or ()]
    except UnboundedWindow as e:
        raise CliError(f"{e}; abduction windows must be bounded") from None
    model = load_model(args.model)
    narrative = load_narrative(args.narrative)
    results = []
    if specs:
        try:
            for i, sol in enumerate(abduce_events(model, narrative, args.goal, specs, zeno_bound=args.zeno_bound,
                                                  depth_bound=args.depth)):
                if i >= args.max_solutions:
                    break
                results.append(("events", sol))
        except SearchExhausted as e:
            log.info("%s", e)
    if args.param:
        fixed = _fixes(args.fix)
        for region in abduce_parameters(model, narrative, args.goal, args.param, fixed=fixed,
                                        zeno_bound=args.zeno_bound, depth_bound=args.depth):
            results.append(("parameters", region))
    if args.json:
        _dump({"goal": args.goal, "solutions": [dict(kind=k, **r.to_dict()) for k, r in results]})
    else:
        if not results:
            print("no solution")
        for kind, r in results:
            if kind == "events":
                hyps = ", ".join(r.hypothesis_text()) or "(no extra events)"
                print(f"hypotheses: {hyps}")
                print(f"  region: {', '.join(r.region_text()) or 'true'}")
            else:
                print(f"parameters: {', '.join(r.text()) or 'true'}")
    return EXIT_OK if results else EXIT_FINDING


def cmd_oracle(args) -> int:
    from .oracle import OracleError, cross_check, simulate

    dt = _rational(args.dt)
    if dt <= 0:
        raise CliError(f"--dt must be positive, got {args.dt}")
    model = load_model(args.model)
    narrative = load_narrative(args.narrative)
    try:
        trace = simulate(model, narrative, dt, zeno_bound=args.zeno_bound)
    except (OracleError, EngineError) as e:
        raise CliError(f"simulation failed: {e}") from None
    tl = _closure(args, model, narrative)
    found = cross_check(tl, trace)
    if args.trace_out:
        trace.to_csv(args.trace_out)
    if args.plot_out:
        from .plotting import plot_trace
        plot_trace(trace, args.plot_out, title=f"{Path(args.model).stem} / {Path(args.narrative).stem}, dt = {dt}")
    if args.json:
        _dump({"dt": str(dt), "grid_points": len(trace.times), "discrepancies": [d.to_dict() for d in found]})
    else:
        for d in found:
            print(d)
        print(f"{len(found)} discrepancies over {len(trace.times)} grid points (dt = {dt})")
    return EXIT_FINDING if found else EXIT_OK


def cmd_explain(args) -> int:
    data = json.loads(Path(args.proof_file).read_text())
    if isinstance(data, dict) and "answers" in data:
        nodes = [n for a in data["answers"] for n in a.get("proof", [])]
    elif isinstance(data, dict) and "proof" in data:
        nodes = data["proof"]
    elif isinstance(data, dict):
        nodes = [data]
    else:
        nodes = data
    if not all(isinstance(n, dict) and "kind" in n and "goal" in n for n in nodes):
        raise CliError(f"{args.proof_file}: not a saved proof")
    print(render_text(nodes))
    return EXIT_OK


def _property(args):
    from .validate import Overdose, RawGoal, ResponseTime

    chosen = [x for x in (args.overdose, args.response, args.goal) if x]
    if len(chosen) != 1:
        raise CliError("property needs exactly one of --overdose, --response or --goal")
    if args.overdose:
        m, w = args.overdose
        return Overdose(_rational(m), _rational(w), args.fluent)
    if args.response:
        trig, resp, d = args.response
        return ResponseTime(trig, resp, _rational(d))
    return RawGoal(args.goal)


def cmd_property(args) -> int:
    from .validate import check_property, sweep

    prop = _property(args)
    model = load_model(args.model)
    kw = dict(zeno_bound=args.zeno_bound, tabling=not args.no_cache)
    if len(args.narratives) == 1:
        narrative = load_narrative(args.narratives[0])
        tl = None
        try:
            tl = _closure(args, model, narrative)
        except EngineError:
            pass  # check_property reports the error itself
        report = check_property(model, narrative, prop, timeline=tl, **kw)
        reports = [report]
        if args.plot_out and tl is not None:
            from .plotting import plot_property
            plot_property(tl, report, prop, args.plot_out)
    else:
        items = []
        for p in args.narratives:
            try:
                items.append((Path(p).stem, load_narrative(p)))
            except INPUT_ERRORS as e:
                raise CliError(f"{p}: {e}") from None
        summary = sweep(model, dict(items), prop, **kw)
        reports = summary.reports
    if args.json:
        counts: dict = {}
        for r in reports:
            counts[r.verdict] = counts.get(r.verdict, 0) + 1
        _dump({"property": prop.name, "counts": counts, "reports": [r.to_dict(stats=args.stats) for r in reports]})
    else:
        for r in reports:
            head, _, rest = r.text().partition("\n")
            print(_color(head, r.verdict) + ("\n" + rest if rest else ""))
    verdicts = {r.verdict for r in reports}
    if "error" in verdicts:
        return EXIT_ERROR
    return EXIT_FINDING if "violation" in verdicts else EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--proof", action="store_true", help="include proof trees")
    common.add_argument("--zeno-bound", type=int, default=DEFAULT_ZENO_BOUND, metavar="N",
                        help="maximum number of triggered events (default %(default)s)")
    common.add_argument("--depth", type=int, default=DEFAULT_DEPTH, metavar="N",
                        help="goal depth bound (default %(default)s)")
    common.add_argument("--no-cache", action="store_true", help="disable tabling")
    common.add_argument("--stats", action="store_true", help="print cache and expansion counters")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--mutant", choices=["closed-clip"], help=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="ecrv", description="Event Calculus reasoning over exact rational time.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", parents=[common], help="parse and validate a domain model")
    s.add_argument("model")
    s.add_argument("--print", action="store_true", help="print the normalised clauses")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("check", parents=[common], help="check scenarios for consistency")
    s.add_argument("model")
    s.add_argument("scenarios", nargs="+")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("query", parents=[common], help="answer a goal on the closed narrative")
    s.add_argument("model")
    s.add_argument("narrative")
    s.add_argument("goal")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("abduce", parents=[common], help="hypothesise events or parameter values")
    s.add_argument("model")
    s.add_argument("narrative")
    s.add_argument("--goal", required=True)
    s.add_argument("--abducible", action="append", metavar="'EVENT in [LO,HI] max N'")
    s.add_argument("--param", action="append", metavar="VAR", help="goal variable to solve for")
    s.add_argument("--fix", action="append", metavar="VAR=VALUE", help="fix a goal variable")
    s.add_argument("--max-solutions", type=int, default=20)
    s.set_defaults(func=cmd_abduce)

    s = sub.add_parser("oracle", parents=[common], help="cross-check against the discrete simulator")
    s.add_argument("model")
    s.add_argument("narrative")
    s.add_argument("--dt", required=True, help="sampling step, e.g. 1/4")
    s.add_argument("--trace-out", metavar="CSV")
    s.add_argument("--plot-out", metavar="PNG")
    s.set_defaults(func=cmd_oracle)

    s = sub.add_parser("explain", parents=[common], help="render a saved JSON proof as text")
    s.add_argument("proof_file")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("property", parents=[common], help="check a safety property on narratives")
    s.add_argument("model")
    s.add_argument("narratives", nargs="+")
    s.add_argument("--overdose", nargs=2, metavar=("M", "W"), help="more than M delivered within W")
    s.add_argument("--fluent", default="total_drug_delivered", help="delivered-amount fluent for --overdose")
    s.add_argument("--response", nargs=3, metavar=("TRIGGER", "RESPONSE", "D"))
    s.add_argument("--goal", help="any answer is a violation")
    s.add_argument("--plot-out", metavar="PNG")
    s.set_defaults(func=cmd_property)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
    except (EngineError, *INPUT_ERRORS) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
