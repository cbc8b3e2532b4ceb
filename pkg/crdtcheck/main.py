"""Command-line entry point: `python -m crdtcheck check|simulate|list`."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from . import __version__
from .checker import replay_counterexample, run_pipeline
from .domain import BoundedInt, Component, DomainBounds, FixedMap, Flag, OptionalRef, OrderedEnum, Record
from .errors import BadBounds, BadParams, CheckerError, DomainTooLarge, MalformedEvent
from .rendering import render_check, render_json, render_listing, render_trace
from .scenarios import ScenarioFile, builtin_scenario, list_scenarios, load_scenario
from .schemas import CheckConfig, CheckReport, CheckStage, ReportDocument, SpecListing, TraceReport, Verdict
from .simulator import POLICIES, run_random, run_scenario
from .specs import get_spec, list_specs
from .specs.base import SpecEntry

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FOUND = 1
EXIT_USAGE = 2
EXIT_ABORTED = 3


def _pairs(text: Optional[str], what: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    if not text:
        return out
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip() or not value.strip():
            raise BadParams(f"malformed {what} '{item}', expected key=value")
        out[key.strip()] = value.strip()
    return out


def _int_pairs(text: Optional[str]) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for key, value in _pairs(text, "bound").items():
        try:
            out[key] = int(value)
        except ValueError:
            raise BadBounds(f"bound {key}={value} is not an integer")
    return out


def _stage(name: str) -> CheckStage:
    wanted = name.replace("_", "").replace("-", "").lower()
    for stage in CheckStage:
        if stage.value.lower() == wanted:
            return stage
    raise BadParams(f"unknown stage '{name}'; expected one of {', '.join(s.value for s in CheckStage)}")


def _config(args: argparse.Namespace) -> CheckConfig:
    options = {
        "stop_on_first_failure": not args.no_stop_on_failure,
        "check_both_pre_merge_orientations": not args.single_orientation,
        "merge_pre_merge_mode": "two_state" if args.two_state else "three_state",
        "jobs": args.jobs,
    }
    if args.max_cex is not None:
        options["max_counterexamples_per_assertion"] = args.max_cex
    if args.leastness:
        mode, _, rest = args.leastness.partition(":")
        options["leastness_mode"] = mode
        if rest:
            samples, _, seed = rest.partition(":")
            try:
                options["leastness_samples"] = int(samples)
                if seed:
                    options["seed"] = int(seed)
            except ValueError:
                raise BadParams(f"malformed --leastness '{args.leastness}', expected sampled:N:SEED")
    try:
        return CheckConfig(**options)
    except ValidationError as e:
        raise BadParams(f"invalid check options: {e}") from e


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


# ── check ──

def _check_exit(report: CheckReport) -> int:
    if report.verdict == Verdict.FAIL:
        return EXIT_FOUND
    if report.verdict == Verdict.ABORTED:
        return EXIT_ABORTED
    return EXIT_OK


def _replay(path: Path) -> int:
    try:
        doc = ReportDocument.parse_raw(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise MalformedEvent(f"cannot read report {path}: {e}") from e
    if doc.check is None:
        raise MalformedEvent(f"{path} holds no check report")
    report = doc.check
    entry = get_spec(report.spec)
    try:
        bounds = DomainBounds.parse_obj(report.bounds)
    except ValidationError as e:
        raise BadBounds(f"report bounds are invalid: {e}") from e
    spec = entry.maker(bounds, entry.variant(report.variant))
    failures = 0
    total = 0
    for stage in report.stages:
        for cex in stage.counterexamples:
            total += 1
            result = replay_counterexample(spec, bounds, cex)
            mark = "✓" if result.reproduces else "✗"
            _emit(f"{mark} {stage.stage.value} {cex.assertion_id}"
                  f"{' ' + cex.operation if cex.operation else ''}"
                  f" assertion_holds={result.assertion_holds} assumptions_hold={result.assumptions_hold}"
                  f" derivations_match={result.derivations_match}\n")
            if not result.reproduces:
                failures += 1
    _emit(f"{total - failures}/{total} counterexamples reproduced\n")
    return EXIT_OK if failures == 0 else EXIT_FOUND


def cmd_check(args: argparse.Namespace) -> int:
    if args.replay:
        return _replay(args.replay)
    if not args.spec:
        raise BadParams("check needs a spec name (or --replay report.json)")
    entry = get_spec(args.spec)
    spec, bounds = entry.make(_int_pairs(args.bounds), _pairs(args.variant, "variant"))
    config = _config(args)
    stages = [_stage(args.stage)] if args.stage else None
    logger.info(f"checking {spec.name} with bounds {bounds.dict()}")
    report = run_pipeline(spec, bounds, config, stages)
    if args.format == "json":
        _emit(render_json(ReportDocument(kind="check", check=report)))
    else:
        _emit(render_check(report))
    return _check_exit(report)


# ── simulate ──

def _trace_exit(trace: TraceReport) -> int:
    return EXIT_OK if trace.verdict == "clean" else EXIT_FOUND


def _scenario(args: argparse.Namespace) -> Optional[ScenarioFile]:
    if args.builtin:
        return builtin_scenario(args.builtin)
    if args.scenario:
        return load_scenario(args.scenario)
    return None


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario = _scenario(args)
    if scenario is None and not args.random:
        raise BadParams("simulate needs a scenario file, --builtin NAME or --random")
    if scenario is not None and args.random:
        raise BadParams("--random does not take a scenario")
    spec_name = args.spec or (scenario.spec if scenario else None)
    if not spec_name:
        raise BadParams("--random needs --spec")
    entry = get_spec(spec_name)
    overrides = dict(scenario.bounds) if scenario else {}
    overrides.update(_int_pairs(args.bounds))
    variant = dict(scenario.variant) if scenario else {}
    variant.update(_pairs(args.variant, "variant"))
    spec, bounds = entry.make(overrides, variant)
    bound = spec.bind(bounds)
    if scenario is not None:
        policy = args.policy or scenario.policy
        name = args.builtin or str(args.scenario)
        trace = run_scenario(bound, scenario.parsed_events(), policy, name)
    else:
        trace = run_random(bound, args.seed, args.steps, args.drop, args.dup)
    if args.format == "json":
        _emit(render_json(ReportDocument(kind="trace", trace=trace)))
    else:
        _emit(render_trace(trace, args.trace_limit))
    return _trace_exit(trace)


# ── list ──

def describe_component(c: Component) -> str:
    if isinstance(c, OrderedEnum):
        return "{" + " < ".join(c.levels) + "}"
    if isinstance(c, Flag):
        return "bool" if c.top else "bool (true ≤ false)"
    if isinstance(c, BoundedInt):
        return f"int[{c.range}]"
    if isinstance(c, OptionalRef):
        return f"{c.domain}?"
    if isinstance(c, FixedMap):
        return f"{c.domain} → {describe_component(c.value)}"
    if isinstance(c, Record):
        return "(" + ", ".join(f"{n}: {describe_component(v)}" for n, v in c.fields) + ")"
    return type(c).__name__


def spec_listing(entry: SpecEntry) -> SpecListing:
    spec, _ = entry.make()
    return SpecListing(
        name=entry.name,
        description=entry.description,
        components=[f"{name}: {describe_component(c)}" for name, c in spec.schema.components],
        operations=[op.signature() for op in spec.operations],
        default_bounds=dict(entry.defaults),
        variants={k: list(v) for k, v in entry.variants.items()},
        preconditions={op.signature(): op.precondition.render() for op in spec.operations if op.precondition},
        invariant=spec.invariant.render() if spec.invariant else "",
        pre_merge=spec.pre_merge.render() if spec.pre_merge else "",
        leq=spec.leq.render() if spec.leq else "",
    )


def cmd_list(args: argparse.Namespace) -> int:
    names = [args.spec] if args.spec else list_specs()
    specs = [spec_listing(get_spec(name)) for name in names]
    scenarios = [s for s in list_scenarios() if not args.spec or s.spec == args.spec]
    if args.format == "json":
        _emit(render_json(ReportDocument(kind="list", specs=specs, scenarios=scenarios)))
    else:
        _emit(render_listing(specs, scenarios, detailed=bool(args.spec)))
    return EXIT_OK


# ── parser ──

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crdtcheck",
        description="Bounded verification workbench for state-based replicated objects.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="run the verification pipeline on a built-in spec")
    check.add_argument("spec", nargs="?", help="built-in spec name (see `list`)")
    check.add_argument("--bounds", help="comma-separated k=v overrides, e.g. replicas=2,bids=2")
    check.add_argument("--variant", help="comma-separated interpretation options, e.g. placement=literal")
    check.add_argument("--stage", help="run a single stage, ignoring earlier ones")
    check.add_argument("--format", choices=("text", "json"), default="text")
    check.add_argument("--max-cex", type=int, help="counterexamples kept per assertion")
    check.add_argument("--no-stop-on-failure", action="store_true", help="keep running stages after a failure")
    check.add_argument("--leastness", help="auto | exhaustive | sampled:N:SEED")
    check.add_argument("--single-orientation", action="store_true",
                       help="check op.preserves_pre_merge only with the operated state as local")
    check.add_argument("--two-state", action="store_true", help="use the two-state merge obligation")
    check.add_argument("--jobs", type=int, default=1, help="worker threads for the safety stages")
    check.add_argument("--replay", type=Path, help="re-check every counterexample in a JSON report")
    check.set_defaults(handler=cmd_check)

    simulate = sub.add_parser("simulate", help="execute a scenario or a seeded random run")
    simulate.add_argument("scenario", nargs="?", type=Path, help="scenario JSON file")
    simulate.add_argument("--builtin", help="built-in scenario name (see `list`)")
    simulate.add_argument("--spec", help="spec to run the scenario against (defaults to the scenario's own)")
    simulate.add_argument("--bounds", help="comma-separated k=v overrides")
    simulate.add_argument("--variant", help="comma-separated interpretation options")
    simulate.add_argument("--policy", choices=POLICIES, help="what to do when a precondition fails")
    simulate.add_argument("--random", action="store_true", help="seeded random execution instead of a scenario")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--steps", type=int, default=200)
    simulate.add_argument("--drop", type=float, default=0.0, help="message loss probability")
    simulate.add_argument("--dup", type=float, default=0.0, help="message duplication probability")
    simulate.add_argument("--format", choices=("text", "json"), default="text")
    simulate.add_argument("--trace-limit", type=int, help="show only the first N trace records")
    simulate.set_defaults(handler=cmd_simulate)

    listing = sub.add_parser("list", help="show built-in specs and scenarios")
    listing.add_argument("--spec", help="show one spec in detail")
    listing.add_argument("--format", choices=("text", "json"), default="text")
    listing.set_defaults(handler=cmd_list)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _configure_logging(args.verbose)
    try:
        return args.handler(args)
    except DomainTooLarge as e:
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_ABORTED
    except CheckerError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_USAGE
