import os
from typing import Any, Dict, List, Optional

from jinja2 import Environment, FileSystemLoader, select_autoescape

from . import __version__
from .schemas import CheckReport, Fact, ReportDocument, ScenarioListing, SpecListing, TraceReport

templates_dir = os.path.join(os.path.dirname(__file__), "templates")
jinja_env = Environment(
    loader=FileSystemLoader(templates_dir),
    autoescape=select_autoescape(["html", "xml"]),
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


def format_value(value: Any) -> str:
    if value is None:
        return "⊥"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, dict):
        return "{" + ", ".join(f"{k}: {format_value(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "(" + ", ".join(format_value(v) for v in value) + ")"
    return str(value)


def format_state(tree: Any) -> str:
    """Compact one-line rendering of a state tree: `status=ACTIVE winner=⊥ bids={b1: {...}}`."""
    if not isinstance(tree, dict):
        return str(tree)
    return " ".join(f"{k}={format_value(v)}" for k, v in tree.items())


def format_fact(fact: Fact) -> str:
    roles = ", ".join(fact.roles)
    at = f" @{fact.me}" if fact.me else ""
    if fact.kind == "inv":
        return f"Inv({roles})"
    if fact.kind == "pre_merge":
        return f"Pre_merge({roles}){at}"
    if fact.kind == "pre_op":
        params = ", ".join(f"{k}={v}" for k, v in fact.params.items())
        return f"Pre_{fact.operation}({params})({roles}){at}"
    if fact.kind == "leq":
        return f"{fact.roles[0]} ≤ {fact.roles[1]}"
    if fact.kind == "equal":
        return f"{fact.roles[0]} = {fact.roles[1]}"
    if fact.kind == "conforms":
        return f"{roles} conforms to the schema"
    if fact.kind == "present":
        return f"{fact.label} is provided"
    return f"{fact.label} compiles"


def format_detail(detail: Dict[str, Any]) -> str:
    return ", ".join(f"{k} = {format_value(v)}" for k, v in detail.items())


jinja_env.filters["state"] = format_state
jinja_env.filters["fact"] = format_fact
jinja_env.filters["detail"] = format_detail
jinja_env.filters["value"] = format_value


def render_check(report: CheckReport) -> str:
    template = jinja_env.get_template("check_report.txt.j2")
    return template.render(r=report, version=__version__)


def render_trace(report: TraceReport, limit: Optional[int] = None) -> str:
    entries = report.entries if limit is None else report.entries[:limit]
    template = jinja_env.get_template("trace.txt.j2")
    return template.render(t=report, entries=entries, hidden=len(report.entries) - len(entries), version=__version__)


def render_listing(specs: List[SpecListing], scenarios: List[ScenarioListing], detailed: bool = False) -> str:
    template = jinja_env.get_template("listing.txt.j2")
    return template.render(specs=specs, scenarios=scenarios, detailed=detailed, version=__version__)


def render_json(doc: ReportDocument) -> str:
    return doc.to_json() + "\n"
