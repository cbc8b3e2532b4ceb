"""Scenario files and the built-in scenarios."""
import json
from pathlib import Path
from typing import Any, Dict, List

from pydantic import BaseModel, ValidationError

from .errors import MalformedEvent, UnknownSpec
from .schemas import ScenarioListing
from .simulator import Event, parse_event


class ScenarioFile(BaseModel):
    spec: str
    bounds: Dict[str, int] = {}
    variant: Dict[str, str] = {}
    policy: str = "skip_and_record"
    description: str = ""
    events: List[Dict[str, Any]]

    def parsed_events(self) -> List[Event]:
        return [parse_event(raw, k) for k, raw in enumerate(self.events)]


def load_scenario(path: Path) -> ScenarioFile:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as e:
        raise MalformedEvent(f"cannot read scenario {path}: {e}") from e
    return parse_scenario(raw)


def parse_scenario(raw: Any) -> ScenarioFile:
    try:
        scenario = ScenarioFile.parse_obj(raw)
    except ValidationError as e:
        raise MalformedEvent(f"invalid scenario: {e}") from e
    scenario.parsed_events()
    return scenario


def _invoke(replica: str, op: str, **params) -> Dict[str, Any]:
    return {"invoke": {"replica": replica, "op": op, "params": params}}


def _send(sender: str, to: str, label: str) -> Dict[str, Any]:
    return {"send": {"from": sender, "to": to, "id": label}}


def _fig1_prefix() -> List[Dict[str, Any]]:
    # r1 opens the auction and propagates it to r2 and r3
    return [
        _invoke("r1", "start_auction"),
        _send("r1", "r2", "m1"),
        _send("r1", "r3", "m2"),
        {"deliver": "m1"},
        {"deliver": "m2"},
    ]


FIG1_BOUNDS = {"replicas": 3, "bids": 3, "amount_max": 2}

BUILTIN: Dict[str, ScenarioFile] = {
    "fig1_auction": ScenarioFile(
        spec="auction_unsafe",
        bounds=FIG1_BOUNDS,
        description="r1 closes on the only bid it has seen while r3's higher bid is lost in transit",
        events=_fig1_prefix() + [
            _invoke("r2", "place_bid", b="b2", value=1),
            _send("r2", "r3", "m3"),
            {"deliver": "m3"},
            _invoke("r3", "place_bid", b="b3", value=2),
            _send("r3", "r1", "m4"),
            {"drop": "m4"},
            _send("r3", "r2", "m5"),
            {"drop": "m5"},
            _send("r2", "r1", "m6"),
            {"deliver": "m6"},
            _invoke("r1", "close_auction", w="b2"),
            _send("r3", "r1", "m7"),
            {"deliver": "m7"},
            {"check_invariant_all": {}},
        ],
    ),
    "fig1_auction_tokens": ScenarioFile(
        spec="auction_safe",
        bounds=FIG1_BOUNDS,
        description="every replica releases its token, states propagate, then r1 closes on the highest bid",
        events=_fig1_prefix() + [
            _invoke("r2", "place_bid", b="b2", value=1),
            _invoke("r3", "place_bid", b="b3", value=2),
            _invoke("r1", "release_token"),
            _invoke("r2", "release_token"),
            _invoke("r3", "release_token"),
            {"anti_entropy": {}},
            _invoke("r1", "close_auction", w="b3"),
            {"anti_entropy": {}},
            {"check_invariant_all": {}},
            {"check_converged": {}},
        ],
    ),
    "pair_counter_race": ScenarioFile(
        spec="pair_counter",
        bounds={"replicas": 2},
        description="from a shared (4,5), r1 increments n and r2 increments m; merging breaks the sum bound",
        events=[_invoke("r1", "incn") for _ in range(4)] + [_invoke("r1", "incm") for _ in range(5)] + [
            _send("r1", "r2", "m1"),
            {"deliver": "m1"},
            _invoke("r1", "incn"),
            _invoke("r2", "incm"),
            _send("r2", "r1", "m2"),
            {"deliver": "m2"},
            {"check_invariant_all": {}},
        ],
    ),
}


def builtin_scenario(name: str) -> ScenarioFile:
    if name not in BUILTIN:
        raise UnknownSpec(name, list(BUILTIN))
    return BUILTIN[name]


def list_scenarios() -> List[ScenarioListing]:
    return [
        ScenarioListing(name=name, spec=s.spec, description=s.description, events=len(s.events))
        for name, s in BUILTIN.items()
    ]
