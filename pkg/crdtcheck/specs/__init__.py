"""
Built-in object specifications.

Each module defines one or more SpecEntry values; they are registered here in
one place and looked up by their stable names.
"""
from typing import Dict, List

from ..errors import UnknownSpec
from . import auction as auction_specs
from . import gset as gset_specs
from . import pair_counter as pair_counter_specs
from .base import SpecEntry

_REGISTRY: Dict[str, SpecEntry] = {}


def register(entry: SpecEntry) -> None:
    _REGISTRY[entry.name] = entry


register(pair_counter_specs.entry)
register(auction_specs.unsafe_entry)
register(auction_specs.safe_entry)
register(gset_specs.entry)


def get_spec(name: str) -> SpecEntry:
    if name not in _REGISTRY:
        raise UnknownSpec(name, list_specs())
    return _REGISTRY[name]


def list_specs() -> List[str]:
    return list(_REGISTRY)
