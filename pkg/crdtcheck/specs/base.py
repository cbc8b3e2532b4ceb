from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

from ..domain import DomainBounds
from ..errors import BadBounds, BadParams
from ..lattice import ObjectSpec


@dataclass(frozen=True)
class SpecEntry:
    name: str
    description: str
    maker: Callable[[DomainBounds, Dict[str, str]], ObjectSpec]
    # --bounds vocabulary and its defaults; "cap" is accepted by every entry
    defaults: Dict[str, int]
    to_bounds: Callable[[Dict[str, int]], DomainBounds]
    # option -> allowed values, first one is the default
    variants: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def bounds(self, overrides: Optional[Dict[str, int]] = None) -> DomainBounds:
        params = dict(self.defaults)
        params["cap"] = DomainBounds.__fields__["enumeration_cap"].default
        for key, value in (overrides or {}).items():
            if key not in params:
                raise BadBounds(
                    f"unknown bound '{key}' for spec '{self.name}'; known: {', '.join(sorted(params))}"
                )
            params[key] = value
        return self.to_bounds(params)

    def variant(self, chosen: Optional[Dict[str, str]] = None) -> Dict[str, str]:
        out = {k: values[0] for k, values in self.variants.items()}
        for key, value in (chosen or {}).items():
            if key not in self.variants:
                raise BadParams(f"unknown variant option '{key}' for spec '{self.name}'")
            if value not in self.variants[key]:
                raise BadParams(f"variant {key}={value} not one of {', '.join(self.variants[key])}")
            out[key] = value
        return out

    def make(self, overrides: Optional[Dict[str, int]] = None,
             variant: Optional[Dict[str, str]] = None) -> Tuple[ObjectSpec, DomainBounds]:
        bounds = self.bounds(overrides)
        return self.maker(bounds, self.variant(variant)), bounds
