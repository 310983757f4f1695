"""Parsing of the compact option strings accepted on the command line."""

from __future__ import annotations

import re
from typing import Dict, List, Union

from .matfun import Variant

_GEN_ARG = re.compile(r"^\s*(?P<key>[A-Za-z_][A-Za-z0-9_]*)\s*=\s*(?P<value>[^,=\s]+)\s*$")
_INTEGER = re.compile(r"^[+-]?\d+$")


def parse_gen_args(text: str) -> Dict[str, Union[int, float]]:
    """Parse ``"N=50,nu=1e-2"`` into ``{"N": 50, "nu": 0.01}``.

    Integer literals stay integers; everything else must parse as a float.
    """
    result: Dict[str, Union[int, float]] = {}
    for item in (text or "").split(","):
        if not item.strip():
            continue
        match = _GEN_ARG.match(item)
        if not match:
            raise ValueError(f"malformed generator argument '{item.strip()}' (expected key=value)")
        key, value = match.group("key"), match.group("value")
        if key in result:
            raise ValueError(f"generator argument '{key}' given twice")
        if _INTEGER.match(value):
            result[key] = int(value)
            continue
        try:
            result[key] = float(value)
        except ValueError:
            raise ValueError(f"generator argument '{key}' has non-numeric value '{value}'") from None
    return result


def parse_variants(text: str) -> List[Variant]:
    """Parse a comma separated variant list; ``all`` selects every variant.

    Dashes and underscores are interchangeable and duplicates are dropped.
    """
    names = [name.strip().lower().replace("-", "_") for name in (text or "").split(",") if name.strip()]
    if not names:
        raise ValueError("no variants given")
    if names == ["all"]:
        return list(Variant)

    variants: List[Variant] = []
    for name in names:
        try:
            variant = Variant(name)
        except ValueError:
            choices = ", ".join(v.value for v in Variant)
            raise ValueError(f"unknown variant '{name}', choose from {choices} or 'all'") from None
        if variant not in variants:
            variants.append(variant)
    return variants
