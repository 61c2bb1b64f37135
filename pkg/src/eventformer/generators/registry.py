"""Named parameter sets for the synthetic generators (``models.json``)."""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

from .hawkes import HawkesExpParams
from .pgem import PGEMParams

DATA_FILE = "models.json"


class UnknownModelError(KeyError):
    def __str__(self):
        return str(self.args[0])


@lru_cache(maxsize=1)
def raw_registry() -> dict:
    return json.loads(resources.files(__package__).joinpath(DATA_FILE).read_text(encoding="utf-8"))


def _state_key(key: str) -> tuple[int, ...]:
    return tuple(int(b) for b in key.split(",")) if key else ()


def available(family: str) -> list[str]:
    reg = raw_registry()
    if family not in reg:
        raise UnknownModelError(f"unknown family {family!r}; available: {', '.join(sorted(reg))}")
    return sorted(reg[family])


def get_model(family: str, name: str):
    names = available(family)
    if name not in names:
        raise UnknownModelError(f"unknown {family} model {name!r}; available: {', '.join(names)}")
    spec = raw_registry()[family][name]
    if family == "hawkes":
        return HawkesExpParams(spec["baseline"], spec["decay"], spec["adjacency"], spec["end_time"])
    return PGEMParams(
        labels=tuple(spec["labels"]),
        parents={k: list(v) for k, v in spec["parents"].items()},
        windows={k: [float(w) for w in v] for k, v in spec["windows"].items()},
        lambdas={k: {_state_key(s): float(r) for s, r in v.items()} for k, v in spec["lambdas"].items()},
        end_time=spec["end_time"],
    )
