"""Run configuration and the bounded worker pool shared by the engine and the CLI."""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Optional

from .fieldlab import ValidationError

WORKERS_ENV = "NSRLAB_WORKERS"
CONFIG_VERSION = 1


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def pool_map(fn: Callable, items: Iterable) -> list:
    """``[fn(x) for x in items]`` on a thread pool; results keep the input order."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))


@dataclass
class RunConfig:
    """Every knob a command used, echoed into its report.

    Serialized as JSON; :meth:`from_json` of :meth:`to_json` gives back an
    equal object.
    """

    command: str
    container: Optional[str] = None
    output: Optional[str] = None
    center: Optional[list] = None  # [x1, x2, x3, t]
    kinds: list = field(default_factory=lambda: ["velocity", "velocity_gradient", "vorticity",
                                                 "vorticity_gradient"])
    exponents: dict = field(default_factory=dict)  # kind -> [p, q] as strings
    epsilon: float = 0.05
    epsilon_overrides: dict = field(default_factory=dict)
    theta: float = 0.2
    ladder: dict = field(default_factory=lambda: {"r0": None, "ratio": 0.7, "k_max": 4})
    gamma: float = 1.0
    r: Optional[float] = None
    rho: Optional[float] = None
    q: Optional[str] = None
    lam: Optional[int] = None
    flow: dict = field(default_factory=dict)
    version: int = CONFIG_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        data = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {unknown}")
        if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ValidationError(f"unsupported config version {data.get('version')}")
        return cls(**data)

    def as_dict(self) -> dict:
        return asdict(self)
