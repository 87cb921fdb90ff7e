"""Experiment configuration: loading, validation and a reorder-stable hash."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from ..errors import ValidationError

KINDS = ("rstat", "chi", "specfun", "liom", "jump")
ALIASES = {"chi-sweep": "chi", "jump-scan": "jump"}


def default_realizations(L: int) -> int:
    """20 realizations up to L = 13, 10 beyond."""
    return 20 if L <= 13 else 10


@dataclass
class ExperimentConfig:
    """One sweep over system sizes, impurity potentials and disorder realizations.

    ``geometry`` describes the impurity layout: ``{"impurities": "center"}``,
    ``{"impurities": [sites]}``, ``{"impurities": []}`` (bulk only) or
    ``{"n_blocks": n, "block_len": l}`` for effective weak-link chains.
    ``params`` carries kind-specific options (fit windows, eps, ladder depth,
    jump frequencies...).
    """

    kind: str
    L: tuple
    V: tuple
    delta: float = 1.0
    W: float = 0.25
    geometry: dict = field(default_factory=lambda: {"impurities": "center"})
    jitter: bool = False
    realizations: int | None = None
    seed: int = 0
    window: float = 0.5
    sector: str | float | None = "default"
    bins: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = ALIASES.get(self.kind, self.kind)
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        L = self.L if isinstance(self.L, (list, tuple)) else [self.L]
        if not L or any(int(x) != x or x < 2 for x in L):
            raise ValidationError("L must be an integer >= 2 or a nonempty list of them")
        self.L = tuple(int(x) for x in L)
        V = self.V if isinstance(self.V, (list, tuple)) else [self.V]
        if not V:
            raise ValidationError("V grid must not be empty")
        V = [float(v) for v in V]
        if any(b <= a for a, b in zip(V, V[1:])):
            raise ValidationError("V grid must be strictly increasing")
        self.V = tuple(V)
        if self.realizations is not None and int(self.realizations) < 1:
            raise ValidationError("realization count must be >= 1")
        if not 0 < self.window <= 1:
            raise ValidationError("window must lie in (0, 1]")
        if self.W < 0:
            raise ValidationError("W must be nonnegative")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        self.seed = int(self.seed)

    def n_realizations(self, L: int) -> int:
        return int(self.realizations) if self.realizations is not None else default_realizations(L)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["L"], d["V"] = list(self.L), list(self.V)
        return d

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def with_seed(self, seed) -> "ExperimentConfig":
        d = copy.deepcopy(self.to_dict())
        d["seed"] = int(seed)
        return ExperimentConfig(**d)


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, float) and obj.is_integer():
        return int(obj) if abs(obj) < 2**53 else obj
    return obj


def config_hash(d: dict) -> str:
    """sha256 of the canonical JSON form (sorted keys, integral floats as ints)."""
    text = json.dumps(_canonical(d), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path, kind: str | None = None) -> ExperimentConfig:
    """Read a YAML (or JSON) config; ``kind`` fills in or must match the file's."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw or {}, kind)


def config_from_dict(raw: dict, kind: str | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping")
    raw = dict(raw)
    raw.pop("out", None)
    if kind is not None:
        kind = ALIASES.get(kind, kind)
        file_kind = ALIASES.get(raw.get("kind", kind), raw.get("kind", kind))
        if file_kind != kind:
            raise ValidationError(f"config kind {file_kind!r} does not match subcommand {kind!r}")
        raw["kind"] = kind
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config fields: {sorted(unknown)}")
    for req in ("kind", "L", "V"):
        if req not in raw:
            raise ValidationError(f"config is missing {req!r}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc
