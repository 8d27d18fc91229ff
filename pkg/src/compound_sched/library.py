"""Agents, implementations, hardware SKUs and execution profiles."""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Union

from .errors import (
    DanglingReference,
    DegenerateObservation,
    DuplicateKey,
    SchemaError,
    UnknownCapability,
)
from .model import MediaKind, to_us


class SkuClass(str, enum.Enum):
    CPU = "cpu"
    GPU = "gpu"


@dataclass(frozen=True)
class ArgSpec:
    name: str
    kind: str
    required: bool = True


@dataclass(frozen=True)
class AgentSpec:
    capability: str
    schema: tuple[ArgSpec, ...]
    consumes: tuple[MediaKind, ...]
    produces: MediaKind


@dataclass(frozen=True)
class Implementation:
    name: str
    capability: str
    quality: int
    sku_classes: frozenset[SkuClass]

    def __post_init__(self):
        if self.quality < 0:
            raise ValueError(f"{self.name}: quality must be >= 0")
        if not self.sku_classes:
            raise ValueError(f"{self.name}: needs at least one supported SKU class")


@dataclass(frozen=True)
class HardwareSku:
    sku_id: str
    sku_class: SkuClass
    generation: str
    capacity_unit: str
    busy_watts: float
    idle_watts: float
    dollars_per_unit_hour: float

    def __post_init__(self):
        if min(self.busy_watts, self.idle_watts, self.dollars_per_unit_hour) < 0:
            raise ValueError(f"{self.sku_id}: power and rate must be >= 0")
        if self.busy_watts < self.idle_watts:
            raise ValueError(f"{self.sku_id}: busy power below idle power")


@dataclass(frozen=True)
class ExecutionProfile:
    """Per-unit throughput (work units per second per allocated unit) of one
    implementation on ``units`` units of one SKU, plus its load latency."""

    implementation: str
    sku: str
    units: int
    throughput: float
    setup_s: float = 0.0

    def __post_init__(self):
        if self.throughput <= 0:
            raise ValueError("throughput must be > 0")
        if self.setup_s < 0:
            raise ValueError("setup latency must be >= 0")
        if self.units < 1:
            raise ValueError("units must be >= 1")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.implementation, self.sku, self.units)

    def run_us(self, work: float) -> int:
        """Busy time for ``work`` units once loaded, in µs."""
        return to_us(work / (self.units * self.throughput))

    def predict_elapsed(self, work: float, *, cold: bool = True) -> float:
        return (self.setup_s if cold else 0.0) + work / (self.units * self.throughput)


Entity = Union[AgentSpec, Implementation, HardwareSku, ExecutionProfile]


class AgentLibrary:
    """Registry with single-writer registration; ``freeze()`` makes it read-only."""

    def __init__(self):
        self.agents: dict[str, AgentSpec] = {}
        self.implementations: dict[str, Implementation] = {}
        self.skus: dict[str, HardwareSku] = {}
        self.profiles: dict[tuple[str, str, int], ExecutionProfile] = {}
        self._frozen = False

    def freeze(self) -> AgentLibrary:
        self._frozen = True
        return self

    def register(self, entity: Entity) -> AgentLibrary:
        if self._frozen:
            raise RuntimeError("library is frozen")
        if isinstance(entity, AgentSpec):
            self._put(self.agents, entity.capability, entity)
        elif isinstance(entity, Implementation):
            if entity.capability not in self.agents:
                raise DanglingReference(f"unknown capability {entity.capability!r}")
            self._put(self.implementations, entity.name, entity)
        elif isinstance(entity, HardwareSku):
            self._put(self.skus, entity.sku_id, entity)
        elif isinstance(entity, ExecutionProfile):
            impl = self.implementations.get(entity.implementation)
            if impl is None:
                raise DanglingReference(f"unknown implementation {entity.implementation!r}")
            sku = self.skus.get(entity.sku)
            if sku is None:
                raise DanglingReference(f"unknown sku {entity.sku!r}")
            if sku.sku_class not in impl.sku_classes:
                raise DanglingReference(
                    f"{impl.name} does not support {sku.sku_class.value} sku {sku.sku_id}"
                )
            self._put(self.profiles, entity.key, entity)
        else:
            raise TypeError(f"cannot register {type(entity).__name__}")
        return self

    @staticmethod
    def _put(table: dict, key, value):
        if key in table:
            raise DuplicateKey(f"duplicate key {key!r}")
        table[key] = value

    # --- queries ------------------------------------------------------------

    def agent(self, capability: str) -> AgentSpec:
        try:
            return self.agents[capability]
        except KeyError:
            raise UnknownCapability(capability) from None

    def implementations_for(self, capability: str, quality_floor: int = 0) -> list[Implementation]:
        if capability not in self.agents:
            raise UnknownCapability(capability)
        found = [
            i
            for i in self.implementations.values()
            if i.capability == capability and i.quality >= quality_floor
        ]
        return sorted(found, key=lambda i: (-i.quality, i.name))

    def profiles_for(self, implementation: str) -> list[ExecutionProfile]:
        return sorted(
            (p for p in self.profiles.values() if p.implementation == implementation),
            key=lambda p: p.key,
        )

    def profile(self, implementation: str, sku: str, units: int) -> ExecutionProfile:
        try:
            return self.profiles[(implementation, sku, units)]
        except KeyError:
            raise DanglingReference(f"no profile for {implementation} on {units}x {sku}") from None

    # --- files --------------------------------------------------------------

    @classmethod
    def load(
        cls,
        agents_path: str | Path,
        skus_path: str | Path,
        profiles_path: str | Path,
    ) -> AgentLibrary:
        lib = cls()
        agents_doc = _read_json(agents_path)
        for a in agents_doc["agents"]:
            lib.register(agent_from_dict(a))
        for i in agents_doc["implementations"]:
            lib.register(implementation_from_dict(i))
        for s in _read_json(skus_path):
            lib.register(sku_from_dict(s))
        for p in _read_json(profiles_path):
            lib.register(profile_from_dict(p))
        return lib.freeze()


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON: {exc}") from None


def agent_from_dict(d: Mapping) -> AgentSpec:
    consumes = d["consumes"]
    if isinstance(consumes, str):
        consumes = [consumes]
    return AgentSpec(
        capability=d["capability"],
        schema=tuple(ArgSpec(a["name"], a["kind"], a.get("required", True)) for a in d["schema"]),
        consumes=tuple(MediaKind(k) for k in consumes),
        produces=MediaKind(d["produces"]),
    )


def implementation_from_dict(d: Mapping) -> Implementation:
    return Implementation(
        name=d["name"],
        capability=d["capability"],
        quality=int(d["quality"]),
        sku_classes=frozenset(SkuClass(c) for c in d["sku_classes"]),
    )


def sku_from_dict(d: Mapping) -> HardwareSku:
    return HardwareSku(
        sku_id=d["sku_id"],
        sku_class=SkuClass(d["class"]),
        generation=d.get("generation", ""),
        capacity_unit=d.get("capacity_unit", "unit"),
        busy_watts=float(d["busy_watts"]),
        idle_watts=float(d["idle_watts"]),
        dollars_per_unit_hour=float(d["dollars_per_unit_hour"]),
    )


def sku_to_dict(s: HardwareSku) -> dict:
    return {
        "sku_id": s.sku_id,
        "class": s.sku_class.value,
        "generation": s.generation,
        "capacity_unit": s.capacity_unit,
        "busy_watts": s.busy_watts,
        "idle_watts": s.idle_watts,
        "dollars_per_unit_hour": s.dollars_per_unit_hour,
    }


def profile_from_dict(d: Mapping) -> ExecutionProfile:
    return ExecutionProfile(
        implementation=d["implementation"],
        sku=d["sku"],
        units=int(d["units"]),
        throughput=float(d["throughput"]),
        setup_s=float(d.get("setup_s", 0.0)),
    )


def profile_to_dict(p: ExecutionProfile) -> dict:
    return asdict(p)


def calibrate_profile(
    implementation: str,
    sku: str,
    *,
    work_units: float,
    elapsed_s: float,
    units: int = 1,
    setup_s: float = 0.0,
) -> ExecutionProfile:
    """Derive a profile from one observed run: throughput per unit is the work
    divided by the unit-seconds spent after setup."""
    if work_units <= 0:
        raise DegenerateObservation("work_units must be > 0")
    if elapsed_s <= setup_s:
        raise DegenerateObservation(f"elapsed {elapsed_s}s does not exceed setup {setup_s}s")
    return ExecutionProfile(
        implementation,
        sku,
        units,
        throughput=work_units / (units * (elapsed_s - setup_s)),
        setup_s=setup_s,
    )


def calibrate_catalog(observations: Iterable[Mapping]) -> list[ExecutionProfile]:
    return [
        calibrate_profile(
            o["implementation"],
            o["sku"],
            work_units=o["work_units"],
            elapsed_s=o["elapsed_s"],
            units=o.get("units", 1),
            setup_s=o.get("setup_s", 0.0),
        )
        for o in observations
    ]
