"""Lever assignments: one (implementation, SKU, units, fan-out, paths) per node."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import InvalidConfig, SchemaError, ValidationError
from .library import AgentLibrary
from .model import WorkflowDag


@dataclass(frozen=True, order=True)
class NodeConfig:
    implementation: str
    sku: str
    units: int
    fan_out: int = 1
    path_count: int = 1

    @property
    def token(self) -> str:
        return f"{self.implementation}/{self.sku}/{self.units:04d}/f{self.fan_out:03d}/p{self.path_count:02d}"

    def to_dict(self) -> dict:
        return {
            "implementation": self.implementation,
            "sku": self.sku,
            "units": self.units,
            "fan_out": self.fan_out,
            "path_count": self.path_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> NodeConfig:
        try:
            return cls(
                implementation=d["implementation"],
                sku=d["sku"],
                units=int(d["units"]),
                fan_out=int(d.get("fan_out", 1)),
                path_count=int(d.get("path_count", 1)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed node config {d!r}: {exc}") from None


@dataclass(frozen=True)
class ConfigPoint:
    assignments: tuple[tuple[str, NodeConfig], ...]
    label: str | None = None

    @classmethod
    def of(cls, mapping: Mapping[str, NodeConfig], label: str | None = None) -> ConfigPoint:
        return cls(tuple(sorted(mapping.items())), label)

    def __getitem__(self, node_id: str) -> NodeConfig:
        for nid, cfg in self.assignments:
            if nid == node_id:
                return cfg
        raise KeyError(node_id)

    def as_dict(self) -> dict[str, NodeConfig]:
        return dict(self.assignments)

    def with_node(self, node_id: str, cfg: NodeConfig) -> ConfigPoint:
        d = self.as_dict()
        d[node_id] = cfg
        return ConfigPoint.of(d, self.label)

    def relabel(self, label: str | None) -> ConfigPoint:
        return replace(self, label=label)

    @property
    def identifier(self) -> str:
        """Canonical string; lexicographic order on it breaks residual ties."""
        return ";".join(f"{nid}={cfg.token}" for nid, cfg in self.assignments)

    def to_document(self) -> dict:
        return {
            "label": self.label,
            "nodes": {nid: cfg.to_dict() for nid, cfg in self.assignments},
        }

    @classmethod
    def from_document(cls, doc: Mapping, dag: WorkflowDag | None = None) -> ConfigPoint:
        """Per-node entries override per-capability defaults; with a DAG every
        node must end up covered."""
        if not isinstance(doc, Mapping):
            raise SchemaError("config document must be an object")
        by_cap = {c: NodeConfig.from_dict(v) for c, v in doc.get("capabilities", {}).items()}
        by_node = {n: NodeConfig.from_dict(v) for n, v in doc.get("nodes", {}).items()}
        label = doc.get("label")
        if dag is None:
            if by_cap:
                raise SchemaError("capability-level config needs a DAG to expand")
            return cls.of(by_node, label)
        out = {}
        for node in dag.nodes:
            cfg = by_node.get(node.id, by_cap.get(node.capability))
            if cfg is None:
                raise ValidationError(f"no assignment for node {node.id!r}", "pinned_plan")
            out[node.id] = cfg
        unknown = set(by_node) - set(out)
        if unknown:
            raise ValidationError(f"assignments for unknown nodes {sorted(unknown)}", "pinned_plan")
        return cls.of(out, label)

    @classmethod
    def load(cls, path: str | Path, dag: WorkflowDag | None = None) -> ConfigPoint:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_document(doc, dag)


def validate_config(config: ConfigPoint, dag: WorkflowDag, library: AgentLibrary) -> None:
    assigned = config.as_dict()
    missing = [n.id for n in dag.nodes if n.id not in assigned]
    extra = sorted(set(assigned) - set(dag.node_ids))
    if missing or extra:
        raise InvalidConfig(f"config/DAG mismatch: missing {missing}, extra {extra}")
    for node in dag.nodes:
        cfg = assigned[node.id]
        impl = library.implementations.get(cfg.implementation)
        if impl is None or impl.capability != node.capability:
            raise InvalidConfig(f"{node.id}: {cfg.implementation!r} does not implement {node.capability}")
        sku = library.skus.get(cfg.sku)
        if sku is None or sku.sku_class not in impl.sku_classes:
            raise InvalidConfig(f"{node.id}: {cfg.implementation} cannot run on {cfg.sku!r}")
        if (cfg.implementation, cfg.sku, cfg.units) not in library.profiles:
            raise InvalidConfig(f"{node.id}: no profile for {cfg.implementation} on {cfg.units}x {cfg.sku}")
        if cfg.fan_out < 1 or cfg.path_count < 1:
            raise InvalidConfig(f"{node.id}: fan_out and path_count must be >= 1")
        if cfg.fan_out > 1 and not node.splittable:
            raise InvalidConfig(f"{node.id}: fan_out > 1 on a non-splittable node")
        if cfg.path_count > 1 and not node.multi_path:
            raise InvalidConfig(f"{node.id}: path_count > 1 on a single-path node")


def node_quality(node, cfg: NodeConfig, library: AgentLibrary) -> int:
    """Implementation quality raised by one per extra path, capped by the
    capability ceiling (never below the base quality)."""
    base = library.implementations[cfg.implementation].quality
    q = base + cfg.path_count - 1
    if node.quality_ceiling is not None:
        q = min(q, max(node.quality_ceiling, base))
    return q
