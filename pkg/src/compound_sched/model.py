"""Declarative job specification and the workflow DAG representation."""

from __future__ import annotations

import enum
import heapq
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any

from .errors import CycleError, SchemaError, ValidationError

US_PER_S = 1_000_000


def to_us(seconds: float) -> int:
    """Seconds to integer microseconds (all simulated time is kept in µs)."""
    return int(round(seconds * US_PER_S))


def fmt_s(us: int) -> str:
    return f"{us / US_PER_S:.6f}"


class MediaKind(str, enum.Enum):
    VIDEO = "video"
    AUDIO = "audio"
    IMAGE = "image"
    TEXT = "text"
    EMBEDDING = "embedding"


class Criterion(str, enum.Enum):
    MIN_COST_DOLLARS = "MIN_COST_DOLLARS"
    MIN_ENERGY = "MIN_ENERGY"
    MIN_LATENCY = "MIN_LATENCY"
    MAX_QUALITY = "MAX_QUALITY"


class Mode(str, enum.Enum):
    DECLARATIVE = "declarative"
    PINNED = "pinned"


class Origin(str, enum.Enum):
    HINTED = "hinted"
    INFERRED = "inferred"


# Spec-file constraint token -> criterion hierarchy. MIN_COST ranks by energy
# first; plain dollar cost has its own token.
CONSTRAINT_TOKENS: dict[str, tuple[Criterion, ...]] = {
    "MIN_COST": (Criterion.MIN_ENERGY, Criterion.MIN_LATENCY),
    "MIN_DOLLARS": (Criterion.MIN_COST_DOLLARS, Criterion.MIN_LATENCY),
    "MIN_LATENCY": (Criterion.MIN_LATENCY, Criterion.MIN_ENERGY),
    "MAX_QUALITY": (Criterion.MAX_QUALITY, Criterion.MIN_ENERGY),
}


@dataclass(frozen=True)
class DataItem:
    id: str
    media_kind: MediaKind
    work_units: float

    def __post_init__(self):
        if self.work_units < 0:
            raise ValidationError("work_units must be >= 0", f"inputs[{self.id}]")


@dataclass(frozen=True)
class ObjectiveHierarchy:
    criteria: tuple[Criterion, ...]
    quality_floor: int | None = None
    token: str | None = None

    def __post_init__(self):
        if not self.criteria:
            raise ValidationError("objective needs at least one criterion", "constraint")
        if len(set(self.criteria)) != len(self.criteria):
            raise ValidationError("duplicate criteria in objective", "constraint")

    @classmethod
    def from_token(cls, token: str, quality_floor: int | None = None) -> ObjectiveHierarchy:
        try:
            criteria = CONSTRAINT_TOKENS[token]
        except KeyError:
            raise SchemaError(f"unknown constraint token {token!r}") from None
        return cls(criteria, quality_floor, token)

    @property
    def primary(self) -> Criterion:
        return self.criteria[0]


@dataclass(frozen=True)
class JobSpec:
    description: str
    task_hints: tuple[str, ...]
    inputs: tuple[DataItem, ...]
    objective: ObjectiveHierarchy
    mode: Mode = Mode.DECLARATIVE
    # inline config document or a path string (resolved by the caller)
    pinned_plan: Any = None

    def __post_init__(self):
        if not self.description.strip():
            raise ValidationError("must be non-empty", "description")
        if not self.inputs:
            raise ValidationError("must be non-empty", "inputs")
        ids = [item.id for item in self.inputs]
        if len(set(ids)) != len(ids):
            raise ValidationError("input ids must be unique", "inputs")
        if self.mode is Mode.PINNED and not self.pinned_plan:
            raise ValidationError("required when mode is 'pinned'", "pinned_plan")

    def item(self, item_id: str) -> DataItem:
        for item in self.inputs:
            if item.id == item_id:
                return item
        raise KeyError(item_id)


def _require(doc: Mapping, key: str, kind: type | tuple[type, ...]):
    if key not in doc:
        raise SchemaError(f"missing key {key!r}")
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise SchemaError(f"key {key!r} has wrong type {type(value).__name__}")
    return value


def job_spec_from_dict(doc: Any) -> JobSpec:
    if not isinstance(doc, dict):
        raise SchemaError("spec document must be a JSON object")
    description = _require(doc, "description", str)
    tasks = doc.get("tasks", [])
    if not isinstance(tasks, list) or not all(isinstance(t, str) for t in tasks):
        raise SchemaError("'tasks' must be an array of strings")
    raw_inputs = _require(doc, "inputs", list)
    inputs = []
    for i, raw in enumerate(raw_inputs):
        if not isinstance(raw, dict):
            raise SchemaError(f"inputs[{i}] must be an object")
        item_id = _require(raw, "id", str)
        try:
            kind = MediaKind(_require(raw, "media_kind", str))
        except ValueError:
            raise SchemaError(f"inputs[{i}].media_kind: unknown kind {raw['media_kind']!r}") from None
        work = _require(raw, "work_units", (int, float))
        if work < 0:
            raise ValidationError("must be >= 0", f"inputs[{i}].work_units")
        inputs.append(DataItem(item_id, kind, float(work)))
    token = _require(doc, "constraint", str)
    floor = doc.get("quality_floor")
    if floor is not None and (not isinstance(floor, int) or isinstance(floor, bool)):
        raise SchemaError("'quality_floor' must be an integer")
    mode_raw = doc.get("mode", "declarative")
    try:
        mode = Mode(mode_raw)
    except ValueError:
        raise SchemaError(f"unknown mode {mode_raw!r}") from None
    pinned = doc.get("pinned_plan")
    if pinned is not None and not isinstance(pinned, (str, dict)):
        raise SchemaError("'pinned_plan' must be a path string or an object")
    return JobSpec(
        description=description,
        task_hints=tuple(tasks),
        inputs=tuple(inputs),
        objective=ObjectiveHierarchy.from_token(token, floor),
        mode=mode,
        pinned_plan=pinned,
    )


def parse_job_spec(text: str) -> JobSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return job_spec_from_dict(doc)


def job_spec_to_dict(spec: JobSpec) -> dict:
    doc: dict[str, Any] = {
        "description": spec.description,
        "tasks": list(spec.task_hints),
        "inputs": [
            {"id": i.id, "media_kind": i.media_kind.value, "work_units": i.work_units}
            for i in spec.inputs
        ],
        "constraint": spec.objective.token
        or next(k for k, v in CONSTRAINT_TOKENS.items() if v == spec.objective.criteria),
        "mode": spec.mode.value,
    }
    if spec.objective.quality_floor is not None:
        doc["quality_floor"] = spec.objective.quality_floor
    if spec.pinned_plan is not None:
        doc["pinned_plan"] = spec.pinned_plan
    return doc


def serialize_job_spec(spec: JobSpec) -> str:
    return json.dumps(job_spec_to_dict(spec), indent=2)


# ---------------------------------------------------------------------------
# DAG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DagNode:
    id: str
    capability: str
    work_units: float
    consumes: tuple[MediaKind, ...]
    produces: MediaKind
    splittable: bool = False
    min_chunk: float = 0.0
    multi_path: bool = False
    quality_ceiling: int | None = None
    origin: Origin = Origin.HINTED
    item_id: str | None = None

    def __post_init__(self):
        if self.work_units < 0:
            raise ValidationError("work_units must be >= 0", f"nodes[{self.id}]")
        if self.splittable and self.min_chunk <= 0:
            raise ValidationError("splittable nodes need min_chunk > 0", f"nodes[{self.id}]")


@dataclass(frozen=True)
class Edge:
    producer: str
    consumer: str
    kind: MediaKind


@dataclass(frozen=True)
class WorkflowDag:
    nodes: tuple[DagNode, ...]
    edges: tuple[Edge, ...] = ()
    # raw media kinds supplied by the job; source nodes must consume one of them
    input_kinds: frozenset[MediaKind] = field(default_factory=frozenset)

    def node(self, node_id: str) -> DagNode:
        return self._index[node_id]

    @property
    def _index(self) -> dict[str, DagNode]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {n.id: n for n in self.nodes}
            object.__setattr__(self, "_idx", idx)
        return idx

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def predecessors(self, node_id: str) -> list[str]:
        return sorted({e.producer for e in self.edges if e.consumer == node_id})

    def successors(self, node_id: str) -> list[str]:
        return sorted({e.consumer for e in self.edges if e.producer == node_id})

    def to_dict(self) -> dict:
        return {
            "input_kinds": sorted(k.value for k in self.input_kinds),
            "nodes": [
                {
                    "id": n.id,
                    "capability": n.capability,
                    "work_units": n.work_units,
                    "consumes": [k.value for k in n.consumes],
                    "produces": n.produces.value,
                    "splittable": n.splittable,
                    "min_chunk": n.min_chunk,
                    "multi_path": n.multi_path,
                    "quality_ceiling": n.quality_ceiling,
                    "origin": n.origin.value,
                    "item_id": n.item_id,
                }
                for n in self.nodes
            ],
            "edges": [[e.producer, e.consumer, e.kind.value] for e in self.edges],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> WorkflowDag:
        try:
            nodes = tuple(
                DagNode(
                    id=n["id"],
                    capability=n["capability"],
                    work_units=float(n["work_units"]),
                    consumes=tuple(MediaKind(k) for k in n["consumes"]),
                    produces=MediaKind(n["produces"]),
                    splittable=bool(n.get("splittable", False)),
                    min_chunk=float(n.get("min_chunk", 0.0)),
                    multi_path=bool(n.get("multi_path", False)),
                    quality_ceiling=n.get("quality_ceiling"),
                    origin=Origin(n.get("origin", "hinted")),
                    item_id=n.get("item_id"),
                )
                for n in doc["nodes"]
            )
            edges = tuple(Edge(p, c, MediaKind(k)) for p, c, k in doc.get("edges", []))
            kinds = frozenset(MediaKind(k) for k in doc.get("input_kinds", []))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed DAG document: {exc}") from None
        return cls(nodes, edges, kinds)


@dataclass(frozen=True)
class Violation:
    kind: str  # "cycle" | "kind_mismatch" | "orphan" | "dangling_edge" | "duplicate_node"
    nodes: tuple[str, ...]
    detail: str


def _cycle_members(ids: list[str], succ: dict[str, set[str]]) -> list[str]:
    """Nodes left over after Kahn's algorithm, i.e. on or downstream of a cycle,
    restricted to strongly connected parts."""
    indeg = {i: 0 for i in ids}
    for u in ids:
        for v in succ[u]:
            indeg[v] += 1
    stack = [i for i in ids if indeg[i] == 0]
    seen = set()
    while stack:
        u = stack.pop()
        seen.add(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    rest = [i for i in ids if i not in seen]
    # keep only nodes that can reach themselves
    members = []
    for start in rest:
        todo = list(succ[start])
        visited = set()
        while todo:
            u = todo.pop()
            if u == start:
                members.append(start)
                break
            if u in visited or u not in rest:
                continue
            visited.add(u)
            todo.extend(succ[u])
    return members


def validate_dag(dag: WorkflowDag) -> list[Violation]:
    """All invariant violations of ``dag``; empty iff the DAG is well formed."""
    report: list[Violation] = []
    ids = [n.id for n in dag.nodes]
    if len(set(ids)) != len(ids):
        dups = sorted({i for i in ids if ids.count(i) > 1})
        report.append(Violation("duplicate_node", tuple(dups), "node ids must be unique"))
    nodes = {n.id: n for n in dag.nodes}
    succ: dict[str, set[str]] = {i: set() for i in nodes}
    has_in: set[str] = set()
    for e in dag.edges:
        if e.producer not in nodes or e.consumer not in nodes:
            report.append(
                Violation("dangling_edge", (e.producer, e.consumer), "edge references unknown node")
            )
            continue
        succ[e.producer].add(e.consumer)
        has_in.add(e.consumer)
        p, c = nodes[e.producer], nodes[e.consumer]
        if p.produces != e.kind or e.kind not in c.consumes:
            report.append(
                Violation(
                    "kind_mismatch",
                    (e.producer, e.consumer),
                    f"edge carries {e.kind.value}; producer emits {p.produces.value}, "
                    f"consumer accepts {[k.value for k in c.consumes]}",
                )
            )
    cyc = _cycle_members(list(nodes), succ)
    if cyc:
        report.append(Violation("cycle", tuple(sorted(cyc)), "graph contains a cycle"))
    if dag.input_kinds:
        for nid, node in nodes.items():
            if nid not in has_in and not set(node.consumes) & dag.input_kinds:
                report.append(
                    Violation("orphan", (nid,), "source node consumes no raw input kind")
                )
    return report


def topological_order(dag: WorkflowDag) -> list[str]:
    """Kahn's algorithm; among ready peers the smallest id goes first."""
    indeg = {n.id: 0 for n in dag.nodes}
    succ: dict[str, list[str]] = {n.id: [] for n in dag.nodes}
    for e in dag.edges:
        succ[e.producer].append(e.consumer)
        indeg[e.consumer] += 1
    heap = [nid for nid, d in indeg.items() if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        u = heapq.heappop(heap)
        order.append(u)
        for v in succ[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(heap, v)
    if len(order) != len(indeg):
        raise CycleError(set(indeg) - set(order))
    return order
