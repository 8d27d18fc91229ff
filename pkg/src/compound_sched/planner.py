"""Lowering a JobSpec into a WorkflowDag plus concrete tool calls.

Task-to-capability mapping is a keyword-overlap match against a lexicon file.
Anything smarter (an LLM decomposer, say) plugs in by implementing
:class:`Planner`.
"""

from __future__ import annotations

import json
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

from .errors import (
    AmbiguousTask,
    DisconnectedTask,
    KindConflict,
    SchemaBindingError,
    SchemaError,
    UnmappableTask,
)
from .library import AgentLibrary, AgentSpec
from .model import (
    DagNode,
    DataItem,
    Edge,
    JobSpec,
    MediaKind,
    Origin,
    WorkflowDag,
    validate_dag,
)

_TOKEN = re.compile(r"[a-z0-9]+")

# media kinds whose work_units are a duration in seconds
_TIMED_KINDS = frozenset({MediaKind.VIDEO, MediaKind.AUDIO})


def tokenize(text: str) -> set[str]:
    return set(_TOKEN.findall(text.lower()))


@dataclass(frozen=True)
class LexiconEntry:
    keywords: frozenset[str]
    capability: str
    consumes: tuple[MediaKind, ...] = ()
    produces: MediaKind | None = None
    defaults: Mapping[str, Any] = field(default_factory=dict)
    splittable: bool = False
    min_chunk: float = 0.0
    multi_path: bool = False
    quality_ceiling: int | None = None
    expansion: tuple[str, ...] | None = None

    @property
    def is_template(self) -> bool:
        return self.expansion is not None


class CapabilityLexicon:
    def __init__(self, entries: Sequence[LexiconEntry]):
        seen = set()
        for e in entries:
            if not e.keywords:
                raise SchemaError(f"lexicon entry {e.capability!r} has no keywords")
            if e.capability in seen:
                raise SchemaError(f"duplicate lexicon capability {e.capability!r}")
            seen.add(e.capability)
        self.entries = tuple(entries)
        self._by_cap = {e.capability: e for e in entries}

    def __getitem__(self, capability: str) -> LexiconEntry:
        return self._by_cap[capability]

    def __contains__(self, capability: str) -> bool:
        return capability in self._by_cap

    @property
    def tasks(self) -> list[LexiconEntry]:
        return [e for e in self.entries if not e.is_template]

    @property
    def templates(self) -> list[LexiconEntry]:
        return [e for e in self.entries if e.is_template]

    def check_against(self, library: AgentLibrary) -> None:
        for e in self.tasks:
            if e.capability not in library.agents:
                raise SchemaError(f"lexicon capability {e.capability!r} missing from agent library")
        for t in self.templates:
            for cap in t.expansion:
                if cap not in self._by_cap or self._by_cap[cap].is_template:
                    raise SchemaError(f"template {t.capability!r} expands to unknown {cap!r}")

    @classmethod
    def from_list(cls, doc: Sequence[Mapping]) -> CapabilityLexicon:
        if not isinstance(doc, list):
            raise SchemaError("lexicon must be a JSON array")
        entries = []
        for raw in doc:
            try:
                expansion = raw.get("expansion")
                consumes = raw.get("consumes", [])
                if isinstance(consumes, str):
                    consumes = [consumes]
                entries.append(
                    LexiconEntry(
                        keywords=frozenset(k.lower() for k in raw["keywords"]),
                        capability=raw["capability"],
                        consumes=tuple(MediaKind(k) for k in consumes),
                        produces=MediaKind(raw["produces"]) if "produces" in raw else None,
                        defaults=dict(raw.get("defaults", {})),
                        splittable=bool(raw.get("splittable", False)),
                        min_chunk=float(raw.get("min_chunk", 0.0)),
                        multi_path=bool(raw.get("multi_path", False)),
                        quality_ceiling=raw.get("quality_ceiling"),
                        expansion=tuple(expansion) if expansion is not None else None,
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"malformed lexicon entry {raw!r}: {exc}") from None
        for e in entries:
            if not e.is_template and (not e.consumes or e.produces is None):
                raise SchemaError(f"lexicon entry {e.capability!r} needs consumes and produces")
        return cls(entries)

    @classmethod
    def load(cls, path: str | Path) -> CapabilityLexicon:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_list(doc)


def _best_match(text: str, entries: Sequence[LexiconEntry]) -> LexiconEntry | None:
    words = tokenize(text)
    scored = [(len(words & e.keywords), e) for e in entries]
    top = max((s for s, _ in scored), default=0)
    if top < 1:
        return None
    winners = [e for s, e in scored if s == top]
    if len(winners) > 1:
        names = ", ".join(sorted(e.capability for e in winners))
        raise AmbiguousTask(f"{text!r} matches {names} equally (score {top})")
    return winners[0]


@dataclass(frozen=True)
class PlannedTask:
    text: str
    capability: str
    origin: Origin = Origin.HINTED


def decompose_job(spec: JobSpec, lexicon: CapabilityLexicon) -> list[tuple[str, str]]:
    """Map each hint to one capability, or expand a whole-job template when
    there are no hints."""
    if spec.task_hints:
        out = []
        for hint in spec.task_hints:
            entry = _best_match(hint, lexicon.tasks)
            if entry is None:
                raise UnmappableTask(f"no capability matches task {hint!r}")
            out.append((hint, entry.capability))
        return out
    template = _best_match(spec.description, lexicon.templates)
    if template is None:
        raise UnmappableTask(f"no job template matches description {spec.description!r}")
    return [(spec.description, cap) for cap in template.expansion]


def plan_tasks(spec: JobSpec, lexicon: CapabilityLexicon) -> list[PlannedTask]:
    """Decomposition plus completion from a matching template: capabilities the
    template needs but no hint covers are appended as inferred tasks."""
    tasks = [PlannedTask(t, c, Origin.HINTED) for t, c in decompose_job(spec, lexicon)]
    if not spec.task_hints:
        return [PlannedTask(t.text, t.capability, Origin.INFERRED) for t in tasks]
    try:
        template = _best_match(spec.description, lexicon.templates)
    except AmbiguousTask:
        template = None
    if template is not None:
        have = {t.capability for t in tasks}
        tasks += [
            PlannedTask(spec.description, cap, Origin.INFERRED)
            for cap in template.expansion
            if cap not in have
        ]
    return tasks


def infer_edges(
    tasks: Sequence[PlannedTask | tuple[str, str]],
    inputs: Sequence[DataItem],
    lexicon: CapabilityLexicon,
) -> WorkflowDag:
    """One node per (task, input item) lineage; P feeds C when P comes earlier
    in task order, serves the same item, and produces a kind C consumes."""
    tasks = [t if isinstance(t, PlannedTask) else PlannedTask(*t) for t in tasks]
    caps = [t.capability for t in tasks]
    dup = {c for c in caps if caps.count(c) > 1}
    raw_kinds = frozenset(i.media_kind for i in inputs)

    nodes: list[DagNode] = []
    edges: list[Edge] = []
    # per item: list of (task index, node) created so far
    lineage: dict[str, list[tuple[int, DagNode]]] = {i.id: [] for i in inputs}

    for ti, task in enumerate(tasks):
        entry = lexicon[task.capability]
        made = 0
        for item in inputs:
            fed_raw = item.media_kind in entry.consumes
            producers = [n for _, n in lineage[item.id] if n.produces in entry.consumes]
            if not fed_raw and not producers:
                continue
            base = f"{task.capability}#{ti}" if task.capability in dup else task.capability
            node = DagNode(
                id=f"{base}@{item.id}",
                capability=task.capability,
                work_units=item.work_units,
                consumes=entry.consumes,
                produces=entry.produces,
                splittable=entry.splittable,
                min_chunk=entry.min_chunk,
                multi_path=entry.multi_path,
                quality_ceiling=entry.quality_ceiling,
                origin=task.origin,
                item_id=item.id,
            )
            nodes.append(node)
            edges.extend(Edge(p.id, node.id, p.produces) for p in producers)
            lineage[item.id].append((ti, node))
            made += 1
        if made == 0:
            later = [
                t.capability
                for t in tasks[ti + 1 :]
                if lexicon[t.capability].produces in entry.consumes
            ]
            if later:
                raise KindConflict(
                    f"task {task.text!r} ({task.capability}) consumes output of later task(s) "
                    + ", ".join(later)
                )
            raise DisconnectedTask(
                f"task {task.text!r} ({task.capability}) has no input of kind "
                + "/".join(k.value for k in entry.consumes)
            )

    dag = WorkflowDag(tuple(nodes), tuple(edges), raw_kinds)
    problems = validate_dag(dag)
    if problems:  # pragma: no cover - construction above rules these out
        raise KindConflict("; ".join(p.detail for p in problems))
    return dag


@dataclass(frozen=True)
class ToolCall:
    capability: str
    arguments: Mapping[str, Any]
    target: str

    def render(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.arguments.items())
        return f"{self.capability}({args})"

    def to_dict(self) -> dict:
        return {"capability": self.capability, "arguments": dict(self.arguments), "target": self.target}


_KIND_TYPES: dict[str, tuple[type, ...]] = {
    "seconds": (int, float),
    "float": (int, float),
    "count": (int,),
    "int": (int,),
    "path": (str,),
    "str": (str,),
}


def synthesize_tool_call(
    node: DagNode,
    item: DataItem,
    agent: AgentSpec,
    defaults: Mapping[str, Any] | None = None,
) -> ToolCall:
    """Bind the agent's arguments from item metadata, then lexicon defaults.

    Count-valued arguments are capped at the whole seconds of a timed item, so
    a zero-length clip yields zero frames.
    """
    if node.capability != agent.capability:
        raise SchemaBindingError(f"node {node.id} is {node.capability}, schema is {agent.capability}")
    defaults = dict(defaults or {})
    meta: dict[str, Any] = {"file": item.id}
    timed = item.media_kind in _TIMED_KINDS
    if timed:
        meta["start_time"] = 0.0
        meta["end_time"] = float(item.work_units)
    args: dict[str, Any] = {}
    for spec in agent.schema:
        if spec.name in meta:
            value = meta[spec.name]
        elif spec.name in defaults:
            value = defaults[spec.name]
        elif spec.required:
            raise SchemaBindingError(f"{agent.capability}: no value for required argument {spec.name!r}")
        else:
            continue
        allowed = _KIND_TYPES.get(spec.kind)
        if allowed and (not isinstance(value, allowed) or isinstance(value, bool)):
            raise SchemaBindingError(
                f"{agent.capability}: argument {spec.name!r} expects {spec.kind}, got {value!r}"
            )
        if spec.kind == "count" and timed:
            value = min(value, math.floor(item.work_units))
        args[spec.name] = value
    return ToolCall(agent.capability, args, item.id)


@dataclass(frozen=True)
class Plan:
    dag: WorkflowDag
    tool_calls: tuple[ToolCall, ...]
    tasks: tuple[PlannedTask, ...]


class Planner(Protocol):
    def plan(self, spec: JobSpec, lexicon: CapabilityLexicon) -> Plan: ...


class LexiconPlanner:
    """Deterministic planner backed by keyword matching."""

    def __init__(self, library: AgentLibrary):
        self.library = library

    def plan(self, spec: JobSpec, lexicon: CapabilityLexicon) -> Plan:
        tasks = plan_tasks(spec, lexicon)
        dag = infer_edges(tasks, spec.inputs, lexicon)
        calls = []
        for node in dag.nodes:
            agent = self.library.agent(node.capability)
            calls.append(
                synthesize_tool_call(node, spec.item(node.item_id), agent, lexicon[node.capability].defaults)
            )
        return Plan(dag, tuple(calls), tuple(tasks))
