"""Deterministic discrete-event execution of a configured workflow DAG."""

from __future__ import annotations

import bisect
import csv
import heapq
import io
import json
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import ClusterEvent, ClusterState
from .config import ConfigPoint, node_quality, validate_config
from .errors import DeadlockError, SchemaError
from .library import AgentLibrary, SkuClass
from .model import US_PER_S, DagNode, DataItem, WorkflowDag, fmt_s, to_us

# event kind -> rank for same-time ordering
KIND_RANK = {
    "chunk_complete": 0,
    "release": 1,
    "task_complete": 2,
    "availability": 3,
    "rebalance": 4,
    "task_ready": 5,
    "alloc": 6,
    "task_start": 7,
    "planner_overhead": 8,
}

_US_PER_HOUR = 3600 * US_PER_S


def split_task(node: DagNode, fan_out: int, item: DataItem | None = None) -> list[float]:
    """Chunk works for one execution path of ``node``.

    At most ``fan_out`` equal chunks, never smaller than the node's minimum
    chunk; a node too small to split runs as a single chunk. ``item`` may
    override the work quantity.
    """
    work = item.work_units if item is not None else node.work_units
    if fan_out < 1:
        raise ValueError("fan_out must be >= 1")
    if not node.splittable or fan_out == 1:
        return [work]
    n = max(1, min(fan_out, math.floor(work / node.min_chunk + 1e-9)))
    size = work / n
    return [size] * (n - 1) + [work - size * (n - 1)]


@dataclass(frozen=True)
class SimEvent:
    time_us: int
    kind: str
    payload: str

    @property
    def sort_key(self):
        return (self.time_us, KIND_RANK[self.kind], self.payload)


@dataclass(frozen=True)
class TraceEntry:
    node_id: str
    capability: str
    path: int
    chunk: int
    implementation: str
    sku: str
    sku_class: str
    pool_id: str
    units: int
    start_us: int
    end_us: int
    work: float
    energy_wh: float
    dollars: float
    cold: bool = True
    preempted: bool = False

    @property
    def duration_us(self) -> int:
        return self.end_us - self.start_us


@dataclass
class ExecutionTrace:
    entries: list[TraceEntry]
    events: list[SimEvent]
    cluster_log: list[ClusterEvent]
    capacity_timeline: dict[str, list[tuple[int, int]]]
    idle_watts: dict[str, float]
    quality: int
    planner_overhead_us: int = 0
    label: str | None = None
    seed: int = 0


@dataclass(frozen=True)
class RunMetrics:
    makespan_s: float
    busy_wh: float
    gpu_wh: float
    cpu_wh: float
    wallclock_wh: float
    dollars: float
    quality: int
    planner_overhead_s: float = 0.0
    per_capability: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "makespan_s": self.makespan_s,
            "busy_wh": self.busy_wh,
            "gpu_wh": self.gpu_wh,
            "cpu_wh": self.cpu_wh,
            "wallclock_wh": self.wallclock_wh,
            "dollars": self.dollars,
            "quality": self.quality,
            "planner_overhead_s": self.planner_overhead_s,
            "per_capability": {k: dict(v) for k, v in self.per_capability.items()},
        }


def entry_energy_wh(units: int, busy_watts: float, duration_us: int) -> float:
    return units * busy_watts * duration_us / _US_PER_HOUR


def entry_dollars(units: int, rate_per_hour: float, duration_us: int) -> float:
    return units * rate_per_hour * duration_us / _US_PER_HOUR


@dataclass
class _Chunk:
    node_id: str
    capability: str
    path: int
    index: int
    work: float
    seq: int

    @property
    def key(self) -> str:
        return f"{self.node_id}/p{self.path}/c{self.index:04d}"


def schedule_ready(
    ready: list[_Chunk],
    cluster: ClusterState,
    config: ConfigPoint,
    library: AgentLibrary,
    time_us: int,
) -> list[tuple[_Chunk, object]]:
    """Place queued chunks in FIFO order; returns (chunk, allocation) pairs and
    removes them from ``ready``.

    Pool preference lives in :meth:`ClusterState.choose_pool` (warm units,
    then least fragmentation, then pool id). Once a chunk of some
    (capability, SKU) fails to fit, later chunks of the same pair wait too.
    """
    placed = []
    blocked: set[tuple[str, str]] = set()
    keep = []
    for chunk in ready:
        cfg = config[chunk.node_id]
        lane = (chunk.capability, cfg.sku)
        if lane in blocked:
            keep.append(chunk)
            continue
        pool = cluster.choose_pool(cfg.sku, cfg.units, cfg.implementation)
        if pool is None:
            blocked.add(lane)
            keep.append(chunk)
            continue
        profile = library.profile(cfg.implementation, cfg.sku, cfg.units)
        alloc = cluster.allocate(
            cfg.sku,
            cfg.units,
            cfg.implementation,
            time_us,
            setup_us=to_us(profile.setup_s),
            pool_id=pool.pool_id,
        )
        placed.append((chunk, alloc))
    ready[:] = keep
    return placed


class Simulation:
    def __init__(
        self,
        dag: WorkflowDag,
        config: ConfigPoint,
        cluster: ClusterState,
        library: AgentLibrary,
        *,
        seed: int = 0,
        jitter: float = 0.0,
        planner_overhead_s: float = 0.0,
        rebalance: bool = False,
    ):
        validate_config(config, dag, library)
        self.dag = dag
        self.config = config
        self.cluster = cluster
        self.library = library
        self.seed = seed
        self.jitter = jitter
        self.rng = np.random.default_rng(seed)
        self.planner_overhead_us = to_us(planner_overhead_s)
        self.rebalance = rebalance

        self.heap: list = []
        self._seq = 0
        self.events: list[SimEvent] = []
        self.entries: list[TraceEntry] = []
        self.ready: list[_Chunk] = []
        self.running: dict[int, tuple[_Chunk, int]] = {}
        self.remaining: dict[str, int] = {}
        self.indeg = {n.id: 0 for n in dag.nodes}
        self.succ: dict[str, list[str]] = {n.id: [] for n in dag.nodes}
        for e in dag.edges:
            self.succ[e.producer].append(e.consumer)
            self.indeg[e.consumer] += 1
        self.done: set[str] = set()
        self.capacity_timeline: dict[str, list[tuple[int, int]]] = {
            sku: [(0, cap)] for sku, cap in sorted(cluster.capacity_by_sku().items())
        }
        self._chunk_seq = 0

    # --- event plumbing -----------------------------------------------------

    def _push(self, time_us: int, kind: str, payload: str, data=None):
        heapq.heappush(self.heap, (time_us, KIND_RANK[kind], payload, self._seq, kind, data))
        self._seq += 1

    def _note(self, time_us: int, kind: str, payload: str):
        self.events.append(SimEvent(time_us, kind, payload))

    # --- main loop ----------------------------------------------------------

    def run(self) -> ExecutionTrace:
        self._check_fits()
        if self.planner_overhead_us:
            self._note(0, "planner_overhead", f"{self.planner_overhead_us}")
        for nid, d in sorted(self.indeg.items()):
            if d == 0:
                self._push(0, "task_ready", nid)
        for i, ev in enumerate(self.cluster.availability):
            self._push(ev.time_us, "availability", f"{i:06d}", ev)

        while self.heap:
            now = self.heap[0][0]
            completed_any = False
            while self.heap and self.heap[0][0] == now:
                _, _, payload, _, kind, data = heapq.heappop(self.heap)
                if kind == "chunk_complete":
                    completed_any |= self._on_chunk_complete(now, data)
                elif kind == "availability":
                    self._on_availability(now, payload, data)
                elif kind == "task_ready":
                    self._on_task_ready(now, payload)
            if self.rebalance and completed_any:
                self._rebalance(now)
            self._schedule(now)

        if len(self.done) != len(self.dag.nodes):
            stuck = self.ready[0].node_id if self.ready else sorted(set(self.indeg) - self.done)[0]
            cfg = self.config[stuck]
            raise DeadlockError(stuck, f"{cfg.units}x {cfg.sku} never became available")

        self.entries.sort(key=lambda e: (e.start_us, e.node_id, e.path, e.chunk, e.end_us))
        self.events.sort(key=lambda e: e.sort_key)
        return ExecutionTrace(
            entries=self.entries,
            events=self.events,
            cluster_log=list(self.cluster.log),
            capacity_timeline=self.capacity_timeline,
            idle_watts={s: self.library.skus[s].idle_watts for s in self.capacity_timeline},
            quality=self._quality(),
            planner_overhead_us=self.planner_overhead_us,
            label=self.config.label,
            seed=self.seed,
        )

    def _check_fits(self):
        biggest = self.cluster.max_pool_capacity()
        for node in self.dag.nodes:
            cfg = self.config[node.id]
            if cfg.units > biggest.get(cfg.sku, 0):
                raise DeadlockError(
                    node.id, f"needs {cfg.units}x {cfg.sku}; largest pool has {biggest.get(cfg.sku, 0)}"
                )

    def _quality(self) -> int:
        if not self.dag.nodes:
            return 0
        return min(node_quality(n, self.config[n.id], self.library) for n in self.dag.nodes)

    # --- handlers -----------------------------------------------------------

    def _on_task_ready(self, now: int, node_id: str):
        self._note(now, "task_ready", node_id)
        node = self.dag.node(node_id)
        cfg = self.config[node_id]
        chunks = []
        for path in range(cfg.path_count):
            for idx, work in enumerate(split_task(node, cfg.fan_out)):
                chunks.append(_Chunk(node_id, node.capability, path, idx, work, self._chunk_seq))
                self._chunk_seq += 1
        self.remaining[node_id] = len(chunks)
        self.ready.extend(chunks)

    def _on_chunk_complete(self, now: int, data) -> bool:
        handle, start = data
        if handle not in self.running:
            return False  # preempted before finishing
        chunk, _ = self.running.pop(handle)
        alloc = self.cluster.allocations[handle]
        self._note(now, "chunk_complete", chunk.key)
        self.cluster.release(alloc, now)
        self._note(now, "release", chunk.key)
        self._record(chunk, alloc, start, now, preempted=False)
        self.remaining[chunk.node_id] -= 1
        if self.remaining[chunk.node_id] == 0:
            self.done.add(chunk.node_id)
            self._note(now, "task_complete", chunk.node_id)
            for s in sorted(self.succ[chunk.node_id]):
                self.indeg[s] -= 1
                if self.indeg[s] == 0:
                    self._push(now, "task_ready", s)
            return True
        return False

    def _on_availability(self, now: int, payload: str, ev):
        self._note(now, "availability", payload)
        preempted = self.cluster.apply_availability(ev, now)
        for alloc in preempted:
            chunk, start = self.running.pop(alloc.handle)
            self._note(now, "release", chunk.key)
            self._record(chunk, alloc, start, now, preempted=True)
            seqs = [c.seq for c in self.ready]
            self.ready.insert(bisect.bisect(seqs, chunk.seq), chunk)
        self.capacity_timeline.setdefault(ev.sku, [(0, 0)]).append(
            (now, self.cluster.capacity_by_sku().get(ev.sku, 0))
        )

    def _rebalance(self, now: int):
        left = [n for n in self.dag.nodes if n.id not in self.done]
        pending = WorkflowDag(tuple(left), ())
        assignments = {n.id: self.config[n.id].implementation for n in left}
        for change in self.cluster.rebalance_with_lookahead([pending], now, self.library, assignments):
            self._note(now, "rebalance", f"{change.pool_id}:{change.from_impl}->{change.to_impl or ''}")

    def _schedule(self, now: int):
        for chunk, alloc in schedule_ready(self.ready, self.cluster, self.config, self.library, now):
            cfg = self.config[chunk.node_id]
            profile = self.library.profile(cfg.implementation, cfg.sku, cfg.units)
            run_us = profile.run_us(chunk.work)
            if self.jitter:
                run_us = int(round(run_us * (1.0 + self.rng.uniform(-self.jitter, self.jitter))))
            end = now + alloc.setup_us + run_us
            self.running[alloc.handle] = (chunk, now)
            self._note(now, "alloc", chunk.key)
            self._note(now, "task_start", chunk.key)
            self._push(end, "chunk_complete", chunk.key, (alloc.handle, now))

    def _record(self, chunk: _Chunk, alloc, start: int, end: int, *, preempted: bool):
        sku = self.library.skus[alloc.sku]
        dur = end - start
        self.entries.append(
            TraceEntry(
                node_id=chunk.node_id,
                capability=chunk.capability,
                path=chunk.path,
                chunk=chunk.index,
                implementation=alloc.implementation,
                sku=alloc.sku,
                sku_class=sku.sku_class.value,
                pool_id=alloc.pool_id,
                units=alloc.units,
                start_us=start,
                end_us=end,
                work=0.0 if preempted else chunk.work,
                energy_wh=entry_energy_wh(alloc.units, sku.busy_watts, dur),
                dollars=entry_dollars(alloc.units, sku.dollars_per_unit_hour, dur),
                cold=alloc.cold,
                preempted=preempted,
            )
        )


def execute(
    dag: WorkflowDag,
    config: ConfigPoint,
    cluster: ClusterState,
    library: AgentLibrary,
    seed: int = 0,
    **kwargs,
) -> tuple[ExecutionTrace, RunMetrics]:
    trace = Simulation(dag, config, cluster, library, seed=seed, **kwargs).run()
    return trace, compute_metrics(trace)


def compute_metrics(trace: ExecutionTrace) -> RunMetrics:
    makespan_us = max((e.end_us for e in trace.entries), default=0)
    gpu = cpu = dollars = 0.0
    busy_unit_us: dict[str, int] = {}
    per_cap: dict[str, dict[str, float]] = {}
    for e in trace.entries:
        if e.sku_class == SkuClass.GPU.value:
            gpu += e.energy_wh
        else:
            cpu += e.energy_wh
        dollars += e.dollars
        busy_unit_us[e.sku] = busy_unit_us.get(e.sku, 0) + e.units * e.duration_us
        c = per_cap.setdefault(e.capability, {"busy_unit_s": 0.0, "energy_wh": 0.0, "dollars": 0.0})
        c["busy_unit_s"] += e.units * e.duration_us / US_PER_S
        c["energy_wh"] += e.energy_wh
        c["dollars"] += e.dollars
    idle_wh = 0.0
    for sku, timeline in trace.capacity_timeline.items():
        cap_unit_us = _integrate(timeline, makespan_us)
        idle_unit_us = max(0, cap_unit_us - busy_unit_us.get(sku, 0))
        idle_wh += trace.idle_watts.get(sku, 0.0) * idle_unit_us / _US_PER_HOUR
    busy = gpu + cpu
    return RunMetrics(
        makespan_s=makespan_us / US_PER_S,
        busy_wh=busy,
        gpu_wh=gpu,
        cpu_wh=cpu,
        wallclock_wh=busy + idle_wh,
        dollars=dollars,
        quality=trace.quality,
        planner_overhead_s=trace.planner_overhead_us / US_PER_S,
        per_capability=dict(sorted(per_cap.items())),
    )


def _integrate(timeline: Sequence[tuple[int, int]], horizon_us: int) -> int:
    total = 0
    points = sorted(timeline)
    for (t0, cap), nxt in zip(points, points[1:] + [(horizon_us, 0)]):
        t1 = min(nxt[0], horizon_us)
        if t1 > t0:
            total += cap * (t1 - t0)
    return total


# ---------------------------------------------------------------------------
# Trace and summary files
# ---------------------------------------------------------------------------

_ENTRY_FIELDS = (
    "node_id",
    "capability",
    "path",
    "chunk",
    "implementation",
    "sku",
    "sku_class",
    "pool_id",
    "units",
    "start",
    "end",
    "work",
    "energy_wh",
    "dollars",
    "cold",
    "preempted",
)


def _num(x: float) -> str:
    return f"{x:.9f}"


def _entry_line(e: TraceEntry) -> str:
    parts = ['"record": "entry"']
    for k in _ENTRY_FIELDS:
        if k == "start":
            v = fmt_s(e.start_us)
        elif k == "end":
            v = fmt_s(e.end_us)
        elif k in ("work", "energy_wh", "dollars"):
            v = _num(getattr(e, k))
        else:
            v = json.dumps(getattr(e, k))
        parts.append(f'"{k}": {v}')
    return "{" + ", ".join(parts) + "}"


def _metrics_line(m: RunMetrics, trace: ExecutionTrace) -> str:
    doc = {
        "record": "metrics",
        "label": trace.label,
        "seed": trace.seed,
        "makespan_s": fmt_s(to_us(m.makespan_s)),
        "busy_wh": _num(m.busy_wh),
        "gpu_wh": _num(m.gpu_wh),
        "cpu_wh": _num(m.cpu_wh),
        "wallclock_wh": _num(m.wallclock_wh),
        "dollars": _num(m.dollars),
        "quality": str(m.quality),
        "planner_overhead_s": fmt_s(trace.planner_overhead_us),
        "per_capability": json.dumps(
            {k: {kk: round(vv, 9) for kk, vv in v.items()} for k, v in m.per_capability.items()},
            sort_keys=True,
        ),
    }
    raw = {"record", "label", "seed"}
    parts = [f'"{k}": {json.dumps(v) if k in raw else v}' for k, v in doc.items()]
    return "{" + ", ".join(parts) + "}"


def trace_to_jsonl(trace: ExecutionTrace, metrics: RunMetrics | None = None) -> str:
    metrics = metrics or compute_metrics(trace)
    lines = [_entry_line(e) for e in trace.entries]
    lines.append(_metrics_line(metrics, trace))
    return "\n".join(lines) + "\n"


def write_trace(path: str | Path, trace: ExecutionTrace, metrics: RunMetrics | None = None) -> None:
    Path(path).write_text(trace_to_jsonl(trace, metrics), encoding="utf-8")


def read_trace(path_or_text: str | Path) -> tuple[list[TraceEntry], dict]:
    text = path_or_text
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8")
    entries, metrics = [], {}
    for n, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"trace line {n + 1}: {exc}") from None
        if doc.get("record") == "metrics":
            metrics = doc
            continue
        entries.append(
            TraceEntry(
                node_id=doc["node_id"],
                capability=doc["capability"],
                path=doc["path"],
                chunk=doc["chunk"],
                implementation=doc["implementation"],
                sku=doc["sku"],
                sku_class=doc["sku_class"],
                pool_id=doc["pool_id"],
                units=doc["units"],
                start_us=to_us(doc["start"]),
                end_us=to_us(doc["end"]),
                work=doc["work"],
                energy_wh=doc["energy_wh"],
                dollars=doc["dollars"],
                cold=doc["cold"],
                preempted=doc["preempted"],
            )
        )
    return entries, metrics


SUMMARY_COLUMNS = ("config_label", "makespan_s", "gpu_wh", "cpu_wh", "total_wh", "dollars", "quality", "seed")


def summary_row(label: str, m: RunMetrics, seed: int) -> dict[str, str]:
    return {
        "config_label": label,
        "makespan_s": f"{m.makespan_s:.6f}",
        "gpu_wh": f"{m.gpu_wh:.6f}",
        "cpu_wh": f"{m.cpu_wh:.6f}",
        "total_wh": f"{m.busy_wh:.6f}",
        "dollars": f"{m.dollars:.6f}",
        "quality": str(m.quality),
        "seed": str(seed),
    }


def summary_csv(rows: Iterable[Mapping[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_summary_csv(path_or_text: str | Path) -> list[dict[str, str]]:
    text = path_or_text
    if isinstance(path_or_text, Path) or "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8")
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != SUMMARY_COLUMNS:
        raise SchemaError(f"unexpected summary columns {list(rows[0].keys())}")
    return rows
