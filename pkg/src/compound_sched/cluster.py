"""Simulated heterogeneous resource pools.

A pool is one SKU on one machine. Units are fungible inside a pool; a chunk of
work never spans pools. Time arguments are integer microseconds.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DoubleRelease, InsufficientCapacity, SchemaError
from .library import AgentLibrary
from .model import WorkflowDag, to_us


class AvailabilityKind(str, enum.Enum):
    SPOT_GRANT = "spot_grant"
    SPOT_REVOKE = "spot_revoke"


@dataclass(frozen=True)
class AvailabilityEvent:
    time_us: int
    sku: str
    delta: int
    kind: AvailabilityKind
    node: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> AvailabilityEvent:
        try:
            kind = AvailabilityKind(d["kind"])
            delta = int(d["delta"])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"malformed availability event {d!r}: {exc}") from None
        if (kind is AvailabilityKind.SPOT_GRANT) != (delta > 0):
            raise SchemaError(f"availability event {d!r}: grants add units, revokes remove them")
        return cls(to_us(float(d["time"])), d["sku_id"], delta, kind, d.get("node"))

    def to_dict(self) -> dict:
        d = {"time": self.time_us / 1e6, "sku_id": self.sku, "delta": self.delta, "kind": self.kind.value}
        if self.node is not None:
            d["node"] = self.node
        return d


@dataclass
class Pool:
    pool_id: str
    sku: str
    capacity: int
    allocated: int = 0
    reserved: int = 0
    # idle units still holding an implementation, and busy ones
    warm_idle: dict[str, int] = field(default_factory=dict)
    warm_busy: dict[str, int] = field(default_factory=dict)

    @property
    def free(self) -> int:
        return self.capacity - self.allocated - self.reserved

    @property
    def clean(self) -> int:
        return self.free - sum(self.warm_idle.values())

    def warm(self, impl: str) -> int:
        return self.warm_idle.get(impl, 0) + self.warm_busy.get(impl, 0)


@dataclass
class Allocation:
    handle: int
    pool_id: str
    sku: str
    implementation: str
    units: int
    time_us: int
    cold: bool
    setup_us: int
    active: bool = True


@dataclass(frozen=True)
class ClusterEvent:
    time_us: int
    kind: str  # alloc | release | capacity | rebalance | reserve
    pool_id: str
    units: int
    implementation: str = ""
    handle: int = -1
    allocated_after: int = 0
    capacity_after: int = 0


@dataclass(frozen=True)
class WarmChange:
    pool_id: str
    from_impl: str
    to_impl: str | None
    units: int


@dataclass(frozen=True)
class PoolStats:
    pool_id: str
    sku: str
    capacity: int
    allocated: int
    reserved: int
    free: int
    warm: Mapping[str, int]
    warm_idle: Mapping[str, int]


class ClusterState:
    def __init__(self, pools: Iterable[Pool], availability: Sequence[AvailabilityEvent] = ()):
        self.pools: dict[str, Pool] = {}
        for p in pools:
            if p.pool_id in self.pools:
                raise SchemaError(f"duplicate pool {p.pool_id}")
            self.pools[p.pool_id] = p
        self.availability = sorted(availability, key=lambda e: (e.time_us, e.sku, e.delta))
        self.allocations: dict[int, Allocation] = {}
        self.log: list[ClusterEvent] = []
        self._next_handle = 0

    # --- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: Mapping) -> ClusterState:
        try:
            pools = []
            for n, node in enumerate(doc["nodes"]):
                for s in node["skus"]:
                    pools.append(Pool(f"n{n}/{s['sku_id']}", s["sku_id"], int(s["units"])))
            events = [AvailabilityEvent.from_dict(e) for e in doc.get("availability_events", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed cluster config: {exc}") from None
        return cls(pools, events)

    @classmethod
    def load(cls, path: str | Path) -> ClusterState:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    @classmethod
    def single_pools(cls, capacities: Mapping[str, int]) -> ClusterState:
        return cls([Pool(f"n0/{sku}", sku, units) for sku, units in sorted(capacities.items())])

    def to_dict(self) -> dict:
        nodes: dict[int, list] = {}
        for p in self.pools.values():
            n = int(p.pool_id.split("/")[0][1:])
            nodes.setdefault(n, []).append({"sku_id": p.sku, "units": p.capacity})
        return {
            "nodes": [{"skus": nodes[n]} for n in sorted(nodes)],
            "availability_events": [e.to_dict() for e in self.availability],
        }

    # --- capacity queries ---------------------------------------------------

    def pools_for(self, sku: str) -> list[Pool]:
        return [p for pid, p in sorted(self.pools.items()) if p.sku == sku]

    def capacity_by_sku(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for p in self.pools.values():
            out[p.sku] = out.get(p.sku, 0) + p.capacity
        return out

    def max_pool_capacity(self) -> dict[str, int]:
        """Largest single-pool capacity per SKU, counting future spot grants."""
        out: dict[str, int] = {}
        for p in self.pools.values():
            out[p.sku] = max(out.get(p.sku, 0), p.capacity)
        for ev in self.availability:
            if ev.kind is AvailabilityKind.SPOT_GRANT:
                for p in self._event_pools(ev):
                    out[p.sku] = max(out.get(p.sku, 0), p.capacity + ev.delta)
        return out

    def _event_pools(self, ev: AvailabilityEvent) -> list[Pool]:
        pools = self.pools_for(ev.sku)
        if ev.node is not None:
            pools = [p for p in pools if p.pool_id == f"n{ev.node}/{ev.sku}"]
        return pools

    # --- allocation ---------------------------------------------------------

    def choose_pool(self, sku: str, units: int, implementation: str) -> Pool | None:
        """Fully-warm pools first, then the pool leaving the largest free block
        across the SKU after placement, then pool id."""
        pools = self.pools_for(sku)
        best = None
        best_key = None
        for p in pools:
            if p.free < units:
                continue
            largest_after = max(q.free - (units if q is p else 0) for q in pools)
            key = (0 if p.warm_idle.get(implementation, 0) >= units else 1, -largest_after, p.pool_id)
            if best_key is None or key < best_key:
                best, best_key = p, key
        return best

    def allocate(
        self,
        sku: str,
        units: int,
        implementation: str,
        time_us: int,
        *,
        setup_us: int = 0,
        pool_id: str | None = None,
    ) -> Allocation:
        pool = self.pools.get(pool_id) if pool_id else self.choose_pool(sku, units, implementation)
        if pool is None or pool.sku != sku or pool.free < units or units < 1:
            raise InsufficientCapacity(f"cannot place {units}x {sku} for {implementation}")
        clean = pool.clean
        warm_take = min(units, pool.warm_idle.get(implementation, 0))
        if warm_take:
            pool.warm_idle[implementation] -= warm_take
        need = units - warm_take
        take_clean = min(need, clean)
        need -= take_clean
        # evict other implementations' idle warm units, largest holder first
        for other in sorted(pool.warm_idle, key=lambda k: (-pool.warm_idle[k], k)):
            if need == 0:
                break
            if other == implementation:
                continue
            got = min(need, pool.warm_idle[other])
            pool.warm_idle[other] -= got
            need -= got
        _prune(pool.warm_idle)
        assert need == 0
        pool.allocated += units
        pool.warm_busy[implementation] = pool.warm_busy.get(implementation, 0) + units
        cold = warm_take < units
        alloc = Allocation(
            self._next_handle, pool.pool_id, sku, implementation, units, time_us, cold, setup_us if cold else 0
        )
        self._next_handle += 1
        self.allocations[alloc.handle] = alloc
        self._log(time_us, "alloc", pool, units, implementation, alloc.handle)
        return alloc

    def release(self, alloc: Allocation | int, time_us: int) -> None:
        handle = alloc if isinstance(alloc, int) else alloc.handle
        a = self.allocations.get(handle)
        if a is None or not a.active:
            raise DoubleRelease(f"allocation {handle} is not active")
        a.active = False
        pool = self.pools[a.pool_id]
        pool.allocated -= a.units
        pool.warm_busy[a.implementation] -= a.units
        _prune(pool.warm_busy)
        pool.warm_idle[a.implementation] = pool.warm_idle.get(a.implementation, 0) + a.units
        self._trim_warm(pool)
        self._log(time_us, "release", pool, a.units, a.implementation, handle)

    def reserve(self, pool_id: str, units: int, time_us: int) -> None:
        pool = self.pools[pool_id]
        if units > 0 and pool.free < units:
            raise InsufficientCapacity(f"cannot reserve {units} in {pool_id}")
        if pool.reserved + units < 0:
            raise ValueError("reservation would go negative")
        pool.reserved += units
        self._trim_warm(pool)
        self._log(time_us, "reserve", pool, units)

    def active_allocations(self) -> list[Allocation]:
        return [a for a in self.allocations.values() if a.active]

    # --- availability -------------------------------------------------------

    def apply_availability(self, ev: AvailabilityEvent, time_us: int) -> list[Allocation]:
        """Apply a spot grant or revoke; returns the allocations preempted to
        keep allocated + reserved within the shrunken capacity."""
        pools = self._event_pools(ev)
        if not pools:
            return []
        if ev.delta > 0:
            pool = pools[0]
            pool.capacity += ev.delta
            self._log(time_us, "capacity", pool, ev.delta)
            return []
        pool = min(pools, key=lambda p: (-p.capacity, p.pool_id))
        pool.capacity = max(0, pool.capacity + ev.delta)
        preempted = []
        if pool.reserved > pool.capacity:
            pool.reserved = pool.capacity
        while pool.allocated + pool.reserved > pool.capacity:
            victims = [a for a in self.active_allocations() if a.pool_id == pool.pool_id]
            victim = max(victims, key=lambda a: (a.time_us, a.handle))
            self.release(victim, time_us)
            preempted.append(victim)
        self._trim_warm(pool)
        self._log(time_us, "capacity", pool, ev.delta)
        return preempted

    @staticmethod
    def _trim_warm(pool: Pool) -> None:
        excess = sum(pool.warm_idle.values()) - max(pool.free, 0)
        for impl in sorted(pool.warm_idle, key=lambda k: (-pool.warm_idle[k], k)):
            if excess <= 0:
                break
            cut = min(excess, pool.warm_idle[impl])
            pool.warm_idle[impl] -= cut
            excess -= cut
        _prune(pool.warm_idle)

    # --- stats / rebalancing --------------------------------------------------

    def snapshot_stats(self, time_us: int = 0) -> dict[str, PoolStats]:
        return {
            pid: PoolStats(
                pid,
                p.sku,
                p.capacity,
                p.allocated,
                p.reserved,
                p.free,
                {k: p.warm(k) for k in sorted(set(p.warm_idle) | set(p.warm_busy))},
                dict(sorted(p.warm_idle.items())),
            )
            for pid, p in sorted(self.pools.items())
        }

    def rebalance_with_lookahead(
        self,
        pending: Sequence[WorkflowDag],
        time_us: int,
        library: AgentLibrary,
        assignments: Mapping[str, str] | None = None,
    ) -> list[WarmChange]:
        """Move idle warm units away from implementations whose capability has
        no pending work, toward the pending implementation with the most work.

        ``assignments`` (node id -> implementation) pins which implementation a
        pending node will use; otherwise every implementation of its capability
        counts as a candidate. Each target is re-warmed at most once per call;
        sources with no remaining target are demoted to cold.
        """
        pending_caps: set[str] = set()
        work: dict[str, float] = {}
        for dag in pending:
            for node in dag.nodes:
                pending_caps.add(node.capability)
                if assignments and node.id in assignments:
                    impls = [assignments[node.id]]
                else:
                    impls = [i.name for i in library.implementations_for(node.capability)]
                for name in impls:
                    work[name] = work.get(name, 0.0) + node.work_units
        changes: list[WarmChange] = []
        used: set[str] = set()
        for pid, pool in sorted(self.pools.items()):
            sku_class = library.skus[pool.sku].sku_class if pool.sku in library.skus else None
            idle = [
                (impl, n)
                for impl, n in pool.warm_idle.items()
                if n > 0 and library.implementations[impl].capability not in pending_caps
            ]
            for impl, n in sorted(idle, key=lambda t: (-t[1], t[0])):
                candidates = [
                    t
                    for t, w in work.items()
                    if w > 0
                    and t not in used
                    and t != impl
                    and sku_class in library.implementations[t].sku_classes
                ]
                target = min(candidates, key=lambda t: (-work[t], t)) if candidates else None
                pool.warm_idle[impl] -= n
                if target is not None:
                    pool.warm_idle[target] = pool.warm_idle.get(target, 0) + n
                    used.add(target)
                _prune(pool.warm_idle)
                changes.append(WarmChange(pid, impl, target, n))
                self._log(time_us, "rebalance", pool, n, f"{impl}->{target or ''}")
        return changes

    # --- internals ----------------------------------------------------------

    def _log(self, time_us, kind, pool, units, impl="", handle=-1):
        self.log.append(
            ClusterEvent(time_us, kind, pool.pool_id, units, impl, handle, pool.allocated, pool.capacity)
        )


def _prune(d: dict[str, int]) -> None:
    for k in [k for k, v in d.items() if v <= 0]:
        del d[k]
