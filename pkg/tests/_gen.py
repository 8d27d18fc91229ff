"""Random libraries, DAGs, configs and clusters for the property tests."""

from __future__ import annotations

import random

from compound_sched.cluster import (
    AvailabilityEvent,
    AvailabilityKind,
    ClusterState,
    Pool,
)
from compound_sched.config import ConfigPoint
from compound_sched.library import (
    AgentLibrary,
    AgentSpec,
    ArgSpec,
    ExecutionProfile,
    HardwareSku,
    Implementation,
    SkuClass,
)
from compound_sched.model import DagNode, Edge, MediaKind, WorkflowDag
from compound_sched.optimizer import Bounds, count_configs, node_options

TEXT = MediaKind.TEXT
SKUS = {
    "cpu-x": (SkuClass.CPU, 20.0, 2.0, 0.04),
    "gpu-y": (SkuClass.GPU, 300.0, 40.0, 2.5),
}


def random_library(rng: random.Random, n_caps: int = 4) -> AgentLibrary:
    lib = AgentLibrary()
    for sku, (cls, busy, idle, rate) in SKUS.items():
        lib.register(HardwareSku(sku, cls, "gen", "unit", busy, idle, rate))
    for c in range(n_caps):
        cap = f"cap{c}"
        lib.register(AgentSpec(cap, (ArgSpec("file", "path"),), (TEXT,), TEXT))
        for i in range(rng.randint(1, 2)):
            classes = rng.choice([("cpu",), ("gpu",), ("cpu", "gpu")])
            name = f"{cap}-impl{i}"
            lib.register(
                Implementation(name, cap, rng.randint(1, 4), frozenset(SkuClass(k) for k in classes))
            )
            for k in classes:
                sku = "cpu-x" if k == "cpu" else "gpu-y"
                for units in sorted(rng.sample([1, 2, 4], rng.randint(1, 2))):
                    lib.register(
                        ExecutionProfile(
                            name,
                            sku,
                            units,
                            throughput=round(rng.uniform(0.2, 3.0), 3),
                            setup_s=rng.choice([0.0, 0.0, 0.5, 2.0]),
                        )
                    )
    return lib.freeze()


def random_dag(rng: random.Random, max_nodes: int = 4, n_caps: int = 4) -> WorkflowDag:
    n = rng.randint(1, max_nodes)
    nodes = []
    for i in range(n):
        splittable = rng.random() < 0.7
        nodes.append(
            DagNode(
                id=f"t{i}",
                capability=f"cap{rng.randrange(n_caps)}",
                work_units=round(rng.uniform(1.0, 60.0), 3),
                consumes=(TEXT,),
                produces=TEXT,
                splittable=splittable,
                min_chunk=round(rng.uniform(1.0, 15.0), 3) if splittable else 0.0,
                multi_path=rng.random() < 0.3,
                quality_ceiling=5,
            )
        )
    edges = []
    for j in range(1, n):
        for i in range(j):
            if rng.random() < 0.4:
                edges.append(Edge(f"t{i}", f"t{j}", TEXT))
    return WorkflowDag(tuple(nodes), tuple(edges), frozenset({TEXT}))


def small_instance(rng: random.Random, limit: int = 200):
    """(library, dag, bounds) whose config space has at most ``limit`` points."""
    while True:
        lib = random_library(rng)
        dag = random_dag(rng)
        bounds = Bounds(rng.randint(1, 3), rng.randint(1, 2))
        if count_configs(dag, lib, bounds) <= limit:
            return lib, dag, bounds


def random_config(rng: random.Random, dag: WorkflowDag, lib: AgentLibrary, bounds: Bounds) -> ConfigPoint:
    return ConfigPoint.of({n.id: rng.choice(node_options(n, lib, bounds)) for n in dag.nodes})


def ample_cluster(dag: WorkflowDag, config: ConfigPoint) -> ClusterState:
    """One pool per SKU, large enough that nothing ever queues."""
    need: dict[str, int] = {}
    for nid, cfg in config.assignments:
        need[cfg.sku] = need.get(cfg.sku, 0) + cfg.units * cfg.fan_out * cfg.path_count
    return ClusterState.single_pools({sku: max(need.get(sku, 0), 1) for sku in SKUS})


def random_cluster(rng: random.Random, config: ConfigPoint, *, churn: bool = False) -> ClusterState:
    """Tight multi-pool cluster; optionally with spot grants and revocations."""
    widest: dict[str, int] = {}
    for _, cfg in config.assignments:
        widest[cfg.sku] = max(widest.get(cfg.sku, 0), cfg.units)
    pools = []
    for sku in SKUS:
        for k in range(rng.randint(1, 3)):
            cap = widest.get(sku, 1) + rng.randint(0, 6)
            pools.append(Pool(f"n{k}/{sku}", sku, cap))
    events = []
    if churn:
        for _ in range(rng.randint(1, 4)):
            sku = rng.choice(list(SKUS))
            t = rng.randint(1, 40_000_000)
            kind = rng.choice([AvailabilityKind.SPOT_GRANT, AvailabilityKind.SPOT_REVOKE])
            delta = rng.randint(1, 3)
            events.append(AvailabilityEvent(t, sku, delta if kind is AvailabilityKind.SPOT_GRANT else -delta, kind))
            if kind is AvailabilityKind.SPOT_REVOKE:
                # give it back later so the workload can still finish
                events.append(
                    AvailabilityEvent(t + rng.randint(1, 20_000_000), sku, delta, AvailabilityKind.SPOT_GRANT)
                )
    return ClusterState(pools, events)
