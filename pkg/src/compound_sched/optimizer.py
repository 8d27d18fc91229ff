"""Predicting and searching the lever space.

``estimate`` is an analytic as-soon-as-possible list schedule: every node
starts when its last predecessor finishes and every chunk gets its units
immediately. Setup latency is skipped only when enough idle units are already
warm for the implementation, mirroring the cluster's reuse rule. On a cluster
large enough that nothing queues it predicts exactly what the simulator
measures.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import ConfigPoint, NodeConfig, node_quality, validate_config
from .errors import NoFeasibleConfig
from .library import AgentLibrary, SkuClass
from .model import US_PER_S, Criterion, DagNode, ObjectiveHierarchy, WorkflowDag, to_us
from .runtime import entry_dollars, entry_energy_wh, split_task

log = logging.getLogger(__name__)

MAX_SWEEPS = 10


@dataclass(frozen=True)
class Bounds:
    max_fan_out: int = 16
    max_paths: int = 1


@dataclass(frozen=True)
class ConfigEstimate:
    config: ConfigPoint
    latency_us: int
    energy_wh: float
    gpu_wh: float
    cpu_wh: float
    dollars: float
    quality: int
    peak_units: Mapping[str, int] = field(default_factory=dict)
    max_chunk_units: Mapping[str, int] = field(default_factory=dict)

    @property
    def latency_s(self) -> float:
        return self.latency_us / US_PER_S

    def fits(self, capacity: Mapping[str, int] | None, max_pool: Mapping[str, int] | None = None) -> bool:
        if capacity is not None:
            for sku, peak in self.peak_units.items():
                if peak > capacity.get(sku, 0):
                    return False
        if max_pool is not None:
            for sku, units in self.max_chunk_units.items():
                if units > max_pool.get(sku, 0):
                    return False
        return True


def estimate(
    config: ConfigPoint,
    dag: WorkflowDag,
    library: AgentLibrary,
    *,
    warm: Mapping[tuple[str, str], int] | None = None,
    validate: bool = True,
) -> ConfigEstimate:
    """Predict latency, busy energy, dollars and quality of ``config``.

    ``warm`` maps (sku, implementation) to units already loaded and idle at
    time zero.
    """
    if validate:
        validate_config(config, dag, library)
    assigned = config.as_dict()
    preds: dict[str, list[str]] = {n.id: [] for n in dag.nodes}
    succ: dict[str, list[str]] = {n.id: [] for n in dag.nodes}
    for e in dag.edges:
        preds[e.consumer].append(e.producer)
        succ[e.producer].append(e.consumer)
    waiting = {nid: len(set(p)) for nid, p in preds.items()}
    finish: dict[str, int] = {}
    idle = dict(warm or {})
    releases: list[tuple[int, str, str, int]] = []
    heap = [(0, nid) for nid, k in waiting.items() if k == 0]
    heapq.heapify(heap)

    gpu = cpu = dollars = 0.0
    starts: dict[str, list[int]] = {}
    ends: dict[str, list[int]] = {}
    units_of: dict[str, list[int]] = {}
    max_chunk: dict[str, int] = {}

    while heap:
        t, nid = heapq.heappop(heap)
        while releases and releases[0][0] <= t:
            _, sku_id, impl, u = heapq.heappop(releases)
            idle[(sku_id, impl)] = idle.get((sku_id, impl), 0) + u
        node = dag.node(nid)
        cfg = assigned[nid]
        profile = library.profile(cfg.implementation, cfg.sku, cfg.units)
        sku = library.skus[cfg.sku]
        setup_us = to_us(profile.setup_s)
        end_max = t
        key = (cfg.sku, cfg.implementation)
        for _path in range(cfg.path_count):
            for work in split_task(node, cfg.fan_out):
                have = idle.get(key, 0)
                take = min(have, cfg.units)
                idle[key] = have - take
                dur = profile.run_us(work) + (0 if take == cfg.units else setup_us)
                end = t + dur
                heapq.heappush(releases, (end, cfg.sku, cfg.implementation, cfg.units))
                end_max = max(end_max, end)
                e_wh = entry_energy_wh(cfg.units, sku.busy_watts, dur)
                if sku.sku_class is SkuClass.GPU:
                    gpu += e_wh
                else:
                    cpu += e_wh
                dollars += entry_dollars(cfg.units, sku.dollars_per_unit_hour, dur)
                starts.setdefault(cfg.sku, []).append(t)
                ends.setdefault(cfg.sku, []).append(end)
                units_of.setdefault(cfg.sku, []).append(cfg.units)
        max_chunk[cfg.sku] = max(max_chunk.get(cfg.sku, 0), cfg.units)
        finish[nid] = end_max
        for s in sorted(set(succ[nid])):
            waiting[s] -= 1
            if waiting[s] == 0:
                heapq.heappush(heap, (max(finish[p] for p in preds[s]), s))

    peak = {
        sku: kernels.peak_usage(np.array(starts[sku]), np.array(ends[sku]), np.array(units_of[sku]))
        for sku in sorted(starts)
    }
    quality = min((node_quality(n, assigned[n.id], library) for n in dag.nodes), default=0)
    return ConfigEstimate(
        config=config,
        latency_us=max(finish.values(), default=0),
        energy_wh=gpu + cpu,
        gpu_wh=gpu,
        cpu_wh=cpu,
        dollars=dollars,
        quality=quality,
        peak_units=peak,
        max_chunk_units=max_chunk,
    )


# ---------------------------------------------------------------------------
# Lever space
# ---------------------------------------------------------------------------


def node_options(
    node: DagNode,
    library: AgentLibrary,
    bounds: Bounds,
    *,
    quality_floor: int | None = None,
    max_pool: Mapping[str, int] | None = None,
) -> list[NodeConfig]:
    """Valid lever settings for one node, in a fixed order."""
    out = []
    fans = range(1, bounds.max_fan_out + 1) if node.splittable else (1,)
    paths = range(1, bounds.max_paths + 1) if node.multi_path else (1,)
    for impl in library.implementations_for(node.capability):
        for prof in library.profiles_for(impl.name):
            if max_pool is not None and prof.units > max_pool.get(prof.sku, 0):
                continue
            for f in fans:
                for p in paths:
                    cfg = NodeConfig(impl.name, prof.sku, prof.units, f, p)
                    if quality_floor is not None and node_quality(node, cfg, library) < quality_floor:
                        continue
                    out.append(cfg)
    return out


def count_configs(dag: WorkflowDag, library: AgentLibrary, bounds: Bounds, **kw) -> int:
    total = 1
    for node in dag.nodes:
        total *= len(node_options(node, library, bounds, **kw))
    return total


def enumerate_configs(
    dag: WorkflowDag,
    library: AgentLibrary,
    bounds: Bounds,
    **kw,
) -> Iterator[ConfigPoint]:
    """Lazy cross-product of every node's options, nodes in id order."""
    ids = sorted(dag.node_ids)
    options = [node_options(dag.node(nid), library, bounds, **kw) for nid in ids]
    for combo in itertools.product(*options):
        yield ConfigPoint(tuple(zip(ids, combo)))


def pareto_filter(estimates: Sequence[ConfigEstimate]) -> list[ConfigEstimate]:
    """Non-dominated estimates under (dollars, energy, latency, -quality)."""
    if not estimates:
        return []
    pts = np.array(
        [[e.dollars, e.energy_wh, e.latency_us, -e.quality] for e in estimates], dtype=np.float64
    )
    mask = kernels.dominated_mask(pts)
    return [e for e, dom in zip(estimates, mask) if not dom]


# ---------------------------------------------------------------------------
# Selection
# ---------------------------------------------------------------------------


def criterion_value(est: ConfigEstimate, c: Criterion) -> float:
    if c is Criterion.MIN_COST_DOLLARS:
        return est.dollars
    if c is Criterion.MIN_ENERGY:
        return est.energy_wh
    if c is Criterion.MIN_LATENCY:
        return est.latency_s
    return -est.quality


def _sig(x: float, digits: int = 7) -> float:
    return float(f"{x:.{digits - 1}e}")


def objective_key(est: ConfigEstimate, objective: ObjectiveHierarchy) -> tuple:
    """Lexicographic sort key: criteria in priority order, then config id.

    Energy and dollars are compared at 7 significant digits: chunk durations
    are rounded to whole microseconds, and that noise must not masquerade as a
    real difference between fan-out settings.
    """
    key = []
    for c in objective.criteria:
        if c is Criterion.MIN_LATENCY:
            key.append(est.latency_us)
        elif c is Criterion.MAX_QUALITY:
            key.append(-est.quality)
        else:
            key.append(_sig(criterion_value(est, c)))
    key.append(est.config.identifier)
    return tuple(key)


class _Evaluator:
    def __init__(self, dag, library, objective, capacity, max_pool):
        self.dag = dag
        self.library = library
        self.objective = objective
        self.capacity = capacity
        self.max_pool = max_pool
        self.cache: dict[str, ConfigEstimate] = {}
        self.evaluations = 0

    def __call__(self, config: ConfigPoint) -> ConfigEstimate:
        ident = config.identifier
        est = self.cache.get(ident)
        if est is None:
            est = estimate(config, self.dag, self.library, validate=False)
            self.cache[ident] = est
            self.evaluations += 1
        return est

    def key(self, est: ConfigEstimate) -> tuple:
        floor = self.objective.quality_floor
        ok = est.fits(self.capacity, self.max_pool) and (floor is None or est.quality >= floor)
        return (0 if ok else 1,) + objective_key(est, self.objective)

    def feasible(self, est: ConfigEstimate) -> bool:
        return self.key(est)[0] == 0


def _options(dag, library, bounds, objective, max_pool):
    opts = {
        n.id: node_options(n, library, bounds, quality_floor=objective.quality_floor, max_pool=max_pool)
        for n in dag.nodes
    }
    empty = sorted(nid for nid, o in opts.items() if not o)
    if empty:
        raise NoFeasibleConfig(f"no lever setting satisfies the constraints for {', '.join(empty)}")
    return opts


def _local_init(dag, library, objective, opts) -> ConfigPoint:
    """Each node at its best setting when evaluated on its own."""
    chosen = {}
    for node in dag.nodes:
        solo = WorkflowDag((node,), ())
        best = min(
            opts[node.id],
            key=lambda cfg: objective_key(
                estimate(ConfigPoint(((node.id, cfg),)), solo, library, validate=False), objective
            ),
        )
        chosen[node.id] = best
    return ConfigPoint.of(chosen)


def _light_init(dag, opts) -> ConfigPoint:
    """Each node at its smallest footprint; a fallback start when the greedy
    start cannot fit on the cluster."""
    return ConfigPoint.of(
        {
            n.id: min(opts[n.id], key=lambda c: (c.units * c.fan_out * c.path_count, c))
            for n in dag.nodes
        }
    )


def _descend(start: ConfigPoint, order: Sequence[str], opts, ev: _Evaluator) -> ConfigPoint:
    current = start
    cur_key = ev.key(ev(current))
    for sweep in range(MAX_SWEEPS):
        improved = False
        for nid in order:
            best, best_key = current, cur_key
            for cfg in opts[nid]:
                cand = current.with_node(nid, cfg)
                k = ev.key(ev(cand))
                if k < best_key:
                    best, best_key = cand, k
            if best is not current:
                current, cur_key = best, best_key
                improved = True
        if not improved:
            log.debug("greedy converged after %d sweeps", sweep + 1)
            break
    return current


def greedy_search(
    dag: WorkflowDag,
    library: AgentLibrary,
    objective: ObjectiveHierarchy,
    bounds: Bounds = Bounds(),
    *,
    capacity: Mapping[str, int] | None = None,
    max_pool: Mapping[str, int] | None = None,
) -> ConfigPoint:
    """Coordinate descent over nodes in topological order.

    ``capacity`` (total units per SKU) and ``max_pool`` (largest single pool
    per SKU) make configurations that would have to queue infeasible.
    """
    from .model import topological_order

    if not dag.nodes:
        return ConfigPoint(())
    opts = _options(dag, library, bounds, objective, max_pool)
    ev = _Evaluator(dag, library, objective, capacity, max_pool)
    order = topological_order(dag)
    result = _descend(_local_init(dag, library, objective, opts), order, opts, ev)
    if not ev.feasible(ev(result)):
        result = _descend(_light_init(dag, opts), order, opts, ev)
    if not ev.feasible(ev(result)):
        raise NoFeasibleConfig("greedy search found no configuration that fits the cluster")
    log.info("greedy search: %d estimates", ev.evaluations)
    return result


def exhaustive_search(
    dag: WorkflowDag,
    library: AgentLibrary,
    objective: ObjectiveHierarchy,
    bounds: Bounds = Bounds(),
    *,
    capacity: Mapping[str, int] | None = None,
    max_pool: Mapping[str, int] | None = None,
) -> ConfigPoint:
    opts = _options(dag, library, bounds, objective, max_pool)  # raises when a node has no option
    del opts
    ev = _Evaluator(dag, library, objective, capacity, max_pool)
    best = None
    best_key = None
    for config in enumerate_configs(
        dag, library, bounds, quality_floor=objective.quality_floor, max_pool=max_pool
    ):
        k = ev.key(ev(config))
        if best_key is None or k < best_key:
            best, best_key = config, k
    if best is None or best_key[0] != 0:
        raise NoFeasibleConfig("no enumerated configuration fits the cluster")
    return best


def search(
    dag: WorkflowDag,
    library: AgentLibrary,
    objective: ObjectiveHierarchy,
    bounds: Bounds = Bounds(),
    *,
    mode: str = "greedy",
    **kw,
) -> tuple[ConfigPoint, ConfigEstimate]:
    fn = {"greedy": greedy_search, "exhaustive": exhaustive_search}[mode]
    config = fn(dag, library, objective, bounds, **kw)
    return config, estimate(config, dag, library)
