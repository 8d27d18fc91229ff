"""The six acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line; they are printed together in the
terminal summary and also to stdout (visible with ``-s``).
"""

from __future__ import annotations

import random
from collections import defaultdict

import numpy as np
import pytest
from _gen import (
    ample_cluster,
    random_cluster,
    random_config,
    random_dag,
    random_library,
    small_instance,
)
from conftest import ACCEPTANCE

from compound_sched import cli, scenario
from compound_sched.cluster import ClusterState
from compound_sched.config import ConfigPoint
from compound_sched.model import ObjectiveHierarchy
from compound_sched.optimizer import (
    Bounds,
    ConfigEstimate,
    criterion_value,
    estimate,
    exhaustive_search,
    greedy_search,
    pareto_filter,
)
from compound_sched.runtime import execute, trace_to_jsonl

TABLE = {
    "baseline": (285.0, 155.0),
    "cpu": (83.0, 34.0),
    "gpu": (77.0, 43.0),
    "gpu_cpu": (77.0, 42.0),
}


def _report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE.append(line)
    print(line)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-12)


def test_c1_pinned_configs_match_table(library, video_plan):
    got = {}
    for label in TABLE:
        cfg = scenario.load_pin(label, video_plan)
        _, m = execute(video_plan.dag, cfg, scenario.load_cluster(), library)
        got[label] = (m.makespan_s, m.gpu_wh)
    ok = all(
        _rel(got[k][0], TABLE[k][0]) <= 0.02 and _rel(got[k][1], TABLE[k][1]) <= 0.02 for k in TABLE
    )
    _report(1, ok, " ".join(f"{k}=({v[0]:.1f}s,{v[1]:.1f}Wh)" for k, v in got.items()))
    assert ok, got


def test_c2_objective_selection(library, video_plan):
    cluster = scenario.load_cluster()
    kw = dict(capacity=cluster.capacity_by_sku(), max_pool=cluster.max_pool_capacity())
    dag = video_plan.dag

    cost = greedy_search(dag, library, ObjectiveHierarchy.from_token("MIN_COST"), Bounds(), **kw)
    stt = [cost[n.id] for n in dag.nodes if n.capability == "speech_to_text"]
    cpu_stt = all(library.skus[c.sku].sku_class.value == "cpu" for c in stt)

    lat = greedy_search(dag, library, ObjectiveHierarchy.from_token("MIN_LATENCY"), Bounds(), **kw)
    _, m = execute(dag, lat, scenario.load_cluster(), library)
    ok = cpu_stt and abs(m.makespan_s - 77.0) <= 77.0 * 0.02 and abs(m.gpu_wh - 42.0) <= 42.0 * 0.02
    _report(2, ok, f"MIN_COST cpu stt={cpu_stt}; MIN_LATENCY {m.makespan_s:.1f}s {m.gpu_wh:.1f}Wh")
    assert ok


def test_c3_compare_ratios(tmp_path):
    base = cli.RunRequest(spec=scenario.BASELINE_JOB, out=tmp_path)
    chosen = cli.RunRequest(spec=scenario.VIDEO_JOB, out=tmp_path)
    report = cli.cmd_compare(base, chosen)
    s, e = report["speedup"], report["energy_efficiency"]
    ok = 3.3 <= s <= 3.5 and 4.4 <= e <= 4.7
    _report(3, ok, f"speedup={s:.2f} energy_efficiency={e:.2f}")
    assert ok


def _dominance_oracle(points: np.ndarray) -> np.ndarray:
    n = len(points)
    out = np.zeros(n, dtype=bool)
    for i in range(n):
        for j in range(n):
            if i != j and np.all(points[j] <= points[i]) and np.any(points[j] < points[i]):
                out[i] = True
                break
    return out


def test_c4_greedy_near_optimal_and_pareto_exact():
    rng = random.Random(4)
    close = 0
    trials = 200
    for _ in range(trials):
        lib, dag, bounds = small_instance(rng)
        obj = ObjectiveHierarchy.from_token(rng.choice(["MIN_COST", "MIN_LATENCY", "MIN_DOLLARS"]))
        g = estimate(greedy_search(dag, lib, obj, bounds), dag, lib)
        x = estimate(exhaustive_search(dag, lib, obj, bounds), dag, lib)
        gv, xv = criterion_value(g, obj.primary), criterion_value(x, obj.primary)
        close += gv <= xv * 1.05 + 1e-12

    mismatches = 0
    for _ in range(100):
        n = rng.randint(1, 40)
        pts = np.array([[rng.randint(0, 5) for _ in range(4)] for _ in range(n)], dtype=float)
        ests = [
            ConfigEstimate(ConfigPoint((), f"p{i}"), int(p[2]), p[1], 0.0, p[1], p[0], int(-p[3]))
            for i, p in enumerate(pts)
        ]
        kept = {e.config.label for e in pareto_filter(ests)}
        oracle = {f"p{i}" for i, d in enumerate(_dominance_oracle(pts)) if not d}
        mismatches += kept != oracle

    ok = close >= 0.95 * trials and mismatches == 0
    _report(4, ok, f"greedy within 5% in {close}/{trials}; pareto mismatches={mismatches}/100")
    assert ok


def _invariant_violations(dag, config, trace) -> list[str]:
    bad = []
    # capacity: replay the cluster log
    allocated: dict[str, int] = defaultdict(int)
    open_handles: dict[int, int] = {}
    for ev in trace.cluster_log:
        if ev.kind == "alloc":
            if ev.handle in open_handles:
                bad.append(f"handle {ev.handle} allocated twice")
            open_handles[ev.handle] = ev.time_us
            allocated[ev.pool_id] += ev.units
        elif ev.kind == "release":
            if ev.handle not in open_handles:
                bad.append(f"release of unknown handle {ev.handle}")
            elif ev.time_us < open_handles.pop(ev.handle):
                bad.append(f"handle {ev.handle} released before allocation")
            allocated[ev.pool_id] -= ev.units
        if allocated[ev.pool_id] != ev.allocated_after:
            bad.append(f"{ev.pool_id}: replay {allocated[ev.pool_id]} != log {ev.allocated_after}")
        if ev.allocated_after > ev.capacity_after or ev.allocated_after < 0:
            bad.append(f"{ev.pool_id}: {ev.allocated_after} allocated of {ev.capacity_after}")
    if open_handles:
        bad.append(f"unreleased handles {sorted(open_handles)}")

    done = [e for e in trace.entries if not e.preempted]
    first_start = {}
    last_end = {}
    work = defaultdict(float)
    for e in done:
        first_start[e.node_id] = min(first_start.get(e.node_id, e.start_us), e.start_us)
        last_end[e.node_id] = max(last_end.get(e.node_id, e.end_us), e.end_us)
        work[e.node_id] += e.work
    for edge in dag.edges:
        if first_start[edge.consumer] < last_end[edge.producer]:
            bad.append(f"{edge.consumer} started before {edge.producer} finished")
    for n in dag.nodes:
        want = n.work_units * config[n.id].path_count
        if abs(work[n.id] - want) > 1e-6 * max(1.0, want):
            bad.append(f"{n.id}: work {work[n.id]} != {want}")
    return bad


def test_c5_simulator_invariants():
    rng = random.Random(5)
    violations = []
    for trial in range(500):
        lib = random_library(rng)
        dag = random_dag(rng, max_nodes=6)
        bounds = Bounds(rng.randint(1, 8), 2)
        config = random_config(rng, dag, lib, bounds)
        churn = trial % 3 == 0
        seed = rng.randrange(2**31)
        spec = random_cluster(rng, config, churn=churn)
        doc = spec.to_dict()
        t1, _ = execute(dag, config, ClusterState.from_dict(doc), lib, seed=seed, rebalance=trial % 2 == 0)
        t2, _ = execute(dag, config, ClusterState.from_dict(doc), lib, seed=seed, rebalance=trial % 2 == 0)
        found = _invariant_violations(dag, config, t1)
        if trace_to_jsonl(t1) != trace_to_jsonl(t2):
            found.append("replay differs")
        violations += [f"trial {trial}: {v}" for v in found]
    _report(5, not violations, f"500 simulations, {len(violations)} violations")
    assert not violations, violations[:10]


def test_c6_estimate_matches_uncontended_simulation():
    rng = random.Random(6)
    worst = 0.0
    for _ in range(100):
        lib = random_library(rng)
        dag = random_dag(rng, max_nodes=6)
        config = random_config(rng, dag, lib, Bounds(rng.randint(1, 8), 2))
        est = estimate(config, dag, lib)
        _, m = execute(dag, config, ample_cluster(dag, config), lib)
        worst = max(
            worst,
            _rel(m.makespan_s, est.latency_s),
            _rel(m.busy_wh, est.energy_wh),
            _rel(m.dollars, est.dollars) if est.dollars else 0.0,
        )
    ok = worst <= 1e-6
    _report(6, ok, f"worst relative gap {worst:.2e} over 100 pairs")
    assert ok


@pytest.mark.parametrize("label", list(TABLE))
def test_pinned_estimate_agrees(library, video_plan, label):
    cfg = scenario.load_pin(label, video_plan)
    est = estimate(cfg, video_plan.dag, library)
    assert est.latency_s == pytest.approx(TABLE[label][0], rel=0.02)
    assert est.gpu_wh == pytest.approx(TABLE[label][1], rel=0.02)
