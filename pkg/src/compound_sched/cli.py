"""Command-line entry point.

Exit codes: 0 ok, 2 spec/input error, 3 planning error, 4 no feasible
configuration, 5 simulation error. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import scenario
from .cluster import ClusterState
from .config import ConfigPoint
from .errors import CompoundSchedError, SpecError
from .library import AgentLibrary
from .model import JobSpec, Mode, parse_job_spec
from .optimizer import Bounds, search
from .planner import CapabilityLexicon, LexiconPlanner
from .runtime import RunMetrics, execute, summary_csv, summary_row, write_trace

log = logging.getLogger("compound_sched")

PLANNER_OVERHEAD_FRACTION = 0.01


@dataclass
class RunRequest:
    spec: Path
    cluster: Path = scenario.CLUSTER
    profiles: Path = scenario.PROFILES
    skus: Path = scenario.SKUS
    agents: Path = scenario.AGENTS
    lexicon: Path = scenario.LEXICON
    search: str = "greedy"
    pin: Path | None = None
    out: Path | None = None
    seed: int = 0
    max_fanout: int = 16
    max_paths: int = 1
    planner_overhead: float | None = None


@dataclass
class RunResult:
    label: str
    metrics: RunMetrics
    config: ConfigPoint
    row: dict


class InputMissing(SpecError):
    pass


def _read(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputMissing(f"cannot read {path}: {exc.strerror or exc}") from None


def _check_paths(req: RunRequest) -> None:
    for p in (req.spec, req.cluster, req.profiles, req.skus, req.agents, req.lexicon, req.pin):
        if p is not None and not Path(p).is_file():
            raise InputMissing(f"cannot read {p}: no such file")


def cmd_run(req: RunRequest) -> RunResult:
    _check_paths(req)
    spec: JobSpec = parse_job_spec(_read(req.spec))
    library = AgentLibrary.load(req.agents, req.skus, req.profiles)
    lexicon = CapabilityLexicon.load(req.lexicon)
    lexicon.check_against(library)
    cluster = ClusterState.load(req.cluster)

    plan = LexiconPlanner(library).plan(spec, lexicon)

    pin_doc = None
    if req.pin is not None:
        pin_doc = json.loads(_read(req.pin))
    elif spec.mode is Mode.PINNED:
        pin_doc = spec.pinned_plan
        if isinstance(pin_doc, str):
            pin_doc = json.loads(_read(Path(req.spec).parent / pin_doc))

    if pin_doc is not None:
        config = ConfigPoint.from_document(pin_doc, plan.dag)
        overhead = 0.0
        label = config.label or "pinned"
    else:
        bounds = Bounds(req.max_fanout, req.max_paths)
        config, est = search(
            plan.dag,
            library,
            spec.objective,
            bounds,
            mode=req.search,
            capacity=cluster.capacity_by_sku(),
            max_pool=cluster.max_pool_capacity(),
        )
        label = "selected"
        config = config.relabel(label)
        overhead = (
            req.planner_overhead
            if req.planner_overhead is not None
            else PLANNER_OVERHEAD_FRACTION * est.latency_s
        )

    trace, metrics = execute(plan.dag, config, cluster, library, seed=req.seed, planner_overhead_s=overhead)
    row = summary_row(label, metrics, req.seed)

    if req.out is not None:
        out = Path(req.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dag.json").write_text(json.dumps(plan.dag.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "chosen_config.json").write_text(
            json.dumps(config.to_document(), indent=2) + "\n", encoding="utf-8"
        )
        (out / "tool_calls.json").write_text(
            json.dumps([c.to_dict() for c in plan.tool_calls], indent=2) + "\n", encoding="utf-8"
        )
        write_trace(out / "trace.jsonl", trace, metrics)
        (out / "summary.csv").write_text(summary_csv([row]), encoding="utf-8")
    log.info("%s: makespan %.3fs, gpu %.3f Wh", label, metrics.makespan_s, metrics.gpu_wh)
    return RunResult(label, metrics, config, row)


def ratios(baseline: RunMetrics, chosen: RunMetrics) -> tuple[float, float]:
    """(speedup, energy efficiency) of ``chosen`` relative to ``baseline``;
    energy uses GPU busy energy."""
    speedup = baseline.makespan_s / chosen.makespan_s if chosen.makespan_s else float("inf")
    eff = baseline.gpu_wh / chosen.gpu_wh if chosen.gpu_wh else float("inf")
    return speedup, eff


def cmd_compare(baseline: RunRequest, chosen: RunRequest, pins: list[Path] = ()) -> dict:
    base_out = chosen_out = None
    if chosen.out is not None:
        base_out = Path(chosen.out) / "baseline"
        chosen_out = Path(chosen.out) / "declarative"
    base = cmd_run(_with(baseline, out=base_out))
    sel = cmd_run(_with(chosen, out=chosen_out))
    rows = [base.row, sel.row]
    for pin in pins:
        sub = Path(chosen.out) / f"pin_{Path(pin).stem}" if chosen.out is not None else None
        rows.append(cmd_run(_with(chosen, pin=Path(pin), out=sub)).row)
    speedup, eff = ratios(base.metrics, sel.metrics)
    return {"rows": rows, "speedup": speedup, "energy_efficiency": eff}


def _with(req: RunRequest, **changes) -> RunRequest:
    d = dict(req.__dict__)
    d.update(changes)
    return RunRequest(**d)


# ---------------------------------------------------------------------------
# argparse
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cluster", type=Path, default=scenario.CLUSTER)
    p.add_argument("--profiles", type=Path, default=scenario.PROFILES)
    p.add_argument("--skus", type=Path, default=scenario.SKUS)
    p.add_argument("--agents", type=Path, default=scenario.AGENTS)
    p.add_argument("--lexicon", type=Path, default=scenario.LEXICON)
    p.add_argument("--search", choices=("greedy", "exhaustive"), default="greedy")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-fanout", type=int, default=16)
    p.add_argument("--max-paths", type=int, default=1)
    p.add_argument("--planner-overhead", type=float, default=None, help="seconds; default 1%% of the estimate")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compound-sched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="plan, optimize and simulate one workflow spec")
    run.add_argument("--spec", type=Path, required=True)
    run.add_argument("--pin", type=Path, default=None, help="run this config instead of searching")
    _common(run)

    cmp_ = sub.add_parser("compare", help="compare a baseline spec against a declarative spec")
    cmp_.add_argument("--baseline", type=Path, required=True)
    cmp_.add_argument("--spec", type=Path, required=True)
    cmp_.add_argument("--pin", type=Path, action="append", default=[], help="extra pinned rows")
    _common(cmp_)
    return parser


def _request(args, spec: Path, pin: Path | None = None) -> RunRequest:
    return RunRequest(
        spec=spec,
        cluster=args.cluster,
        profiles=args.profiles,
        skus=args.skus,
        agents=args.agents,
        lexicon=args.lexicon,
        search=args.search,
        pin=pin,
        out=args.out,
        seed=args.seed,
        max_fanout=args.max_fanout,
        max_paths=args.max_paths,
        planner_overhead=args.planner_overhead,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            result = cmd_run(_request(args, args.spec, args.pin))
            sys.stdout.write(summary_csv([result.row]))
        else:
            report = cmd_compare(_request(args, args.baseline), _request(args, args.spec), args.pin)
            sys.stdout.write(summary_csv(report["rows"]))
            sys.stdout.write(f"speedup,{report['speedup']:.2f}\n")
            sys.stdout.write(f"energy_efficiency,{report['energy_efficiency']:.2f}\n")
    except CompoundSchedError as exc:
        err = {"exit": exc.exit_code, "error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
