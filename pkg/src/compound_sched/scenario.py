"""Bundled video-understanding scenario: file locations and loaders."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .cluster import ClusterState
from .config import ConfigPoint
from .library import AgentLibrary, calibrate_catalog, profile_to_dict
from .model import JobSpec, parse_job_spec
from .planner import CapabilityLexicon, LexiconPlanner, Plan

DATA = Path(str(resources.files("compound_sched") / "data"))

AGENTS = DATA / "agents.json"
SKUS = DATA / "skus.json"
PROFILES = DATA / "profiles.json"
OBSERVATIONS = DATA / "observations.json"
LEXICON = DATA / "lexicon.json"
CLUSTER = DATA / "cluster.json"
VIDEO_JOB = DATA / "video_job.json"
BASELINE_JOB = DATA / "baseline_job.json"
PINS = {label: DATA / "pins" / f"{label}.json" for label in ("baseline", "cpu", "gpu", "gpu_cpu")}


def load_library(profiles: Path = PROFILES, skus: Path = SKUS, agents: Path = AGENTS) -> AgentLibrary:
    return AgentLibrary.load(agents, skus, profiles)


def load_lexicon(path: Path = LEXICON) -> CapabilityLexicon:
    return CapabilityLexicon.load(path)


def load_cluster(path: Path = CLUSTER) -> ClusterState:
    return ClusterState.load(path)


def load_job(path: Path = VIDEO_JOB) -> JobSpec:
    return parse_job_spec(Path(path).read_text(encoding="utf-8"))


def plan_job(spec: JobSpec, library: AgentLibrary | None = None, lexicon: CapabilityLexicon | None = None) -> Plan:
    library = library or load_library()
    lexicon = lexicon or load_lexicon()
    return LexiconPlanner(library).plan(spec, lexicon)


def load_pin(label: str, plan: Plan) -> ConfigPoint:
    return ConfigPoint.load(PINS[label], plan.dag)


def rebuild_profiles(observations: Path = OBSERVATIONS) -> list[dict]:
    """Profile catalog derived from the recorded observations."""
    obs = json.loads(Path(observations).read_text(encoding="utf-8"))
    return [profile_to_dict(p) for p in calibrate_catalog(obs)]


def main() -> None:  # pragma: no cover - maintenance entry point
    PROFILES.write_text(json.dumps(rebuild_profiles(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {PROFILES}")


if __name__ == "__main__":  # pragma: no cover
    main()
