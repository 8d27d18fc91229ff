"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to stable
process exit statuses without a lookup table.
"""

from __future__ import annotations


class CompoundSchedError(Exception):
    exit_code = 1


# --- spec / model errors (exit 2) -------------------------------------------


class SpecError(CompoundSchedError):
    exit_code = 2


class SchemaError(SpecError):
    """The spec file is not well-formed (bad JSON or wrong types)."""


class ValidationError(SpecError):
    """A well-formed document violates a model invariant."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CycleError(SpecError):
    def __init__(self, nodes):
        self.nodes = sorted(nodes)
        super().__init__("cycle among nodes " + ", ".join(self.nodes))


# --- planning errors (exit 3) -----------------------------------------------


class PlanningError(CompoundSchedError):
    exit_code = 3


class UnmappableTask(PlanningError):
    pass


class AmbiguousTask(PlanningError):
    pass


class DisconnectedTask(PlanningError):
    pass


class KindConflict(PlanningError):
    pass


class SchemaBindingError(PlanningError):
    pass


# --- library errors ---------------------------------------------------------


class LibraryError(CompoundSchedError):
    exit_code = 2


class DuplicateKey(LibraryError):
    pass


class DanglingReference(LibraryError):
    pass


class UnknownCapability(LibraryError):
    pass


class DegenerateObservation(LibraryError):
    pass


# --- optimizer errors (exit 4) ----------------------------------------------


class InvalidConfig(CompoundSchedError):
    exit_code = 4


class NoFeasibleConfig(CompoundSchedError):
    exit_code = 4


# --- cluster / simulation errors (exit 5) -----------------------------------


class SimulationError(CompoundSchedError):
    exit_code = 5


class InsufficientCapacity(SimulationError):
    pass


class DoubleRelease(SimulationError):
    pass


class DeadlockError(SimulationError):
    def __init__(self, node_id: str, message: str):
        self.node_id = node_id
        super().__init__(f"node {node_id}: {message}")
