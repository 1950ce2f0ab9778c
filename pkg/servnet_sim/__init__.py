"""
Servnet simulator

Deterministic discrete-event simulation of a servnet: scenario scripts,
the event log, the simulated network and DB server, a scripted
adversary and the built-in attack suite.
"""

from servnet_sim.scenario import (
    AdversaryAction,
    Controls,
    Honesty,
    NodePolicy,
    NodeSpec,
    ScenarioScript,
    ScenarioValidationError,
    load_scenario,
    parse_scenario,
)
from servnet_sim.events import Event, EventLog
from servnet_sim.engine import Sim, build_sim, inject_adversary, run
from servnet_sim.snapshot import (
    SnapshotRow,
    check_directory_convergence,
    random_scenario,
    replay_ledgers,
    snapshot_csv,
    snapshot_from_events,
    snapshot_reputations,
    write_snapshot_csv,
)
from servnet_sim.attacks import AttackOutcome, attack_scenarios, run_attack_suite

__all__ = [
    "AdversaryAction",
    "Controls",
    "Honesty",
    "NodePolicy",
    "NodeSpec",
    "ScenarioScript",
    "ScenarioValidationError",
    "load_scenario",
    "parse_scenario",
    "Event",
    "EventLog",
    "Sim",
    "build_sim",
    "inject_adversary",
    "run",
    "SnapshotRow",
    "check_directory_convergence",
    "random_scenario",
    "replay_ledgers",
    "snapshot_csv",
    "snapshot_from_events",
    "snapshot_reputations",
    "write_snapshot_csv",
    "AttackOutcome",
    "attack_scenarios",
    "run_attack_suite",
]
