"""Deterministic simulator for two content-based publish-subscribe protocols.

The package provides a discrete-event network simulator (``simnet``), a
Kademlia-style overlay (``overlay``), an attribute/range predicate language
with mergeable filter sets (``predicate``), a decentralized rendezvous
protocol with replication, refresh and shortcut routing (``rendezvous``), a
publisher-centered multicast protocol with capacity-bounded helper
delegation (``fastdelivery``), and a scenario harness with built-in
correctness oracles (``scenarios``, ``harness``).
"""
from .harness import (
    RunReport,
    VARIANTS,
    emit_report,
    replication_sweep,
    run_compare,
    run_named,
    run_scenario,
)
from .predicate import Predicate, filter_set_insert, matches, parse_predicate
from .scenarios import SCENARIO_NAMES, ScenarioScript, build

__all__ = [
    "Predicate",
    "RunReport",
    "SCENARIO_NAMES",
    "ScenarioScript",
    "VARIANTS",
    "build",
    "emit_report",
    "filter_set_insert",
    "matches",
    "parse_predicate",
    "replication_sweep",
    "run_compare",
    "run_named",
    "run_scenario",
]
