"""Internal reuse level: fraction of a scenario's tree nodes shared with other scenarios."""

from __future__ import annotations

from typing import Iterable, Mapping, Optional

from sdvsim.behavior.tree import TreeLibrary


def expanded_nodes(scenario_trees: Iterable[str], library: TreeLibrary) -> list:
    """Every node of the scenario's trees after subtree expansion, one entry per inclusion."""
    nodes = []
    for name in sorted(set(scenario_trees)):
        nodes.extend(library.instantiate(name).walk())
    return nodes


def internal_reuse_level(
    scenario_trees: Iterable[str],
    library: TreeLibrary,
    executed_nodes: Optional[set] = None,
    manifests: Optional[Mapping[str, Iterable[str]]] = None,
) -> float:
    """M/L over the scenario's expanded nodes.

    A node is shared when the tree defining it is used by at least two
    scenarios (``library.usage``, or recomputed from ``manifests``). With
    ``executed_nodes`` (node uids), both counts are restricted to those nodes.
    """
    if manifests is not None:
        library.record_usage(manifests)
    nodes = expanded_nodes(scenario_trees, library)
    if executed_nodes is not None:
        nodes = [n for n in nodes if n.uid in executed_nodes]
    if not nodes:
        return 0.0
    shared = sum(1 for n in nodes if library.usage.get(n.origin, 0) >= 2)
    return shared / len(nodes)
