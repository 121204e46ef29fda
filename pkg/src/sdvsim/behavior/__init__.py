"""Behavior trees: DSL parsing, linking, ticking and reuse measurement."""

from sdvsim.behavior.dsl import BTNode, DSLError, TreeDef, load_tree_file, parse_tree, parse_trees
from sdvsim.behavior.reuse import internal_reuse_level
from sdvsim.behavior.tree import (
    FAILURE,
    RUNNING,
    SUCCESS,
    Blackboard,
    Decision,
    LinkError,
    TickFault,
    TickResult,
    TreeLibrary,
    link_library,
    register_condition,
    tick,
)

__all__ = [
    "BTNode", "DSLError", "TreeDef", "load_tree_file", "parse_tree", "parse_trees",
    "internal_reuse_level", "FAILURE", "RUNNING", "SUCCESS", "Blackboard", "Decision",
    "LinkError", "TickFault", "TickResult", "TreeLibrary", "link_library",
    "register_condition", "tick",
]
