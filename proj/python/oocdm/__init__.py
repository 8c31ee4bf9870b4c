"""Object-oriented causal dynamics model toolkit (C++ core)."""

from ._core import (  # noqa: F401
    checkpoint_aill,
    collect,
    discover_checkpoint,
    eval_primitive,
    graph_accuracy,
    ground_sizes,
    ground_truth_graph_json,
    oracle_mpc_episode,
    run_experiment,
    schema_json,
)

__all__ = [
    "checkpoint_aill",
    "collect",
    "discover_checkpoint",
    "eval_primitive",
    "graph_accuracy",
    "ground_sizes",
    "ground_truth_graph_json",
    "oracle_mpc_episode",
    "run_experiment",
    "schema_json",
]
