"""Federated learning and unlearning with task vectors."""

from ._core import (
    ArgumentError,
    Config,
    ConfigError,
    DimensionError,
    Error,
    GridResult,
    IoError,
    MetricsLog,
    ParseError,
    RoundReport,
    TaskVector,
    combine,
    dirichlet_partition,
    grid_search,
    read_csv,
    run_all_seeds,
    run_experiment,
    task_vector,
    write_csv,
    write_plots,
)

__all__ = [name for name in dir() if not name.startswith("_")]
