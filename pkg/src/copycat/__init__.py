"""Discrete-event simulator for copycat (DIO replay) attacks on RPL networks."""

__version__ = "0.1.0"

from copycat.engine import ScenarioConfig, generate_topology, replicate, run
from copycat.metrics import MetricsReport, compute_report, oracle_scan

__all__ = [
    "ScenarioConfig",
    "generate_topology",
    "run",
    "replicate",
    "MetricsReport",
    "compute_report",
    "oracle_scan",
]
