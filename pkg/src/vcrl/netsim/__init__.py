"""Discrete-event simulator for CRL distribution over a vehicular network."""

from .config import ConfigError, SimConfig, dump_config, load_config, parse_config
from .engine import SimResult, Simulation, baseline_mode, run_simulation
from .metrics import MetricsLog, VehicleRecord, summarize, write_summary_json, write_vehicle_csv
from .mobility import ManhattanMobility, TraceFormatError, TraceMobility, load_trace, place_rsus

__all__ = [
    "ConfigError", "SimConfig", "dump_config", "load_config", "parse_config",
    "SimResult", "Simulation", "baseline_mode", "run_simulation",
    "MetricsLog", "VehicleRecord", "summarize", "write_summary_json", "write_vehicle_csv",
    "ManhattanMobility", "TraceFormatError", "TraceMobility", "load_trace", "place_rsus",
]
