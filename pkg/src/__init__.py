"""
gridsim - a deterministic smart grid coordination simulator.

Houses schedule their devices with a knapsack, microgrids bid through a
strategy game, bids are routed over a tiered transmission network by
min-cost flow, and plants re-plan their production from bid forecasts.
"""

__version__ = "1.0.0"

from src.models import (
    Device,
    GridNetwork,
    GridSimError,
    House,
    Line,
    Microgrid,
    Plant,
    Scenario,
    SimConfig,
)
from src.parser import ScenarioParser, dump_scenario, load_scenario, validate_scenario
from src.simulation_service import SimulationService, run_iteration, run_simulation
from src.stats import compute_stats

__all__ = [
    "Device",
    "House",
    "Microgrid",
    "Plant",
    "Line",
    "GridNetwork",
    "SimConfig",
    "Scenario",
    "GridSimError",
    "ScenarioParser",
    "load_scenario",
    "dump_scenario",
    "validate_scenario",
    "SimulationService",
    "run_iteration",
    "run_simulation",
    "compute_stats",
]
