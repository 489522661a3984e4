"""
Pytest configuration and shared fixtures for the grid simulator test suite.

This module provides the step-by-step example scenario (three houses, one
microgrid, one plant), small network builders and a seeded five-home tracking
scenario.
"""

import json
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pytest
from dotenv import load_dotenv

from src.models import (
    GridNetwork,
    House,
    Line,
    Microgrid,
    Plant,
    Scenario,
    SimConfig,
)
from src.parser import ScenarioParser

# Load test environment variables
load_dotenv()

SCENARIOS_DIR = Path(__file__).parent.parent / "scenarios"


@pytest.fixture
def fixtures_dir() -> Path:
    """Return the path to the test fixtures directory."""
    return Path(__file__).parent / "fixtures"


@pytest.fixture
def scenarios_dir() -> Path:
    """Return the path to the shipped scenarios."""
    return SCENARIOS_DIR


@pytest.fixture
def three_house_text(fixtures_dir: Path) -> str:
    """Scenario document of the three-house example."""
    return (fixtures_dir / "three_house_scenario.json").read_text(encoding="utf-8")


@pytest.fixture
def three_house_doc(three_house_text: str) -> Dict[str, Any]:
    """The three-house example as a mutable dictionary."""
    return json.loads(three_house_text)


@pytest.fixture
def three_house_scenario(three_house_text: str) -> Scenario:
    """The three-house example, parsed and validated."""
    return ScenarioParser().load(three_house_text)


@pytest.fixture
def house1(three_house_scenario: Scenario) -> House:
    return three_house_scenario.houses[0]


@pytest.fixture
def house2(three_house_scenario: Scenario) -> House:
    return three_house_scenario.houses[1]


@pytest.fixture
def house3(three_house_scenario: Scenario) -> House:
    return three_house_scenario.houses[2]


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for policy tests."""
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def no_log_files(monkeypatch, tmp_path):
    """Keep CLI runs from writing log files into the working tree."""
    monkeypatch.setenv("GRIDSIM_LOG_FILE", "0")
    monkeypatch.setenv("LOG_DIR", str(tmp_path / "logs"))


# ============================================================================
# Builders
# ============================================================================


def make_network(
    lines: List[Line],
    plants: Dict[str, str],
    microgrids: Dict[str, str],
    extra_nodes: Optional[List[str]] = None,
) -> GridNetwork:
    """Network whose node set is every node mentioned."""
    nodes: Dict[str, None] = {}
    for node in list(plants.values()) + list(microgrids.values()) + (extra_nodes or []):
        nodes.setdefault(node)
    for line in lines:
        nodes.setdefault(line.source)
        nodes.setdefault(line.target)
    return GridNetwork(
        nodes=tuple(nodes), lines=tuple(lines), plant_nodes=plants, microgrid_nodes=microgrids
    )


def make_scenario(
    houses_by_grid: Dict[str, List[House]],
    plants: List[Plant],
    lines: List[Line],
    config: Optional[SimConfig] = None,
    goals: Optional[Dict[str, List[int]]] = None,
) -> Scenario:
    """Scenario binding each microgrid to a node of the same name."""
    goals = goals or {}
    microgrids = tuple(
        Microgrid(
            id=grid_id,
            node=grid_id,
            houses=tuple(houses),
            goal_profile=tuple(goals[grid_id]) if grid_id in goals else None,
        )
        for grid_id, houses in houses_by_grid.items()
    )
    network = make_network(
        lines,
        plants={plant.id: plant.node for plant in plants},
        microgrids={grid.id: grid.node for grid in microgrids},
    )
    return Scenario(
        config=config or SimConfig(),
        network=network,
        plants=tuple(plants),
        microgrids=microgrids,
    )


def tracking_scenario(iterations: Optional[int] = None, seed: Optional[int] = None) -> Scenario:
    """
    The shipped five-home scenario tracking a constant goal of 1000.

    Each home has three direct-control devices (lights, alarms, blinds) of
    30-50 units and 15-22 small managed devices of 2-12 units whose priorities
    follow random, cyclic or daily-deadline policies. ``iterations`` and
    ``seed`` override its configuration.
    """
    parser = ScenarioParser()
    scenario = parser.load(parser.read(SCENARIOS_DIR / "tracking.json"))
    overrides = {
        name: value
        for name, value in (("iterations", iterations), ("seed", seed))
        if value is not None
    }
    if not overrides:
        return scenario
    return replace(scenario, config=replace(scenario.config, **overrides))


@pytest.fixture
def scenario_builder():
    """Expose ``make_scenario`` to tests."""
    return make_scenario


@pytest.fixture
def tracking_builder():
    """Expose ``tracking_scenario`` to tests."""
    return tracking_scenario


@pytest.fixture
def network_builder():
    """Expose ``make_network`` to tests."""
    return make_network


def pytest_configure(config):
    """Configure pytest with custom settings."""
    config.addinivalue_line("markers", "unit: mark test as a unit test")
    config.addinivalue_line("markers", "integration: mark test as an integration test")
    config.addinivalue_line("markers", "slow: mark test as slow to run")
