"""
Scenario loading, validation and serialization.

This module turns scenario documents (JSON text) into domain models and back.
Parsing is structural and done by the pydantic schemas in ``src.schemas``;
every domain invariant is checked by ``validate_scenario``, which reports
broken rules as ``Violation`` values instead of raising.
"""

import json
import math
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import networkx as nx
from pydantic import ValidationError

from src.logging_config import get_logger
from src.models import (
    ControlMode,
    Device,
    GridNetwork,
    GridSimError,
    House,
    Line,
    Microgrid,
    Plant,
    PriorityPolicy,
    Scenario,
    SimConfig,
    Violation,
)
from src.policies import policy_problem
from src.routing import SINK, SOURCE
from src.schemas import (
    ConfigDoc,
    DeviceDoc,
    HouseDoc,
    LineDoc,
    MicrogridDoc,
    PlantDoc,
    ScenarioDoc,
)

logger = get_logger(__name__)


def quadratic_goal_profile(
    days: int,
    steps_per_day: int,
    base: int,
    peak: int,
    start_hour: int = 0,
    end_hour: int = 24,
) -> List[int]:
    """
    Daily goal curve: flat ``base`` outside a window, a concave parabola inside.

    Inside [start_hour, end_hour) the goal rises from ``base`` at the window
    edges to ``peak`` at its middle. Values are rounded half up.

    Example:
        >>> quadratic_goal_profile(1, 8, base=100, peak=200, start_hour=6, end_hour=18)
        [100, 100, 100, 175, 200, 175, 100, 100]
    """
    if steps_per_day < 1 or days < 0:
        raise ValueError("steps_per_day must be positive and days nonnegative")

    middle = Fraction(start_hour + end_hour, 2)
    half = Fraction(end_hour - start_hour, 2)
    day = []
    for step in range(steps_per_day):
        hour = Fraction(24 * step, steps_per_day)
        if half > 0 and start_hour <= hour < end_hour:
            shape = 1 - ((hour - middle) / half) ** 2
            day.append(math.floor(base + (peak - base) * shape + Fraction(1, 2)))
        else:
            day.append(base)
    return day * days


class ScenarioParser:
    """Parser between scenario documents and Scenario models."""

    def parse(self, text: str) -> Scenario:
        """
        Build a Scenario from document text without checking invariants.

        Raises:
            GridSimError: PARSE_ERROR with a line/column or field locus
        """
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise GridSimError(
                code="PARSE_ERROR",
                message=f"Malformed scenario document: {e.msg}",
                details={"line": e.lineno, "column": e.colno},
            ) from e

        try:
            doc = ScenarioDoc.model_validate(raw)
        except ValidationError as e:
            errors = [
                {
                    "field": ".".join(str(part) for part in error["loc"]),
                    "error": error["msg"],
                }
                for error in e.errors()
            ]
            raise GridSimError(
                code="PARSE_ERROR",
                message=f"Invalid field {errors[0]['field']}: {errors[0]['error']}",
                details={"field": errors[0]["field"], "errors": errors},
            ) from e

        return self._build(doc)

    def load(self, text: str) -> Scenario:
        """
        Parse and validate a scenario document.

        Raises:
            GridSimError: PARSE_ERROR for malformed documents, VALIDATION_ERROR
                listing every violation otherwise
        """
        scenario = self.parse(text)
        violations = validate_scenario(scenario)
        if violations:
            raise GridSimError(
                code="VALIDATION_ERROR",
                message=f"{violations[0]} ({len(violations)} violation(s))",
                details={"violations": [str(v) for v in violations]},
            )
        logger.info(
            f"Loaded scenario: {len(scenario.microgrids)} microgrids, "
            f"{len(scenario.houses)} houses, {len(scenario.plants)} plants"
        )
        return scenario

    def read(self, path: Union[str, Path]) -> str:
        """
        Read a scenario file.

        Raises:
            GridSimError: IO_ERROR when the file cannot be read
        """
        try:
            return Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise GridSimError(
                code="IO_ERROR",
                message=f"Cannot read scenario file {path}: {e.strerror or e}",
                details={"path": str(path)},
            ) from e

    def serialize(self, scenario: Scenario) -> str:
        """Render a Scenario as a document that ``parse`` reads back identically."""
        config = scenario.config
        doc = {
            "config": {
                "epsilon": str(config.epsilon),
                "max_feedback_rounds": config.max_feedback_rounds,
                "iterations": config.iterations,
                "seed": config.seed,
                "tier_cost_defaults": list(config.tier_cost_defaults),
                "history_window": config.history_window,
                "band": str(config.band),
                "strategy_mode": config.strategy_mode.value,
            },
            "network": {
                "nodes": list(scenario.network.nodes),
                "lines": [
                    {
                        "id": line.id,
                        "endpoints": list(line.endpoints),
                        "tier_caps": list(line.tier_caps),
                        "tier_costs": list(line.tier_costs),
                    }
                    for line in scenario.network.lines
                ],
            },
            "plants": [
                {
                    "id": plant.id,
                    "node": plant.node,
                    "capacity": plant.capacity,
                    "output": plant.output,
                    "ramp_limit": plant.ramp_limit,
                    "ramp_up_cost": plant.ramp_up_cost,
                    "ramp_down_cost": plant.ramp_down_cost,
                }
                for plant in scenario.plants
            ],
            "microgrids": [self._dump_microgrid(grid) for grid in scenario.microgrids],
        }
        return json.dumps(doc, indent=2)

    # ------------------------------------------------------------------------
    # Document -> model
    # ------------------------------------------------------------------------

    def _build(self, doc: ScenarioDoc) -> Scenario:
        config = self._config(doc.config)
        microgrids = tuple(self._microgrid(grid) for grid in doc.microgrids)
        plants = tuple(self._plant(plant) for plant in doc.plants)
        lines = tuple(self._line(line, config) for line in doc.network.lines)

        network = GridNetwork(
            nodes=tuple(doc.network.nodes),
            lines=lines,
            plant_nodes={plant.id: plant.node for plant in plants},
            microgrid_nodes={grid.id: grid.node for grid in microgrids},
        )
        return Scenario(
            config=config, network=network, plants=plants, microgrids=microgrids
        )

    def _config(self, doc: ConfigDoc) -> SimConfig:
        overrides: Dict[str, Any] = {
            name: value
            for name, value in doc.model_dump(exclude_none=True).items()
        }
        for name in ("epsilon", "band"):
            if name in overrides:
                overrides[name] = Fraction(overrides[name])
        if "tier_cost_defaults" in overrides:
            overrides["tier_cost_defaults"] = tuple(overrides["tier_cost_defaults"])
        return SimConfig(**overrides)

    def _device(self, doc: DeviceDoc) -> Device:
        policy = None
        if doc.policy is not None:
            policy = PriorityPolicy(kind=doc.policy.kind, params=dict(doc.policy.params))
        return Device(id=doc.id, w=doc.w, p=doc.p, control=doc.control, policy=policy)

    def _house(self, doc: HouseDoc) -> House:
        return House(
            id=doc.id,
            devices=tuple(self._device(device) for device in doc.devices),
            bid_history=tuple(doc.bid_history),
        )

    def _microgrid(self, doc: MicrogridDoc) -> Microgrid:
        goal = doc.goal_profile
        if doc.goal_generator is not None:
            goal = quadratic_goal_profile(**doc.goal_generator.model_dump())
        return Microgrid(
            id=doc.id,
            node=doc.node,
            houses=tuple(self._house(house) for house in doc.houses),
            goal_profile=tuple(goal) if goal is not None else None,
        )

    def _plant(self, doc: PlantDoc) -> Plant:
        return Plant(**doc.model_dump())

    def _line(self, doc: LineDoc, config: SimConfig) -> Line:
        source, target = doc.endpoints
        return Line(
            source=source,
            target=target,
            tier_caps=tuple(doc.tier_caps),
            tier_costs=tuple(doc.tier_costs or config.tier_cost_defaults),
            id=doc.id or "",
        )

    # ------------------------------------------------------------------------
    # Model -> document
    # ------------------------------------------------------------------------

    def _dump_microgrid(self, grid: Microgrid) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "id": grid.id,
            "node": grid.node,
            "houses": [
                {
                    "id": house.id,
                    "devices": [self._dump_device(device) for device in house.devices],
                    "bid_history": list(house.bid_history),
                }
                for house in grid.houses
            ],
        }
        if grid.goal_profile is not None:
            doc["goal_profile"] = list(grid.goal_profile)
        return doc

    def _dump_device(self, device: Device) -> Dict[str, Any]:
        doc: Dict[str, Any] = {
            "id": device.id,
            "w": device.w,
            "p": device.p,
            "control": device.control.value,
        }
        if device.policy is not None:
            doc["policy"] = {"kind": device.policy.kind, "params": dict(device.policy.params)}
        return doc


# ============================================================================
# Validation
# ============================================================================


def _duplicates(ids: Iterable[str]) -> List[str]:
    seen, repeated = set(), []
    for item in ids:
        if item in seen and item not in repeated:
            repeated.append(item)
        seen.add(item)
    return repeated


def _increasing(values, strict: bool) -> bool:
    pairs = zip(values, values[1:])
    return all(a < b if strict else a <= b for a, b in pairs)


def _validate_config(config: SimConfig) -> List[Violation]:
    problems = []

    def flag(rule: str) -> None:
        problems.append(Violation("SimConfig", "config", rule))

    if not 0 < config.epsilon < 1:
        flag(f"epsilon must lie in (0, 1), got {config.epsilon}")
    if config.max_feedback_rounds < 1:
        flag("max_feedback_rounds must be positive")
    if config.iterations < 1:
        flag("iterations must be positive")
    if config.history_window < 1:
        flag("history_window must be positive")
    if config.band < 0:
        flag("band must be nonnegative")
    costs = config.tier_cost_defaults
    if not (_increasing(costs, strict=True) and costs[0] > 0):
        flag("tier_cost_defaults must be positive and strictly increasing")
    return problems


def _validate_device(house: House, device: Device) -> List[Violation]:
    locus = f"{house.id}/{device.id}"
    problems = []
    if device.w < 0:
        problems.append(Violation("Device", locus, f"w must be nonnegative, got {device.w}"))
    if device.p < 0:
        problems.append(Violation("Device", locus, f"p must be nonnegative, got {device.p}"))
    if device.control is ControlMode.DIRECT and device.p != 0:
        problems.append(Violation("Device", locus, "direct-control devices must have p = 0"))
    problem = policy_problem(device.policy)
    if problem:
        problems.append(Violation("Device", locus, problem))
    return problems


def _validate_network(scenario: Scenario) -> List[Violation]:
    network = scenario.network
    nodes = set(network.nodes)
    problems = []

    for node in _duplicates(network.nodes):
        problems.append(Violation("GridNetwork", node, "node declared more than once"))
    for reserved in (SOURCE, SINK):
        if reserved in nodes:
            problems.append(Violation("GridNetwork", reserved, "node name is reserved"))

    for line in network.lines:
        for endpoint in line.endpoints:
            if endpoint not in nodes:
                problems.append(Violation("Line", line.id, f"unknown endpoint {endpoint}"))
        if line.source == line.target:
            problems.append(Violation("Line", line.id, "endpoints must differ"))
        if any(cap < 0 for cap in line.tier_caps):
            problems.append(Violation("Line", line.id, "tier_caps must be nonnegative"))
        if not _increasing(line.tier_caps, strict=False):
            problems.append(Violation("Line", line.id, "tier_caps must be nondecreasing"))
        if not (_increasing(line.tier_costs, strict=True) and line.tier_costs[0] > 0):
            problems.append(
                Violation("Line", line.id, "tier_costs must be positive and strictly increasing")
            )
    for line_id in _duplicates(line.id for line in network.lines):
        problems.append(Violation("Line", line_id, "line id is not unique"))

    # Connectivity is only meaningful between nodes that exist
    graph = nx.DiGraph()
    graph.add_nodes_from(nodes)
    graph.add_edges_from(
        line.endpoints for line in network.lines if set(line.endpoints) <= nodes
    )
    for plant in scenario.plants:
        for grid in scenario.microgrids:
            if plant.node in nodes and grid.node in nodes:
                if not nx.has_path(graph, plant.node, grid.node):
                    problems.append(
                        Violation(
                            "GridNetwork",
                            plant.node,
                            f"no path from plant {plant.id} to microgrid {grid.id}",
                        )
                    )
    return problems


def validate_scenario(s: Scenario) -> List[Violation]:
    """
    Check every invariant of a scenario.

    Returns:
        Violations in a stable order (config, houses, microgrids, plants,
        network); empty iff the scenario is valid
    """
    nodes = set(s.network.nodes)
    problems = _validate_config(s.config)

    for grid in s.microgrids:
        for house in grid.houses:
            if not house.devices:
                problems.append(Violation("House", house.id, "house has no device"))
            for device_id in _duplicates(device.id for device in house.devices):
                problems.append(
                    Violation("House", house.id, f"device id {device_id} is not unique")
                )
            if any(bid < 0 for bid in house.bid_history):
                problems.append(Violation("House", house.id, "bid_history must be nonnegative"))
            for device in house.devices:
                problems.extend(_validate_device(house, device))

    for house_id in _duplicates(house.id for house in s.houses):
        problems.append(Violation("Scenario", house_id, "house id is not unique"))

    for grid in s.microgrids:
        if grid.node not in nodes:
            problems.append(Violation("Microgrid", grid.id, f"unknown node {grid.node}"))
        if grid.goal_profile is not None and any(goal < 0 for goal in grid.goal_profile):
            problems.append(Violation("Microgrid", grid.id, "goal_profile must be nonnegative"))
    for grid_id in _duplicates(grid.id for grid in s.microgrids):
        problems.append(Violation("Scenario", grid_id, "microgrid id is not unique"))
    for node in _duplicates(grid.node for grid in s.microgrids):
        problems.append(Violation("Scenario", node, "node bound to several microgrids"))

    for plant in s.plants:
        if plant.node not in nodes:
            problems.append(Violation("Plant", plant.id, f"unknown node {plant.node}"))
        if not 0 <= plant.output <= plant.capacity:
            problems.append(Violation("Plant", plant.id, "output must lie in [0, capacity]"))
        if plant.ramp_limit < 0:
            problems.append(Violation("Plant", plant.id, "ramp_limit must be nonnegative"))
        if plant.ramp_up_cost < 0 or plant.ramp_down_cost < 0:
            problems.append(Violation("Plant", plant.id, "ramp costs must be nonnegative"))
    for plant_id in _duplicates(plant.id for plant in s.plants):
        problems.append(Violation("Scenario", plant_id, "plant id is not unique"))

    problems.extend(_validate_network(s))
    return problems


_parser = ScenarioParser()


def load_scenario(text: str) -> Scenario:
    """Parse and validate scenario text; see ``ScenarioParser.load``."""
    return _parser.load(text)


def dump_scenario(scenario: Scenario) -> str:
    """Serialize a scenario; ``load_scenario(dump_scenario(s)) == s``."""
    return _parser.serialize(scenario)


def format_violations(violations: Iterable[Violation]) -> str:
    """One violation per line."""
    return "\n".join(str(v) for v in violations)
