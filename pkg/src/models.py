"""
Domain models for the smart grid simulator.

Everything the simulator reasons about is described here: the consuming
devices grouped into houses, the houses grouped into microgrids, the plants,
the transmission lines and the run configuration. A scenario is immutable once
loaded, so the model types are frozen dataclasses built from tuples; the engine
derives new values with ``dataclasses.replace`` instead of mutating.

Invariants are NOT enforced in constructors. A scenario document may describe a
broken grid and the validator (``src.parser.validate_scenario``) reports each
broken rule as data. Only ``load_scenario`` refuses invalid scenarios.
"""

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, Mapping, Optional, Tuple

# ============================================================================
# Enumerations
# ============================================================================


class ControlMode(str, Enum):
    """How a device takes part in demand response."""

    # Reacts to direct stimuli (lights, alarms, blinds); priority pinned to 0
    DIRECT = "direct"

    # Scheduled by the house; priority evolves under its policy
    MANAGED = "managed"


class FeedbackMessage(str, Enum):
    """The three messages a microgrid can receive after routing."""

    CONSUME_LESS = "CONSUME_LESS"
    FITS = "FITS"
    CONSUME_MORE = "CONSUME_MORE"


class StrategyMode(str, Enum):
    """How consumption strategies are cut from a house's devices.

    THRESHOLD builds one strategy per distinct priority level. INCREMENTAL
    starts from the must-run devices and adds the others one at a time in
    (priority, declaration) order.
    """

    THRESHOLD = "threshold"
    INCREMENTAL = "incremental"


# ============================================================================
# Devices and houses
# ============================================================================


@dataclass(frozen=True)
class PriorityPolicy:
    """
    Descriptor of a priority-update policy.

    ``kind`` names a registered policy (static, cyclic, deadline, random) and
    ``params`` carries its parameters, e.g. ``{"t_end": 10, "p0": 5}``.

    Example:
        >>> PriorityPolicy("deadline", {"t_end": 10, "p0": 5})
    """

    kind: str = "static"
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Device:
    """
    A consuming unit inside a house.

    Attributes:
        id: Identifier, unique within the house
        w: Energy demand per iteration, in integer units
        p: Priority; 0 means the device must run now, higher is deferrable
        control: DIRECT devices always have priority 0
        policy: How ``p`` evolves across iterations (managed devices only)
    """

    id: str
    w: int
    p: int = 0
    control: ControlMode = ControlMode.MANAGED
    policy: Optional[PriorityPolicy] = None

    @property
    def is_direct(self) -> bool:
        return self.control is ControlMode.DIRECT


@dataclass(frozen=True)
class House:
    """A smart house: an ordered group of devices plus its past bids."""

    id: str
    devices: Tuple[Device, ...]

    # Energies of the strategies this house selected in earlier iterations
    bid_history: Tuple[int, ...] = ()

    @property
    def total_demand(self) -> int:
        """Energy needed to run every device."""
        return sum(device.w for device in self.devices)

    def device(self, device_id: str) -> Device:
        for device in self.devices:
            if device.id == device_id:
                return device
        raise KeyError(device_id)


# ============================================================================
# Grid assets
# ============================================================================


@dataclass(frozen=True)
class Microgrid:
    """
    An aggregator node bidding for energy on behalf of its houses.

    ``goal_profile`` is an optional per-iteration consumption target. Iteration
    ``k`` (1-based) reads entry ``(k - 1) % len(goal_profile)``, so a single
    entry is a constant goal and a one-day table repeats every day.
    """

    id: str
    node: str
    houses: Tuple[House, ...]
    goal_profile: Optional[Tuple[int, ...]] = None

    def goal_at(self, iteration: int) -> Optional[int]:
        if not self.goal_profile:
            return None
        return self.goal_profile[(iteration - 1) % len(self.goal_profile)]


@dataclass(frozen=True)
class Plant:
    """
    A producer attached to a network node.

    Attributes:
        capacity: Maximum production per iteration
        output: Current production level
        ramp_limit: Largest change of output allowed between two iterations
        ramp_up_cost: Unit cost of raising output
        ramp_down_cost: Unit cost of lowering output
    """

    id: str
    node: str
    capacity: int
    output: int
    ramp_limit: int
    ramp_up_cost: int = 1
    ramp_down_cost: int = 1

    @property
    def available(self) -> int:
        """Production the plant can deliver this iteration (it may ramp up)."""
        return max(0, min(self.capacity, self.output + self.ramp_limit))


@dataclass(frozen=True)
class Line:
    """
    A directed transmission line with three load tiers.

    ``tier_caps`` are cumulative: under-load, standard and over-load limits,
    each including the previous one. ``tier_costs`` are the unit costs of the
    three tiers and model Joule losses as a convex piecewise-linear cost.
    """

    source: str
    target: str
    tier_caps: Tuple[int, int, int]
    tier_costs: Tuple[int, int, int] = (1, 2, 4)
    id: str = ""

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", f"{self.source}->{self.target}")

    @property
    def endpoints(self) -> Tuple[str, str]:
        return (self.source, self.target)


@dataclass(frozen=True)
class GridNetwork:
    """The T&D graph plus the nodes plants and microgrids are bound to."""

    nodes: Tuple[str, ...]
    lines: Tuple[Line, ...]

    # plant id -> node, microgrid id -> node
    plant_nodes: Mapping[str, str] = field(default_factory=dict)
    microgrid_nodes: Mapping[str, str] = field(default_factory=dict)


# ============================================================================
# Configuration and scenario
# ============================================================================


@dataclass(frozen=True)
class SimConfig:
    """
    Simulation-wide settings.

    ``epsilon`` is kept as an exact rational so repeated feedback multipliers
    never drift. Every field can be overridden from the command line.
    """

    epsilon: Fraction = Fraction(1, 20)
    max_feedback_rounds: int = 20
    iterations: int = 1
    seed: int = 0
    tier_cost_defaults: Tuple[int, int, int] = (1, 2, 4)

    # Sliding window of bids used by the forecast
    history_window: int = 10

    # Half-width of the tracking band, relative to the goal
    band: Fraction = Fraction(1, 20)

    strategy_mode: StrategyMode = StrategyMode.THRESHOLD


@dataclass(frozen=True)
class Scenario:
    """A complete, loadable simulation input."""

    config: SimConfig
    network: GridNetwork
    plants: Tuple[Plant, ...] = ()
    microgrids: Tuple[Microgrid, ...] = ()

    @property
    def houses(self) -> Tuple[House, ...]:
        return tuple(house for grid in self.microgrids for house in grid.houses)

    def microgrid(self, microgrid_id: str) -> Microgrid:
        for grid in self.microgrids:
            if grid.id == microgrid_id:
                return grid
        raise KeyError(microgrid_id)


@dataclass(frozen=True)
class Violation:
    """One broken invariant: which type, which object, which rule."""

    type_name: str
    object_id: str
    rule: str

    def __str__(self) -> str:
        return f"{self.type_name}[{self.object_id}]: {self.rule}"


# ============================================================================
# Errors
# ============================================================================


@dataclass
class GridSimError(Exception):
    """
    Single exception type of the simulator.

    Codes in use:
        PARSE_ERROR: scenario text is not a well-formed document
        VALIDATION_ERROR: scenario breaks one or more invariants
        CONFIGURATION_ERROR: unknown priority policy or bad policy parameters
        UNDEFINED_GAMMA: house with zero total consumption has no mean utility
        EMPTY_HISTORY: forecast requested with no recorded bid
        INFEASIBLE_REROUTE: a listed arc cannot be relieved in the update graph
        INCOMPLETE_RUN: output directory does not hold a finished run
        IO_ERROR: file could not be read or written

    Example:
        >>> raise GridSimError(
        ...     code="CONFIGURATION_ERROR",
        ...     message="Unknown priority policy 'thermostat'",
        ...     details={"device": "h1/d4"},
        ... )
    """

    code: str
    message: str
    details: Optional[Dict[str, Any]] = None

    def __str__(self) -> str:
        error_str = f"[{self.code}] {self.message}"
        if self.details:
            error_str += f" | Details: {self.details}"
        return error_str
