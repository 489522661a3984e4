"""
Diagnostic flows, bid forecasting and production planning.

Two relaxed routings measure the slack of the grid at every feedback round:
one lifts the microgrid bids, the other lifts the plant productions. The bids
of each microgrid are remembered in a sliding window and averaged with recency
weights; the plants then re-plan their output to meet the forecast at the
lowest ramping cost.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx

from src.logging_config import get_logger
from src.models import GridNetwork, GridSimError, Plant
from src.routing import (
    SINK,
    SOURCE,
    Arc,
    FlowGraph,
    delivered,
    expand_network,
    min_cost_flow,
    sent,
)

logger = get_logger(__name__)

Number = Union[int, Fraction]

_HUB = "__hub__"


# ============================================================================
# Unconstrained tests
# ============================================================================


def unconstrained_consumption_test(
    net: GridNetwork,
    production: Mapping[str, int],
    caps: Optional[Mapping[str, Optional[int]]] = None,
) -> Dict[str, int]:
    """
    Largest consumption each microgrid could receive right now.

    Microgrid arcs are opened up to the total production, or to the
    microgrid's consumption goal when it has one.

    Args:
        net: Network with node bindings
        production: plant id -> available production
        caps: Optional microgrid id -> goal for this iteration

    Returns:
        microgrid id -> delivered energy
    """
    caps = caps or {}
    total = sum(max(0, amount) for amount in production.values())
    bids = {
        grid_id: caps[grid_id] if caps.get(grid_id) is not None else total
        for grid_id in net.microgrid_nodes
    }
    graph = expand_network(net, production, bids)
    return delivered(graph, min_cost_flow(graph))


def unconstrained_production_test(
    net: GridNetwork, bids: Mapping[str, int]
) -> Dict[str, int]:
    """
    Production each plant would send if plants had no limit.

    Every plant may supply the whole demand; the routing shows which plants the
    network would draw on.

    Returns:
        plant id -> sent energy
    """
    total = sum(max(0, bid) for bid in bids.values())
    production = {plant_id: total for plant_id in net.plant_nodes}
    graph = expand_network(net, production, bids)
    return sent(graph, min_cost_flow(graph))


# ============================================================================
# Forecasting
# ============================================================================


@dataclass(frozen=True)
class BidHistory:
    """Recent bids of one microgrid, oldest first, at most ``window`` long."""

    z: Tuple[int, ...] = ()
    window: int = 10

    def record(self, bid: int) -> "BidHistory":
        z = (self.z + (int(bid),))[-self.window :]
        return BidHistory(z=z, window=self.window)

    def __len__(self) -> int:
        return len(self.z)


def forecast_bid(history: Union[BidHistory, Sequence[int]]) -> Fraction:
    """
    Recency-weighted mean of the recorded bids.

    The i-th bid (1-based, oldest first) weighs i, and weights are normalized
    by n(n+1)/2 so that a constant history forecasts itself.

    Example:
        >>> forecast_bid(BidHistory(z=(4, 8)))
        Fraction(20, 3)

    Raises:
        GridSimError: EMPTY_HISTORY when no bid was recorded
    """
    z = history.z if isinstance(history, BidHistory) else tuple(history)
    n = len(z)
    if n == 0:
        raise GridSimError(
            code="EMPTY_HISTORY",
            message="Cannot forecast a microgrid without recorded bids",
        )

    weighted = sum(i * bid for i, bid in enumerate(z, start=1))
    forecast = Fraction(weighted, n * (n + 1) // 2)

    if logger.isEnabledFor(logging.DEBUG):
        unnormalized = Fraction(2 * weighted, n * (n - 1)) if n > 1 else None
        logger.debug(
            f"forecast over {n} bids: {forecast} "
            f"(with n(n-1) normalization: {unnormalized})"
        )
    return forecast


# ============================================================================
# Production planning
# ============================================================================


@dataclass(frozen=True)
class ProductionPlan:
    """
    Plant outputs for the next iteration.

    Attributes:
        targets: plant id -> planned output
        cost: Total ramping cost of reaching the targets
        demand: Production total the plan aimed for
        shortfall: Units the plants could not add within their ramp limits
        surplus: Units the plants could not shed within their ramp limits
    """

    targets: Dict[str, int] = field(default_factory=dict)
    cost: int = 0
    demand: int = 0
    shortfall: int = 0
    surplus: int = 0

    @property
    def feasible(self) -> bool:
        return self.shortfall == 0 and self.surplus == 0


def _feeding_plants(plants: Sequence[Plant], net: GridNetwork) -> set:
    """Plants whose node reaches at least one microgrid over usable lines."""
    graph = nx.DiGraph()
    graph.add_nodes_from(net.nodes)
    graph.add_edges_from(line.endpoints for line in net.lines if line.tier_caps[-1] > 0)
    targets = set(net.microgrid_nodes.values())

    feeding = set()
    for plant in plants:
        if plant.node not in graph:
            continue
        reachable = nx.descendants(graph, plant.node) | {plant.node}
        if reachable & targets:
            feeding.add(plant.id)
    return feeding


def plan_production(
    forecasts: Mapping[str, Number],
    plants: Sequence[Plant],
    net: Optional[GridNetwork] = None,
) -> ProductionPlan:
    """
    Re-plan plant outputs to meet the forecast consumption.

    The forecast total is rounded to whole units. The gap with the current
    total output is routed through one arc per plant: increase arcs carry at
    most min(ramp_limit, capacity - output) at the ramp-up cost, decrease arcs
    at most min(ramp_limit, output) at the ramp-down cost. The min-cost flow
    gives the cheapest split; what cannot be routed is reported as shortfall or
    surplus.

    Args:
        forecasts: microgrid id -> forecast consumption
        plants: Plants with their current output
        net: When given, plants that cannot reach any microgrid are not raised

    Returns:
        ProductionPlan with targets for every plant
    """
    total = sum(forecasts.values(), Fraction(0))
    demand = max(0, math.floor(total + Fraction(1, 2)))
    current = sum(plant.output for plant in plants)
    delta = demand - current

    targets = {plant.id: plant.output for plant in plants}
    if delta == 0 or not plants:
        missing = max(0, delta)
        return ProductionPlan(targets=targets, demand=demand, shortfall=missing)

    feeding = _feeding_plants(plants, net) if net is not None else None
    arcs = [Arc(id="gap", tail=SOURCE, head=_HUB, capacity=abs(delta), kind="gap")]
    for plant in plants:
        if delta > 0:
            if feeding is not None and plant.id not in feeding:
                continue
            room = min(plant.ramp_limit, plant.capacity - plant.output)
            cost = plant.ramp_up_cost
        else:
            room = min(plant.ramp_limit, plant.output)
            cost = plant.ramp_down_cost
        arcs.append(
            Arc(
                id=f"ramp:{plant.id}",
                tail=_HUB,
                head=SINK,
                capacity=max(0, room),
                cost=cost,
                kind="ramp",
                origin=plant.id,
            )
        )

    flow = min_cost_flow(FlowGraph.build(arcs))
    sign = 1 if delta > 0 else -1
    for arc in arcs[1:]:
        targets[arc.origin] += sign * flow.on(arc.id)

    unmet = abs(delta) - flow.value
    plan = ProductionPlan(
        targets=targets,
        cost=int(flow.cost),
        demand=demand,
        shortfall=unmet if delta > 0 else 0,
        surplus=unmet if delta < 0 else 0,
    )
    if not plan.feasible:
        logger.info(
            f"Production plan misses demand {demand}: "
            f"shortfall={plan.shortfall} surplus={plan.surplus}"
        )
    return plan
