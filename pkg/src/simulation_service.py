"""
Simulation service orchestrating the coordination loop.

One iteration runs, in order:

    1. priority updates and knapsack strategies for every house
    2. payoffs, Pareto selection and microgrid bids
    3. routing of the bids; feedback re-opens the selection until every
       microgrid fits or the round limit is reached
    4. bid forecasts and the production plan of the next iteration

Each house then runs its devices within its share of the delivered energy.
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from src.forecast import (
    BidHistory,
    ProductionPlan,
    forecast_bid,
    plan_production,
    unconstrained_consumption_test,
    unconstrained_production_test,
)
from src.game import StrategyPayoff, apply_feedback, choose, microgrid_bid, payoff_table
from src.knapsack import Strategy, backtrack_selection, build_dp_table, generate_strategies
from src.logging_config import LogContext, get_logger
from src.models import FeedbackMessage, GridSimError, House, Plant, Scenario
from src.policies import update_priorities
from src.routing import (
    Flow,
    FlowGraph,
    changes_between,
    delivered,
    diagnose,
    expand_network,
    incremental_reroute,
    min_cost_flow,
    sent,
)

logger = get_logger(__name__)

Number = Union[int, Fraction]


# ============================================================================
# State and metrics
# ============================================================================


@dataclass(frozen=True)
class MetricsRecord:
    """
    What one iteration produced.

    ``consumption`` is the energy actually used by the houses' final device
    selections; ``tracking_error`` is (consumption - goal) / goal when the
    microgrids have a positive goal.
    """

    iteration: int
    goal: Optional[int]
    consumption: int
    house_consumption: Dict[str, int]
    rounds: int
    consensus: bool
    flow_cost: Number
    tracking_error: Optional[Fraction]
    bids: Dict[str, int] = field(default_factory=dict)
    granted: Dict[str, int] = field(default_factory=dict)
    forecasts: Dict[str, Fraction] = field(default_factory=dict)
    plan_cost: int = 0


@dataclass
class SimState:
    """
    Snapshot of the simulation after ``iteration`` completed iterations.

    A fresh state (iteration 0) only carries the scenario's houses, plants and
    the seeded random generator.
    """

    iteration: int
    houses: Dict[str, House]
    plants: Tuple[Plant, ...]
    rng: np.random.Generator
    histories: Dict[str, BidHistory] = field(default_factory=dict)

    # Scheduling and auction
    strategies: Dict[str, List[Strategy]] = field(default_factory=dict)
    payoffs: Dict[str, List[StrategyPayoff]] = field(default_factory=dict)
    chosen: Dict[str, int] = field(default_factory=dict)

    # Routing
    bids: Dict[str, int] = field(default_factory=dict)
    messages: Dict[str, FeedbackMessage] = field(default_factory=dict)
    graph: Optional[FlowGraph] = None
    flow: Optional[Flow] = None
    granted: Dict[str, int] = field(default_factory=dict)
    rounds: int = 0
    consensus: bool = False
    production_demand: Dict[str, int] = field(default_factory=dict)

    # Allocation and forecast
    allocations: Dict[str, Set[str]] = field(default_factory=dict)
    forecasts: Dict[str, Fraction] = field(default_factory=dict)
    plan: Optional[ProductionPlan] = None
    record: Optional[MetricsRecord] = None


# ============================================================================
# Allocation helpers
# ============================================================================


def final_allocation(house: House, granted: int) -> Set[str]:
    """Most valuable device set of the house within ``granted`` energy."""
    return backtrack_selection(build_dp_table(house.devices), max(0, granted))


def split_grant(requests: Mapping[str, int], granted: int) -> Dict[str, int]:
    """
    Share a microgrid's delivered energy among its houses.

    When the delivery covers the bid every house gets its request. Otherwise
    the shortfall is cut from each house in proportion to its request, whole
    units going first to the largest fractional parts and then to the earlier
    house.

    Example:
        >>> split_grant({"h1": 10, "h2": 5}, 12)
        {'h1': 8, 'h2': 4}
    """
    total = sum(requests.values())
    if granted >= total:
        return dict(requests)
    if total == 0:
        return {house_id: 0 for house_id in requests}

    shortfall = total - max(0, granted)
    exact = {
        house_id: Fraction(shortfall * amount, total)
        for house_id, amount in requests.items()
    }
    cuts = {house_id: int(share) for house_id, share in exact.items()}
    left = shortfall - sum(cuts.values())

    order = list(requests)
    by_remainder = sorted(order, key=lambda h: (-(exact[h] - cuts[h]), order.index(h)))
    for house_id in by_remainder[:left]:
        cuts[house_id] += 1
    return {house_id: requests[house_id] - cuts[house_id] for house_id in order}


def _stuck(
    strategies: Sequence[Strategy],
    current: int,
    msg: FeedbackMessage,
    headroom: Optional[int] = None,
) -> bool:
    """
    Whether no strategy lies further in the direction the message asks for.

    Under CONSUME_MORE a strategy only counts when its extra energy fits the
    headroom.
    """
    energy = strategies[current].energy
    if msg is FeedbackMessage.CONSUME_LESS:
        return all(s.energy >= energy for s in strategies)
    limit = energy + headroom if headroom is not None else None
    return not any(
        energy < s.energy and (limit is None or s.energy <= limit) for s in strategies
    )


def _candidates(
    strategies: Sequence[Strategy],
    current: int,
    msg: FeedbackMessage,
    headroom: Optional[int] = None,
) -> List[int]:
    energy = strategies[current].energy
    if msg is FeedbackMessage.CONSUME_LESS:
        return [i for i, s in enumerate(strategies) if s.energy <= energy]
    limit = energy + headroom if headroom is not None else None
    return [
        i
        for i, s in enumerate(strategies)
        if s.energy >= energy and (limit is None or s.energy <= limit)
    ]


def headroom_caps(
    goals: Mapping[str, Optional[int]], bids: Mapping[str, int]
) -> Dict[str, int]:
    """
    Caps of the unconstrained consumption test.

    A microgrid with a goal is opened up to it; one without a goal only up to
    its bid, so it never has headroom to fill.
    """
    return {
        grid_id: goal if goal is not None else bids.get(grid_id, 0)
        for grid_id, goal in goals.items()
    }


def pending_messages(
    messages: Mapping[str, FeedbackMessage],
    headroom: Mapping[str, int],
    members: Mapping[str, Sequence[str]],
    strategies: Mapping[str, Sequence[Strategy]],
    chosen: Mapping[str, int],
) -> Dict[str, FeedbackMessage]:
    """
    Feedback messages that still ask for a move.

    A CONSUME_MORE is dropped to FITS when no house of the microgrid has a
    strategy whose extra energy fits the headroom.
    """
    pending = dict(messages)
    for grid_id, msg in messages.items():
        if msg is not FeedbackMessage.CONSUME_MORE:
            continue
        room = headroom.get(grid_id, 0)
        if all(
            _stuck(strategies[h], chosen[h], msg, room) for h in members.get(grid_id, ())
        ):
            pending[grid_id] = FeedbackMessage.FITS
    return pending


# ============================================================================
# Service
# ============================================================================


class SimulationService:
    """Runs a scenario iteration by iteration."""

    def __init__(self, scenario: Scenario):
        """
        Initialize the service.

        Args:
            scenario: Validated scenario (see ``src.parser.load_scenario``)
        """
        self.scenario = scenario
        self.config = scenario.config

    def initial_state(self) -> SimState:
        return SimState(
            iteration=0,
            houses={house.id: house for house in self.scenario.houses},
            plants=tuple(self.scenario.plants),
            rng=np.random.default_rng(self.config.seed),
        )

    def run_iteration(self, state: SimState) -> SimState:
        """
        Run one full iteration from ``state``.

        The input state is left untouched; the random generator is copied
        before use.

        Returns:
            State after the iteration, with its MetricsRecord in ``record``
        """
        k = state.iteration + 1
        rng = copy.deepcopy(state.rng)
        with LogContext(logger, "Iteration", level=logging.DEBUG, iteration=k):
            return self._iterate(state, k, rng)

    def iterate(self, iterations: Optional[int] = None) -> Iterator[SimState]:
        """Yield the state after each iteration."""
        count = self.config.iterations if iterations is None else iterations
        if count < 1:
            raise ValueError(f"iterations must be positive, got {count}")

        state = self.initial_state()
        for _ in range(count):
            state = self.run_iteration(state)
            yield state

    def run_simulation(self, iterations: Optional[int] = None) -> List[MetricsRecord]:
        """
        Run the scenario and collect one MetricsRecord per iteration.

        Non-consensus iterations are flagged in their record; the run never
        stops early.
        """
        with LogContext(logger, "Simulation", iterations=iterations or self.config.iterations):
            records = [state.record for state in self.iterate(iterations)]
        failed = sum(1 for record in records if not record.consensus)
        if failed:
            logger.info(f"{failed} of {len(records)} iterations ended without consensus")
        return records

    # ------------------------------------------------------------------------
    # Iteration steps
    # ------------------------------------------------------------------------

    def _iterate(self, state: SimState, k: int, rng: np.random.Generator) -> SimState:
        config = self.config
        network = self.scenario.network
        grids = self.scenario.microgrids

        # Priorities and strategies
        houses = {
            house_id: update_priorities(house, k, rng)
            for house_id, house in state.houses.items()
        }
        strategies = {
            house_id: generate_strategies(house, config.strategy_mode)
            for house_id, house in houses.items()
        }

        # Payoffs
        payoffs = {
            house_id: payoff_table(strategies[house_id], house.devices)
            for house_id, house in houses.items()
        }
        chosen = {house_id: choose(items) for house_id, items in payoffs.items()}

        production = {plant.id: plant.available for plant in state.plants}
        caps = {grid.id: grid.goal_at(k) for grid in grids}
        members = {grid.id: [house.id for house in grid.houses] for grid in grids}
        histories = dict(state.histories)
        unconstrained_cache: Dict[Tuple[Tuple[str, int], ...], Dict[str, int]] = {}

        graph: Optional[FlowGraph] = None
        flow: Optional[Flow] = None
        rounds = 0
        consensus = False
        while True:
            rounds += 1
            bids = {
                grid.id: microgrid_bid(
                    strategies[house.id][chosen[house.id]] for house in grid.houses
                )
                for grid in grids
            }
            for grid_id, bid in bids.items():
                history = histories.get(grid_id, BidHistory(window=config.history_window))
                histories[grid_id] = history.record(bid)

            # Routing
            new_graph = expand_network(network, production, bids, caps)
            flow = self._route(graph, flow, new_graph)
            graph = new_graph

            test_caps = headroom_caps(caps, bids)
            key = tuple(sorted(test_caps.items()))
            if key not in unconstrained_cache:
                unconstrained_cache[key] = unconstrained_consumption_test(
                    network, production, test_caps
                )
            unconstrained = unconstrained_cache[key]
            production_demand = unconstrained_production_test(network, bids)
            headroom = {
                grid_id: max(0, unconstrained.get(grid_id, 0) - bid)
                for grid_id, bid in bids.items()
            }
            messages = pending_messages(
                diagnose(graph, flow, bids, unconstrained),
                headroom,
                members,
                strategies,
                chosen,
            )
            logger.debug(
                f"round {rounds}: bids={bids} messages="
                f"{ {g: m.value for g, m in messages.items()} }",
                extra={"iteration": k, "round": rounds},
            )

            if all(msg is FeedbackMessage.FITS for msg in messages.values()):
                consensus = True
                break
            if rounds >= config.max_feedback_rounds:
                logger.info(
                    f"Iteration {k}: no consensus after {rounds} rounds",
                    extra={"iteration": k, "round": rounds},
                )
                break

            movable = [
                grid
                for grid in grids
                if messages[grid.id] is not FeedbackMessage.FITS
                and not all(
                    _stuck(
                        strategies[h.id], chosen[h.id], messages[grid.id], headroom[grid.id]
                    )
                    for h in grid.houses
                )
            ]
            if not movable:
                logger.info(
                    f"Iteration {k}: feedback cannot move any bid, stopping",
                    extra={"iteration": k, "round": rounds},
                )
                break

            # Re-select under feedback
            for grid in movable:
                msg = messages[grid.id]
                tables = {house.id: payoffs[house.id] for house in grid.houses}
                payoffs.update(apply_feedback(tables, chosen, msg, config.epsilon))
                # climbs share the headroom in house order
                room = headroom[grid.id] if msg is FeedbackMessage.CONSUME_MORE else None
                for house in grid.houses:
                    options = strategies[house.id]
                    before = options[chosen[house.id]].energy
                    allowed = _candidates(options, chosen[house.id], msg, room)
                    chosen[house.id] = choose(payoffs[house.id], within=allowed)
                    if room is not None:
                        room -= options[chosen[house.id]].energy - before

        # Allocation
        granted = delivered(graph, flow) if graph is not None else {}
        allocations: Dict[str, Set[str]] = {}
        house_consumption: Dict[str, int] = {}
        for grid in grids:
            requests = {
                house.id: strategies[house.id][chosen[house.id]].energy
                for house in grid.houses
            }
            shares = split_grant(requests, granted.get(grid.id, 0))
            for house in grid.houses:
                selection = final_allocation(houses[house.id], shares[house.id])
                allocations[house.id] = selection
                house_consumption[house.id] = sum(
                    device.w for device in houses[house.id].devices if device.id in selection
                )

        houses = {
            house_id: replace(
                house,
                bid_history=(
                    house.bid_history + (strategies[house_id][chosen[house_id]].energy,)
                )[-config.history_window :],
            )
            for house_id, house in houses.items()
        }

        # Forecast and production plan
        realized = sent(graph, flow) if graph is not None else {}
        current = tuple(
            replace(plant, output=realized.get(plant.id, 0)) for plant in state.plants
        )
        forecasts = {grid_id: forecast_bid(history) for grid_id, history in histories.items()}
        plan = plan_production(forecasts, current, network)
        plants = tuple(replace(plant, output=plan.targets[plant.id]) for plant in current)

        record = self._record(
            k, house_consumption, rounds, consensus, flow, bids, granted, forecasts, plan
        )
        return SimState(
            iteration=k,
            houses=houses,
            plants=plants,
            rng=rng,
            histories=histories,
            strategies=strategies,
            payoffs=payoffs,
            chosen=chosen,
            bids=bids,
            messages=messages,
            graph=graph,
            flow=flow,
            granted=granted,
            rounds=rounds,
            consensus=consensus,
            production_demand=production_demand,
            allocations=allocations,
            forecasts=forecasts,
            plan=plan,
            record=record,
        )

    def _route(
        self, graph: Optional[FlowGraph], flow: Optional[Flow], new_graph: FlowGraph
    ) -> Flow:
        """Route from scratch on the first round, incrementally afterwards."""
        if graph is None or flow is None:
            return min_cost_flow(new_graph)
        changes = changes_between(graph, new_graph)
        if changes is None:
            return min_cost_flow(new_graph)
        if not changes:
            return flow
        try:
            return incremental_reroute(graph, flow, changes)
        except GridSimError as e:
            logger.warning(f"Incremental update failed, solving from scratch: {e}")
            return min_cost_flow(new_graph)

    def _record(
        self,
        k: int,
        house_consumption: Dict[str, int],
        rounds: int,
        consensus: bool,
        flow: Optional[Flow],
        bids: Dict[str, int],
        granted: Dict[str, int],
        forecasts: Dict[str, Fraction],
        plan: ProductionPlan,
    ) -> MetricsRecord:
        goals = [grid.goal_at(k) for grid in self.scenario.microgrids]
        goals = [goal for goal in goals if goal is not None]
        goal = sum(goals) if goals else None
        consumption = sum(house_consumption.values())
        error = Fraction(consumption - goal, goal) if goal else None
        return MetricsRecord(
            iteration=k,
            goal=goal,
            consumption=consumption,
            house_consumption=house_consumption,
            rounds=rounds,
            consensus=consensus,
            flow_cost=flow.cost if flow is not None else 0,
            tracking_error=error,
            bids=bids,
            granted=granted,
            forecasts=forecasts,
            plan_cost=plan.cost,
        )


def run_iteration(state: SimState, scenario: Scenario) -> SimState:
    """Run one iteration of ``scenario`` from ``state``."""
    return SimulationService(scenario).run_iteration(state)


def run_simulation(scenario: Scenario, iterations: Optional[int] = None) -> List[MetricsRecord]:
    """Run ``scenario`` for ``iterations`` (default: its configured count)."""
    return SimulationService(scenario).run_simulation(iterations)
