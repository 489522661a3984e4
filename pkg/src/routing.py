"""
T&D routing as a min-cost max-flow problem.

The physical network is expanded into a flow graph: every line becomes up to
three parallel arcs (under-load, standard, over-load) with increasing unit
costs, every plant is fed by a virtual source and every microgrid drains into a
virtual sink. Flows are found by augmenting along cheapest residual paths; a
warm-started solve first cancels negative residual cycles so that starting from
any feasible flow gives the same optimum as a cold solve.

Arcs are always scanned in arc-id order, which makes the choice among equally
cheap paths deterministic.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from src.logging_config import get_logger, log_performance
from src.models import FeedbackMessage, GridNetwork, GridSimError

logger = get_logger(__name__)

Number = Union[int, Fraction]

SOURCE = "__source__"
SINK = "__sink__"

# Arc kinds
LINE = "line"
PLANT = "plant"
MICROGRID = "microgrid"


@dataclass(frozen=True)
class Arc:
    """
    A directed arc of a flow graph.

    Attributes:
        id: Unique id; arcs are ordered by it
        lower: Lower bound on the flow (carried, always 0 for now)
        capacity: Upper bound on the flow
        cost: Unit cost
        kind: line, plant or microgrid (or any label for ad-hoc graphs)
        origin: Id of the line, plant or microgrid the arc stands for
        tier: Load tier 1..3 for line arcs, 0 otherwise
    """

    id: str
    tail: str
    head: str
    capacity: int
    cost: Number = 0
    lower: int = 0
    kind: str = LINE
    origin: str = ""
    tier: int = 0


@dataclass(frozen=True)
class FlowGraph:
    """Directed multigraph with a source and a sink."""

    nodes: Tuple[str, ...]
    arcs: Tuple[Arc, ...]
    source: str = SOURCE
    sink: str = SINK

    @classmethod
    def build(
        cls,
        arcs: Iterable[Arc],
        nodes: Iterable[str] = (),
        source: str = SOURCE,
        sink: str = SINK,
    ) -> "FlowGraph":
        """Create a graph with arcs sorted by id and every endpoint registered."""
        arcs = tuple(sorted(arcs, key=lambda arc: arc.id))
        ids = [arc.id for arc in arcs]
        if len(set(ids)) != len(ids):
            raise ValueError("Arc ids must be unique")

        ordered: Dict[str, None] = dict.fromkeys([source, sink, *nodes])
        for arc in arcs:
            ordered.setdefault(arc.tail)
            ordered.setdefault(arc.head)
        return cls(nodes=tuple(ordered), arcs=arcs, source=source, sink=sink)

    def arc(self, arc_id: str) -> Arc:
        for arc in self.arcs:
            if arc.id == arc_id:
                return arc
        raise KeyError(arc_id)

    def with_capacities(self, capacities: Mapping[str, int]) -> "FlowGraph":
        """Copy of the graph with some arc capacities replaced."""
        unknown = set(capacities) - {arc.id for arc in self.arcs}
        if unknown:
            raise KeyError(f"Unknown arcs: {sorted(unknown)}")
        arcs = tuple(
            replace(arc, capacity=capacities[arc.id]) if arc.id in capacities else arc
            for arc in self.arcs
        )
        return replace(self, arcs=arcs)

    def arcs_of(self, kind: str) -> List[Arc]:
        return [arc for arc in self.arcs if arc.kind == kind]


@dataclass(frozen=True)
class Flow:
    """
    An assignment of flow to every arc of a graph.

    ``amounts`` is keyed by arc id. The flow between two nodes is the sum over
    arcs u->v minus the sum over arcs v->u, so it is antisymmetric by
    construction.
    """

    amounts: Mapping[str, int]
    value: int
    cost: Number

    @classmethod
    def from_amounts(cls, graph: FlowGraph, amounts: Mapping[str, int]) -> "Flow":
        full = {arc.id: amounts.get(arc.id, 0) for arc in graph.arcs}
        value = sum(
            full[arc.id] for arc in graph.arcs if arc.tail == graph.source
        ) - sum(full[arc.id] for arc in graph.arcs if arc.head == graph.source)
        cost = sum((arc.cost * full[arc.id] for arc in graph.arcs), 0)
        return cls(amounts=full, value=value, cost=cost)

    @classmethod
    def zero(cls, graph: FlowGraph) -> "Flow":
        return cls.from_amounts(graph, {})

    def on(self, arc_id: str) -> int:
        return self.amounts.get(arc_id, 0)

    def net(self, graph: FlowGraph, u: str, v: str) -> int:
        """Net flow from u to v over all parallel arcs."""
        forward = sum(self.on(a.id) for a in graph.arcs if a.tail == u and a.head == v)
        backward = sum(self.on(a.id) for a in graph.arcs if a.tail == v and a.head == u)
        return forward - backward


@dataclass(frozen=True)
class CapacityChange:
    """New capacity of one arc; listed when it falls below the arc's flow."""

    arc_id: str
    capacity: int


@dataclass(frozen=True)
class FlowRecord:
    """One line of a flow dump."""

    tail: str
    head: str
    tier: int
    flow: int
    cost: Number


# ============================================================================
# Graph construction
# ============================================================================


def expand_network(
    net: GridNetwork,
    production: Mapping[str, int],
    bids: Mapping[str, int],
    caps: Optional[Mapping[str, Optional[int]]] = None,
) -> FlowGraph:
    """
    Build the tiered flow graph of the network.

    Each line with cumulative tier limits (c1, c2, c3) becomes arcs of widths
    c1, c2 - c1 and c3 - c2 priced at its tier costs; zero-width tiers are
    omitted. The source feeds each plant with its production and each microgrid
    drains into the sink up to its bid.

    Args:
        net: Network with plant and microgrid node bindings
        production: plant id -> energy available this iteration
        bids: microgrid id -> energy requested
        caps: Optional microgrid id -> consumption goal capping the sink arc

    Returns:
        FlowGraph ready for ``min_cost_flow``
    """
    caps = caps or {}
    arcs: List[Arc] = []

    for line in net.lines:
        previous = 0
        for tier, (limit, cost) in enumerate(zip(line.tier_caps, line.tier_costs), 1):
            width = limit - previous
            previous = limit
            if width <= 0:
                continue
            arcs.append(
                Arc(
                    id=f"line:{line.id}#{tier}",
                    tail=line.source,
                    head=line.target,
                    capacity=width,
                    cost=cost,
                    kind=LINE,
                    origin=line.id,
                    tier=tier,
                )
            )

    for plant_id, node in net.plant_nodes.items():
        arcs.append(
            Arc(
                id=f"plant:{plant_id}",
                tail=SOURCE,
                head=node,
                capacity=max(0, int(production.get(plant_id, 0))),
                kind=PLANT,
                origin=plant_id,
            )
        )

    for grid_id, node in net.microgrid_nodes.items():
        capacity = max(0, int(bids.get(grid_id, 0)))
        if caps.get(grid_id) is not None:
            capacity = min(capacity, caps[grid_id])
        arcs.append(
            Arc(
                id=f"microgrid:{grid_id}",
                tail=node,
                head=SINK,
                capacity=capacity,
                kind=MICROGRID,
                origin=grid_id,
            )
        )

    return FlowGraph.build(arcs, nodes=net.nodes)


# ============================================================================
# Residual graph search
# ============================================================================

# (tail, head, cost, arc id, direction, residual capacity)
_Edge = Tuple[str, str, Number, str, int, int]


def _residual_edges(graph: FlowGraph, amounts: Mapping[str, int]) -> List[_Edge]:
    edges = []
    for arc in graph.arcs:
        f = amounts[arc.id]
        if f < arc.capacity:
            edges.append((arc.tail, arc.head, arc.cost, arc.id, 1, arc.capacity - f))
        if f > arc.lower:
            edges.append((arc.head, arc.tail, -arc.cost, arc.id, -1, f - arc.lower))
    return edges


def _cheapest_path(
    nodes: Sequence[str], edges: Sequence[_Edge], origin: str, target: str
) -> Optional[List[_Edge]]:
    """Label-correcting shortest path; negative edge costs are allowed."""
    dist: Dict[str, Number] = {origin: 0}
    parent: Dict[str, _Edge] = {}
    for _ in range(len(nodes) - 1):
        changed = False
        for edge in edges:
            tail = edge[0]
            if tail not in dist:
                continue
            candidate = dist[tail] + edge[2]
            head = edge[1]
            if head not in dist or candidate < dist[head]:
                dist[head] = candidate
                parent[head] = edge
                changed = True
        if not changed:
            break

    if target not in dist:
        return None
    path = []
    node = target
    while node != origin:
        edge = parent[node]
        path.append(edge)
        node = edge[0]
    path.reverse()
    return path


def _negative_cycle(nodes: Sequence[str], edges: Sequence[_Edge]) -> Optional[List[_Edge]]:
    """Return a negative-cost residual cycle, or None."""
    dist: Dict[str, Number] = {node: 0 for node in nodes}
    parent: Dict[str, _Edge] = {}
    relaxed = None
    for _ in range(len(nodes)):
        relaxed = None
        for edge in edges:
            candidate = dist[edge[0]] + edge[2]
            if candidate < dist[edge[1]]:
                dist[edge[1]] = candidate
                parent[edge[1]] = edge
                relaxed = edge[1]
        if relaxed is None:
            return None

    # Step back far enough to be inside the cycle
    node = relaxed
    for _ in range(len(nodes)):
        node = parent[node][0]
    cycle = []
    current = node
    while True:
        edge = parent[current]
        cycle.append(edge)
        current = edge[0]
        if current == node:
            break
    cycle.reverse()
    return cycle


def _push(amounts: Dict[str, int], path: Sequence[_Edge], delta: int) -> None:
    for edge in path:
        amounts[edge[3]] += delta * edge[4]


def has_augmenting_path(graph: FlowGraph, flow: Flow) -> bool:
    """Whether the residual graph still connects the source to the sink."""
    edges = _residual_edges(graph, dict(flow.amounts))
    return _cheapest_path(graph.nodes, edges, graph.source, graph.sink) is not None


@log_performance(logger)
def min_cost_flow(graph: FlowGraph, initial: Optional[Flow] = None) -> Flow:
    """
    Maximum source-sink flow of minimum total cost.

    Starting from ``initial`` (or zero), negative residual cycles are cancelled
    first; then flow is pushed along a cheapest residual path, reverse arcs
    valued at minus their cost, until the sink is unreachable.

    Args:
        graph: Flow graph with zero lower bounds
        initial: Optional feasible flow to warm-start from

    Returns:
        Optimal Flow (integral whenever capacities are integral)

    Raises:
        ValueError: If an arc carries a nonzero lower bound
    """
    if any(arc.lower for arc in graph.arcs):
        raise ValueError("Nonzero lower bounds are not supported")

    amounts = {arc.id: 0 for arc in graph.arcs}
    if initial is not None:
        amounts.update({k: v for k, v in initial.amounts.items() if k in amounts})

    while True:
        cycle = _negative_cycle(graph.nodes, _residual_edges(graph, amounts))
        if cycle is None:
            break
        _push(amounts, cycle, min(edge[5] for edge in cycle))

    augmentations = 0
    while True:
        edges = _residual_edges(graph, amounts)
        path = _cheapest_path(graph.nodes, edges, graph.source, graph.sink)
        if path is None:
            break
        _push(amounts, path, min(edge[5] for edge in path))
        augmentations += 1

    flow = Flow.from_amounts(graph, amounts)
    logger.debug(
        f"min_cost_flow: value={flow.value} cost={flow.cost} "
        f"augmentations={augmentations}"
    )
    return flow


# ============================================================================
# Incremental update
# ============================================================================


def _inverted(cost: Number) -> Fraction:
    # Source and sink arcs are free; they stay free in the relief graph
    return Fraction(1) / cost if cost else Fraction(0)


def _relief_path(
    graph: FlowGraph,
    remaining: Mapping[str, int],
    pending: Mapping[str, int],
) -> Optional[List[Arc]]:
    """
    Cheapest source-sink path in the relief graph crossing a pending arc.

    Searches the product of the graph with a crossed/not-crossed flag so the
    path is forced through at least one listed arc that is not yet saturated.
    """
    states = [(node, flag) for flag in (0, 1) for node in graph.nodes]
    dist: Dict[Tuple[str, int], Fraction] = {(graph.source, 0): Fraction(0)}
    parent: Dict[Tuple[str, int], Tuple[Tuple[str, int], Arc]] = {}

    moves = []
    for arc in graph.arcs:
        if remaining[arc.id] <= 0:
            continue
        cost = _inverted(arc.cost)
        crossing = pending.get(arc.id, 0) > 0
        for flag in (0, 1):
            moves.append(((arc.tail, flag), (arc.head, 1 if crossing else flag), cost, arc))

    for _ in range(len(states) - 1):
        changed = False
        for tail, head, cost, arc in moves:
            if tail not in dist:
                continue
            candidate = dist[tail] + cost
            if head not in dist or candidate < dist[head]:
                dist[head] = candidate
                parent[head] = (tail, arc)
                changed = True
        if not changed:
            break

    target = (graph.sink, 1)
    if target not in dist:
        return None
    path = []
    state = target
    while state != (graph.source, 0):
        state, arc = parent[state]
        path.append(arc)
    path.reverse()
    return path


@log_performance(logger, expected=(GridSimError,))
def incremental_reroute(
    graph: FlowGraph, prev: Flow, changes: Sequence[CapacityChange]
) -> Flow:
    """
    Update a routing after some arc capacities dropped.

    Arcs whose new capacity is below their current flow are listed. A relief
    graph is built on the previous routing: each arc offers its current flow,
    each listed arc only the excess to remove, and costs are inverted so the
    dearest routes are relieved first. Cheapest paths through unsaturated
    listed arcs are augmented until every listed arc is saturated; the relief
    flow is subtracted from the previous routing, and the min-cost flow solver
    completes the result on the updated graph.

    Args:
        graph: Graph the previous flow was computed on
        prev: Feasible flow on ``graph``
        changes: New capacities

    Returns:
        Optimal flow on the updated graph

    Raises:
        GridSimError: INFEASIBLE_REROUTE when a listed arc cannot be relieved
    """
    updated = graph.with_capacities({c.arc_id: c.capacity for c in changes})
    excess = {
        c.arc_id: prev.on(c.arc_id) - c.capacity
        for c in changes
        if prev.on(c.arc_id) > c.capacity
    }
    if not excess:
        return min_cost_flow(updated, initial=prev)

    logger.debug(f"incremental_reroute: relieving {excess}")
    remaining = {
        arc.id: excess.get(arc.id, prev.on(arc.id)) for arc in graph.arcs
    }
    pending = dict(excess)
    relief = {arc.id: 0 for arc in graph.arcs}

    while any(amount > 0 for amount in pending.values()):
        path = _relief_path(graph, remaining, pending)
        delta = 0
        if path is not None:
            uses: Dict[str, int] = {}
            for arc in path:
                uses[arc.id] = uses.get(arc.id, 0) + 1
            delta = min(remaining[arc_id] // count for arc_id, count in uses.items())
            delta = min(
                [delta] + [pending[arc_id] for arc_id in uses if pending.get(arc_id, 0) > 0]
            )
        if delta <= 0:
            stuck = sorted(arc_id for arc_id, amount in pending.items() if amount > 0)
            raise GridSimError(
                code="INFEASIBLE_REROUTE",
                message=f"Cannot relieve arc {stuck[0]} in the update graph",
                details={"arc": stuck[0], "missing": pending[stuck[0]]},
            )
        for arc in path:
            remaining[arc.id] -= delta
            relief[arc.id] += delta
            if arc.id in pending:
                pending[arc.id] -= delta

    residual = Flow.from_amounts(
        updated, {arc_id: prev.on(arc_id) - relief[arc_id] for arc_id in relief}
    )
    return min_cost_flow(updated, initial=residual)


def changes_between(old: FlowGraph, new: FlowGraph) -> Optional[List[CapacityChange]]:
    """
    Capacity changes turning ``old`` into ``new``.

    Returns:
        The list of changed arcs, or None when the graphs differ in anything
        other than capacities
    """
    if old.nodes != new.nodes or len(old.arcs) != len(new.arcs):
        return None
    changes = []
    for before, after in zip(old.arcs, new.arcs):
        if replace(before, capacity=after.capacity) != after:
            return None
        if before.capacity != after.capacity:
            changes.append(CapacityChange(arc_id=after.id, capacity=after.capacity))
    return changes


# ============================================================================
# Diagnosis and reporting
# ============================================================================


def delivered(graph: FlowGraph, flow: Flow) -> Dict[str, int]:
    """microgrid id -> energy reaching the sink from it."""
    totals: Dict[str, int] = {}
    for arc in graph.arcs_of(MICROGRID):
        totals[arc.origin] = totals.get(arc.origin, 0) + flow.on(arc.id)
    return totals


def sent(graph: FlowGraph, flow: Flow) -> Dict[str, int]:
    """plant id -> energy leaving the source through it."""
    totals: Dict[str, int] = {}
    for arc in graph.arcs_of(PLANT):
        totals[arc.origin] = totals.get(arc.origin, 0) + flow.on(arc.id)
    return totals


def diagnose(
    graph: FlowGraph,
    flow: Flow,
    bids: Mapping[str, int],
    unconstrained: Optional[Mapping[str, int]] = None,
) -> Dict[str, FeedbackMessage]:
    """
    Feedback message for every bidding microgrid.

    A microgrid receiving less than its bid must consume less. One receiving
    its whole bid may consume more when the unconstrained consumption test
    could deliver it at least one more unit. Otherwise the bid fits.

    Args:
        graph: Routed graph
        flow: Min-cost flow on ``graph``
        bids: microgrid id -> energy requested
        unconstrained: microgrid id -> delivery without bid caps

    Returns:
        microgrid id -> FeedbackMessage
    """
    unconstrained = unconstrained or {}
    got = delivered(graph, flow)
    messages = {}
    for grid_id, bid in bids.items():
        amount = got.get(grid_id, 0)
        if amount < bid:
            messages[grid_id] = FeedbackMessage.CONSUME_LESS
        elif unconstrained.get(grid_id, 0) - bid >= 1:
            messages[grid_id] = FeedbackMessage.CONSUME_MORE
        else:
            messages[grid_id] = FeedbackMessage.FITS
    return messages


def flow_records(graph: FlowGraph, flow: Flow) -> List[FlowRecord]:
    """Arc-list dump of a flow, in arc-id order."""
    return [
        FlowRecord(
            tail=arc.tail,
            head=arc.head,
            tier=arc.tier,
            flow=flow.on(arc.id),
            cost=arc.cost * flow.on(arc.id),
        )
        for arc in graph.arcs
    ]


def flow_violations(graph: FlowGraph, flow: Flow) -> List[str]:
    """Every broken flow invariant, as readable strings (empty when valid)."""
    problems = []
    for arc in graph.arcs:
        f = flow.on(arc.id)
        if not arc.lower <= f <= arc.capacity:
            problems.append(f"capacity: {arc.id} carries {f} outside [{arc.lower}, {arc.capacity}]")

    balance = {node: 0 for node in graph.nodes}
    for arc in graph.arcs:
        balance[arc.tail] -= flow.on(arc.id)
        balance[arc.head] += flow.on(arc.id)
    for node, amount in balance.items():
        if node not in (graph.source, graph.sink) and amount != 0:
            problems.append(f"conservation: node {node} is off by {amount}")
    if -balance[graph.source] != balance[graph.sink]:
        problems.append("conservation: source outflow differs from sink inflow")
    if flow.value != balance[graph.sink]:
        problems.append(f"value: {flow.value} but sink receives {balance[graph.sink]}")

    pairs = {(arc.tail, arc.head) for arc in graph.arcs}
    for u, v in pairs:
        if flow.net(graph, u, v) != -flow.net(graph, v, u):
            problems.append(f"antisymmetry: {u}->{v}")

    expected_cost = sum((arc.cost * flow.on(arc.id) for arc in graph.arcs), 0)
    if flow.cost != expected_cost:
        problems.append(f"cost: reported {flow.cost}, arcs sum to {expected_cost}")
    return problems


def assert_flow_invariants(graph: FlowGraph, flow: Flow) -> None:
    """Raise AssertionError listing every broken flow invariant."""
    problems = flow_violations(graph, flow)
    assert not problems, "; ".join(problems)
