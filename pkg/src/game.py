"""
Microgrid auction: a strategic game between each house and the distribution.

Every strategy of a house gets two payoffs, ``l`` for the prosumer and ``r``
for the distribution. The house plays a Pareto-optimal strategy; routing
feedback then punishes or rewards strategies through (1 - epsilon)
multipliers until the bids fit the network.

All payoffs are exact rationals.
"""

import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from src.knapsack import Strategy, house_values
from src.logging_config import get_logger
from src.models import Device, FeedbackMessage, GridSimError

logger = get_logger(__name__)

Number = Union[int, Fraction]


@dataclass(frozen=True)
class StrategyPayoff:
    """
    Payoffs of one strategy of a house.

    ``multiplier`` is the product of every feedback factor applied during the
    current auction; the adjusted payoffs are the raw ones times that product.
    """

    strategy_index: int
    energy: int
    l: Fraction
    r: Fraction
    multiplier: Fraction = Fraction(1)

    @property
    def adjusted_l(self) -> Fraction:
        return self.l * self.multiplier

    @property
    def adjusted_r(self) -> Fraction:
        return self.r * self.multiplier

    @property
    def adjusted_total(self) -> Fraction:
        return (self.l + self.r) * self.multiplier


def _utilities(devices: Sequence[Device]) -> Dict[str, Tuple[Device, int]]:
    return {
        device.id: (device, value)
        for device, value in zip(devices, house_values(devices))
    }


def house_payoff_l(strategy: Strategy, devices: Sequence[Device]) -> Fraction:
    """
    Prosumer payoff: sum of v_i * w_i / max(p_i, 1) over the strategy.

    The device utility is its knapsack value; must-run devices (p = 0) divide
    by 1.
    """
    utilities = _utilities(devices)
    total = Fraction(0)
    for device_id in strategy.device_ids:
        device, value = utilities[device_id]
        total += Fraction(value * device.w, max(device.p, 1))
    return total


def house_gamma(devices: Sequence[Device]) -> Fraction:
    """
    Consumption-weighted mean utility per energy unit over the whole house.

    Raises:
        GridSimError: UNDEFINED_GAMMA when the house consumes nothing at all
    """
    total_w = sum(device.w for device in devices)
    if total_w == 0:
        raise GridSimError(
            code="UNDEFINED_GAMMA",
            message="Mean utility is undefined for a house with zero consumption",
            details={"devices": [device.id for device in devices]},
        )
    weighted = sum(
        value * device.w for device, value in zip(devices, house_values(devices))
    )
    return Fraction(weighted, total_w)


def distribution_payoff_r(
    strategy: Strategy, gamma: Number, devices: Sequence[Device]
) -> Fraction:
    """
    Distribution payoff: sum of (v_i / max(p_i, 1) - gamma) * w_i.

    Equals ``house_payoff_l(strategy) - gamma * strategy.energy``.
    """
    utilities = _utilities(devices)
    total = Fraction(0)
    for device_id in strategy.device_ids:
        device, value = utilities[device_id]
        total += (Fraction(value, max(device.p, 1)) - gamma) * device.w
    return total


def payoff_table(
    strategies: Sequence[Strategy], devices: Sequence[Device]
) -> List[StrategyPayoff]:
    """
    Payoffs of every strategy of a house.

    A house whose devices all consume nothing has no mean utility; its
    strategies all have zero energy so gamma is taken as 0.
    """
    try:
        gamma = house_gamma(devices)
    except GridSimError:
        gamma = Fraction(0)

    payoffs = []
    for index, strategy in enumerate(strategies):
        l = house_payoff_l(strategy, devices)
        payoffs.append(
            StrategyPayoff(
                strategy_index=index,
                energy=strategy.energy,
                l=l,
                r=l - gamma * strategy.energy,
            )
        )
    return payoffs


def pareto_front(payoffs: Sequence[Tuple[Number, Number]]) -> Set[int]:
    """
    Indices of the payoff pairs no other pair strictly dominates.

    A pair is dominated when another is at least as good on both payoffs and
    better on one. Identical pairs never dominate each other. Sorting by l then
    sweeping r keeps this O(k log k).
    """
    order = sorted(range(len(payoffs)), key=lambda i: (-payoffs[i][0], -payoffs[i][1]))

    front = set()
    best_r_above = None  # best r among strictly larger l
    position = 0
    while position < len(order):
        l = payoffs[order[position]][0]
        group = []
        while position < len(order) and payoffs[order[position]][0] == l:
            group.append(order[position])
            position += 1

        group_best_r = payoffs[group[0]][1]
        for index in group:
            r = payoffs[index][1]
            if r < group_best_r:
                continue
            if best_r_above is not None and r <= best_r_above:
                continue
            front.add(index)

        if best_r_above is None or group_best_r > best_r_above:
            best_r_above = group_best_r

    return front


def select_strategy(payoffs: Sequence[StrategyPayoff], front: Iterable[int]) -> int:
    """
    Pick the front member maximizing adjusted l + r.

    Ties go to the smaller energy, then to the lower strategy index.

    Returns:
        Strategy index of the selection
    """
    by_index = {payoff.strategy_index: payoff for payoff in payoffs}
    return min(
        front,
        key=lambda i: (-by_index[i].adjusted_total, by_index[i].energy, i),
    )


def choose(
    payoffs: Sequence[StrategyPayoff], within: Optional[Iterable[int]] = None
) -> int:
    """
    Run the Pareto filter on adjusted payoffs and select a strategy.

    ``within`` restricts the candidates to some strategy indices; the front is
    then taken among those candidates only.
    """
    candidates = list(payoffs)
    if within is not None:
        allowed = set(within)
        candidates = [p for p in payoffs if p.strategy_index in allowed]
    front = pareto_front([(p.adjusted_l, p.adjusted_r) for p in candidates])
    return select_strategy(candidates, [candidates[i].strategy_index for i in front])


def apply_feedback(
    payoffs: Mapping[str, Sequence[StrategyPayoff]],
    chosen: Mapping[str, int],
    msg: FeedbackMessage,
    epsilon: Number,
) -> Dict[str, List[StrategyPayoff]]:
    """
    Apply a microgrid's feedback message to the payoffs of its houses.

    CONSUME_LESS multiplies every strategy consuming at least as much as the
    chosen one by (1 - epsilon); CONSUME_MORE does the same to every strategy
    consuming at most as much. FITS changes nothing. Raw payoffs are kept.

    Args:
        payoffs: house id -> strategy payoffs
        chosen: house id -> index of the strategy currently selected
        msg: Message received by the microgrid
        epsilon: Feedback coefficient in (0, 1)

    Returns:
        house id -> adjusted strategy payoffs
    """
    if msg is FeedbackMessage.FITS:
        return {house_id: list(items) for house_id, items in payoffs.items()}

    factor = 1 - Fraction(epsilon)
    less = msg is FeedbackMessage.CONSUME_LESS
    adjusted = {}
    for house_id, items in payoffs.items():
        current = items[chosen[house_id]].energy
        adjusted[house_id] = [
            replace(payoff, multiplier=payoff.multiplier * factor)
            if (payoff.energy >= current if less else payoff.energy <= current)
            else payoff
            for payoff in items
        ]
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug(
                f"{msg.value} on house {house_id}: "
                f"raw={[(str(p.l), str(p.r)) for p in items]} "
                f"multipliers={[str(p.multiplier) for p in adjusted[house_id]]}"
            )
    return adjusted


def microgrid_bid(selections: Iterable[Union[Strategy, int]]) -> int:
    """Total energy requested by a microgrid: the sum of its houses' choices."""
    return sum(
        item.energy if isinstance(item, Strategy) else int(item) for item in selections
    )
