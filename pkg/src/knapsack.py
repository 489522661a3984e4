"""
Local demand management for a smart house.

Each device gets a value from its consumption and priority; a 0/1 knapsack
table over those values tells, for every energy budget, the most valuable set of
devices to run. Strategies are the consumption schemes offered to the
microgrid auction, cut from the devices by priority.
"""

from dataclasses import dataclass
from typing import List, Sequence, Set, Tuple

import numpy as np

from src.models import Device, House, StrategyMode


def device_value(w: int, p: int, w_max: int, p_max: int) -> int:
    """
    Knapsack value of a device.

    ``w_max * p_max`` is the same for every device of the house; the
    ``- w * p`` term penalizes large deferrable loads and ``+ w`` keeps
    must-run devices ordered by their consumption.

    Example:
        >>> device_value(w=1, p=0, w_max=20, p_max=4)
        81
    """
    return w_max * p_max - w * p + w


def house_values(devices: Sequence[Device]) -> List[int]:
    """Values of all devices, using the house's largest demand and priority."""
    if not devices:
        return []
    w_max = max(device.w for device in devices)
    p_max = max(device.p for device in devices)
    return [device_value(d.w, d.p, w_max, p_max) for d in devices]


@dataclass(frozen=True)
class KnapsackTable:
    """
    Dynamic programming table of a house.

    ``m[i, w]`` is the best value reachable with the first ``i`` devices and at
    most ``w`` units of energy. The capacity axis stops at the total demand of
    the house: any larger budget admits every device.
    """

    m: np.ndarray
    devices: Tuple[Device, ...]
    values: Tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.devices)

    @property
    def capacity(self) -> int:
        return self.m.shape[1] - 1

    def best_value(self, w: int) -> int:
        return int(self.m[self.n, min(w, self.capacity)])


def build_dp_table(devices: Sequence[Device]) -> KnapsackTable:
    """
    Fill the knapsack table row by row.

    m[0, w] = 0 and m[i, w] = max(m[i-1, w], m[i-1, w - w_i] + v_i) when
    w_i <= w. Each row is one vectorized update over the capacity axis.

    Args:
        devices: Devices in declaration order

    Returns:
        KnapsackTable of shape (n + 1, W + 1) with W the total demand
    """
    devices = tuple(devices)
    values = house_values(devices)
    capacity = sum(device.w for device in devices)

    m = np.zeros((len(devices) + 1, capacity + 1), dtype=np.int64)
    for i, (device, value) in enumerate(zip(devices, values), start=1):
        previous = m[i - 1]
        m[i] = previous
        if device.w <= capacity:
            taken = previous[: capacity + 1 - device.w] + value
            m[i, device.w :] = np.maximum(previous[device.w :], taken)

    return KnapsackTable(m=m, devices=devices, values=tuple(values))


def backtrack_selection(table: KnapsackTable, target_w: int) -> Set[str]:
    """
    Recover the device set behind ``m[n, target_w]``.

    Walks i = n..1: when m[i, w] differs from m[i-1, w] device i is in the
    solution and the walk continues at w - w_i, otherwise at w. The walk is
    deterministic for a given device order.

    Args:
        table: Table built by ``build_dp_table``
        target_w: Energy budget; budgets above the total demand select everything

    Returns:
        Set of selected device ids

    Raises:
        ValueError: If target_w is negative
    """
    if target_w < 0:
        raise ValueError(f"Energy budget must be nonnegative, got {target_w}")

    w = min(target_w, table.capacity)
    selected = set()
    for i in range(table.n, 0, -1):
        if table.m[i, w] != table.m[i - 1, w]:
            device = table.devices[i - 1]
            selected.add(device.id)
            w -= device.w
    return selected


@dataclass(frozen=True)
class Strategy:
    """
    A consumption scheme offered by a house.

    Attributes:
        threshold: Highest priority admitted into the scheme
        device_ids: Selected devices, in declaration order
        energy: Total consumption of the selection
        value: Total knapsack value of the selection
    """

    threshold: int
    device_ids: Tuple[str, ...]
    energy: int
    value: int


def _strategy(threshold: int, chosen: Sequence[Tuple[Device, int]]) -> Strategy:
    return Strategy(
        threshold=threshold,
        device_ids=tuple(device.id for device, _ in chosen),
        energy=sum(device.w for device, _ in chosen),
        value=sum(value for _, value in chosen),
    )


def generate_strategies(
    house: House, mode: StrategyMode = StrategyMode.THRESHOLD
) -> List[Strategy]:
    """
    Build the ordered strategy list of a house.

    THRESHOLD: one strategy per distinct priority level k, holding exactly the
    devices with p <= k, in increasing k.

    INCREMENTAL: the must-run devices (p = 0) form the first strategy, then the
    other devices join one at a time in (priority, declaration) order.

    Energy and value are nondecreasing along the list in both modes.

    Args:
        house: House with at least one device
        mode: Strategy cutting rule

    Returns:
        Strategies in increasing threshold order
    """
    pairs = list(zip(house.devices, house_values(house.devices)))

    if mode is StrategyMode.THRESHOLD:
        levels = sorted({device.p for device in house.devices})
        return [
            _strategy(level, [pair for pair in pairs if pair[0].p <= level])
            for level in levels
        ]

    base = [i for i, (device, _) in enumerate(pairs) if device.p == 0]
    rest = sorted(
        (i for i, (device, _) in enumerate(pairs) if device.p > 0),
        key=lambda i: pairs[i][0].p,
    )
    strategies = [_strategy(0, [pairs[i] for i in base])] if base else []
    chosen = list(base)
    for i in rest:
        chosen.append(i)
        strategies.append(
            _strategy(pairs[i][0].p, [pairs[j] for j in sorted(chosen)])
        )
    return strategies
