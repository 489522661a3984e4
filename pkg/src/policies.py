"""
Priority-update policies for managed devices.

A policy maps (device, iteration, rng) to the device's priority for that
iteration. Policies are looked up by name in ``POLICIES``; a scenario naming an
unregistered policy is a configuration error.

Built-in policies:
    static(p)                    constant priority
    cyclic(period, levels)       walk through ``levels``, holding each for
                                 ``period`` iterations
    deadline(t_end, p0[, period]) linear descent from p0 to 0 at t_end; with
                                 ``period`` the deadline recurs every period
    random(p_max)                uniform draw in [0, p_max] from the seeded rng
"""

import logging
from dataclasses import replace
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np

from src.logging_config import get_logger
from src.models import Device, GridSimError, House, PriorityPolicy

logger = get_logger(__name__)

PolicyFn = Callable[[Device, Mapping[str, Any], int, np.random.Generator], int]


def _static(device: Device, params: Mapping[str, Any], iteration: int, rng) -> int:
    return int(params.get("p", device.p))


def _cyclic(device: Device, params: Mapping[str, Any], iteration: int, rng) -> int:
    levels = params["levels"]
    period = int(params.get("period", 1))
    return int(levels[(iteration // period) % len(levels)])


def _deadline(device: Device, params: Mapping[str, Any], iteration: int, rng) -> int:
    t_end = int(params["t_end"])
    p0 = int(params["p0"])
    t = iteration % int(params["period"]) if params.get("period") else iteration
    if t >= t_end:
        return 0
    # ceil(p0 * remaining / t_end) in integers
    return -(-p0 * (t_end - t) // t_end)


def _random(device: Device, params: Mapping[str, Any], iteration: int, rng) -> int:
    return int(rng.integers(0, int(params["p_max"]) + 1))


POLICIES: Dict[str, PolicyFn] = {
    "static": _static,
    "cyclic": _cyclic,
    "deadline": _deadline,
    "random": _random,
}

# Parameters each policy cannot do without
REQUIRED_PARAMS: Dict[str, tuple] = {
    "static": (),
    "cyclic": ("levels",),
    "deadline": ("t_end", "p0"),
    "random": ("p_max",),
}


def policy_problem(policy: Optional[PriorityPolicy]) -> Optional[str]:
    """
    Describe what is wrong with a policy descriptor.

    Returns:
        None when the policy is usable, otherwise a one-line reason
    """
    if policy is None:
        return None
    if policy.kind not in POLICIES:
        return f"unknown priority policy '{policy.kind}'"

    missing = [name for name in REQUIRED_PARAMS[policy.kind] if name not in policy.params]
    if missing:
        return f"policy '{policy.kind}' is missing {', '.join(missing)}"

    try:
        return _range_problem(policy.kind, policy.params)
    except (TypeError, ValueError):
        return f"policy '{policy.kind}' has malformed parameters"


def _range_problem(kind: str, params: Mapping[str, Any]) -> Optional[str]:
    if kind == "cyclic":
        if not params["levels"] or any(int(level) < 0 for level in params["levels"]):
            return "cyclic levels must be a nonempty list of nonnegative priorities"
        if int(params.get("period", 1)) < 1:
            return "cyclic period must be positive"
    elif kind == "deadline":
        if int(params["t_end"]) < 1 or int(params["p0"]) < 0:
            return "deadline needs t_end >= 1 and p0 >= 0"
        if params.get("period") is not None and int(params["period"]) < 1:
            return "deadline period must be positive"
    elif kind == "random":
        if int(params["p_max"]) < 0:
            return "random p_max must be nonnegative"
    elif kind == "static":
        if int(params.get("p", 0)) < 0:
            return "static priority must be nonnegative"
    return None


def next_priority(device: Device, iteration: int, rng: np.random.Generator) -> int:
    """
    Priority of one device at ``iteration``.

    Raises:
        GridSimError: CONFIGURATION_ERROR for an unknown or malformed policy
    """
    if device.is_direct:
        return 0
    if device.policy is None:
        return device.p

    problem = policy_problem(device.policy)
    if problem:
        raise GridSimError(
            code="CONFIGURATION_ERROR",
            message=problem,
            details={"device": device.id, "policy": device.policy.kind},
        )
    return POLICIES[device.policy.kind](device, device.policy.params, iteration, rng)


def update_priorities(
    house: House, iteration: int, rng: np.random.Generator
) -> House:
    """
    Refresh every device priority of a house for a new iteration.

    Direct-control devices are pinned to 0; managed devices follow their
    policy. Devices are visited in declaration order so the rng stream, and
    therefore the whole run, is reproducible from the seed.

    Args:
        house: House at the end of the previous iteration
        iteration: 1-based index of the iteration starting now
        rng: Simulation random generator

    Returns:
        A new House with updated priorities

    Raises:
        GridSimError: CONFIGURATION_ERROR for an unknown policy id
    """
    devices = tuple(
        replace(device, p=next_priority(device, iteration, rng))
        for device in house.devices
    )
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug(
            f"house {house.id} priorities at iteration {iteration}: "
            f"{[device.p for device in devices]}"
        )
    return replace(house, devices=devices)
