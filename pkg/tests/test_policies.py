"""
Unit tests for priority-update policies.
"""

import numpy as np
import pytest

from src.models import ControlMode, Device, GridSimError, House, PriorityPolicy
from src.policies import next_priority, policy_problem, update_priorities


def managed(policy: PriorityPolicy, p: int = 2) -> Device:
    return Device(id="d", w=3, p=p, policy=policy)


@pytest.mark.unit
class TestPolicies:
    """Test each built-in policy."""

    def test_static(self, rng):
        """Test that a static policy always returns its priority."""
        device = managed(PriorityPolicy("static", {"p": 3}))

        assert {next_priority(device, k, rng) for k in range(1, 30)} == {3}

    def test_static_without_parameter_keeps_priority(self, rng):
        """Test that a static policy without p keeps the declared priority."""
        assert next_priority(managed(PriorityPolicy("static"), p=4), 7, rng) == 4

    def test_cyclic(self, rng):
        """Test walking through levels, holding each for a period."""
        device = managed(PriorityPolicy("cyclic", {"period": 2, "levels": [0, 1, 2]}))

        assert [next_priority(device, k, rng) for k in range(0, 8)] == [0, 0, 1, 1, 2, 2, 0, 0]

    def test_deadline_descends_to_zero(self, rng):
        """Test the linear descent reaching 0 at the deadline."""
        device = managed(PriorityPolicy("deadline", {"t_end": 10, "p0": 5}))
        priorities = [next_priority(device, k, rng) for k in range(0, 13)]

        assert priorities[0] == 5
        assert priorities[10] == 0
        assert priorities[11:] == [0, 0]
        assert all(a >= b for a, b in zip(priorities, priorities[1:]))

    def test_recurring_deadline(self, rng):
        """Test that a deadline with a period restarts every period."""
        device = managed(PriorityPolicy("deadline", {"t_end": 4, "p0": 4, "period": 6}))

        assert [next_priority(device, k, rng) for k in range(0, 12)] == [
            4, 3, 2, 1, 0, 0,
            4, 3, 2, 1, 0, 0,
        ]  # fmt: skip

    def test_random_is_bounded_and_seeded(self):
        """Test that random draws stay in range and repeat for a seed."""
        device = managed(PriorityPolicy("random", {"p_max": 4}))

        first = [next_priority(device, k, np.random.default_rng(3)) for k in range(20)]
        again = [next_priority(device, k, np.random.default_rng(3)) for k in range(20)]

        assert first == again
        assert all(0 <= p <= 4 for p in first)

    def test_direct_device_stays_zero(self, rng):
        """Test that direct-control devices are pinned to priority 0."""
        device = Device(
            id="light",
            w=1,
            control=ControlMode.DIRECT,
            policy=PriorityPolicy("static", {"p": 3}),
        )

        assert next_priority(device, 5, rng) == 0

    def test_device_without_policy_keeps_priority(self, rng):
        """Test that a device without policy keeps its priority."""
        assert next_priority(Device(id="d", w=1, p=2), 9, rng) == 2

    def test_unknown_policy_raises(self, rng):
        """Test that an unregistered policy is a configuration error."""
        device = managed(PriorityPolicy("thermostat", {}))

        with pytest.raises(GridSimError) as exc_info:
            next_priority(device, 1, rng)

        assert exc_info.value.code == "CONFIGURATION_ERROR"
        assert "thermostat" in exc_info.value.message


@pytest.mark.unit
class TestPolicyProblem:
    """Test policy descriptor checks."""

    @pytest.mark.parametrize(
        "policy",
        [
            None,
            PriorityPolicy("static", {"p": 1}),
            PriorityPolicy("cyclic", {"levels": [0, 2]}),
            PriorityPolicy("deadline", {"t_end": 3, "p0": 2, "period": 24}),
            PriorityPolicy("random", {"p_max": 0}),
        ],
    )
    def test_valid_policies(self, policy):
        """Test that well-formed policies have no problem."""
        assert policy_problem(policy) is None

    @pytest.mark.parametrize(
        "policy,fragment",
        [
            (PriorityPolicy("thermostat"), "unknown"),
            (PriorityPolicy("deadline", {"t_end": 3}), "missing p0"),
            (PriorityPolicy("cyclic", {"levels": []}), "nonempty"),
            (PriorityPolicy("cyclic", {"levels": [1], "period": 0}), "period"),
            (PriorityPolicy("deadline", {"t_end": 0, "p0": 1}), "t_end"),
            (PriorityPolicy("random", {"p_max": -1}), "nonnegative"),
            (PriorityPolicy("static", {"p": -2}), "nonnegative"),
            (PriorityPolicy("random", {"p_max": "lots"}), "malformed"),
        ],
    )
    def test_invalid_policies(self, policy, fragment):
        """Test that each malformed policy is described."""
        assert fragment in policy_problem(policy)


@pytest.mark.unit
class TestUpdatePriorities:
    """Test refreshing all priorities of a house."""

    def test_updates_every_managed_device(self, rng):
        """Test that managed devices follow their policies and direct ones stay 0."""
        house = House(
            id="h",
            devices=(
                Device(id="a", w=1, control=ControlMode.DIRECT),
                Device(id="b", w=2, p=1, policy=PriorityPolicy("static", {"p": 3})),
                Device(id="c", w=2, p=4, policy=PriorityPolicy("deadline", {"t_end": 10, "p0": 5})),
            ),
        )

        updated = update_priorities(house, 10, rng)

        assert [d.p for d in updated.devices] == [0, 3, 0]
        assert [d.p for d in house.devices] == [0, 1, 4]

    def test_deterministic_for_seed(self):
        """Test that the same seed gives the same priorities."""
        house = House(
            id="h",
            devices=tuple(
                Device(id=str(i), w=1, policy=PriorityPolicy("random", {"p_max": 9}))
                for i in range(10)
            ),
        )

        first = update_priorities(house, 1, np.random.default_rng(42))
        second = update_priorities(house, 1, np.random.default_rng(42))

        assert first == second
