"""
Tests for the simulation service: the coordination loop from priorities to
production plans.
"""

import time
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import src.simulation_service as simulation_service
from src.knapsack import Strategy
from src.models import FeedbackMessage, Line, Plant, SimConfig
from src.simulation_service import (
    SimulationService,
    final_allocation,
    headroom_caps,
    pending_messages,
    run_iteration,
    run_simulation,
    split_grant,
)
from src.stats import compute_stats


@pytest.fixture
def three_house_state(three_house_scenario):
    service = SimulationService(three_house_scenario)
    return service.run_iteration(service.initial_state())


@pytest.fixture
def unpowered_scenario(scenario_builder, house1, house2, house3):
    """The example houses behind a microgrid no plant can feed."""
    return scenario_builder(
        {"M1": [house1, house2, house3]},
        [],
        [],
        config=SimConfig(epsilon=Fraction(1, 2), max_feedback_rounds=50),
    )


@pytest.mark.unit
class TestSplitGrant:
    """Test sharing delivered energy among houses."""

    def test_full_delivery(self):
        """Test that a covered bid grants every request."""
        assert split_grant({"h1": 10, "h2": 7}, 17) == {"h1": 10, "h2": 7}

    def test_proportional_cut(self):
        """Test cutting the shortfall in proportion to requests."""
        assert split_grant({"h1": 10, "h2": 5}, 12) == {"h1": 8, "h2": 4}

    def test_leftover_cuts_fall_on_earlier_houses(self):
        """Test the tie-break among equal fractional parts of the cut."""
        assert split_grant({"a": 1, "b": 1, "c": 1}, 1) == {"a": 0, "b": 0, "c": 1}

    def test_nothing_requested(self):
        """Test a microgrid whose houses request nothing."""
        assert split_grant({"a": 0, "b": 0}, 0) == {"a": 0, "b": 0}

    @settings(max_examples=150)
    @given(
        requests=st.dictionaries(
            st.sampled_from(["a", "b", "c", "d"]), st.integers(0, 50), min_size=1
        ),
        granted=st.integers(0, 250),
    )
    def test_shares_add_up(self, requests, granted):
        """Test that shares are bounded by requests and sum to the delivery."""
        shares = split_grant(requests, granted)

        assert sum(shares.values()) == min(granted, sum(requests.values()))
        assert all(0 <= shares[h] <= requests[h] for h in requests)


@pytest.mark.unit
class TestFinalAllocation:
    """Test the device set a house runs."""

    def test_within_grant(self, house1):
        """Test the best device set within the granted energy."""
        assert final_allocation(house1, 10) == {"1", "2", "3", "4"}

    def test_cut_grant(self, house1):
        """Test a grant below the request."""
        assert final_allocation(house1, 4) == {"1", "3"}

    def test_negative_grant_is_zero(self, house1):
        """Test that a negative grant runs nothing."""
        assert final_allocation(house1, -3) == set()


def ladder(*energies):
    return [Strategy(threshold=i, device_ids=(), energy=e, value=e) for i, e in enumerate(energies)]


@pytest.mark.unit
class TestHeadroom:
    """Test which headroom messages still ask houses to move."""

    def test_caps_without_goal_are_the_bid(self):
        """Test that a microgrid without a goal is capped at its bid."""
        assert headroom_caps({"M1": None, "M2": 50}, {"M1": 12, "M2": 30}) == {
            "M1": 12,
            "M2": 50,
        }

    def test_unusable_headroom_fits(self):
        """Test that a step larger than the headroom drops CONSUME_MORE."""
        messages = pending_messages(
            {"M1": FeedbackMessage.CONSUME_MORE},
            {"M1": 15},
            {"M1": ["h1"]},
            {"h1": ladder(4, 10, 30)},
            {"h1": 1},
        )

        assert messages == {"M1": FeedbackMessage.FITS}

    def test_usable_headroom_stays(self):
        """Test that one house able to climb keeps the message."""
        messages = pending_messages(
            {"M1": FeedbackMessage.CONSUME_MORE, "M2": FeedbackMessage.CONSUME_LESS},
            {"M1": 6, "M2": 0},
            {"M1": ["h1", "h2"], "M2": ["h3"]},
            {"h1": ladder(12), "h2": ladder(4, 10), "h3": ladder(3)},
            {"h1": 0, "h2": 0, "h3": 0},
        )

        assert messages == {
            "M1": FeedbackMessage.CONSUME_MORE,
            "M2": FeedbackMessage.CONSUME_LESS,
        }


@pytest.mark.integration
class TestExampleIteration:
    """Test one iteration of the three-house example end to end."""

    def test_bids(self, three_house_state):
        """Test that the houses bid 10, 7 and 12."""
        chosen = {
            house_id: three_house_state.strategies[house_id][index].energy
            for house_id, index in three_house_state.chosen.items()
        }

        assert chosen == {"house1": 10, "house2": 7, "house3": 12}
        assert three_house_state.bids == {"M1": 29}

    def test_consensus_in_first_round(self, three_house_state):
        """Test that everything is routed without feedback."""
        assert three_house_state.consensus
        assert three_house_state.rounds == 1
        assert three_house_state.messages == {"M1": FeedbackMessage.FITS}

    def test_routing(self, three_house_state):
        """Test delivery and cost of the example routing."""
        assert three_house_state.granted == {"M1": 29}
        assert three_house_state.flow.cost == 66
        assert three_house_state.production_demand == {"P1": 29}

    def test_record(self, three_house_state):
        """Test the metrics of the iteration."""
        record = three_house_state.record

        assert record.iteration == 1
        assert record.consumption == 29
        assert record.house_consumption == {"house1": 10, "house2": 7, "house3": 12}
        assert record.goal is None
        assert record.tracking_error is None
        assert record.flow_cost == 66

    def test_plan_keeps_output(self, three_house_state):
        """Test that a forecast equal to the output changes nothing."""
        assert three_house_state.forecasts == {"M1": 29}
        assert three_house_state.plan.cost == 0
        assert three_house_state.plants[0].output == 29

    def test_bid_histories(self, three_house_state):
        """Test that the microgrid and every house remember their bids."""
        assert three_house_state.histories["M1"].z == (29,)
        assert three_house_state.houses["house1"].bid_history == (10,)

    def test_input_state_untouched(self, three_house_scenario):
        """Test that running from the same state twice gives the same result."""
        service = SimulationService(three_house_scenario)
        start = service.initial_state()

        first = run_iteration(start, three_house_scenario)
        second = run_iteration(start, three_house_scenario)

        assert start.iteration == 0
        assert first.record == second.record


@pytest.mark.integration
class TestFeedbackLoop:
    """Test iterations that need feedback."""

    def test_unpowered_microgrid_falls_to_minimum(self, unpowered_scenario):
        """Test that houses without supply end at their smallest strategies."""
        state = SimulationService(unpowered_scenario).run_iteration(
            SimulationService(unpowered_scenario).initial_state()
        )

        assert not state.consensus
        assert state.rounds < 50
        assert state.bids == {"M1": 4 + 5 + 12}
        assert state.record.consumption == 0

    def test_bids_never_grow_after_consume_less(self, unpowered_scenario, mocker):
        """Test that every round bids at most what the previous one did."""
        spy = mocker.spy(simulation_service, "expand_network")

        SimulationService(unpowered_scenario).run_simulation(1)
        bids = [call.args[2]["M1"] for call in spy.call_args_list]

        assert len(bids) > 1
        assert all(after <= before for before, after in zip(bids, bids[1:]))

    def test_capped_supply_cuts_the_bid(self, scenario_builder, house1, house2, house3):
        """Test reaching consensus after a shortfall."""
        plant = Plant(id="P1", node="P1", capacity=21, output=21, ramp_limit=0)
        line = Line(source="P1", target="M1", tier_caps=(10, 20, 40))
        scenario = scenario_builder(
            {"M1": [house1, house2, house3]},
            [plant],
            [line],
            config=SimConfig(epsilon=Fraction(1, 2), max_feedback_rounds=50),
        )

        state = SimulationService(scenario).run_iteration(
            SimulationService(scenario).initial_state()
        )

        assert state.consensus
        assert state.bids == {"M1": 21}
        assert state.record.consumption == 21

    def test_delivery_conservation(self, tracking_builder):
        """Test that grants equal the flow value and never exceed bids."""
        service = SimulationService(tracking_builder(iterations=4))

        for state in service.iterate():
            assert sum(state.granted.values()) == state.flow.value
            for grid_id, bid in state.bids.items():
                assert state.granted.get(grid_id, 0) <= bid
            for house_id, consumption in state.record.house_consumption.items():
                assert consumption <= sum(d.w for d in state.houses[house_id].devices)

    def test_single_house(self, scenario_builder, house1):
        """Test a microgrid of one house."""
        plant = Plant(id="P1", node="P1", capacity=100, output=10, ramp_limit=0)
        line = Line(source="P1", target="M1", tier_caps=(10, 20, 40))

        records = run_simulation(scenario_builder({"M1": [house1]}, [plant], [line]))

        assert len(records) == 1
        assert records[0].consensus
        assert records[0].consumption == 10

    def test_single_house_ample_plant(self, scenario_builder, house1):
        """Test that spare supply without a goal does not reopen the selection."""
        plant = Plant(id="P1", node="P1", capacity=100, output=100, ramp_limit=100)
        line = Line(source="P1", target="M1", tier_caps=(10, 20, 40))
        scenario = scenario_builder({"M1": [house1]}, [plant], [line])

        state = run_iteration(SimulationService(scenario).initial_state(), scenario)

        assert state.consensus
        assert state.rounds == 1
        assert state.granted == state.bids == {"M1": 10}
        assert state.messages == {"M1": FeedbackMessage.FITS}

    def test_headroom_no_house_can_use(self, scenario_builder, house3):
        """Test that a goal above the only strategy still reaches consensus."""
        plant = Plant(id="P1", node="P1", capacity=100, output=100, ramp_limit=100)
        line = Line(source="P1", target="M1", tier_caps=(10, 20, 40))
        scenario = scenario_builder({"M1": [house3]}, [plant], [line], goals={"M1": [100]})

        state = run_iteration(SimulationService(scenario).initial_state(), scenario)

        assert state.consensus
        assert state.rounds == 1
        assert state.bids == {"M1": 12}

    def test_headroom_smaller_than_next_strategy(self, scenario_builder, house1):
        """Test that a step larger than the headroom is not offered."""
        plant = Plant(id="P1", node="P1", capacity=100, output=100, ramp_limit=100)
        line = Line(source="P1", target="M1", tier_caps=(10, 20, 40))
        scenario = scenario_builder({"M1": [house1]}, [plant], [line], goals={"M1": [25]})

        state = run_iteration(SimulationService(scenario).initial_state(), scenario)

        assert state.consensus
        assert state.rounds == 1
        assert state.bids == {"M1": 10}

    def test_climbs_stay_within_goal(self, scenario_builder, house1, mocker):
        """Test that no round bids past the goal once feedback asks for more."""
        plant = Plant(id="P1", node="P1", capacity=100, output=100, ramp_limit=100)
        line = Line(source="P1", target="M1", tier_caps=(10, 20, 40))
        scenario = scenario_builder({"M1": [house1]}, [plant], [line], goals={"M1": [30]})
        spy = mocker.spy(simulation_service, "expand_network")

        SimulationService(scenario).run_simulation(1)
        bids = [call.args[2]["M1"] for call in spy.call_args_list]

        assert bids[0] == 10
        assert all(bid <= 30 for bid in bids)


@pytest.mark.integration
class TestRunSimulation:
    """Test whole runs."""

    def test_deterministic_for_seed(self, tracking_builder):
        """Test that the same scenario and seed give the same records."""
        scenario = tracking_builder(iterations=5)

        assert run_simulation(scenario) == run_simulation(scenario)

    def test_iteration_count(self, tracking_builder):
        """Test one record per iteration, numbered from 1."""
        records = run_simulation(tracking_builder(iterations=5), iterations=3)

        assert [record.iteration for record in records] == [1, 2, 3]
        assert all(record.goal == 1000 for record in records)

    def test_invalid_iteration_count(self, three_house_scenario):
        """Test that a run needs at least one iteration."""
        with pytest.raises(ValueError):
            run_simulation(three_house_scenario, iterations=0)

    @pytest.mark.slow
    def test_tracks_constant_goal(self, tracking_builder):
        """Test that five homes follow a constant goal of 1000 over a full run."""
        scenario = tracking_builder()
        start = time.perf_counter()

        records = run_simulation(scenario)
        elapsed = time.perf_counter() - start
        stats = compute_stats(records)

        assert scenario.config.iterations == len(records) == 1953
        assert abs(stats.relative_error) <= Fraction(1, 20)
        assert stats.band_fraction >= Fraction(7, 10)
        assert elapsed < 60
