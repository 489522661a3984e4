"""
Document schema of scenario files.

These pydantic models describe the JSON layout only: which sections and fields
exist and what type each field has. Range rules (nonnegative demands,
increasing tier costs, connectivity...) are checked on the domain model by
``src.parser.validate_scenario`` so they are reported as violations rather
than parse errors.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.models import ControlMode, StrategyMode


class _Doc(BaseModel):
    model_config = ConfigDict(extra="forbid", coerce_numbers_to_str=True)


class PolicyDoc(_Doc):
    kind: str = Field(description="static | cyclic | deadline | random")
    params: Dict[str, Any] = Field(default_factory=dict)


class DeviceDoc(_Doc):
    id: str
    w: int = Field(description="Energy demand per iteration")
    p: int = Field(default=0, description="Priority, 0 = must run")
    control: ControlMode = ControlMode.MANAGED
    policy: Optional[PolicyDoc] = None


class HouseDoc(_Doc):
    id: str
    devices: List[DeviceDoc] = Field(default_factory=list)
    bid_history: List[int] = Field(default_factory=list)


class QuadraticGoalDoc(_Doc):
    """Parameters of ``quadratic_goal_profile``."""

    days: int = 1
    steps_per_day: int = 24
    base: int
    peak: int
    start_hour: int = 0
    end_hour: int = 24


class MicrogridDoc(_Doc):
    id: str
    node: str
    houses: List[HouseDoc] = Field(default_factory=list)
    goal_profile: Optional[List[int]] = None
    goal_generator: Optional[QuadraticGoalDoc] = None

    @model_validator(mode="after")
    def _one_goal_source(self) -> "MicrogridDoc":
        if self.goal_profile is not None and self.goal_generator is not None:
            raise ValueError("give either goal_profile or goal_generator, not both")
        return self


class PlantDoc(_Doc):
    id: str
    node: str
    capacity: int
    output: int = 0
    ramp_limit: int = 0
    ramp_up_cost: int = 1
    ramp_down_cost: int = 1


class LineDoc(_Doc):
    id: Optional[str] = None
    endpoints: Tuple[str, str]
    tier_caps: Tuple[int, int, int] = Field(
        description="Cumulative under-load, standard and over-load limits"
    )
    tier_costs: Optional[Tuple[int, int, int]] = Field(
        default=None, description="Defaults to config.tier_cost_defaults"
    )


class NetworkDoc(_Doc):
    nodes: List[str] = Field(default_factory=list)
    lines: List[LineDoc] = Field(default_factory=list)


class ConfigDoc(_Doc):
    epsilon: Optional[str] = Field(default=None, description="Decimal or n/d")
    max_feedback_rounds: Optional[int] = None
    iterations: Optional[int] = None
    seed: Optional[int] = None
    tier_cost_defaults: Optional[Tuple[int, int, int]] = None
    history_window: Optional[int] = None
    band: Optional[str] = Field(default=None, description="Decimal or n/d")
    strategy_mode: Optional[StrategyMode] = None

    @field_validator("epsilon", "band")
    @classmethod
    def _rational(cls, value: Optional[str]) -> Optional[str]:
        if value is not None:
            Fraction(value)  # ValueError surfaces as a field error
        return value


class ScenarioDoc(_Doc):
    config: ConfigDoc = Field(default_factory=ConfigDoc)
    network: NetworkDoc
    plants: List[PlantDoc] = Field(default_factory=list)
    microgrids: List[MicrogridDoc] = Field(default_factory=list)
