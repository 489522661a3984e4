"""Summary statistics of a simulation run against its consumption goal."""

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence, Union

from src.simulation_service import MetricsRecord

DEFAULT_BAND = Fraction(1, 20)


@dataclass(frozen=True)
class RunStats:
    """
    Aggregates over the consumption samples of a run.

    ``relative_error`` and ``band_fraction`` are None when no goal is known.
    """

    samples: int
    mean: Fraction
    minimum: int
    maximum: int
    goal: Optional[Fraction]
    relative_error: Optional[Fraction]
    in_band: Optional[int]
    band_fraction: Optional[Fraction]
    band: Fraction = DEFAULT_BAND

    # Samples that had a goal to be checked against
    tracked: int = 0


def relative_error(mean: Union[int, Fraction], goal: Union[int, Fraction]) -> Fraction:
    """
    |mean - goal| / goal.

    Example:
        >>> relative_error(988, 1000)
        Fraction(3, 250)
    """
    if goal == 0:
        raise ValueError("Relative error needs a nonzero goal")
    return abs(Fraction(mean) - goal) / goal


def band_fraction(in_band: int, total: int) -> Fraction:
    """Share of samples inside the tolerance band."""
    if total <= 0:
        raise ValueError("No samples")
    return Fraction(in_band, total)


def within_band(value: int, goal: Union[int, Fraction], band: Fraction = DEFAULT_BAND) -> bool:
    """Whether ``value`` lies in [goal (1 - band), goal (1 + band)], bounds included."""
    return abs(value - goal) <= band * goal


def compute_stats(
    records: Sequence[Union[MetricsRecord, int]],
    goal: Optional[Union[int, Fraction]] = None,
    band: Fraction = DEFAULT_BAND,
) -> RunStats:
    """
    Mean, extremes and goal tracking of a run.

    Each sample is checked against ``goal`` when given, otherwise against the
    goal stored in its record. The relative error compares the mean
    consumption with the mean goal.

    Args:
        records: MetricsRecords or bare consumption values
        goal: Constant goal overriding the per-record goals
        band: Half-width of the tolerance band, relative to the goal

    Returns:
        RunStats

    Raises:
        ValueError: If ``records`` is empty
    """
    if not records:
        raise ValueError("compute_stats needs at least one record")

    values = [r.consumption if isinstance(r, MetricsRecord) else int(r) for r in records]
    goals = [
        goal if goal is not None else (r.goal if isinstance(r, MetricsRecord) else None)
        for r in records
    ]

    mean = Fraction(sum(values), len(values))
    tracked = [(value, g) for value, g in zip(values, goals) if g is not None]

    mean_goal = error = in_band = fraction = None
    if tracked:
        mean_goal = Fraction(sum(g for _, g in tracked), len(tracked))
        tracked_mean = Fraction(sum(value for value, _ in tracked), len(tracked))
        if mean_goal:
            error = relative_error(tracked_mean, mean_goal)
        in_band = sum(1 for value, g in tracked if within_band(value, g, band))
        fraction = band_fraction(in_band, len(tracked))

    return RunStats(
        samples=len(values),
        mean=mean,
        minimum=min(values),
        maximum=max(values),
        goal=mean_goal,
        relative_error=error,
        in_band=in_band,
        band_fraction=fraction,
        band=Fraction(band),
        tracked=len(tracked),
    )