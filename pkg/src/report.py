"""
Run output files and run reports.

A run directory holds:

    metrics.csv               one row per iteration
    curves.csv                iteration, goal, consumption (plot-ready)
    flows/iteration-NNNN.csv  arc-list dump of each iteration's routing
    summary.json              compute_stats over the run
    manifest.json             run parameters, SHA-256 of every file, warnings

Rationals are written exactly: as a decimal when the expansion terminates,
as ``numerator/denominator`` otherwise. Files carry no timestamps, so the same
scenario and seed always give byte-identical files. The manifest is written
last; a directory without a manifest does not hold a finished run.
"""

import csv
import hashlib
import io
import json
import shutil
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src.logging_config import get_logger
from src.models import GridSimError
from src.routing import flow_records
from src.simulation_service import MetricsRecord, SimulationService
from src.stats import RunStats, compute_stats

logger = get_logger(__name__)

METRICS_FILE = "metrics.csv"
CURVES_FILE = "curves.csv"
SUMMARY_FILE = "summary.json"
MANIFEST_FILE = "manifest.json"
FLOWS_DIR = "flows"


def render_rational(value: Union[None, int, Fraction]) -> str:
    """
    Exact text form of a rational.

    Example:
        >>> render_rational(Fraction(169, 16))
        '10.5625'
        >>> render_rational(Fraction(20, 3))
        '20/3'
    """
    if value is None:
        return ""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)

    d = value.denominator
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{value.numerator}/{value.denominator}"

    places = max(twos, fives)
    scaled = abs(value.numerator) * 10**places // value.denominator
    whole, frac = divmod(scaled, 10**places)
    sign = "-" if value < 0 else ""
    return f"{sign}{whole}.{frac:0{places}d}"


def parse_rational(text: str) -> Optional[Fraction]:
    """Inverse of ``render_rational``."""
    return Fraction(text) if text else None


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """
    Description of a finished run.

    ``files`` maps each emitted file, relative to the output directory, to its
    SHA-256 checksum.
    """

    scenario_path: str
    seed: int
    iterations: int
    output_dir: str
    files: Dict[str, str] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(
            scenario_path=data["scenario_path"],
            seed=int(data["seed"]),
            iterations=int(data["iterations"]),
            output_dir=data["output_dir"],
            files=dict(data.get("files", {})),
            warnings=list(data.get("warnings", [])),
        )


# ============================================================================
# Writers
# ============================================================================


def _csv_text(header: List[str], rows: List[List[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def metrics_table(records: List[MetricsRecord], house_ids: List[str]) -> str:
    """Metrics CSV: one row per iteration, one consumption column per house."""
    header = (
        ["iteration", "goal", "consumption"]
        + [f"house:{house_id}" for house_id in house_ids]
        + ["rounds", "consensus", "flow_cost", "tracking_error", "plan_cost"]
    )
    rows = [
        [
            record.iteration,
            render_rational(record.goal),
            record.consumption,
            *(record.house_consumption.get(house_id, 0) for house_id in house_ids),
            record.rounds,
            int(record.consensus),
            render_rational(record.flow_cost),
            render_rational(record.tracking_error),
            record.plan_cost,
        ]
        for record in records
    ]
    return _csv_text(header, rows)


def curves_table(records: List[MetricsRecord]) -> str:
    rows = [
        [record.iteration, render_rational(record.goal), record.consumption]
        for record in records
    ]
    return _csv_text(["iteration", "goal", "consumption"], rows)


def flow_table(state) -> str:
    """Arc-list dump (from, to, tier, flow, cost) of a state's routing."""
    rows = []
    if state.graph is not None and state.flow is not None:
        rows = [
            [r.tail, r.head, r.tier, r.flow, render_rational(r.cost)]
            for r in flow_records(state.graph, state.flow)
        ]
    return _csv_text(["from", "to", "tier", "flow", "cost"], rows)


def stats_dict(stats: RunStats, consensus: Optional[int] = None) -> Dict[str, Any]:
    data = {
        "samples": stats.samples,
        "mean": render_rational(stats.mean),
        "min": stats.minimum,
        "max": stats.maximum,
        "goal": render_rational(stats.goal),
        "relative_error": render_rational(stats.relative_error),
        "in_band": stats.in_band,
        "band_fraction": render_rational(stats.band_fraction),
        "band": render_rational(stats.band),
    }
    if consensus is not None:
        data["consensus_iterations"] = consensus
    return data


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise GridSimError(
            code="IO_ERROR",
            message=f"Cannot write {path}: {e.strerror or e}",
            details={"path": str(path)},
        ) from e


def write_run(
    service: SimulationService,
    out_dir: Union[str, Path],
    scenario_path: str,
    iterations: Optional[int] = None,
) -> RunManifest:
    """
    Run a simulation and write every run file.

    Iterations without consensus and production plans that miss their demand
    become manifest warnings; they never stop the run.

    Args:
        service: Service holding the scenario and its configuration
        out_dir: Output directory (created when missing; earlier flow files
            and manifest are removed first)
        scenario_path: Path recorded in the manifest
        iterations: Iteration count (default: the scenario's)

    Returns:
        RunManifest, also written to ``manifest.json``

    Raises:
        GridSimError: IO_ERROR when a file cannot be written
    """
    out = Path(out_dir)
    manifest_path = out / MANIFEST_FILE
    try:
        if manifest_path.exists():
            manifest_path.unlink()
        if (out / FLOWS_DIR).is_dir():
            shutil.rmtree(out / FLOWS_DIR)
    except OSError as e:
        raise GridSimError(
            code="IO_ERROR",
            message=f"Cannot clear {out}: {e.strerror or e}",
            details={"path": str(out)},
        ) from e

    count =service.config.iterations if iterations is None else iterations
    records: List[MetricsRecord] = []
    warnings: List[str] = []
    files: List[str] = []

    for state in service.iterate(count):
        record = state.record
        records.append(record)
        name = f"{FLOWS_DIR}/iteration-{record.iteration:04d}.csv"
        _write(out / name, flow_table(state))
        files.append(name)

        if not record.consensus:
            warnings.append(
                f"iteration {record.iteration}: no consensus after {record.rounds} rounds"
            )
        if state.plan is not None and not state.plan.feasible:
            warnings.append(
                f"iteration {record.iteration}: production plan misses demand "
                f"{state.plan.demand} (shortfall {state.plan.shortfall}, "
                f"surplus {state.plan.surplus})"
            )

    house_ids = [house.id for house in service.scenario.houses]
    stats = compute_stats(records, band=service.config.band)
    consensus = sum(1 for record in records if record.consensus)

    for name, text in (
        (METRICS_FILE, metrics_table(records, house_ids)),
        (CURVES_FILE, curves_table(records)),
        (SUMMARY_FILE, json.dumps(stats_dict(stats, consensus), indent=2, sort_keys=True) + "\n"),
    ):
        _write(out / name, text)
        files.append(name)

    manifest = RunManifest(
        scenario_path=str(scenario_path),
        seed=service.config.seed,
        iterations=count,
        output_dir=str(out),
        files={name: sha256_file(out / name) for name in sorted(files)},
        warnings=warnings,
    )
    _write(manifest_path, json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    logger.info(
        f"Run written to {out}: {count} iterations, {len(warnings)} warnings",
        extra={"command": "run"},
    )
    return manifest


# ============================================================================
# Readers
# ============================================================================


def _incomplete(out: Path, reason: str) -> GridSimError:
    return GridSimError(
        code="INCOMPLETE_RUN",
        message=f"{out} does not hold a completed run: {reason}",
        details={"output_dir": str(out)},
    )


def load_manifest(out_dir: Union[str, Path]) -> RunManifest:
    """
    Read a run's manifest and check every listed file against its checksum.

    Raises:
        GridSimError: INCOMPLETE_RUN when the manifest or a file is missing,
            unreadable or altered
    """
    out = Path(out_dir)
    try:
        data = json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))
        manifest = RunManifest.from_dict(data)
    except FileNotFoundError:
        raise _incomplete(out, "no manifest") from None
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise _incomplete(out, f"unreadable manifest ({e})") from e

    for name, checksum in manifest.files.items():
        path = out / name
        if not path.is_file():
            raise _incomplete(out, f"missing {name}")
        if sha256_file(path) != checksum:
            raise _incomplete(out, f"checksum mismatch on {name}")
    if METRICS_FILE not in manifest.files:
        raise _incomplete(out, f"no {METRICS_FILE}")
    return manifest


def load_records(out_dir: Union[str, Path]) -> List[Dict[str, Optional[Fraction]]]:
    """Goal and consumption of every iteration from a run's metrics file."""
    path = Path(out_dir) / METRICS_FILE
    with path.open(encoding="utf-8", newline="") as handle:
        return [
            {
                "iteration": int(row["iteration"]),
                "goal": parse_rational(row["goal"]),
                "consumption": int(row["consumption"]),
            }
            for row in csv.DictReader(handle)
        ]


def summarize_run(out_dir: Union[str, Path]) -> RunStats:
    """
    Recompute a finished run's statistics from its metrics file.

    Raises:
        GridSimError: INCOMPLETE_RUN for a directory without a finished run
    """
    out = Path(out_dir)
    load_manifest(out)
    rows = load_records(out)
    if not rows:
        raise _incomplete(out, "no iteration recorded")

    band = Fraction(1, 20)
    summary_path = out / SUMMARY_FILE
    if summary_path.is_file():
        band = parse_rational(json.loads(summary_path.read_text(encoding="utf-8"))["band"])

    records = [
        MetricsRecord(
            iteration=row["iteration"],
            goal=row["goal"],
            consumption=row["consumption"],
            house_consumption={},
            rounds=0,
            consensus=True,
            flow_cost=0,
            tracking_error=None,
        )
        for row in rows
    ]
    return compute_stats(records, band=band)


def format_report(stats: RunStats, manifest: Optional[RunManifest] = None) -> str:
    """
    Format run statistics for display.

    Args:
        stats: Statistics of the run
        manifest: Manifest adding run parameters and warnings

    Returns:
        Formatted string for display
    """
    lines = []
    lines.append("=" * 80)
    lines.append(f"Run: {manifest.output_dir}" if manifest else "Run summary")
    lines.append("=" * 80)
    if manifest:
        lines.append(f"Scenario:          {manifest.scenario_path}")
        lines.append(f"Seed:              {manifest.seed}")
        lines.append(f"Iterations:        {manifest.iterations}")
    lines.append(f"Samples:           {stats.samples}")
    lines.append(f"Mean consumption:  {render_rational(stats.mean)}")
    lines.append(f"Min / max:         {stats.minimum} / {stats.maximum}")

    if stats.goal is not None:
        lines.append(f"Mean goal:         {render_rational(stats.goal)}")
        if stats.relative_error is not None:
            lines.append(f"Relative error:    {float(stats.relative_error) * 100:.2f}%")
        lines.append(
            f"Within {float(stats.band) * 100:g}% band: {stats.in_band}/{stats.tracked} "
            f"({float(stats.band_fraction) * 100:.2f}%)"
        )
    else:
        lines.append("Goal:              none")

    if manifest and manifest.warnings:
        lines.append("")
        lines.append(f"Warnings ({len(manifest.warnings)} total):")
        for warning in manifest.warnings[:5]:
            lines.append(f"  - {warning}")
        if len(manifest.warnings) > 5:
            lines.append(f"  ... and {len(manifest.warnings) - 5} more")

    lines.append("=" * 80)
    return "\n".join(lines)
