"""
Read finished run directories back and print them as rich tables.
"""
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, Field, ValidationError
from rich.console import Console
from rich.table import Table

from aurl.schemas.constants import BufferName, RunMode
from aurl.schemas.models import AcceptanceReport, MetricsRow
from aurl.utils.artifacts import METRICS_FIELDS, PHASE_FIELDS, UPDATE_FIELDS, RunLayout, read_csv_rows, read_json
from aurl.utils.errors import ReportError


class RunSummary(BaseModel):
    name: str
    mode: str
    metrics: List[MetricsRow]
    update_counts: Dict[str, int] = Field(default_factory=dict)
    phase_transitions: Dict[str, int] = Field(default_factory=dict)
    phase_steps: Dict[int, int] = Field(default_factory=dict)
    total_turns: Optional[int] = None
    expected_dst_updates: Optional[int] = None

    @property
    def final(self) -> MetricsRow:
        return self.metrics[-1]

    @property
    def dp_updates(self) -> int:
        return self.update_counts.get(BufferName.SYS_DP.value, 0)

    @property
    def dst_updates(self) -> int:
        return self.update_counts.get(BufferName.SYS_DST.value, 0)

    def level_share(self, level: str) -> Optional[float]:
        """Fraction of drained DST transitions that fell into `level`"""
        total = sum(self.phase_transitions.values())
        return self.phase_transitions.get(level, 0) / total if total else None


def _metric_rows(layout: RunLayout) -> List[MetricsRow]:
    rows = read_csv_rows(layout.metrics, METRICS_FIELDS)
    if not rows:
        raise ReportError(f"{layout.metrics} has no rows", data={"path": str(layout.metrics)})
    try:
        return [
            MetricsRow.model_validate({k: (v if v != "" else None) for k, v in row.items()})
            for row in rows
        ]
    except ValidationError as e:
        raise ReportError(f"malformed metrics in {layout.metrics}: {e.error_count()} errors",
                          data={"path": str(layout.metrics)})


def read_run(directory: Union[str, Path]) -> RunSummary:
    layout = RunLayout(Path(directory))
    if not layout.root.is_dir():
        raise ReportError(f"run directory not found: {layout.root}", data={"path": str(layout.root)})
    metrics = _metric_rows(layout)

    update_counts: Counter = Counter()
    if layout.updates.is_file():
        for row in read_csv_rows(layout.updates, UPDATE_FIELDS):
            update_counts[row["buffer"]] += 1

    transitions: Counter = Counter()
    steps: Counter = Counter()
    if layout.curriculum.is_file():
        try:
            for row in read_csv_rows(layout.curriculum, PHASE_FIELDS):
                phase = int(row["phase"])
                steps[phase] += int(row["steps"])
                # phase 1 sees every drained transition exactly once
                if phase == 1:
                    transitions[row["level"] or "all"] += int(row["transitions"])
        except ValueError as e:
            raise ReportError(f"malformed {layout.curriculum}: {e}", data={"path": str(layout.curriculum)})

    total_turns, expected = None, None
    if layout.summary.is_file():
        summary = read_json(layout.summary)
        total_turns = summary.get("total_turns")
        trains_dst = metrics[0].mode not in (RunMode.SL.value, RunMode.RL_FIXED_DST.value)
        if trains_dst and total_turns is not None and summary.get("dst_unit") == "turns":
            expected = total_turns // int(summary["dst_capacity"])

    return RunSummary(
        name=layout.root.name,
        mode=metrics[0].mode,
        metrics=metrics,
        update_counts=dict(update_counts),
        phase_transitions=dict(transitions),
        phase_steps=dict(steps),
        total_turns=total_turns,
        expected_dst_updates=expected,
    )


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def render_summary(run: RunSummary, console: Optional[Console] = None) -> None:
    console = console or Console()
    final = run.final
    table = Table(title=f"{run.name} ({run.mode})")
    table.add_column("metric")
    table.add_column("value", justify="right")
    table.add_row("epoch", str(final.epoch))
    table.add_row("dialog_succ", _fmt(final.dialog_succ))
    table.add_row("avg_turn", _fmt(final.avg_turn, 2))
    table.add_row("avg_reward", _fmt(final.avg_reward))
    table.add_row("dst_acc", _fmt(final.dst_acc))
    table.add_row("wall_ms_per_turn", _fmt(final.wall_ms_per_turn, 2))
    console.print(table)

    schedule = Table(title="update schedule")
    schedule.add_column("buffer")
    schedule.add_column("updates", justify="right")
    for buffer in sorted(run.update_counts):
        schedule.add_row(buffer, str(run.update_counts[buffer]))
    if run.total_turns is not None:
        schedule.add_row("total turns", str(run.total_turns))
    if run.expected_dst_updates is not None:
        schedule.add_row("expected DST updates", str(run.expected_dst_updates))
    console.print(schedule)

    if run.phase_steps:
        phases = Table(title="curriculum")
        phases.add_column("phase")
        phases.add_column("steps", justify="right")
        for phase in sorted(run.phase_steps):
            phases.add_row(str(phase), str(run.phase_steps[phase]))
        for level, count in sorted(run.phase_transitions.items()):
            phases.add_row(f"{level} transitions", str(count))
        console.print(phases)


def render_comparison(runs: Sequence[RunSummary], console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title="runs")
    for column in ("run", "mode", "epoch", "dialog_succ", "avg_turn", "avg_reward", "dst_acc", "DP", "DST"):
        table.add_column(column, justify="left" if column in ("run", "mode") else "right")
    for run in runs:
        final = run.final
        table.add_row(
            run.name, run.mode, str(final.epoch), _fmt(final.dialog_succ), _fmt(final.avg_turn, 2),
            _fmt(final.avg_reward), _fmt(final.dst_acc), str(run.dp_updates), str(run.dst_updates),
        )
    console.print(table)


def render_acceptance(report: AcceptanceReport, console: Optional[Console] = None) -> None:
    console = console or Console()
    modes = sorted({mode for o in report.outcomes for mode in o.dialog_succ})
    seeds = Table(title="acceptance seeds")
    for column in ("seed", "noiseless acc", "inform_norm", "update_sub", "easy share", *modes):
        seeds.add_column(column, justify="right")
    for o in report.outcomes:
        seeds.add_row(
            str(o.seed), _fmt(o.noiseless_joint_acc), _fmt(o.inform_norm_acc), _fmt(o.update_sub_acc),
            _fmt(o.easy_share), *(_fmt(o.dialog_succ.get(mode)) for mode in modes),
        )
    console.print(seeds)

    verdicts = Table(title="acceptance")
    verdicts.add_column("criterion")
    verdicts.add_column("seeds", justify="right")
    verdicts.add_column("verdict")
    for v in report.verdicts:
        verdicts.add_row(v.description, f"{v.holds}/{v.seeds} (needs {v.required})", "pass" if v.passed else "FAIL")
    console.print(verdicts)
