from pathlib import Path

import pytest
from rich.console import Console

from aurl.schemas.models import MetricsRow
from aurl.services.reporting import read_run, render_comparison, render_summary
from aurl.utils.artifacts import METRICS_FIELDS, PHASE_FIELDS, UPDATE_FIELDS, write_csv, write_json
from aurl.utils.errors import ReportError


def _fake_run(root: Path, mode: str = "AURL") -> Path:
    rows = [
        MetricsRow(epoch=0, mode=mode, dialog_succ=0.4, avg_turn=9.0, avg_reward=-0.2, dst_acc=0.8).model_dump(),
        MetricsRow(epoch=10, mode=mode, dialog_succ=0.7, avg_turn=7.5, avg_reward=0.6, dst_acc=0.9,
                   wall_ms_per_turn=1.25).model_dump(),
    ]
    write_csv(root / "metrics.csv", METRICS_FIELDS, rows)
    write_csv(root / "updates.csv", UPDATE_FIELDS, [
        {"epoch": 1, "buffer": "sys_dp", "size": 3, "update_type": "fast_modules", "loss": 0.1},
        {"epoch": 2, "buffer": "sys_dp", "size": 3, "update_type": "fast_modules", "loss": 0.2},
        {"epoch": 2, "buffer": "sys_dst", "size": 300, "update_type": "dst_curriculum", "loss": 0.5},
    ])
    write_csv(root / "curriculum.csv", PHASE_FIELDS, [
        {"epoch": 2, "update": 1, "phase": 1, "level": "easy", "transitions": 200, "steps": 4, "loss": 0.3},
        {"epoch": 2, "update": 1, "phase": 1, "level": "hard", "transitions": 100, "steps": 2, "loss": 0.9},
        {"epoch": 2, "update": 1, "phase": 3, "level": "hard", "transitions": 100, "steps": 2, "loss": 0.8},
    ])
    write_json(root / "run_summary.json", {"total_turns": 650, "dst_capacity": 300, "dst_unit": "turns"})
    return root


def test_read_run_collects_every_artifact(tmp_path: Path) -> None:
    run = read_run(_fake_run(tmp_path / "aurl"))
    assert run.name == "aurl"
    assert run.final.epoch == 10
    assert run.final.wall_ms_per_turn == pytest.approx(1.25)
    assert run.metrics[0].wall_ms_per_turn is None
    assert (run.dp_updates, run.dst_updates) == (2, 1)
    assert run.phase_steps == {1: 6, 3: 2}
    assert run.phase_transitions == {"easy": 200, "hard": 100}
    assert run.level_share("easy") == pytest.approx(2 / 3)
    assert run.level_share("middle") == 0.0
    assert (run.total_turns, run.expected_dst_updates) == (650, 2)


def test_fixed_dst_runs_expect_no_tracker_updates(tmp_path: Path) -> None:
    run = read_run(_fake_run(tmp_path / "fixed", mode="RL-fixed_DST"))
    assert run.expected_dst_updates is None


def test_missing_or_malformed_artifacts_raise(tmp_path: Path) -> None:
    with pytest.raises(ReportError):
        read_run(tmp_path / "absent")

    root = _fake_run(tmp_path / "short")
    (root / "metrics.csv").write_text("epoch,mode\n0,AURL\n", encoding="utf-8")
    with pytest.raises(ReportError):
        read_run(root)

    root = _fake_run(tmp_path / "ragged")
    text = (root / "updates.csv").read_text(encoding="utf-8")
    (root / "updates.csv").write_text(text + "3,sys_dp\n", encoding="utf-8")
    with pytest.raises(ReportError):
        read_run(root)

    root = _fake_run(tmp_path / "typed")
    write_csv(root / "metrics.csv", METRICS_FIELDS, [
        {"epoch": "ten", "mode": "AURL", "dialog_succ": 0.1, "avg_turn": 1, "avg_reward": 0, "dst_acc": 0},
    ])
    with pytest.raises(ReportError):
        read_run(root)


def test_tables_render(tmp_path: Path) -> None:
    first = read_run(_fake_run(tmp_path / "a"))
    second = read_run(_fake_run(tmp_path / "b", mode="RL-train_DST"))
    console = Console(record=True, width=120)
    render_summary(first, console)
    render_comparison([first, second], console)
    text = console.export_text()
    assert "dialog_succ" in text
    assert "expected DST updates" in text
    assert "RL-train_DST" in text
    assert "0.700" in text
