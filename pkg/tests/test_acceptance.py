from pathlib import Path

import pytest
import yaml
from rich.console import Console

from aurl.main import parse_and_dispatch
from aurl.schemas.constants import RunMode
from aurl.schemas.models import AcceptanceReport, SeedOutcome
from aurl.services.acceptance import (
    ACCEPTANCE_FILE,
    COMPARED_RUNS,
    OUTCOMES_FILE,
    judge,
    run_acceptance,
    variant,
)
from aurl.services.reporting import render_acceptance
from aurl.utils.artifacts import read_csv_rows, read_json

from .conftest import small_config


def _outcome(seed: int = 0, sl: float = 0.5, sync: float = 0.55, aurl: float = 0.6, murl: float = 0.6,
             **fields) -> SeedOutcome:
    values = dict(noiseless_joint_acc=0.995, inform_norm_acc=0.9, update_sub_acc=0.4, easy_share=0.76)
    values.update(fields)
    succ = {RunMode.SL.value: sl, RunMode.RL_TRAIN_DST.value: sync,
            RunMode.AURL.value: aurl, RunMode.AURL_MURL.value: murl}
    return SeedOutcome(seed=seed, dialog_succ=succ, **values)


def _verdicts(outcomes):
    return {v.name: v for v in judge(outcomes)}


def test_every_criterion_holds_on_a_good_seed() -> None:
    verdicts = _verdicts([_outcome()])
    assert all(v.passed and v.holds == 1 for v in verdicts.values())
    assert len(verdicts) == 6


@pytest.mark.parametrize("fields, broken", [
    ({"noiseless_joint_acc": 0.98}, "sl_noiseless"),
    ({"inform_norm_acc": 0.4}, "difficulty_order"),
    ({"update_sub_acc": None}, "difficulty_order"),
    ({"easy_share": 0.69}, "easy_share"),
    ({"easy_share": None}, "easy_share"),
    ({"sl": 0.56}, "aurl_over_sl"),
    ({"sync": 0.6}, "aurl_over_sync"),
    ({"murl": 0.59}, "murl_over_aurl"),
])
def test_a_single_miss_breaks_only_its_criterion(fields, broken: str) -> None:
    verdicts = _verdicts([_outcome(**fields)])
    assert [name for name, v in verdicts.items() if not v.passed] == [broken]


def test_orderings_tolerate_one_bad_seed_in_five() -> None:
    outcomes = [_outcome(seed) for seed in range(4)] + [_outcome(4, murl=0.1, easy_share=0.5)]
    verdicts = _verdicts(outcomes)
    assert (verdicts["murl_over_aurl"].holds, verdicts["murl_over_aurl"].required) == (4, 4)
    assert verdicts["murl_over_aurl"].passed
    assert verdicts["easy_share"].required == 5 and not verdicts["easy_share"].passed


def test_variant_merges_blocks_and_resyncs_the_seed() -> None:
    config = small_config()
    changed = variant(config, seed=3, domain={"noise_rate": 0.0})
    assert (changed.seed, changed.domain.seed) == (3, 3)
    assert changed.domain.noise_rate == 0.0
    assert changed.domain.slot_count == config.domain.slot_count


def test_render_acceptance_lists_seeds_and_verdicts() -> None:
    console = Console(record=True, width=200)
    outcomes = [_outcome(0), _outcome(1, sl=0.59)]
    render_acceptance(AcceptanceReport(outcomes=outcomes, verdicts=judge(outcomes)), console)
    text = console.export_text()
    assert "acceptance seeds" in text
    assert "1/2 (needs 2)" in text and "FAIL" in text


@pytest.fixture(scope="module")
def acceptance_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("acceptance")
    run_acceptance(small_config(epochs=2), out, n_seeds=1)
    return out


def test_acceptance_run_leaves_every_run_behind(acceptance_dir: Path) -> None:
    seed_dir = acceptance_dir / "seed_7"
    assert (seed_dir / "pretrained" / "manifest.json").is_file()
    assert (seed_dir / "noiseless" / "pretrained" / "manifest.json").is_file()
    for name, _, _ in COMPARED_RUNS:
        assert (seed_dir / name / "metrics.csv").is_file()

    payload = read_json(acceptance_dir / ACCEPTANCE_FILE)
    assert [o["seed"] for o in payload["outcomes"]] == [7]
    assert set(payload["outcomes"][0]["dialog_succ"]) == {mode.value for _, mode, _ in COMPARED_RUNS}
    assert len(payload["verdicts"]) == 6
    assert payload["passed"] == all(v["holds"] >= v["required"] for v in payload["verdicts"])

    rows = read_csv_rows(acceptance_dir / OUTCOMES_FILE)
    assert [r["seed"] for r in rows] == ["7"]
    assert 0.0 <= float(rows[0][RunMode.AURL.value]) <= 1.0


def test_compared_runs_keep_the_noisy_channel(acceptance_dir: Path) -> None:
    sl = yaml.safe_load((acceptance_dir / "seed_7" / "SL" / "config.yaml").read_text(encoding="utf-8"))
    assert sl["domain"]["noise_rate"] == small_config().domain.noise_rate
    murl = yaml.safe_load((acceptance_dir / "seed_7" / "AURL-MURL" / "config.yaml").read_text(encoding="utf-8"))
    assert murl["n_users"] == 2


def test_accept_command_exit_code_follows_the_verdicts(tmp_path: Path) -> None:
    config_file = tmp_path / "small.yaml"
    config_file.write_text(yaml.safe_dump(small_config(epochs=2).model_dump(mode="json")), encoding="utf-8")
    out = tmp_path / "accept"
    code = parse_and_dispatch(["accept", "--config", str(config_file), "--out", str(out), "--seeds", "1", "--quiet"])
    assert code == (0 if read_json(out / ACCEPTANCE_FILE)["passed"] else 2)
