"""
Multi-seed acceptance: pretrain with and without channel noise, train every
compared mode from the same noisy checkpoint, and count on how many seeds
each expected outcome holds.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

from aurl.config import build_run_config
from aurl.schemas.config import RunConfig
from aurl.schemas.constants import DefaultValues, Level, RunMode, UserAction
from aurl.schemas.models import AcceptanceReport, CriterionVerdict, SeedOutcome
from aurl.services.orchestrator import pretrain_sl, train
from aurl.services.reporting import read_run
from aurl.utils.artifacts import write_csv, write_json
from aurl.utils.logger import logger

ACCEPTANCE_FILE = "acceptance.json"
OUTCOMES_FILE = "acceptance.csv"

# (run directory, mode, number of users)
COMPARED_RUNS = (
    (RunMode.SL.value, RunMode.SL, 1),
    (RunMode.RL_TRAIN_DST.value, RunMode.RL_TRAIN_DST, 1),
    (RunMode.AURL.value, RunMode.AURL, 1),
    (RunMode.AURL_MURL.value, RunMode.AURL_MURL, 2),
)


def variant(config: RunConfig, **updates) -> RunConfig:
    """Copy of `config` with top-level fields replaced and config blocks merged"""
    raw = config.model_dump(mode="json")
    for key, value in updates.items():
        if isinstance(value, dict):
            raw[key] = {**raw.get(key, {}), **value}
        else:
            raw[key] = value
    return build_run_config(raw)


def _succ(outcome: SeedOutcome, mode: RunMode) -> Optional[float]:
    return outcome.dialog_succ.get(mode.value)


def _beats(outcome: SeedOutcome, better: RunMode, worse: RunMode, margin: float, strict: bool) -> bool:
    a, b = _succ(outcome, better), _succ(outcome, worse)
    if a is None or b is None:
        return False
    return a - b > margin if strict else a - b >= margin


def _sl_noiseless(o: SeedOutcome) -> bool:
    return o.noiseless_joint_acc >= DefaultValues.SL_ACCURACY_TARGET


def _difficulty_order(o: SeedOutcome) -> bool:
    return o.inform_norm_acc is not None and o.update_sub_acc is not None and o.inform_norm_acc > o.update_sub_acc


def _easy_share(o: SeedOutcome) -> bool:
    return (o.easy_share is not None
            and abs(o.easy_share - DefaultValues.EASY_SHARE_TARGET) <= DefaultValues.EASY_SHARE_TOLERANCE)


@dataclass(frozen=True)
class Criterion:
    name: str
    description: str
    check: Callable[[SeedOutcome], bool]
    seed_share: float = 1.0


CRITERIA = (
    Criterion("sl_noiseless", "noiseless held-out DST joint accuracy >= 0.99", _sl_noiseless),
    Criterion("difficulty_order", "acc(inform_norm) > acc(update_sub) after noisy pretraining", _difficulty_order),
    Criterion("easy_share", "easy transitions are 0.75 +- 0.05 of the drained DST buffer", _easy_share),
    Criterion("aurl_over_sl", "AURL success beats SL by >= 0.05",
              lambda o: _beats(o, RunMode.AURL, RunMode.SL, DefaultValues.SUCCESS_MARGIN, strict=False),
              DefaultValues.ORDERING_SEED_SHARE),
    Criterion("aurl_over_sync", "AURL success beats RL-train_DST",
              lambda o: _beats(o, RunMode.AURL, RunMode.RL_TRAIN_DST, 0.0, strict=True),
              DefaultValues.ORDERING_SEED_SHARE),
    Criterion("murl_over_aurl", "AURL-MURL success is at least AURL's",
              lambda o: _beats(o, RunMode.AURL_MURL, RunMode.AURL, 0.0, strict=False),
              DefaultValues.ORDERING_SEED_SHARE),
)


def judge(outcomes: Sequence[SeedOutcome], criteria: Sequence[Criterion] = CRITERIA) -> List[CriterionVerdict]:
    n = len(outcomes)
    return [
        CriterionVerdict(
            name=c.name,
            description=c.description,
            holds=sum(1 for o in outcomes if c.check(o)),
            seeds=n,
            required=math.ceil(c.seed_share * n - 1e-9),
        )
        for c in criteria
    ]


def run_seed(config: RunConfig, seed: int, out_dir: Union[str, Path], progress: bool = False) -> SeedOutcome:
    root = Path(out_dir) / f"seed_{seed}"
    base = variant(config, seed=seed, mode=RunMode.AURL.value, n_users=1)

    noiseless = variant(base, domain={"noise_rate": 0.0}, curriculum={"enabled": False})
    clean = pretrain_sl(noiseless, root / "noiseless", progress=progress)
    noisy = pretrain_sl(base, root, progress=progress)
    per_action: Dict[str, float] = noisy.report["heldout_action_acc"]

    succ: Dict[str, float] = {}
    easy_share = None
    for name, mode, n_users in COMPARED_RUNS:
        result = train(variant(base, mode=mode.value, n_users=n_users), root / name, noisy.directory, progress)
        succ[mode.value] = result.metrics[-1].dialog_succ
        if mode == RunMode.AURL:
            easy_share = read_run(root / name).level_share(Level.EASY.value)

    outcome = SeedOutcome(
        seed=seed,
        noiseless_joint_acc=clean.report["heldout_dst_joint_acc"],
        inform_norm_acc=per_action.get(UserAction.INFORM_NORM.value),
        update_sub_acc=per_action.get(UserAction.UPDATE_SUB.value),
        easy_share=easy_share,
        dialog_succ=succ,
    )
    logger.info(f"🎯 acceptance.py: seed {seed} success {succ}")
    return outcome


def run_acceptance(
        config: RunConfig,
        out_dir: Union[str, Path],
        n_seeds: int = DefaultValues.ACCEPTANCE_SEEDS,
        progress: bool = False,
) -> AcceptanceReport:
    """Seeds are consecutive from `config.seed`; writes acceptance.json and acceptance.csv"""
    out_dir = Path(out_dir)
    outcomes = [run_seed(config, config.seed + k, out_dir, progress) for k in range(n_seeds)]
    report = AcceptanceReport(outcomes=outcomes, verdicts=judge(outcomes))

    write_json(out_dir / ACCEPTANCE_FILE, {**report.model_dump(mode="json"), "passed": report.passed})
    modes = [mode.value for _, mode, _ in COMPARED_RUNS]
    fields = ["seed", "noiseless_joint_acc", "inform_norm_acc", "update_sub_acc", "easy_share", *modes]
    write_csv(out_dir / OUTCOMES_FILE, fields,
              ({**o.model_dump(exclude={"dialog_succ"}), **o.dialog_succ} for o in outcomes))

    for verdict in report.verdicts:
        log = logger.info if verdict.passed else logger.warning
        log(f"{'✅' if verdict.passed else '⚠️'} acceptance.py: {verdict.name} holds on "
            f"{verdict.holds}/{verdict.seeds} seeds (needs {verdict.required})")
    return report
