"""
Difficulty measurement and the four-phase DST curriculum.

Levels are keyed by the gold user action of each transition; the table is
measured on the pretraining held-out split and then frozen.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from aurl.schemas.config import CurriculumConfig
from aurl.schemas.constants import Level, UserAction
from aurl.schemas.models import DifficultyTable, PhaseLog, Schema
from aurl.schemas.types import DstTransition
from aurl.services.system_agent import SystemAgent
from aurl.utils.errors import MeasurementError
from aurl.utils.logger import logger

LEVEL_ORDER = (Level.EASY, Level.MIDDLE, Level.HARD)


@dataclass(frozen=True)
class CurriculumPhasePlan:
    phases: Tuple[Tuple[Level, ...], ...] = (
        (Level.EASY, Level.MIDDLE, Level.HARD),
        (Level.MIDDLE, Level.HARD),
        (Level.HARD,),
        (Level.EASY, Level.MIDDLE, Level.HARD),
    )
    passes_per_segment: int = 1


def level_for(accuracy: float, config: CurriculumConfig) -> Level:
    if accuracy >= config.easy_threshold:
        return Level.EASY
    if accuracy >= config.middle_threshold:
        return Level.MIDDLE
    return Level.HARD


def table_from_accuracy(
        accuracy: Dict[str, float],
        config: CurriculumConfig,
        counts: Optional[Dict[str, int]] = None,
) -> DifficultyTable:
    for action, value in accuracy.items():
        if not 0.0 <= value <= 1.0:
            raise MeasurementError(f"accuracy for {action} outside [0, 1]: {value}")
    return DifficultyTable(
        accuracy=dict(accuracy),
        levels={action: level_for(value, config) for action, value in accuracy.items()},
        counts=dict(counts or {}),
    )


def measure_difficulty(
        system: SystemAgent,
        test_set: Sequence[DstTransition],
        config: CurriculumConfig,
        schema: Optional[Schema] = None,
) -> DifficultyTable:
    """
    Per user-action joint accuracy: a turn is correct iff every slot operation
    and the user-action prediction are correct.
    Filler actions behave as silence and share its entry when they never occur.
    """
    schema = schema or system.schema
    counts = {action: 0 for action in schema.user_actions}
    correct = {action: 0 for action in schema.user_actions}
    if test_set:
        features = np.stack([t.features for t in test_set])
        ops, user_actions = system.predict_ops(features)
        gold_ops = np.array([t.slot_ops for t in test_set])
        gold_actions = np.array([t.user_action for t in test_set])
        hits = np.all(ops == gold_ops, axis=1) & (user_actions == gold_actions)
        for t, hit in zip(test_set, hits):
            counts[t.user_action_name] += 1
            correct[t.user_action_name] += int(hit)

    core = [a.value for a in UserAction]
    uncovered = [a for a in core if counts[a] < config.min_coverage]
    if uncovered:
        logger.error(f"❌ curriculum.py: action types below coverage {config.min_coverage}: {uncovered}")
        raise MeasurementError(
            f"test set covers {uncovered} fewer than {config.min_coverage} times",
            data={"uncovered": uncovered, "counts": counts},
        )

    accuracy = {}
    for action in schema.user_actions:
        if counts[action] >= config.min_coverage:
            accuracy[action] = correct[action] / counts[action]
        else:
            accuracy[action] = correct[UserAction.SILENCE.value] / counts[UserAction.SILENCE.value]
    table = table_from_accuracy(accuracy, config, counts)
    logger.info(
        "📏 curriculum.py: difficulty "
        + ", ".join(f"{a}={accuracy[a]:.3f}/{table.levels[a].value}" for a in core)
    )
    return table


def split_levels(
        transitions: Sequence[DstTransition],
        table: DifficultyTable,
) -> Dict[Level, List[DstTransition]]:
    """Partition by the level of each transition's gold user action, keeping insertion order"""
    levels: Dict[Level, List[DstTransition]] = {level: [] for level in LEVEL_ORDER}
    for t in transitions:
        level = table.levels.get(t.user_action_name)
        if level is None:
            raise MeasurementError(f"user action {t.user_action_name!r} not in the difficulty table",
                                   data={"action": t.user_action_name})
        levels[level].append(t)
    return levels


@dataclass
class CurriculumResult:
    phases: List[PhaseLog] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return sum(p.steps for p in self.phases)

    @property
    def mean_loss(self) -> Optional[float]:
        losses = [p.loss for p in self.phases if p.loss is not None]
        return float(np.mean(losses)) if losses else None


def supervised_pass(system: SystemAgent, transitions: Sequence[DstTransition], batch_size: int) -> Tuple[int, Optional[float]]:
    """One pass in insertion order; returns (steps, mean batch loss)"""
    losses = []
    for start in range(0, len(transitions), batch_size):
        losses.append(system.dst_supervised_update(transitions[start:start + batch_size]))
    return len(losses), (float(np.mean(losses)) if losses else None)


def expected_steps(sizes: Dict[Level, int], plan: CurriculumPhasePlan, batch_size: int) -> int:
    return sum(
        plan.passes_per_segment * math.ceil(sizes[level] / batch_size)
        for phase in plan.phases for level in phase
    )


def run_curriculum_update(
        system: SystemAgent,
        transitions: Sequence[DstTransition],
        table: Optional[DifficultyTable],
        config: CurriculumConfig,
        plan: CurriculumPhasePlan = CurriculumPhasePlan(),
        enabled: bool = True,
) -> CurriculumResult:
    """
    Four phases over one drain, each listed level one supervised pass in
    mini-batches. Disabled (or without a table) it is a single uniform pass.
    """
    result = CurriculumResult()
    if not transitions:
        logger.warning("⚠️ curriculum.py: empty drain, nothing to train")
        return result

    if not enabled or table is None:
        steps, loss = supervised_pass(system, transitions, config.batch_size)
        result.phases.append(PhaseLog(phase=1, level=None, transitions=len(transitions), steps=steps, loss=loss))
        return result

    levels = split_levels(transitions, table)
    for phase_index, phase in enumerate(plan.phases, start=1):
        for level in phase:
            segment = levels[level]
            steps, losses = 0, []
            for _ in range(plan.passes_per_segment):
                n, loss = supervised_pass(system, segment, config.batch_size)
                steps += n
                if loss is not None:
                    losses.append(loss)
            if not segment:
                logger.debug(f"🔍 curriculum.py: phase {phase_index} has no {level.value} data")
            result.phases.append(PhaseLog(
                phase=phase_index,
                level=level,
                transitions=len(segment),
                steps=steps,
                loss=float(np.mean(losses)) if losses else None,
            ))
    logger.info(
        f"📚 curriculum.py: {len(transitions)} transitions "
        f"(easy {len(levels[Level.EASY])}, middle {len(levels[Level.MIDDLE])}, hard {len(levels[Level.HARD])}), "
        f"{result.steps} steps"
    )
    return result
