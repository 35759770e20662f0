"""
Held-out evaluation against a hand-written finite-state user that shares no
parameters with the trainable users.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from aurl.core.domain import sample_goal
from aurl.schemas.config import RunConfig
from aurl.schemas.constants import DecodeMode, Outcome, Speaker, SystemAction, UserAction, UserStatus
from aurl.schemas.models import EpisodeLog, Environment, Metrics, Schema, UserGoal
from aurl.schemas.types import UserDecision, UserStateVector, Utterance
from aurl.services.episode import EpisodeResult, EpisodeSettings, SystemSide, SystemTurn, UserTurn, run_episode
from aurl.services.scripted import RuleTracker, make_system_decision
from aurl.services.user_agent import make_user_decision, update_user_state, verbalize
from aurl.utils.logger import logger
from aurl.utils.seeding import make_rng


class FsaState(str, Enum):
    START = "start"
    ANSWERING = "answering"
    UPDATING = "updating"
    CONFIRMING = "confirming"
    CLOSING = "closing"


@dataclass
class FsaStep:
    action: str
    slot: Optional[str]
    value_tokens: Tuple[str, ...]
    state: FsaState
    decision: UserDecision
    utterance: Utterance


@dataclass
class FsaUser:
    """
    Agenda automaton: answers requests from its goal, voices fired updates
    first, affirms correct confirmations and denies wrong ones, says bye once
    everything is provided and the result is announced.
    """
    schema: Schema
    goal: UserGoal
    state: FsaState = FsaState.START
    status: Optional[UserStateVector] = None
    turn: int = 0
    last_prompt: Optional[Utterance] = None
    last_decision: Optional[UserDecision] = None

    def __post_init__(self):
        if self.status is None:
            self.status = UserStateVector.initial(self.schema.n_slots)

    def _slots_with(self, status: int) -> List[str]:
        return [s for i, s in enumerate(self.schema.slots) if self.status.status[i] == status]

    def _decide(self, prompt: Utterance) -> Tuple[str, Optional[str], FsaState]:
        action, slot = prompt.action, prompt.slot
        pending = self._slots_with(UserStatus.NEED_UPDATE)
        unprovided = self._slots_with(UserStatus.NOT_PROVIDED)

        if action == SystemAction.BYE.value:
            return UserAction.BYE.value, None, FsaState.CLOSING
        if pending:
            return UserAction.UPDATE_SUB.value, pending[0], FsaState.UPDATING
        if action == SystemAction.REQUEST.value and slot is not None:
            if slot in unprovided:
                return UserAction.INFORM_NORM.value, slot, FsaState.ANSWERING
            return UserAction.RESTART_SLOT.value, slot, FsaState.ANSWERING
        if action == SystemAction.CONFIRM.value and slot is not None:
            shown = prompt.value_tokens[0] if prompt.value_tokens else None
            if shown != self.goal.intended_value(slot, slot in self.status.fired):
                return UserAction.DENY.value, None, FsaState.CONFIRMING
            if not unprovided:
                return UserAction.AFFIRM.value, None, FsaState.CLOSING
            return UserAction.AFFIRM.value, None, FsaState.CONFIRMING
        if action == SystemAction.INFORM_RESULT.value:
            if unprovided:
                return UserAction.DENY.value, None, self.state
            return UserAction.BYE.value, None, FsaState.CLOSING
        if action == SystemAction.GREET.value and self.state == FsaState.START and unprovided:
            return UserAction.INFORM_NORM.value, unprovided[0], FsaState.ANSWERING
        # fillers and greetings after the opening
        return UserAction.SILENCE.value, None, self.state

    def step(self, prompt: Utterance) -> FsaStep:
        self.turn += 1
        prompt_for_rules = prompt
        if prompt.action == SystemAction.REPEAT.value:
            prompt_for_rules = self.last_prompt or prompt
        else:
            self.last_prompt = prompt
        action, slot, next_state = self._decide(prompt_for_rules)
        decision = make_user_decision(self.schema, action, slot)
        utterance, decision = verbalize(decision, self.status, self.goal, self.turn, self.schema)
        self.status = update_user_state(self.status, decision, self.goal, self.turn, self.schema, utterance)
        self.state = next_state
        self.last_decision = decision
        return FsaStep(decision.action, decision.slot, utterance.value_tokens, next_state, decision, utterance)


def fsa_step(user: FsaUser, prompt: Utterance) -> FsaStep:
    return user.step(prompt)


class FsaUserSide:
    """Adapter so the automaton plugs into the shared episode loop"""

    def __init__(self, schema: Schema, user_id: int = 0):
        self.schema = schema
        self.user_id = user_id
        self.fsa: Optional[FsaUser] = None

    def reset(self, goal: UserGoal) -> None:
        self.fsa = FsaUser(self.schema, goal)

    def respond(self, prompt: Utterance, turn: int, mode: DecodeMode, rng: np.random.Generator) -> UserTurn:
        before = self.fsa.status
        prev_action = self.fsa.last_decision.action if self.fsa.last_decision else None
        step = self.fsa.step(prompt)
        return UserTurn(step.decision, step.decision, step.utterance, before, self.fsa.status, prev_action)


class RandomSystemSide:
    """Uniform actions and slots over the rule tracker; a floor for the metrics"""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.tracker = RuleTracker(schema)

    def respond(self, prev_bs, prev_sys_utt, user_utt, mode, rng) -> SystemTurn:
        bs = self.tracker.update(prev_bs, prev_sys_utt, user_utt)
        action = self.schema.system_actions[int(rng.integers(len(self.schema.system_actions)))]
        slot = None
        if self.schema.has_slot_argument(Speaker.SYSTEM.value, action):
            slot = self.schema.slots[int(rng.integers(self.schema.n_slots))]
        return SystemTurn(bs, user_utt.action, make_system_decision(self.schema, action, slot))


# Metrics
def compute_metrics(results: Sequence[EpisodeResult]) -> Metrics:
    n = len(results)
    successes = [r for r in results if r.outcome == Outcome.SUCCESS]
    turns = sum(r.turn_count for r in results)
    timings = [ms for r in results for ms in r.system_ms]
    return Metrics(
        dialog_succ=len(successes) / n if n else 0.0,
        avg_turn=float(np.mean([r.turn_count for r in successes])) if successes else 0.0,
        avg_reward=float(np.mean([r.system_return for r in results])) if n else 0.0,
        dst_acc=sum(r.dst_correct_turns for r in results) / turns if turns else 0.0,
        avg_time=float(np.mean(timings)) if timings else 0.0,
        n_dialogs=n,
    )


def metrics_from_logs(logs: Sequence[EpisodeLog]) -> Tuple[float, float]:
    """(dialog_succ, dst_acc) recomputed from stored transcripts"""
    n = len(logs)
    turns = sum(len(log.turns) for log in logs)
    succ = sum(1 for log in logs if log.outcome == Outcome.SUCCESS) / n if n else 0.0
    acc = sum(log.dst_correct_turns for log in logs) / turns if turns else 0.0
    return succ, acc


def aggregate_metrics(per_repeat: Sequence[Metrics]) -> Metrics:
    return Metrics(
        dialog_succ=float(np.mean([m.dialog_succ for m in per_repeat])),
        avg_turn=float(np.mean([m.avg_turn for m in per_repeat])),
        avg_reward=float(np.mean([m.avg_reward for m in per_repeat])),
        dst_acc=float(np.mean([m.dst_acc for m in per_repeat])),
        avg_time=float(np.mean([m.avg_time for m in per_repeat])),
        n_dialogs=sum(m.n_dialogs for m in per_repeat),
    )


@dataclass
class EvalReport:
    repeats: List[Metrics]
    aggregate: Metrics
    logs: List[EpisodeLog] = field(default_factory=list)


def run_fsa_episodes(
        system: SystemSide,
        env: Environment,
        config: RunConfig,
        n_dialogs: int,
        rng_keys: Tuple,
        settings: Optional[EpisodeSettings] = None,
        progress: bool = False,
) -> List[EpisodeResult]:
    """Greedy episodes against fresh FSA users; dialog i uses stream (seed, *rng_keys, i)"""
    schema = env.schema_
    settings = settings or EpisodeSettings.from_run_config(config)
    user = FsaUserSide(schema)
    results = []
    for i in tqdm(range(n_dialogs), desc="eval", disable=not progress, leave=False):
        rng = make_rng(config.seed, *rng_keys, i)
        goal = sample_goal(schema, config.domain.update_prob, rng)
        results.append(run_episode(system, user, env, goal, settings, rng, DecodeMode.GREEDY, episode=i))
    return results


def evaluate(
        system: SystemSide,
        env: Environment,
        config: RunConfig,
        n_dialogs: Optional[int] = None,
        repeats: Optional[int] = None,
        record_timing: bool = True,
        progress: bool = False,
) -> EvalReport:
    """
    `repeats` x `n_dialogs` greedy FSA episodes; repeat r is seeded from
    (seed, "eval", r) so every repeat is reproducible on its own.
    """
    n_dialogs = n_dialogs or config.eval.n_dialogs
    repeats = repeats or config.eval.repeats
    settings = EpisodeSettings.from_run_config(config, record_timing=record_timing)
    per_repeat, logs = [], []
    for r in range(repeats):
        results = run_fsa_episodes(system, env, config, n_dialogs, ("eval", r), settings, progress)
        metrics = compute_metrics(results)
        per_repeat.append(metrics)
        if config.eval.dump_transcripts:
            logs.extend(result.log() for result in results)
        logger.info(
            f"📊 evaluation.py: repeat {r} succ={metrics.dialog_succ:.3f} "
            f"turns={metrics.avg_turn:.2f} reward={metrics.avg_reward:.3f} dst={metrics.dst_acc:.3f}"
        )
    return EvalReport(per_repeat, aggregate_metrics(per_repeat), logs)
