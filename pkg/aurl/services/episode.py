"""
One dialog between a system side and a user side.

Both sides are small adapters so the same loop serves RL training (learned
agents), corpus generation (scripted agents) and evaluation (FSA user).
"""
import time
from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np

from aurl.core.domain import corrupt, db_query, success_check
from aurl.schemas.config import RewardConfig, RunConfig
from aurl.schemas.constants import (
    INFORM_FAMILY,
    DecodeMode,
    Outcome,
    Speaker,
    SystemAction,
    UserAction,
)
from aurl.schemas.models import (
    CorpusDialog,
    CorpusTurn,
    EntityTable,
    Environment,
    EpisodeLog,
    Schema,
    TurnRecord,
    UserGoal,
)
from aurl.schemas.types import (
    BeliefState,
    DstTransition,
    NluTransition,
    PolicyTransition,
    SystemDecision,
    UserDecision,
    UserStateVector,
    Utterance,
)
from aurl.services.rewards import TurnContext, turn_rewards
from aurl.services.scripted import OracleTracker, RuleTracker, ScriptedSystem, ScriptedUser, gold_slot_ops
from aurl.services.system_agent import SystemAgent, system_utterance
from aurl.services.user_agent import UserAgent, update_user_state, verbalize


def greeting() -> Utterance:
    return Utterance(Speaker.SYSTEM.value, SystemAction.GREET.value, None, (), 0)


# User sides
@dataclass
class UserTurn:
    decision: UserDecision
    sampled: UserDecision
    utterance: Utterance
    state_before: UserStateVector
    state_after: UserStateVector
    prev_action: Optional[str] = None
    policy_input: Optional[np.ndarray] = None
    nlu: Optional[NluTransition] = None
    value: Optional[float] = None


class UserSide(Protocol):
    user_id: int

    def reset(self, goal: UserGoal) -> None:
        ...

    def respond(self, prompt: Utterance, turn: int, mode: DecodeMode, rng: np.random.Generator) -> UserTurn:
        ...


class AgentUserSide:
    """A trainable user agent in one dialog"""

    def __init__(self, agent: UserAgent):
        self.agent = agent
        self.user_id = agent.user_id
        self.schema = agent.schema
        self.encoder = agent.encoder

    def reset(self, goal: UserGoal) -> None:
        self.goal = goal
        self.state = UserStateVector.initial(self.schema.n_slots)
        self.prev_action: Optional[str] = None

    def respond(self, prompt: Utterance, turn: int, mode: DecodeMode, rng: np.random.Generator) -> UserTurn:
        nlu = self.agent.nlu_step(self.goal, prompt)
        confirm_match = self.encoder.confirm_match(self.state, self.goal, prompt)
        x = self.encoder.user_policy_input(self.prev_action, nlu.action, nlu.slot, self.state, confirm_match)
        sampled = self.agent.dp_step(x, mode, rng)
        utterance, decision = verbalize(sampled, self.state, self.goal, turn, self.schema)
        after = update_user_state(self.state, decision, self.goal, turn, self.schema, utterance)
        label = NluTransition(
            features=nlu.features,
            action=self.schema.system_action_index(prompt.action),
            slot=self.schema.n_slots if prompt.slot is None else self.schema.slot_index(prompt.slot),
        )
        result = UserTurn(
            decision=decision,
            sampled=sampled,
            utterance=utterance,
            state_before=self.state,
            state_after=after,
            prev_action=self.prev_action,
            policy_input=x,
            nlu=label,
            value=self.agent.value(x),
        )
        self.state, self.prev_action = after, decision.action
        return result


class ScriptedUserSide:
    def __init__(self, user: ScriptedUser, user_id: int = 0):
        self.user = user
        self.schema = user.schema
        self.user_id = user_id

    def reset(self, goal: UserGoal) -> None:
        self.goal = goal
        self.state = UserStateVector.initial(self.schema.n_slots)
        self.prev_action: Optional[str] = None
        self.last_prompt: Optional[Utterance] = None

    def respond(self, prompt: Utterance, turn: int, mode: DecodeMode, rng: np.random.Generator) -> UserTurn:
        sampled = self.user.respond(prompt, self.state, self.goal, rng, self.last_prompt)
        utterance, decision = verbalize(sampled, self.state, self.goal, turn, self.schema)
        after = update_user_state(self.state, decision, self.goal, turn, self.schema, utterance)
        result = UserTurn(decision, sampled, utterance, self.state, after, self.prev_action)
        if prompt.action != SystemAction.REPEAT.value:
            self.last_prompt = prompt
        self.state, self.prev_action = after, decision.action
        return result


# System sides
@dataclass
class SystemTurn:
    belief: BeliefState
    predicted_user_action: str
    decision: SystemDecision
    policy_input: Optional[np.ndarray] = None
    dst_features: Optional[np.ndarray] = None
    value: Optional[float] = None


class SystemSide(Protocol):
    def respond(
            self,
            prev_bs: BeliefState,
            prev_sys_utt: Utterance,
            user_utt: Utterance,
            mode: DecodeMode,
            rng: np.random.Generator,
    ) -> SystemTurn:
        ...


class AgentSystemSide:
    def __init__(self, agent: SystemAgent, db: EntityTable):
        self.agent = agent
        self.db = db

    def respond(self, prev_bs, prev_sys_utt, user_utt, mode, rng) -> SystemTurn:
        dst = self.agent.dst_step(prev_bs, prev_sys_utt, user_utt)
        q = db_query(dst.belief, self.db)
        x = self.agent.policy_input(prev_sys_utt.action, dst.belief, dst.context, q)
        decision = self.agent.dp_step(x, mode, rng)
        return SystemTurn(
            belief=dst.belief,
            predicted_user_action=dst.predicted_user_action,
            decision=decision,
            policy_input=x,
            dst_features=dst.features,
            value=self.agent.value(x),
        )


class ScriptedSystemSide:
    """Rule tracker on what was heard plus the scripted policy"""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.tracker = RuleTracker(schema)
        self.policy = ScriptedSystem(schema)

    def respond(self, prev_bs, prev_sys_utt, user_utt, mode, rng) -> SystemTurn:
        bs = self.tracker.update(prev_bs, prev_sys_utt, user_utt)
        return SystemTurn(bs, user_utt.action, self.policy.decide(bs, prev_sys_utt, user_utt))


# The loop
@dataclass
class EpisodeSettings:
    noise_rate: float
    max_turns: int
    rewards: RewardConfig
    record_timing: bool = False

    @classmethod
    def from_run_config(cls, config: RunConfig, record_timing: Optional[bool] = None) -> "EpisodeSettings":
        return cls(
            noise_rate=config.domain.noise_rate,
            max_turns=config.domain.max_turns,
            rewards=config.rewards,
            record_timing=config.eval.record_timing if record_timing is None else record_timing,
        )


@dataclass
class TurnTrace:
    turn: int
    prompt: Utterance
    user: UserTurn
    user_noisy: Utterance
    prev_belief: BeliefState
    system: SystemTurn
    system_utterance: Utterance
    prev_oracle: BeliefState
    oracle: BeliefState
    system_reward: float
    user_reward: float
    breakdown: dict
    elapsed_ms: float = 0.0


@dataclass
class EpisodeResult:
    episode: int
    user_id: int
    goal: UserGoal
    traces: List[TurnTrace] = field(default_factory=list)
    outcome: Outcome = Outcome.ONGOING

    @property
    def turn_count(self) -> int:
        return len(self.traces)

    @property
    def system_return(self) -> float:
        return float(sum(t.system_reward for t in self.traces))

    @property
    def user_return(self) -> float:
        return float(sum(t.user_reward for t in self.traces))

    @property
    def fallbacks(self) -> int:
        return sum(1 for t in self.traces if t.user.decision.fallback)

    @property
    def dst_correct_turns(self) -> int:
        return sum(1 for t in self.traces if t.system.belief == t.oracle)

    @property
    def system_ms(self) -> List[float]:
        return [t.elapsed_ms for t in self.traces]

    def system_transitions(self) -> List[PolicyTransition]:
        return _chain([t.system.policy_input for t in self.traces],
                      [t.system.decision for t in self.traces],
                      [t.system_reward for t in self.traces])

    def user_transitions(self) -> List[PolicyTransition]:
        return _chain([t.user.policy_input for t in self.traces],
                      [t.user.sampled for t in self.traces],
                      [t.user_reward for t in self.traces])

    def nlu_transitions(self) -> List[NluTransition]:
        return [t.user.nlu for t in self.traces if t.user.nlu is not None]

    def dst_transitions(self, schema: Schema) -> List[DstTransition]:
        """Gold operations take the system's actual previous belief to the gold state"""
        result = []
        for t in self.traces:
            if t.system.dst_features is None:
                continue
            action = t.user.decision.action
            result.append(DstTransition(
                features=t.system.dst_features,
                slot_ops=gold_slot_ops(t.prev_belief, t.oracle, schema),
                user_action=schema.user_action_index(action),
                user_action_name=action,
            ))
        return result

    def log(self) -> EpisodeLog:
        turns = [
            TurnRecord(
                turn=t.turn,
                system_prompt=t.prompt,
                user_clean=t.user.utterance,
                user_noisy=t.user_noisy,
                user_decision=t.user.decision,
                user_state=t.user.state_after,
                belief=t.system.belief,
                oracle=t.oracle,
                predicted_user_action=t.system.predicted_user_action,
                system_decision=t.system.decision,
                system_utterance=t.system_utterance,
                system_reward=t.system_reward,
                user_reward=t.user_reward,
                system_value=t.system.value,
                user_value=t.user.value,
                reward_breakdown=t.breakdown,
            )
            for t in self.traces
        ]
        return EpisodeLog(
            episode=self.episode,
            user_id=self.user_id,
            goal=self.goal,
            turns=turns,
            outcome=self.outcome,
            turn_count=self.turn_count,
            system_return=self.system_return,
            user_return=self.user_return,
            fallbacks=self.fallbacks,
        )

    def corpus_dialog(self) -> CorpusDialog:
        turns = [
            CorpusTurn(
                turn=t.turn,
                system_prompt=t.prompt,
                user_state=t.user.state_before,
                user_prev_action=t.user.prev_action,
                user_action=t.user.decision.action,
                user_slot=t.user.decision.slot,
                user_clean=t.user.utterance,
                user_noisy=t.user_noisy,
                prev_belief=t.prev_belief,
                belief=t.system.belief,
                oracle=t.oracle,
                system_action=t.system.decision.action,
                system_slot=t.system.decision.slot,
                system_utterance=t.system_utterance,
            )
            for t in self.traces
        ]
        return CorpusDialog(goal=self.goal, turns=turns, outcome=self.outcome)


def _chain(states, decisions, rewards) -> List[PolicyTransition]:
    if any(s is None for s in states):
        return []
    transitions = []
    for i, (state, decision, reward) in enumerate(zip(states, decisions, rewards)):
        last = i == len(states) - 1
        transitions.append(PolicyTransition(
            state=state,
            action=decision.action_index,
            slot=decision.slot_index,
            reward=reward,
            next_state=None if last else states[i + 1],
            terminal=last,
        ))
    return transitions


def _update_affirmed(affirmed: set, prompt: Utterance, user_utt: Utterance, schema: Schema) -> None:
    if user_utt.action == UserAction.AFFIRM.value and prompt.action == SystemAction.CONFIRM.value and prompt.slot:
        affirmed.add(prompt.slot)
    elif user_utt.action == UserAction.DENY.value and prompt.action == SystemAction.CONFIRM.value:
        affirmed.discard(prompt.slot)
    elif user_utt.action in INFORM_FAMILY:
        for token in user_utt.value_tokens:
            affirmed.discard(schema.token_slot(token))


def run_episode(
        system: SystemSide,
        user: UserSide,
        env: Environment,
        goal: UserGoal,
        settings: EpisodeSettings,
        rng: np.random.Generator,
        mode: DecodeMode = DecodeMode.SAMPLE,
        episode: int = 0,
) -> EpisodeResult:
    """
    The system greets at turn 0; every later turn is one user move (noised on
    the way to the system) followed by one system move, until the terminal signal.
    """
    schema = env.schema_
    user.reset(goal)
    result = EpisodeResult(episode=episode, user_id=user.user_id, goal=goal)

    prompt = greeting()
    bs = BeliefState.empty(schema.slots)
    oracle = BeliefState.empty(schema.slots)
    oracle_tracker = OracleTracker(schema)
    prev_user_clean: Optional[Utterance] = None
    affirmed: set = set()

    for turn in range(1, settings.max_turns + 1):
        user_turn = user.respond(prompt, turn, mode, rng)
        noisy = corrupt(user_turn.utterance, settings.noise_rate, schema, rng)
        next_oracle = oracle_tracker.update(oracle, prompt, user_turn.utterance)

        started = time.perf_counter() if settings.record_timing else 0.0
        system_turn = system.respond(bs, prompt, noisy, mode, rng)
        elapsed = (time.perf_counter() - started) * 1000.0 if settings.record_timing else 0.0

        sys_utt = system_utterance(system_turn.decision, system_turn.belief, turn)
        outcome = success_check(
            system_turn.belief, goal, turn, settings.max_turns,
            closed=system_turn.decision.action == SystemAction.BYE.value,
        )
        _update_affirmed(affirmed, prompt, user_turn.utterance, schema)
        ctx = TurnContext(
            system_action=system_turn.decision.action,
            system_slot=system_turn.decision.slot,
            prev_belief=bs,
            belief=system_turn.belief,
            user_utterance=user_turn.utterance,
            prev_user_utterance=prev_user_clean,
            perceived_user_action=system_turn.predicted_user_action,
            prompt_action=prompt.action,
            outcome=outcome,
            final_targets=goal.final_targets,
            affirmed_slots=frozenset(affirmed),
            user_fallback=user_turn.decision.fallback,
        )
        sys_reward, usr_reward, breakdown = turn_rewards(ctx, settings.rewards)
        result.traces.append(TurnTrace(
            turn=turn,
            prompt=prompt,
            user=user_turn,
            user_noisy=noisy,
            prev_belief=bs,
            system=system_turn,
            system_utterance=sys_utt,
            prev_oracle=oracle,
            oracle=next_oracle,
            system_reward=sys_reward,
            user_reward=usr_reward,
            breakdown=breakdown,
            elapsed_ms=elapsed,
        ))
        bs, oracle, prompt, prev_user_clean = system_turn.belief, next_oracle, sys_utt, user_turn.utterance
        if outcome != Outcome.ONGOING:
            result.outcome = outcome
            break
    return result
