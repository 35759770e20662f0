"""
Rule-based reference components: the gold state tracker, the scripted
system's own tracker and policy, and the stochastic scripted user that
generates the supervised corpus.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from aurl.schemas.constants import (
    INFORM_FAMILY,
    SystemAction,
    UserAction,
    UserStatus,
)
from aurl.schemas.models import Schema, UserGoal
from aurl.schemas.types import BeliefState, SystemDecision, UserDecision, UserStateVector, Utterance
from aurl.services.system_agent import op_clear, op_keep, op_set
from aurl.services.user_agent import make_user_decision


def track(schema: Schema, bs: BeliefState, prev_sys_utt: Utterance, user_utt: Utterance) -> BeliefState:
    """
    Inform-family utterances set every slot their tokens belong to; a deny
    answering confirm(slot) clears that slot; everything else keeps the state.
    """
    if user_utt.action in INFORM_FAMILY:
        for token in user_utt.value_tokens:
            bs = bs.with_value(schema.token_slot(token), token)
        return bs
    if (user_utt.action == UserAction.DENY.value
            and prev_sys_utt.action == SystemAction.CONFIRM.value
            and prev_sys_utt.slot is not None):
        return bs.with_value(prev_sys_utt.slot, None)
    return bs


class OracleTracker:
    """Gold belief state, fed with clean user utterances"""

    def __init__(self, schema: Schema):
        self.schema = schema

    def update(self, bs: BeliefState, prev_sys_utt: Utterance, clean_user_utt: Utterance) -> BeliefState:
        return track(self.schema, bs, prev_sys_utt, clean_user_utt)


class RuleTracker:
    """The scripted system's tracker: same rules, applied to what it actually heard"""

    def __init__(self, schema: Schema):
        self.schema = schema

    def update(self, bs: BeliefState, prev_sys_utt: Utterance, observed_user_utt: Utterance) -> BeliefState:
        return track(self.schema, bs, prev_sys_utt, observed_user_utt)


def gold_slot_ops(prev_bs: BeliefState, gold_bs: BeliefState, schema: Schema) -> Tuple[int, ...]:
    """keep if unchanged, clear if the gold slot is empty, otherwise set to the gold value"""
    ops = []
    for slot in schema.slots:
        before, after = prev_bs.get(slot), gold_bs.get(slot)
        if before == after:
            ops.append(op_keep())
        elif after is None:
            ops.append(op_clear(len(schema.value_vocab[slot])))
        else:
            ops.append(op_set(schema.value_index(after)))
    return tuple(ops)


def make_system_decision(schema: Schema, action: str, slot: Optional[str]) -> SystemDecision:
    return SystemDecision(
        action=action,
        slot=slot,
        action_index=schema.system_action_index(action),
        slot_index=schema.n_slots if slot is None else schema.slot_index(slot),
    )


class ScriptedSystem:
    """Requests unfilled slots, confirms what it just heard, announces the result, then closes"""

    def __init__(self, schema: Schema):
        self.schema = schema

    def decide(self, bs: BeliefState, prev_sys_utt: Utterance, user_utt: Utterance) -> SystemDecision:
        schema = self.schema
        action = user_utt.action
        unfilled = [slot for slot in schema.slots if bs.get(slot) is None]

        if action == UserAction.BYE.value and not unfilled:
            return make_system_decision(schema, SystemAction.BYE.value, None)
        if (action == UserAction.DENY.value and prev_sys_utt.action == SystemAction.CONFIRM.value
                and prev_sys_utt.slot is not None):
            return make_system_decision(schema, SystemAction.REQUEST.value, prev_sys_utt.slot)
        if action in INFORM_FAMILY and user_utt.value_tokens:
            first = schema.token_slot(user_utt.value_tokens[0])
            return make_system_decision(schema, SystemAction.CONFIRM.value, first)
        if action not in (UserAction.AFFIRM.value, UserAction.BYE.value, UserAction.DENY.value):
            # silence and fillers
            return make_system_decision(schema, SystemAction.REPEAT.value, None)
        if unfilled:
            return make_system_decision(schema, SystemAction.REQUEST.value, unfilled[0])
        if prev_sys_utt.action == SystemAction.INFORM_RESULT.value:
            return make_system_decision(schema, SystemAction.BYE.value, None)
        return make_system_decision(schema, SystemAction.INFORM_RESULT.value, None)


@dataclass
class ScriptedUser:
    """
    Stochastic agenda user for corpus generation. Answers from its goal,
    voices fired updates first, affirms or denies confirmations, says bye
    after the result.
    """
    schema: Schema
    multi_prob: float = 0.2
    silence_prob: float = 0.03

    def respond(
            self,
            prompt: Utterance,
            bs_u: UserStateVector,
            goal: UserGoal,
            rng: np.random.Generator,
            last_prompt: Optional[Utterance] = None,
    ) -> UserDecision:
        schema = self.schema
        if prompt.action == SystemAction.REPEAT.value:
            # answer the last substantive prompt again
            prompt = last_prompt if last_prompt is not None else prompt
        elif rng.random() < self.silence_prob:
            return make_user_decision(schema, UserAction.SILENCE.value, None)

        if prompt.action == SystemAction.BYE.value:
            return make_user_decision(schema, UserAction.BYE.value, None)
        pending = [s for i, s in enumerate(schema.slots) if bs_u.status[i] == UserStatus.NEED_UPDATE]
        if pending:
            return make_user_decision(schema, UserAction.UPDATE_SUB.value, pending[0])

        unprovided = [s for i, s in enumerate(schema.slots) if bs_u.status[i] == UserStatus.NOT_PROVIDED]
        if prompt.action == SystemAction.CONFIRM.value and prompt.slot is not None:
            shown = prompt.value_tokens[0] if prompt.value_tokens else None
            meant = goal.intended_value(prompt.slot, prompt.slot in bs_u.fired)
            action = UserAction.AFFIRM.value if shown == meant else UserAction.DENY.value
            return make_user_decision(schema, action, None)
        if prompt.action == SystemAction.REQUEST.value and prompt.slot is not None:
            status = bs_u.status[schema.slot_index(prompt.slot)]
            if status != UserStatus.NOT_PROVIDED:
                return make_user_decision(schema, UserAction.RESTART_SLOT.value, prompt.slot)
            return self._inform(prompt.slot, unprovided, rng)
        if prompt.action == SystemAction.INFORM_RESULT.value and not unprovided:
            return make_user_decision(schema, UserAction.BYE.value, None)
        if unprovided:
            return self._inform(unprovided[0], unprovided, rng)
        return make_user_decision(schema, UserAction.BYE.value, None)

    def _inform(self, slot: str, unprovided, rng: np.random.Generator) -> UserDecision:
        others = [s for s in unprovided if s != slot]
        if others and rng.random() < self.multi_prob:
            return make_user_decision(self.schema, UserAction.INFORM_MULTI.value, slot)
        return make_user_decision(self.schema, UserAction.INFORM_NORM.value, slot)
