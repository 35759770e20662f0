"""
Fixed-length feature encodings shared by the system agent, the user agents and
the supervised corpus.

    utterance  = one-hot action (speaker inventory) + one-hot slot (slots + none) + multi-hot value tokens
    belief     = per-slot one-hot over vocab + none
    query      = one-hot bucket + filled fraction
    user_state = per-slot one-hot over {0, 1, 2}
"""
from typing import Optional

import numpy as np

from aurl.schemas.constants import Speaker, SystemAction
from aurl.schemas.models import Schema, UserGoal
from aurl.schemas.types import BeliefState, QueryFeature, UserStateVector, Utterance
from aurl.utils.errors import SchemaMismatchError

N_BUCKETS = 3
N_STATUS = 3
N_CONFIRM_MATCH = 3


class FeatureEncoder:
    def __init__(self, schema: Schema):
        self.schema = schema
        self.n_slots = schema.n_slots
        self.n_tokens = schema.n_tokens
        self.n_system_actions = len(schema.system_actions)
        self.n_user_actions = len(schema.user_actions)
        self._belief_offsets = []
        offset = 0
        for slot in schema.slots:
            self._belief_offsets.append(offset)
            offset += len(schema.value_vocab[slot]) + 1
        self.belief_dim = offset

    # Dimensions
    @property
    def slot_dim(self) -> int:
        return self.n_slots + 1

    def utterance_dim(self, speaker: str) -> int:
        n_actions = self.n_system_actions if speaker == Speaker.SYSTEM.value else self.n_user_actions
        return n_actions + self.slot_dim + self.n_tokens

    @property
    def query_dim(self) -> int:
        return N_BUCKETS + 1

    @property
    def user_state_dim(self) -> int:
        return self.n_slots * N_STATUS

    @property
    def dst_input_dim(self) -> int:
        return (self.utterance_dim(Speaker.SYSTEM.value)
                + self.utterance_dim(Speaker.USER.value)
                + self.belief_dim)

    def system_policy_dim(self, context_dim: int) -> int:
        return self.n_system_actions + self.belief_dim + context_dim + self.query_dim

    @property
    def user_policy_dim(self) -> int:
        # the confirm-match block extends the Likert user state with one goal-dependent feature
        return (self.n_user_actions + 1) + self.n_system_actions + self.slot_dim \
            + self.user_state_dim + N_CONFIRM_MATCH

    @property
    def nlu_input_dim(self) -> int:
        return self.n_tokens + self.utterance_dim(Speaker.SYSTEM.value)

    # Encoders
    def action(self, speaker: str, action: Optional[str], with_none: bool = False) -> np.ndarray:
        if speaker == Speaker.SYSTEM.value:
            n, index_of = self.n_system_actions, self.schema.system_action_index
        else:
            n, index_of = self.n_user_actions, self.schema.user_action_index
        vec = np.zeros(n + 1 if with_none else n)
        if action is None:
            if not with_none:
                raise SchemaMismatchError(f"missing {speaker} action")
            vec[n] = 1.0
        else:
            vec[index_of(action)] = 1.0
        return vec

    def slot(self, slot: Optional[str]) -> np.ndarray:
        vec = np.zeros(self.slot_dim)
        vec[self.n_slots if slot is None else self.schema.slot_index(slot)] = 1.0
        return vec

    def tokens(self, value_tokens) -> np.ndarray:
        vec = np.zeros(self.n_tokens)
        for token in value_tokens:
            vec[self.schema.token_index(token)] = 1.0
        return vec

    def utterance(self, utt: Utterance) -> np.ndarray:
        return np.concatenate([
            self.action(utt.speaker, utt.action),
            self.slot(utt.slot),
            self.tokens(utt.value_tokens),
        ])

    def belief(self, bs: BeliefState) -> np.ndarray:
        vec = np.zeros(self.belief_dim)
        for i, slot in enumerate(self.schema.slots):
            vocab = self.schema.value_vocab[slot]
            value = bs.values.get(slot)
            if value is None:
                vec[self._belief_offsets[i] + len(vocab)] = 1.0
            else:
                if value not in vocab:
                    raise SchemaMismatchError(f"value {value!r} not in vocabulary of {slot}")
                vec[self._belief_offsets[i] + self.schema.value_index(value)] = 1.0
        return vec

    def query(self, q: QueryFeature) -> np.ndarray:
        vec = np.zeros(self.query_dim)
        vec[q.match_count_bucket] = 1.0
        vec[N_BUCKETS] = q.filled_fraction
        return vec

    def user_state(self, bs_u: UserStateVector) -> np.ndarray:
        if len(bs_u.status) != self.n_slots:
            raise SchemaMismatchError(f"user state has {len(bs_u.status)} slots, schema has {self.n_slots}")
        vec = np.zeros(self.user_state_dim)
        for i, status in enumerate(bs_u.status):
            vec[i * N_STATUS + status] = 1.0
        return vec

    def goal(self, goal: UserGoal) -> np.ndarray:
        tokens = list(goal.targets.values()) + [revised for revised, _ in goal.update_schedule.values()]
        return self.tokens(tokens)

    def confirm_match(self, bs_u: UserStateVector, goal: UserGoal, sys_utt: Utterance) -> np.ndarray:
        """
        Goal-dependent extension of the Likert user state: [no value shown,
        shown value is what the user means, shown value is wrong]
        """
        vec = np.zeros(N_CONFIRM_MATCH)
        if sys_utt.action != SystemAction.CONFIRM.value or not sys_utt.value_tokens:
            vec[0] = 1.0
            return vec
        matches = True
        for token in sys_utt.value_tokens:
            slot = self.schema.token_slot(token)
            if token != goal.intended_value(slot, slot in bs_u.fired):
                matches = False
        vec[1 if matches else 2] = 1.0
        return vec

    def dst_input(self, prev_bs: BeliefState, prev_sys_utt: Utterance, user_utt: Utterance) -> np.ndarray:
        self.schema.check_utterance(prev_sys_utt)
        self.schema.check_utterance(user_utt)
        return np.concatenate([self.utterance(prev_sys_utt), self.utterance(user_utt), self.belief(prev_bs)])

    def nlu_input(self, goal: UserGoal, sys_utt: Utterance) -> np.ndarray:
        return np.concatenate([self.goal(goal), self.utterance(sys_utt)])

    def system_policy_input(
            self,
            prev_system_action: str,
            bs: BeliefState,
            context: np.ndarray,
            q: QueryFeature,
    ) -> np.ndarray:
        return np.concatenate([
            self.action(Speaker.SYSTEM.value, prev_system_action),
            self.belief(bs),
            np.asarray(context, dtype=np.float64),
            self.query(q),
        ])

    def user_policy_input(
            self,
            prev_user_action: Optional[str],
            perceived_action: str,
            perceived_slot: Optional[str],
            bs_u: UserStateVector,
            confirm_match: np.ndarray,
    ) -> np.ndarray:
        return np.concatenate([
            self.action(Speaker.USER.value, prev_user_action, with_none=True),
            self.action(Speaker.SYSTEM.value, perceived_action),
            self.slot(perceived_slot),
            self.user_state(bs_u),
            confirm_match,
        ])
