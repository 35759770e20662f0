from __future__ import annotations

from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, model_validator

from aurl.schemas.constants import (
    Level,
    Outcome,
    SLOT_BEARING_SYSTEM_ACTIONS,
    SLOT_BEARING_USER_ACTIONS,
    Speaker,
)
from aurl.schemas.types import (
    BeliefState,
    SystemDecision,
    Utterance,
    UserDecision,
    UserStateVector,
)
from aurl.utils.errors import SchemaMismatchError


class BaseRecord(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)


def _duplicates(items: List[str]) -> List[str]:
    seen, dupes = set(), []
    for item in items:
        if item in seen:
            dupes.append(item)
        seen.add(item)
    return dupes


# Environment Models
class Schema(BaseRecord):
    slots: List[str]
    value_vocab: Dict[str, List[str]]
    system_actions: List[str]
    user_actions: List[str]
    max_turns: int

    _slot_index: Dict[str, int] = PrivateAttr(default_factory=dict)
    _value_index: Dict[str, int] = PrivateAttr(default_factory=dict)
    _token_index: Dict[str, int] = PrivateAttr(default_factory=dict)
    _token_slot: Dict[str, str] = PrivateAttr(default_factory=dict)
    _system_index: Dict[str, int] = PrivateAttr(default_factory=dict)
    _user_index: Dict[str, int] = PrivateAttr(default_factory=dict)

    @model_validator(mode="after")
    def _check_consistency(self) -> "Schema":
        if _duplicates(self.slots):
            raise ValueError(f"duplicate slot identifiers: {_duplicates(self.slots)}")
        if set(self.value_vocab) != set(self.slots):
            raise ValueError("value_vocab keys must equal the slot list")
        for slot, vocab in self.value_vocab.items():
            if not vocab:
                raise ValueError(f"empty vocabulary for slot {slot}")
            if _duplicates(vocab):
                raise ValueError(f"duplicate values in slot {slot}")
        all_tokens = [token for slot in self.slots for token in self.value_vocab[slot]]
        if _duplicates(all_tokens):
            raise ValueError("value tokens must be unique across slots")
        for name, actions in (("system", self.system_actions), ("user", self.user_actions)):
            if _duplicates(actions):
                raise ValueError(f"duplicate {name} actions: {_duplicates(actions)}")
        if self.max_turns < 2:
            raise ValueError("max_turns must be >= 2")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._slot_index = {slot: i for i, slot in enumerate(self.slots)}
        self._value_index = {}
        self._token_index = {}
        self._token_slot = {}
        for slot in self.slots:
            for i, token in enumerate(self.value_vocab[slot]):
                self._value_index[token] = i
                self._token_index[token] = len(self._token_index)
                self._token_slot[token] = slot
        self._system_index = {a: i for i, a in enumerate(self.system_actions)}
        self._user_index = {a: i for i, a in enumerate(self.user_actions)}

    @property
    def n_slots(self) -> int:
        return len(self.slots)

    @property
    def vocab_size(self) -> int:
        return max(len(v) for v in self.value_vocab.values())

    @property
    def n_tokens(self) -> int:
        return len(self._token_index)

    def slot_index(self, slot: str) -> int:
        try:
            return self._slot_index[slot]
        except KeyError:
            raise SchemaMismatchError(f"unknown slot {slot!r}", data={"slot": slot})

    def value_index(self, token: str) -> int:
        try:
            return self._value_index[token]
        except KeyError:
            raise SchemaMismatchError(f"unknown value token {token!r}", data={"token": token})

    def token_index(self, token: str) -> int:
        try:
            return self._token_index[token]
        except KeyError:
            raise SchemaMismatchError(f"unknown value token {token!r}", data={"token": token})

    def token_slot(self, token: str) -> str:
        try:
            return self._token_slot[token]
        except KeyError:
            raise SchemaMismatchError(f"unknown value token {token!r}", data={"token": token})

    def system_action_index(self, action: str) -> int:
        try:
            return self._system_index[action]
        except KeyError:
            raise SchemaMismatchError(f"unknown system action {action!r}", data={"action": action})

    def user_action_index(self, action: str) -> int:
        try:
            return self._user_index[action]
        except KeyError:
            raise SchemaMismatchError(f"unknown user action {action!r}", data={"action": action})

    def neighbor(self, token: str) -> str:
        """Designated confusable value: next index in the slot vocabulary, wrapping"""
        vocab = self.value_vocab[self.token_slot(token)]
        return vocab[(self.value_index(token) + 1) % len(vocab)]

    def has_slot_argument(self, speaker: str, action: str) -> bool:
        if speaker == Speaker.SYSTEM.value:
            return action in SLOT_BEARING_SYSTEM_ACTIONS
        return action in SLOT_BEARING_USER_ACTIONS

    def check_utterance(self, utterance: Utterance) -> None:
        """Raise if the utterance does not belong to this schema"""
        if utterance.speaker == Speaker.SYSTEM.value:
            self.system_action_index(utterance.action)
        elif utterance.speaker == Speaker.USER.value:
            self.user_action_index(utterance.action)
        else:
            raise SchemaMismatchError(f"unknown speaker {utterance.speaker!r}")
        if utterance.slot is not None:
            self.slot_index(utterance.slot)
        for token in utterance.value_tokens:
            self.token_index(token)

    def check_belief(self, bs: BeliefState) -> None:
        if set(bs.values) != set(self.slots):
            raise SchemaMismatchError("belief state keys differ from schema slots")
        for slot, value in bs.values.items():
            if value is not None and value not in self.value_vocab[slot]:
                raise SchemaMismatchError(f"value {value!r} not in vocabulary of {slot}")


class UserGoal(BaseRecord):
    targets: Dict[str, str]
    # slot -> (revised value, earliest turn)
    update_schedule: Dict[str, Tuple[str, int]] = Field(default_factory=dict)

    @property
    def final_targets(self) -> Dict[str, str]:
        final = dict(self.targets)
        for slot, (revised, _) in self.update_schedule.items():
            final[slot] = revised
        return final

    def intended_value(self, slot: str, fired: bool) -> str:
        """Value the user currently means for a slot"""
        if fired and slot in self.update_schedule:
            return self.update_schedule[slot][0]
        return self.targets[slot]

    def due(self, slot: str, turn: int) -> bool:
        return slot in self.update_schedule and turn >= self.update_schedule[slot][1]


class EntityTable(BaseRecord):
    entities: List[Dict[str, str]]


class Environment(BaseRecord):
    """Schema plus its generated entity table, persisted next to checkpoints"""
    schema_: Schema = Field(alias="schema")
    db: EntityTable

    model_config = ConfigDict(populate_by_name=True)


# Episode Models
class TurnRecord(BaseRecord):
    turn: int
    system_prompt: Utterance
    user_clean: Utterance
    user_noisy: Utterance
    user_decision: UserDecision
    user_state: UserStateVector
    belief: BeliefState
    oracle: BeliefState
    predicted_user_action: str
    system_decision: SystemDecision
    system_utterance: Utterance
    system_reward: float
    user_reward: float
    system_value: Optional[float] = None
    user_value: Optional[float] = None
    reward_breakdown: Dict[str, float] = Field(default_factory=dict)


class EpisodeLog(BaseRecord):
    episode: int
    user_id: int
    goal: UserGoal
    turns: List[TurnRecord] = Field(default_factory=list)
    outcome: Outcome = Outcome.ONGOING
    turn_count: int = 0
    system_return: float = 0.0
    user_return: float = 0.0
    fallbacks: int = 0

    @property
    def dst_correct_turns(self) -> int:
        return sum(1 for t in self.turns if t.belief == t.oracle)


class CorpusTurn(BaseRecord):
    turn: int
    system_prompt: Utterance
    user_state: UserStateVector
    user_prev_action: Optional[str] = None
    user_action: str
    user_slot: Optional[str] = None
    user_clean: Utterance
    user_noisy: Utterance
    prev_belief: BeliefState
    belief: BeliefState
    oracle: BeliefState
    system_action: str
    system_slot: Optional[str] = None
    system_utterance: Utterance


class CorpusDialog(BaseRecord):
    goal: UserGoal
    turns: List[CorpusTurn] = Field(default_factory=list)
    outcome: Outcome = Outcome.ONGOING


# Metric Models
class Metrics(BaseRecord):
    dialog_succ: float
    avg_turn: float
    avg_reward: float
    dst_acc: float
    avg_time: float = 0.0
    n_dialogs: int = 0


class MetricsRow(BaseRecord):
    epoch: int
    mode: str
    dialog_succ: float
    avg_turn: float
    avg_reward: float
    dst_acc: float
    wall_ms_per_turn: Optional[float] = None


class DifficultyTable(BaseRecord):
    accuracy: Dict[str, float]
    levels: Dict[str, Level]
    counts: Dict[str, int] = Field(default_factory=dict)


class UpdateEvent(BaseRecord):
    epoch: int
    buffer: str
    size: int
    update_type: str
    loss: Optional[float] = None


class PhaseLog(BaseRecord):
    phase: int
    level: Optional[Level] = None
    transitions: int
    steps: int
    loss: Optional[float] = None


# Acceptance Models
class SeedOutcome(BaseRecord):
    seed: int
    noiseless_joint_acc: float
    inform_norm_acc: Optional[float] = None
    update_sub_acc: Optional[float] = None
    easy_share: Optional[float] = None
    dialog_succ: Dict[str, float] = Field(default_factory=dict)


class CriterionVerdict(BaseRecord):
    name: str
    description: str
    holds: int
    seeds: int
    required: int

    @property
    def passed(self) -> bool:
        return self.holds >= self.required


class AcceptanceReport(BaseRecord):
    outcomes: List[SeedOutcome]
    verdicts: List[CriterionVerdict]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)
