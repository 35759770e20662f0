from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np

from aurl.schemas.constants import Speaker, UserStatus


@dataclass(frozen=True)
class Utterance:
    """Symbolic surface form: one action token, an optional slot token, value tokens"""
    speaker: str
    action: str
    slot: Optional[str] = None
    value_tokens: Tuple[str, ...] = ()
    turn: int = 0

    def with_values(self, value_tokens: Iterable[str]) -> "Utterance":
        return replace(self, value_tokens=tuple(value_tokens))


@dataclass(frozen=True)
class BeliefState:
    """System belief: slot -> value token or None"""
    values: Dict[str, Optional[str]]

    @classmethod
    def empty(cls, slots: Iterable[str]) -> "BeliefState":
        return cls({slot: None for slot in slots})

    def get(self, slot: str) -> Optional[str]:
        return self.values[slot]

    def with_value(self, slot: str, value: Optional[str]) -> "BeliefState":
        values = dict(self.values)
        values[slot] = value
        return BeliefState(values)

    @property
    def is_complete(self) -> bool:
        return all(value is not None for value in self.values.values())


@dataclass(frozen=True)
class QueryFeature:
    match_count_bucket: int
    filled_fraction: float


@dataclass(frozen=True)
class UserStateVector:
    """Per-slot Likert record (0 not provided, 1 provided, 2 need updated)"""
    status: Tuple[int, ...]
    # slots whose scheduled revision has already been triggered
    fired: FrozenSet[str] = frozenset()

    @classmethod
    def initial(cls, slot_count: int) -> "UserStateVector":
        return cls(tuple(UserStatus.NOT_PROVIDED for _ in range(slot_count)))

    def with_status(self, index: int, value: int) -> "UserStateVector":
        status = list(self.status)
        status[index] = value
        return replace(self, status=tuple(status))

    def with_fired(self, slot: str) -> "UserStateVector":
        return replace(self, fired=self.fired | {slot})


@dataclass(frozen=True)
class SystemDecision:
    action: str
    slot: Optional[str]
    action_index: int
    slot_index: int
    logp_action: float = 0.0
    logp_slot: float = 0.0


@dataclass(frozen=True)
class UserDecision:
    action: str
    slot: Optional[str]
    action_index: int
    slot_index: int
    logp_action: float = 0.0
    logp_slot: float = 0.0
    # set when verbalize had to replace an inapplicable decision
    fallback: bool = False


@dataclass
class DstTransition:
    """One supervised DST example: encoded observation plus gold labels"""
    features: np.ndarray
    slot_ops: Tuple[int, ...]
    user_action: int
    user_action_name: str


@dataclass
class NluTransition:
    features: np.ndarray
    action: int
    slot: int


@dataclass
class PolicyTransition:
    """One actor-critic step for either role"""
    state: np.ndarray
    action: int
    slot: int
    reward: float
    next_state: Optional[np.ndarray]
    terminal: bool


@dataclass
class DialogRecord:
    """A finished dialog's transitions for one small buffer"""
    user_id: int
    transitions: List = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.transitions)
