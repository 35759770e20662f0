from dataclasses import dataclass
from typing import Generic, List, TypeVar

from aurl.schemas.config import BufferConfig
from aurl.schemas.constants import BufferName
from aurl.utils.errors import BufferOverflowError
from aurl.utils.logger import logger

T = TypeVar("T")


class ReplayBuffer(Generic[T]):
    """
    Bounded experience pool. Capacity is the drain trigger, not a ring:
    a push at capacity is rejected.
    """

    def __init__(self, name: str, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.name = name
        self.capacity = capacity
        self.entries: List[T] = []
        self.total_pushed = 0

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, item: T) -> None:
        if len(self.entries) >= self.capacity:
            logger.error(f"❌ buffers.py: push into full buffer {self.name} ({self.capacity})")
            raise BufferOverflowError(
                f"buffer {self.name} is full ({self.capacity})",
                data={"buffer": self.name, "capacity": self.capacity},
            )
        self.entries.append(item)
        self.total_pushed += 1

    def is_full(self) -> bool:
        return len(self.entries) == self.capacity

    def drain(self) -> List[T]:
        """All entries in insertion order; the buffer is left empty"""
        drained, self.entries = self.entries, []
        return drained


@dataclass
class ScheduleDecision:
    update_fast_modules: bool
    update_dst: bool


class BufferSet:
    def __init__(self, config: BufferConfig):
        self.config = config
        self.user_dp: ReplayBuffer = ReplayBuffer(BufferName.USER_DP.value, config.user_dp)
        self.user_nlu: ReplayBuffer = ReplayBuffer(BufferName.USER_NLU.value, config.user_nlu)
        self.sys_dp: ReplayBuffer = ReplayBuffer(BufferName.SYS_DP.value, config.sys_dp)
        self.sys_dst: ReplayBuffer = ReplayBuffer(BufferName.SYS_DST.value, config.sys_dst)

    @property
    def small(self) -> List[ReplayBuffer]:
        return [self.sys_dp, self.user_dp, self.user_nlu]

    @property
    def dst_counts_dialogs(self) -> bool:
        return self.config.dst_unit == "dialogs"

    def any_small_full(self) -> bool:
        return any(b.is_full() for b in self.small)


def schedule_check(buffers: BufferSet) -> ScheduleDecision:
    """Fast modules update when all three small buffers are full; the DST when its buffer is"""
    return ScheduleDecision(
        update_fast_modules=all(b.is_full() for b in buffers.small),
        update_dst=buffers.sys_dst.is_full(),
    )
