"""
Per-turn rewards for both roles. The terminal reward is shared; the length
unit is charged to the system only.
"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Optional, Tuple

from aurl.schemas.config import RewardConfig
from aurl.schemas.constants import INFORM_FAMILY, Outcome, SystemAction, UserAction
from aurl.schemas.types import BeliefState, Utterance


@dataclass(frozen=True)
class TurnContext:
    system_action: str
    system_slot: Optional[str]
    prev_belief: BeliefState
    belief: BeliefState
    # true (clean) user move of this turn and the one before it
    user_utterance: Utterance
    prev_user_utterance: Optional[Utterance]
    perceived_user_action: Optional[str]
    # true system move the user answered
    prompt_action: str
    outcome: Outcome
    final_targets: Dict[str, str] = field(default_factory=dict)
    # slots the user affirmed since they were last informed or denied
    affirmed_slots: FrozenSet[str] = frozenset()
    user_fallback: bool = False

    @property
    def is_terminal(self) -> bool:
        return self.outcome != Outcome.ONGOING


def terminal_reward(outcome: Outcome, cfg: RewardConfig) -> float:
    if outcome == Outcome.SUCCESS:
        return cfg.success_reward
    if outcome == Outcome.FAILURE:
        return cfg.failure_penalty
    return 0.0


def system_reward_breakdown(ctx: TurnContext, cfg: RewardConfig) -> Dict[str, float]:
    parts = {}
    if ctx.is_terminal:
        parts["terminal"] = terminal_reward(ctx.outcome, cfg)
    if ctx.outcome != Outcome.SUCCESS:
        parts["length"] = cfg.system_penalty_unit

    action, slot = ctx.system_action, ctx.system_slot
    if action == SystemAction.CONFIRM.value and cfg.penalize_confirm_empty and ctx.belief.get(slot) is None:
        parts["mismatch"] = cfg.system_penalty_unit
    elif (action == SystemAction.REQUEST.value and cfg.penalize_request_confirmed
          and slot in ctx.affirmed_slots
          and ctx.belief.get(slot) is not None
          and ctx.belief.get(slot) == ctx.final_targets.get(slot)):
        parts["mismatch"] = cfg.system_penalty_unit

    if (action == SystemAction.INFORM_RESULT.value and cfg.penalize_result_after_deny
            and ctx.user_utterance.action == UserAction.DENY.value):
        parts["inappropriate"] = cfg.system_penalty_unit
    elif action == SystemAction.BYE.value and cfg.penalize_early_bye and not ctx.belief.is_complete:
        parts["inappropriate"] = cfg.system_penalty_unit
    return parts


def system_reward(ctx: TurnContext, cfg: RewardConfig) -> float:
    return _total(system_reward_breakdown(ctx, cfg))


def _is_repeat_inform(ctx: TurnContext) -> bool:
    current, previous = ctx.user_utterance, ctx.prev_user_utterance
    if previous is None or current.action not in INFORM_FAMILY:
        return False
    if ctx.prompt_action == SystemAction.REPEAT.value:
        return False
    return (current.action, current.slot, current.value_tokens) == \
        (previous.action, previous.slot, previous.value_tokens)


def user_reward_breakdown(ctx: TurnContext, cfg: RewardConfig) -> Dict[str, float]:
    parts = {}
    if ctx.is_terminal:
        parts["terminal"] = terminal_reward(ctx.outcome, cfg)
    if cfg.penalize_repeat_inform and _is_repeat_inform(ctx):
        parts["repeat_inform"] = cfg.user_penalty_unit
    if (cfg.penalize_unprompted_affirm and ctx.user_utterance.action == UserAction.AFFIRM.value
            and ctx.prompt_action != SystemAction.CONFIRM.value):
        parts["unprompted_affirm"] = cfg.user_penalty_unit
    if cfg.penalize_silence_fallback and ctx.user_fallback:
        parts["silence_fallback"] = cfg.user_penalty_unit
    return parts


def user_reward(ctx: TurnContext, cfg: RewardConfig) -> float:
    return _total(user_reward_breakdown(ctx, cfg))


def turn_rewards(ctx: TurnContext, cfg: RewardConfig) -> Tuple[float, float, Dict[str, float]]:
    """(system reward, user reward, flat breakdown for transcripts)"""
    sys_parts = system_reward_breakdown(ctx, cfg)
    usr_parts = user_reward_breakdown(ctx, cfg)
    breakdown = {f"system.{k}": v for k, v in sys_parts.items()}
    breakdown.update({f"user.{k}": v for k, v in usr_parts.items()})
    return _total(sys_parts), _total(usr_parts), breakdown


def _total(parts: Dict[str, float]) -> float:
    # summed in key order
    return float(sum(parts[k] for k in sorted(parts)))
