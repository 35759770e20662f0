from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from aurl.core.encoding import FeatureEncoder
from aurl.core.heads import (
    HeadedNet,
    HeadedOptimizer,
    classification_gradients,
    critic_gradients,
    make_batch,
    policy_gradients,
    sample_or_argmax,
    slot_masks,
)
from aurl.core.nnet import Net, OptimizerState, apply_gradients, forward, load_net, save_net
from aurl.schemas.config import NetConfig
from aurl.schemas.constants import (
    SLOT_BEARING_SYSTEM_ACTIONS,
    SLOT_BEARING_USER_ACTIONS,
    DecodeMode,
    Speaker,
    UserAction,
    UserStatus,
)
from aurl.schemas.models import Schema, UserGoal
from aurl.schemas.types import NluTransition, PolicyTransition, UserDecision, UserStateVector, Utterance
from aurl.utils.errors import SchemaMismatchError
from aurl.utils.logger import logger

NLU_HEADS = ("action", "slot")
DP_HEADS = ("action", "slot")


# State automaton
def _informed_slots(decision: UserDecision, utterance: Optional[Utterance], schema: Schema) -> List[str]:
    if decision.action not in SLOT_BEARING_USER_ACTIONS or decision.slot is None:
        return []
    if utterance is not None and utterance.value_tokens:
        return list(dict.fromkeys(schema.token_slot(t) for t in utterance.value_tokens))
    return [decision.slot]


def apply_user_decision(
        bs_u: UserStateVector,
        decision: UserDecision,
        schema: Schema,
        utterance: Optional[Utterance] = None,
) -> UserStateVector:
    """Informing a slot (any inform-family action) marks it provided: 0 -> 1 and 2 -> 1"""
    for slot in _informed_slots(decision, utterance, schema):
        bs_u = bs_u.with_status(schema.slot_index(slot), UserStatus.PROVIDED)
    return bs_u


def fire_due_updates(bs_u: UserStateVector, goal: UserGoal, turn: int, schema: Schema) -> UserStateVector:
    """Scheduled revisions fire once, on provided slots, at or after their earliest turn: 1 -> 2"""
    for slot in goal.update_schedule:
        i = schema.slot_index(slot)
        if bs_u.status[i] == UserStatus.PROVIDED and slot not in bs_u.fired and goal.due(slot, turn):
            bs_u = bs_u.with_status(i, UserStatus.NEED_UPDATE).with_fired(slot)
    return bs_u


def update_user_state(
        bs_u: UserStateVector,
        decision: UserDecision,
        goal: UserGoal,
        turn: int,
        schema: Schema,
        utterance: Optional[Utterance] = None,
) -> UserStateVector:
    if len(bs_u.status) != schema.n_slots:
        raise SchemaMismatchError("user state length differs from the slot count")
    return fire_due_updates(apply_user_decision(bs_u, decision, schema, utterance), goal, turn, schema)


def _silence(schema: Schema, turn: int, sampled: UserDecision) -> Tuple[Utterance, UserDecision]:
    action = UserAction.SILENCE.value
    decision = UserDecision(
        action=action,
        slot=None,
        action_index=schema.user_action_index(action),
        slot_index=schema.n_slots,
        logp_action=sampled.logp_action,
        logp_slot=sampled.logp_slot,
        fallback=True,
    )
    return Utterance(Speaker.USER.value, action, None, (), turn), decision


def second_slot(bs_u: UserStateVector, slot: str, schema: Schema) -> Optional[str]:
    """Companion slot for inform_multi: next slot (cyclic) not already provided, else simply the next one"""
    if schema.n_slots < 2:
        return None
    start = schema.slot_index(slot)
    order = [schema.slots[(start + k) % schema.n_slots] for k in range(1, schema.n_slots)]
    for candidate in order:
        if bs_u.status[schema.slot_index(candidate)] != UserStatus.PROVIDED:
            return candidate
    return order[0]


def verbalize(
        decision: UserDecision,
        bs_u: UserStateVector,
        goal: UserGoal,
        turn: int,
        schema: Schema,
) -> Tuple[Utterance, UserDecision]:
    """
    Surface form of a user decision and the decision actually carried out.
    Inapplicable decisions become `silence` with `fallback` set.
    """
    action, slot = decision.action, decision.slot

    def value(s: str) -> str:
        return goal.intended_value(s, s in bs_u.fired)

    if action in SLOT_BEARING_USER_ACTIONS:
        if slot is None:
            return _silence(schema, turn, decision)
        status = bs_u.status[schema.slot_index(slot)]
        if action == UserAction.UPDATE_SUB.value and status != UserStatus.NEED_UPDATE:
            return _silence(schema, turn, decision)
        if action == UserAction.RESTART_SLOT.value and status == UserStatus.NOT_PROVIDED:
            return _silence(schema, turn, decision)
        if action == UserAction.INFORM_MULTI.value:
            other = second_slot(bs_u, slot, schema)
            if other is None:
                return _silence(schema, turn, decision)
            tokens = (value(slot), value(other))
        else:
            tokens = (value(slot),)
        return Utterance(Speaker.USER.value, action, slot, tokens, turn), decision

    return Utterance(Speaker.USER.value, action, None, (), turn), decision


def make_user_decision(schema: Schema, action: str, slot: Optional[str]) -> UserDecision:
    return UserDecision(
        action=action,
        slot=slot,
        action_index=schema.user_action_index(action),
        slot_index=schema.n_slots if slot is None else schema.slot_index(slot),
    )


@dataclass
class NluOutput:
    action: str
    slot: Optional[str]
    features: np.ndarray
    action_logits: np.ndarray
    slot_logits: np.ndarray


class UserAgent:
    """
    Trainable user simulator: NLU, policy and critic, each with its own Adam state.
    Several instances with independent parameters serve multi-user training.
    """

    def __init__(
            self,
            schema: Schema,
            encoder: FeatureEncoder,
            nlu: HeadedNet,
            policy: HeadedNet,
            critic: Net,
            net_config: NetConfig,
            user_id: int = 0,
    ):
        self.schema = schema
        self.encoder = encoder
        self.nlu = nlu
        self.policy = policy
        self.critic = critic
        self.net_config = net_config
        self.user_id = user_id
        self._slot_bearing = np.array([a in SLOT_BEARING_USER_ACTIONS for a in schema.user_actions])
        self._system_slot_bearing = np.array([a in SLOT_BEARING_SYSTEM_ACTIONS for a in schema.system_actions])
        self.use_learning_rate(net_config.sl_learning_rate)

    @classmethod
    def initialize(
            cls,
            schema: Schema,
            encoder: FeatureEncoder,
            net_config: NetConfig,
            rng: np.random.Generator,
            user_id: int = 0,
    ) -> "UserAgent":
        w, depth = net_config.hidden_width, net_config.hidden_layers
        nlu = HeadedNet.initialize(
            encoder.nlu_input_dim,
            {"action": encoder.n_system_actions, "slot": encoder.slot_dim},
            rng, w, depth,
        )
        policy = HeadedNet.initialize(
            encoder.user_policy_dim,
            {"action": encoder.n_user_actions, "slot": encoder.slot_dim},
            rng, w, depth,
        )
        critic = Net.initialize((encoder.user_policy_dim,) + (w,) * depth + (1,), rng, zero_output=True)
        return cls(schema, encoder, nlu, policy, critic, net_config, user_id)

    def use_learning_rate(self, learning_rate: float) -> None:
        """Fresh optimizer states (used when switching from supervised to RL training)"""
        clip = self.net_config.clip_norm
        self.nlu_opt = HeadedOptimizer(self.nlu, learning_rate, clip)
        self.policy_opt = HeadedOptimizer(self.policy, learning_rate, clip)
        self.critic_opt = OptimizerState.for_net(self.critic, learning_rate, clip)

    def clone(self, user_id: int) -> "UserAgent":
        return UserAgent(
            self.schema, self.encoder, self.nlu.copy(), self.policy.copy(), self.critic.copy(),
            self.net_config, user_id,
        )

    # Inference
    def nlu_step(self, goal: UserGoal, system_utt: Utterance) -> NluOutput:
        if system_utt.speaker != Speaker.SYSTEM.value:
            raise SchemaMismatchError("NLU input must be a system utterance")
        features = self.encoder.nlu_input(goal, system_utt)
        _, logits, _ = self.nlu.forward(features)
        action_index = int(np.argmax(logits["action"]))
        action = self.schema.system_actions[action_index]
        slot = None
        if action in SLOT_BEARING_SYSTEM_ACTIONS:
            slot_index = int(np.argmax(logits["slot"][:self.schema.n_slots]))
            slot = self.schema.slots[slot_index]
        return NluOutput(action, slot, features, logits["action"], logits["slot"])

    def dp_step(
            self,
            policy_input: np.ndarray,
            mode: DecodeMode,
            rng: Optional[np.random.Generator] = None,
    ) -> UserDecision:
        _, logits, _ = self.policy.forward(policy_input)
        action_index, logp_action = sample_or_argmax(logits["action"], mode, rng)
        action = self.schema.user_actions[action_index]
        if self._slot_bearing[action_index]:
            mask = np.zeros(self.encoder.slot_dim, dtype=bool)
            mask[:self.schema.n_slots] = True
            slot_index, logp_slot = sample_or_argmax(logits["slot"], mode, rng, mask)
            slot = self.schema.slots[slot_index]
        else:
            slot_index, logp_slot, slot = self.schema.n_slots, 0.0, None
        return UserDecision(action, slot, action_index, slot_index, logp_action, logp_slot)

    def value(self, policy_input: np.ndarray) -> float:
        return float(forward(self.critic, policy_input)[0])

    # Training
    def nlu_update(self, transitions: Sequence[NluTransition]) -> float:
        features = np.stack([t.features for t in transitions])
        actions = np.array([t.action for t in transitions], dtype=np.int64)
        slots = np.array([t.slot for t in transitions], dtype=np.int64)
        loss, tapes = classification_gradients(self.nlu, features, {"action": actions, "slot": slots})
        self.nlu_opt.step(self.nlu, tapes)
        return loss

    def dp_supervised_update(self, features: np.ndarray, actions: np.ndarray, slots: np.ndarray) -> float:
        masks = slot_masks(self._slot_bearing[actions], self.schema.n_slots)
        loss, tapes = classification_gradients(
            self.policy, features, {"action": actions, "slot": slots}, masks={"slot": masks},
        )
        self.policy_opt.step(self.policy, tapes)
        return loss

    def a2c_update(self, transitions: Sequence[PolicyTransition], gamma: float) -> Dict[str, float]:
        """One critic step and one policy step over the given transitions"""
        batch = make_batch(transitions)
        critic_loss, critic_tape, advantages = critic_gradients(self.critic, batch, gamma)
        policy_loss, tapes = policy_gradients(
            self.policy, batch, advantages, self._slot_bearing[batch.actions], self.net_config.entropy_coef,
        )
        apply_gradients(self.critic, critic_tape, self.critic_opt)
        self.policy_opt.step(self.policy, tapes)
        return {"critic_loss": critic_loss, "policy_loss": policy_loss}

    # Checkpoints
    def save(self, directory: Path) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = self.nlu.save(directory, "nlu") + self.policy.save(directory, "dp")
        paths.append(save_net(self.critic, directory / "critic.bin"))
        logger.debug(f"💾 user_agent.py: saved user {self.user_id} to {directory}")
        return paths

    @classmethod
    def load(
            cls,
            directory: Path,
            schema: Schema,
            encoder: FeatureEncoder,
            net_config: NetConfig,
            user_id: int = 0,
    ) -> "UserAgent":
        directory = Path(directory)
        nlu = HeadedNet.load(directory, "nlu", NLU_HEADS)
        policy = HeadedNet.load(directory, "dp", DP_HEADS)
        critic = load_net(directory / "critic.bin")
        return cls(schema, encoder, nlu, policy, critic, net_config, user_id)
