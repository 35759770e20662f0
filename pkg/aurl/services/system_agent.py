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
from aurl.core.nnet import GradientTape, Net, OptimizerState, apply_gradients, forward, load_net, save_net
from aurl.schemas.config import NetConfig
from aurl.schemas.constants import SLOT_BEARING_SYSTEM_ACTIONS, DecodeMode, Speaker, SystemAction
from aurl.schemas.models import Schema
from aurl.schemas.types import (
    BeliefState,
    DstTransition,
    PolicyTransition,
    QueryFeature,
    SystemDecision,
    Utterance,
)
from aurl.utils.errors import CheckpointError, TrainingError
from aurl.utils.logger import logger

USER_ACTION_HEAD = "user_action"
DP_HEADS = ("action", "slot")


def slot_head_name(i: int) -> str:
    return f"slot_{i}"


# Slot operations: 0 keep, 1..V set value V-1, V+1 clear
def op_keep() -> int:
    return 0


def op_set(value_index: int) -> int:
    return 1 + value_index


def op_clear(vocab_size: int) -> int:
    return vocab_size + 1


def apply_slot_op(value: Optional[str], op: int, vocab: Sequence[str]) -> Optional[str]:
    if op == 0:
        return value
    if op == len(vocab) + 1:
        return None
    return vocab[op - 1]


def system_utterance(decision: SystemDecision, bs: BeliefState, turn: int) -> Utterance:
    """confirm shows the believed value of its slot; nothing else carries values"""
    tokens = ()
    if decision.action == SystemAction.CONFIRM.value and decision.slot is not None:
        value = bs.get(decision.slot)
        tokens = (value,) if value is not None else ()
    return Utterance(Speaker.SYSTEM.value, decision.action, decision.slot, tokens, turn)


@dataclass
class DstOutput:
    belief: BeliefState
    predicted_user_action: str
    context: np.ndarray
    features: np.ndarray
    slot_logits: List[np.ndarray]
    user_action_logits: np.ndarray


class SystemAgent:
    """Dialog system: operation-based DST, policy with action and slot heads, critic"""

    def __init__(
            self,
            schema: Schema,
            encoder: FeatureEncoder,
            dst: HeadedNet,
            policy: HeadedNet,
            critic: Net,
            net_config: NetConfig,
    ):
        self.schema = schema
        self.encoder = encoder
        self.dst = dst
        self.policy = policy
        self.critic = critic
        self.net_config = net_config
        self._slot_bearing = np.array([a in SLOT_BEARING_SYSTEM_ACTIONS for a in schema.system_actions])
        self.use_learning_rate(net_config.sl_learning_rate)

    @classmethod
    def initialize(
            cls,
            schema: Schema,
            encoder: FeatureEncoder,
            net_config: NetConfig,
            rng: np.random.Generator,
    ) -> "SystemAgent":
        w, depth = net_config.hidden_width, net_config.hidden_layers
        dst_heads = {slot_head_name(i): len(schema.value_vocab[slot]) + 2 for i, slot in enumerate(schema.slots)}
        dst_heads[USER_ACTION_HEAD] = encoder.n_user_actions
        dst = HeadedNet.initialize(encoder.dst_input_dim, dst_heads, rng, w, depth)
        policy_dim = encoder.system_policy_dim(w)
        policy = HeadedNet.initialize(
            policy_dim, {"action": encoder.n_system_actions, "slot": encoder.slot_dim}, rng, w, depth,
        )
        critic = Net.initialize((policy_dim,) + (w,) * depth + (1,), rng, zero_output=True)
        return cls(schema, encoder, dst, policy, critic, net_config)

    def use_learning_rate(self, learning_rate: float) -> None:
        clip = self.net_config.clip_norm
        self.dst_opt = HeadedOptimizer(self.dst, learning_rate, clip)
        self.policy_opt = HeadedOptimizer(self.policy, learning_rate, clip)
        self.critic_opt = OptimizerState.for_net(self.critic, learning_rate, clip)

    @property
    def context_dim(self) -> int:
        return self.dst.context_dim

    @property
    def slot_heads(self) -> List[str]:
        return [slot_head_name(i) for i in range(self.schema.n_slots)]

    # Inference
    def dst_step(self, prev_bs: BeliefState, prev_sys_utt: Utterance, user_utt: Utterance) -> DstOutput:
        features = self.encoder.dst_input(prev_bs, prev_sys_utt, user_utt)
        context, logits, _ = self.dst.forward(features)
        values = {}
        slot_logits = []
        for i, slot in enumerate(self.schema.slots):
            head = logits[slot_head_name(i)]
            slot_logits.append(head)
            values[slot] = apply_slot_op(prev_bs.get(slot), int(np.argmax(head)), self.schema.value_vocab[slot])
        user_logits = logits[USER_ACTION_HEAD]
        return DstOutput(
            belief=BeliefState(values),
            predicted_user_action=self.schema.user_actions[int(np.argmax(user_logits))],
            context=context,
            features=features,
            slot_logits=slot_logits,
            user_action_logits=user_logits,
        )

    def policy_input(
            self,
            prev_system_action: str,
            bs: BeliefState,
            context: np.ndarray,
            q: QueryFeature,
    ) -> np.ndarray:
        # the context is a detached copy, policy gradients never reach the DST
        return self.encoder.system_policy_input(prev_system_action, bs, np.array(context, copy=True), q)

    def dp_step(
            self,
            policy_input: np.ndarray,
            mode: DecodeMode,
            rng: Optional[np.random.Generator] = None,
    ) -> SystemDecision:
        _, logits, _ = self.policy.forward(policy_input)
        action_index, logp_action = sample_or_argmax(logits["action"], mode, rng)
        action = self.schema.system_actions[action_index]
        if self._slot_bearing[action_index]:
            mask = np.zeros(self.encoder.slot_dim, dtype=bool)
            mask[:self.schema.n_slots] = True
            slot_index, logp_slot = sample_or_argmax(logits["slot"], mode, rng, mask)
            slot = self.schema.slots[slot_index]
        else:
            slot_index, logp_slot, slot = self.schema.n_slots, 0.0, None
        return SystemDecision(action, slot, action_index, slot_index, logp_action, logp_slot)

    def value(self, policy_input: np.ndarray) -> float:
        return float(forward(self.critic, policy_input)[0])

    def predict_ops(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Argmax slot operations (B, n_slots) and user actions (B,) for encoded DST inputs"""
        _, logits, _ = self.dst.forward(np.atleast_2d(features))
        ops = np.stack([np.argmax(logits[name], axis=1) for name in self.slot_heads], axis=1)
        return ops, np.argmax(logits[USER_ACTION_HEAD], axis=1)

    # Training
    def dst_loss_and_grads(self, batch: Sequence[DstTransition]) -> Tuple[float, Dict[str, GradientTape]]:
        """Per-slot cross-entropies plus user-action cross-entropy, averaged over the batch"""
        if not batch:
            raise TrainingError("empty DST batch")
        features = np.stack([t.features for t in batch])
        labels = {name: np.array([t.slot_ops[i] for t in batch], dtype=np.int64)
                  for i, name in enumerate(self.slot_heads)}
        labels[USER_ACTION_HEAD] = np.array([t.user_action for t in batch], dtype=np.int64)
        return classification_gradients(self.dst, features, labels)

    def dst_supervised_update(self, batch: Sequence[DstTransition]) -> float:
        loss, tapes = self.dst_loss_and_grads(batch)
        if not np.isfinite(loss):
            raise TrainingError("non-finite DST loss", data={"batch": len(batch)})
        self.dst_opt.step(self.dst, tapes)
        return loss

    def dp_supervised_update(self, features: np.ndarray, actions: np.ndarray, slots: np.ndarray) -> float:
        masks = slot_masks(self._slot_bearing[actions], self.schema.n_slots)
        loss, tapes = classification_gradients(
            self.policy, features, {"action": actions, "slot": slots}, masks={"slot": masks},
        )
        self.policy_opt.step(self.policy, tapes)
        return loss

    def a2c_update(self, transitions: Sequence[PolicyTransition], gamma: float) -> Dict[str, float]:
        batch = make_batch(transitions)
        critic_loss, critic_tape, advantages = critic_gradients(self.critic, batch, gamma)
        policy_loss, tapes = policy_gradients(
            self.policy, batch, advantages, self._slot_bearing[batch.actions], self.net_config.entropy_coef,
        )
        if not (np.isfinite(critic_loss) and np.isfinite(policy_loss)):
            raise TrainingError("non-finite actor-critic loss",
                                data={"critic_loss": critic_loss, "policy_loss": policy_loss})
        apply_gradients(self.critic, critic_tape, self.critic_opt)
        self.policy_opt.step(self.policy, tapes)
        return {"critic_loss": critic_loss, "policy_loss": policy_loss}

    # Checkpoints
    def save(self, directory: Path) -> List[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = self.dst.save(directory, "dst") + self.policy.save(directory, "dp")
        paths.append(save_net(self.critic, directory / "critic.bin"))
        logger.debug(f"💾 system_agent.py: saved {len(paths)} nets to {directory}")
        return paths

    @classmethod
    def load(cls, directory: Path, schema: Schema, encoder: FeatureEncoder, net_config: NetConfig) -> "SystemAgent":
        directory = Path(directory)
        head_names = [slot_head_name(i) for i in range(schema.n_slots)] + [USER_ACTION_HEAD]
        dst = HeadedNet.load(directory, "dst", head_names)
        policy = HeadedNet.load(directory, "dp", DP_HEADS)
        critic = load_net(directory / "critic.bin")
        if dst.trunk.input_dim != encoder.dst_input_dim:
            raise CheckpointError(f"checkpoint in {directory} was built for a different schema")
        return cls(schema, encoder, dst, policy, critic, net_config)
