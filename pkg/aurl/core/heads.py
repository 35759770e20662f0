"""
A shared trunk with named linear heads, and the batched actor-critic and
cross-entropy passes built on it.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from aurl.core.nnet import (
    ForwardCache,
    GradientTape,
    Net,
    OptimizerState,
    apply_gradients,
    backward,
    critic_loss_grad,
    cross_entropy_loss_grad,
    entropy_loss_grad,
    forward,
    forward_cached,
    greedy_choice,
    load_net,
    log_prob_grad,
    log_softmax,
    policy_loss_grad,
    save_net,
    softmax_sample,
)
from aurl.schemas.constants import DecodeMode
from aurl.schemas.types import PolicyTransition
from aurl.utils.errors import TrainingError

TRUNK = "trunk"


def trunk_dims(input_dim: int, hidden_width: int, hidden_layers: int) -> Tuple[int, ...]:
    return (input_dim,) + (hidden_width,) * hidden_layers


@dataclass
class HeadedNet:
    """Trunk (tanh on every layer) whose last hidden activation feeds each linear head"""
    trunk: Net
    heads: Dict[str, Net]

    @classmethod
    def initialize(
            cls,
            input_dim: int,
            head_sizes: Dict[str, int],
            rng: np.random.Generator,
            hidden_width: int,
            hidden_layers: int,
    ) -> "HeadedNet":
        trunk = Net.initialize(trunk_dims(input_dim, hidden_width, hidden_layers), rng, output_activation="tanh")
        heads = {name: Net.initialize((hidden_width, size), rng) for name, size in head_sizes.items()}
        return cls(trunk, heads)

    @property
    def context_dim(self) -> int:
        return self.trunk.output_dim

    def roles(self) -> Dict[str, Net]:
        return {TRUNK: self.trunk, **self.heads}

    def copy(self) -> "HeadedNet":
        return HeadedNet(self.trunk.copy(), {name: net.copy() for name, net in self.heads.items()})

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray], ForwardCache]:
        hidden, cache = forward_cached(self.trunk, x)
        return hidden, {name: forward(net, hidden) for name, net in self.heads.items()}, cache

    def backward(
            self,
            x: np.ndarray,
            hidden: np.ndarray,
            cache: ForwardCache,
            upstream: Dict[str, np.ndarray],
    ) -> Dict[str, GradientTape]:
        """Per-role tapes for the given head-logit gradients; heads absent from `upstream` get zero tapes"""
        tapes = {}
        d_hidden = np.zeros_like(hidden)
        for name, net in self.heads.items():
            if name not in upstream:
                tapes[name] = GradientTape.zeros_like(net)
                continue
            tape = backward(net, hidden, upstream[name])
            d_hidden = d_hidden + tape.input
            tapes[name] = tape
        tapes[TRUNK] = backward(self.trunk, x, d_hidden, cache)
        return tapes

    def save(self, directory: Path, prefix: str) -> List[Path]:
        return [save_net(net, Path(directory) / f"{prefix}_{role}.bin") for role, net in self.roles().items()]

    @classmethod
    def load(cls, directory: Path, prefix: str, head_names: Sequence[str]) -> "HeadedNet":
        directory = Path(directory)
        trunk = load_net(directory / f"{prefix}_{TRUNK}.bin")
        heads = {name: load_net(directory / f"{prefix}_{name}.bin") for name in head_names}
        return cls(trunk, heads)


class HeadedOptimizer:
    """One Adam state per role"""

    def __init__(self, net: HeadedNet, learning_rate: float, clip_norm: float):
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.states = {role: OptimizerState.for_net(n, learning_rate, clip_norm) for role, n in net.roles().items()}

    def step(self, net: HeadedNet, tapes: Dict[str, GradientTape]) -> None:
        roles = net.roles()
        for role, tape in tapes.items():
            apply_gradients(roles[role], tape, self.states[role])


def sample_or_argmax(
        logits: np.ndarray,
        mode: DecodeMode,
        rng: Optional[np.random.Generator],
        mask: Optional[np.ndarray] = None,
) -> Tuple[int, float]:
    if mode == DecodeMode.GREEDY:
        return greedy_choice(logits, mask)
    if rng is None:
        raise TrainingError("sample mode needs a random stream")
    return softmax_sample(logits, rng, mask)


@dataclass
class PolicyBatch:
    states: np.ndarray
    actions: np.ndarray
    slots: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray


def make_batch(transitions: Sequence[PolicyTransition]) -> PolicyBatch:
    if not transitions:
        raise TrainingError("empty policy batch")
    width = transitions[0].state.shape[0]
    next_states = np.zeros((len(transitions), width))
    for i, t in enumerate(transitions):
        if t.next_state is not None and not t.terminal:
            next_states[i] = t.next_state
    return PolicyBatch(
        states=np.stack([t.state for t in transitions]),
        actions=np.array([t.action for t in transitions], dtype=np.int64),
        slots=np.array([t.slot for t in transitions], dtype=np.int64),
        rewards=np.array([t.reward for t in transitions], dtype=np.float64),
        next_states=next_states,
        terminal=np.array([t.terminal for t in transitions], dtype=bool),
    )


def slot_masks(slot_bearing: np.ndarray, n_slots: int) -> np.ndarray:
    """Rows for slot-bearing actions allow only real slots; other rows allow only `none`"""
    masks = np.zeros((slot_bearing.shape[0], n_slots + 1), dtype=bool)
    masks[slot_bearing, :n_slots] = True
    masks[~slot_bearing, n_slots] = True
    return masks


def critic_values(critic: Net, states: np.ndarray) -> np.ndarray:
    return forward(critic, states)[:, 0]


def critic_gradients(critic: Net, batch: PolicyBatch, gamma: float) -> Tuple[float, GradientTape, np.ndarray]:
    """Mean squared TD error; returns (loss, tape, detached advantages)"""
    v_curr, cache = forward_cached(critic, batch.states)
    v_next = critic_values(critic, batch.next_states)
    loss, grad = critic_loss_grad(batch.rewards, gamma, v_next, v_curr[:, 0], batch.terminal)
    n = len(batch.rewards)
    tape = backward(critic, batch.states, (grad / n)[:, None], cache)
    advantages = batch.rewards + gamma * np.where(batch.terminal, 0.0, v_next) - v_curr[:, 0]
    return float(np.mean(loss)), tape, advantages


def policy_gradients(
        policy: HeadedNet,
        batch: PolicyBatch,
        advantages: np.ndarray,
        slot_bearing: np.ndarray,
        entropy_coef: float,
) -> Tuple[float, Dict[str, GradientTape]]:
    """Mean of -A * (log pi(a) + log pi(s)) - beta * H over the batch"""
    n_slots = policy.heads["slot"].output_dim - 1
    hidden, logits, cache = policy.forward(batch.states)
    masks = slot_masks(slot_bearing, n_slots)
    logp_a = np.take_along_axis(log_softmax(logits["action"]), batch.actions[:, None], axis=1)[:, 0]
    logp_s = np.where(
        slot_bearing,
        np.take_along_axis(log_softmax(logits["slot"], masks), batch.slots[:, None], axis=1)[:, 0],
        0.0,
    )
    objective, (coef_a, coef_s) = policy_loss_grad(advantages, logp_a, logp_s)
    n = len(advantages)

    d_action = coef_a[:, None] * log_prob_grad(logits["action"], batch.actions)
    d_slot = coef_s[:, None] * log_prob_grad(logits["slot"], batch.slots, masks)
    d_slot[~slot_bearing] = 0.0
    entropy_a, d_ent_a = entropy_loss_grad(logits["action"])
    entropy_s, d_ent_s = entropy_loss_grad(logits["slot"], masks)
    d_action = (d_action + entropy_coef * d_ent_a) / n
    d_slot = (d_slot + entropy_coef * d_ent_s) / n

    total = float(np.mean(objective) - entropy_coef * np.mean(entropy_a + entropy_s))
    tapes = policy.backward(batch.states, hidden, cache, {"action": d_action, "slot": d_slot})
    return total, tapes


def classification_gradients(
        net: HeadedNet,
        features: np.ndarray,
        labels: Dict[str, np.ndarray],
        masks: Optional[Dict[str, np.ndarray]] = None,
        weights: Optional[Dict[str, np.ndarray]] = None,
) -> Tuple[float, Dict[str, GradientTape]]:
    """
    Sum over heads of per-row cross-entropy, averaged over rows. `weights`
    (0/1 per row) drops rows from one head's loss.
    """
    masks = masks or {}
    weights = weights or {}
    n = features.shape[0]
    if n == 0:
        raise TrainingError("empty supervised batch")
    hidden, logits, cache = net.forward(features)
    upstream, total = {}, 0.0
    for name, target in labels.items():
        loss, grad = cross_entropy_loss_grad(logits[name], target, masks.get(name))
        w = weights.get(name)
        if w is not None:
            loss = loss * w
            grad = grad * w[:, None]
        total += float(np.sum(loss))
        upstream[name] = grad / n
    return total / n, net.backward(features, hidden, cache, upstream)
