"""
Feed-forward nets with hand-written forward/backward passes, categorical
sampling, cross-entropy and the actor-critic losses. numpy only.

Inputs may be a single vector of shape (in,) or a batch of shape (B, in);
gradients of a batch are summed over its rows.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from aurl.schemas.constants import DefaultValues
from aurl.utils.errors import CheckpointError, DimensionMismatchError, TrainingError
from aurl.utils.logger import logger

_ACTIVATIONS = ("identity", "tanh")


@dataclass
class Net:
    layer_dims: Tuple[int, ...]
    weights: List[np.ndarray]  # (out, in) per layer
    biases: List[np.ndarray]
    output_activation: str = "identity"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or any(d <= 0 for d in self.layer_dims):
            raise DimensionMismatchError(f"invalid layer_dims {self.layer_dims}")
        if self.output_activation not in _ACTIVATIONS:
            raise DimensionMismatchError(f"unknown activation {self.output_activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expected or b.shape != (expected[0],):
                raise DimensionMismatchError(
                    f"layer {i} parameters {w.shape}/{b.shape} do not match {expected}",
                    data={"layer": i},
                )

    @classmethod
    def initialize(
            cls,
            layer_dims: Sequence[int],
            rng: np.random.Generator,
            output_activation: str = "identity",
            zero_output: bool = False,
    ) -> "Net":
        """Glorot-uniform weights, zero biases"""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        if zero_output:
            weights[-1][:] = 0.0
        return cls(tuple(layer_dims), weights, biases, output_activation)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], output_activation: str = "identity") -> "Net":
        weights = [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])]
        biases = [np.zeros(o) for o in layer_dims[1:]]
        return cls(tuple(layer_dims), weights, biases, output_activation)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Net":
        return Net(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())


@dataclass
class GradientTape:
    """Gradient storage congruent with a Net, plus the gradient w.r.t. the input"""
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    input: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, net: Net) -> "GradientTape":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def parameters(self) -> List[np.ndarray]:
        grads = []
        for w, b in zip(self.weights, self.biases):
            grads.extend((w, b))
        return grads

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.parameters())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.parameters())


@dataclass
class OptimizerState:
    """Adam moments for one Net"""
    learning_rate: float
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = DefaultValues.ADAM_BETA1
    beta2: float = DefaultValues.ADAM_BETA2
    eps: float = DefaultValues.ADAM_EPS
    clip_norm: float = DefaultValues.CLIP_NORM

    @classmethod
    def for_net(cls, net: Net, learning_rate: float, clip_norm: float = DefaultValues.CLIP_NORM) -> "OptimizerState":
        if learning_rate <= 0:
            raise TrainingError(f"learning rate must be positive, got {learning_rate}")
        zeros = [np.zeros_like(p) for p in net.parameters()]
        return cls(learning_rate, zeros, [z.copy() for z in zeros], clip_norm=clip_norm)


@dataclass
class ForwardCache:
    activations: List[np.ndarray] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]


def _check_input(net: Net, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise DimensionMismatchError(
            f"input shape {x.shape} does not match first layer dim {net.input_dim}",
            data={"expected": net.input_dim, "got": list(x.shape)},
        )
    return x


def forward_cached(net: Net, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    x = _check_input(net, x)
    cache = ForwardCache([x])
    a = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        if i < last or net.output_activation == "tanh":
            a = np.tanh(z)
        else:
            a = z
        cache.activations.append(a)
    return a, cache


def forward(net: Net, x: np.ndarray) -> np.ndarray:
    return forward_cached(net, x)[0]


def backward(
        net: Net,
        x: np.ndarray,
        upstream: np.ndarray,
        cache: Optional[ForwardCache] = None,
) -> GradientTape:
    """Gradients of sum(upstream * forward(net, x)) w.r.t. every parameter and the input"""
    if cache is None:
        _, cache = forward_cached(net, x)
    out = cache.output
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out.shape:
        raise DimensionMismatchError(
            f"upstream gradient shape {upstream.shape} does not match output {out.shape}",
        )
    batched = out.ndim == 2
    delta = upstream * (1.0 - out ** 2) if net.output_activation == "tanh" else upstream

    tape = GradientTape.zeros_like(net)
    for i in range(net.n_layers - 1, -1, -1):
        a_in = cache.activations[i]
        if batched:
            tape.weights[i] = delta.T @ a_in
            tape.biases[i] = delta.sum(axis=0)
        else:
            tape.weights[i] = np.outer(delta, a_in)
            tape.biases[i] = delta.copy()
        delta = delta @ net.weights[i]
        if i > 0:
            delta = delta * (1.0 - a_in ** 2)
    tape.input = delta
    return tape


# Distributions
def _masked(logits: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if mask is None:
        return logits
    return np.where(mask, logits, -np.inf)


def log_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    z = _masked(logits, mask)
    z_max = np.max(z, axis=-1, keepdims=True)
    shifted = z - z_max
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Max-subtracted softmax; masked entries get probability 0"""
    z = _masked(logits, mask)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_sample(
        logits: np.ndarray,
        rng: np.random.Generator,
        mask: Optional[np.ndarray] = None,
) -> Tuple[int, float]:
    """Draw an index from softmax(logits); returns (index, exact log-probability)"""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise TrainingError("non-finite logits passed to softmax_sample")
    logp = log_softmax(logits, mask)
    cdf = np.cumsum(np.exp(logp))
    index = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    index = min(index, len(cdf) - 1)
    # searchsorted can land on a zero-probability tail entry only through rounding
    while not np.isfinite(logp[index]) and index > 0:
        index -= 1
    return index, float(logp[index])


def greedy_choice(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> Tuple[int, float]:
    logp = log_softmax(logits, mask)
    index = int(np.argmax(logp))
    return index, float(logp[index])


def log_prob_grad(logits: np.ndarray, index: Union[int, np.ndarray], mask: Optional[np.ndarray] = None) -> np.ndarray:
    """d log softmax(logits)[index] / d logits = one_hot(index) - softmax(logits)"""
    p = softmax(logits, mask)
    grad = -p
    if p.ndim == 1:
        grad[index] += 1.0
    else:
        grad[np.arange(p.shape[0]), index] += 1.0
    return grad


def cross_entropy_loss_grad(
        logits: np.ndarray,
        target_index: Union[int, np.ndarray],
        mask: Optional[np.ndarray] = None,
) -> Tuple[Union[float, np.ndarray], np.ndarray]:
    """loss = -log softmax(logits)[target]; gradient = softmax(logits) - one_hot(target)"""
    logits = np.asarray(logits, dtype=np.float64)
    n_classes = logits.shape[-1]
    targets = np.asarray(target_index)
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise DimensionMismatchError(
            f"target index {target_index} outside [0, {n_classes})",
        )
    logp = log_softmax(logits, mask)
    if logits.ndim == 1:
        loss = -float(logp[int(targets)])
    else:
        loss = -logp[np.arange(logits.shape[0]), targets]
    if np.any(~np.isfinite(loss)):
        raise TrainingError("cross-entropy target has zero probability under the mask")
    return loss, -log_prob_grad(logits, targets, mask)


def entropy_loss_grad(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Entropy H of softmax(logits) and the gradient of -H w.r.t. the logits"""
    p = softmax(logits, mask)
    logp = np.where(p > 0, log_softmax(logits, mask), 0.0)
    entropy = -np.sum(p * logp, axis=-1)
    grad = p * (logp + np.expand_dims(entropy, -1))
    return entropy, grad


# Actor-critic losses
def advantage(reward, gamma: float, v_next, v_curr, is_terminal):
    """R + gamma * V(next) - V(current), with V(next) = 0 at terminal steps"""
    bootstrap = np.where(is_terminal, 0.0, v_next)
    result = reward + gamma * bootstrap - v_curr
    return float(result) if np.ndim(result) == 0 else result


def critic_loss_grad(reward, gamma: float, v_next, v_curr, is_terminal):
    """Squared TD error and its gradient w.r.t. v_curr; the bootstrap target is a constant"""
    if not 0.0 <= gamma <= 1.0:
        raise TrainingError(f"gamma must be in [0, 1], got {gamma}")
    td_error = advantage(reward, gamma, v_next, v_curr, is_terminal)
    loss = np.square(td_error)
    grad = -2.0 * np.asarray(td_error)
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def policy_loss_grad(adv, logp_action, logp_slot):
    """
    Minimized objective -A * (log pi(a) + log pi(s)) and the coefficient (-A)
    to multiply each log-probability gradient with. A is a constant.
    """
    adv = np.asarray(adv, dtype=np.float64)
    if not np.all(np.isfinite(adv)):
        raise TrainingError("non-finite advantage")
    objective = -adv * (np.asarray(logp_action) + np.asarray(logp_slot))
    coef = -adv
    if np.ndim(objective) == 0:
        return float(objective), (float(coef), float(coef))
    return objective, (coef, coef.copy())


def apply_gradients(net: Net, tape: GradientTape, opt: OptimizerState) -> Tuple[Net, OptimizerState]:
    """Clip the tape to the global norm, then one Adam step with bias correction (in place)"""
    if not tape.is_finite():
        logger.error("❌ nnet.py: non-finite gradients, refusing the update")
        raise TrainingError("non-finite gradients", data={"layer_dims": list(net.layer_dims)})
    grads = tape.parameters()
    norm = tape.global_norm()
    if norm > opt.clip_norm:
        grads = [g * (opt.clip_norm / norm) for g in grads]

    opt.step += 1
    bias1 = 1.0 - opt.beta1 ** opt.step
    bias2 = 1.0 - opt.beta2 ** opt.step
    for param, grad, m, v in zip(net.parameters(), grads, opt.m, opt.v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * grad
        v *= opt.beta2
        v += (1.0 - opt.beta2) * grad * grad
        param -= opt.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + opt.eps)

    if not net.is_finite():
        raise TrainingError("parameters became non-finite after the update")
    return net, opt


# Checkpoints
_HEADER = "<4sIII"


def save_net(net: Net, path: Union[str, Path]) -> Path:
    """Header (magic, version, n_dims, activation, dims) then little-endian float64 parameters"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    activation = _ACTIVATIONS.index(net.output_activation)
    payload = [struct.pack(_HEADER, DefaultValues.CHECKPOINT_MAGIC, DefaultValues.CHECKPOINT_VERSION,
                           len(net.layer_dims), activation)]
    payload.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    for w, b in zip(net.weights, net.biases):
        payload.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        payload.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    path.write_bytes(b"".join(payload))
    return path


def load_net(path: Union[str, Path]) -> Net:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}", data={"path": str(path)})
    raw = path.read_bytes()
    head = struct.calcsize(_HEADER)
    try:
        magic, version, n_dims, activation = struct.unpack_from(_HEADER, raw, 0)
        if magic != DefaultValues.CHECKPOINT_MAGIC or version != DefaultValues.CHECKPOINT_VERSION:
            raise CheckpointError(f"bad checkpoint header in {path}")
        dims = struct.unpack_from(f"<{n_dims}I", raw, head)
        offset = head + 4 * n_dims
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=offset)
            offset += 8 * fan_in * fan_out
            b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
            offset += 8 * fan_out
            weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
            biases.append(b.astype(np.float64))
        if offset != len(raw):
            raise CheckpointError(f"trailing bytes in checkpoint {path}")
        return Net(tuple(dims), weights, biases, _ACTIVATIONS[activation])
    except (struct.error, ValueError, IndexError) as e:
        raise CheckpointError(f"corrupt checkpoint {path}: {e}", data={"path": str(path)})
