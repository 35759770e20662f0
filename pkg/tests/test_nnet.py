from typing import List, Tuple

import numpy as np
import pytest
from numpy.testing import assert_allclose

from aurl.core.heads import (
    HeadedNet,
    PolicyBatch,
    classification_gradients,
    critic_gradients,
    policy_gradients,
    slot_masks,
)
from aurl.core.nnet import (
    GradientTape,
    Net,
    OptimizerState,
    advantage,
    apply_gradients,
    backward,
    critic_loss_grad,
    cross_entropy_loss_grad,
    entropy_loss_grad,
    forward,
    load_net,
    log_prob_grad,
    log_softmax,
    policy_loss_grad,
    save_net,
    softmax,
    softmax_sample,
)
from aurl.utils.errors import CheckpointError, DimensionMismatchError, TrainingError


def _numeric_grad(f, param: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + eps
        up = f()
        param[idx] = old - eps
        down = f()
        param[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def _pairs(net: Net, tape: GradientTape) -> List[Tuple[np.ndarray, np.ndarray]]:
    return list(zip(net.parameters(), tape.parameters()))


def _headed_pairs(net: HeadedNet, tapes) -> List[Tuple[np.ndarray, np.ndarray]]:
    return [pair for role, n in net.roles().items() for pair in _pairs(n, tapes[role])]


def _dims(rng: np.random.Generator, out: int) -> Tuple[int, ...]:
    hidden = tuple(int(h) for h in rng.integers(2, 6, size=rng.integers(0, 3)))
    return (int(rng.integers(2, 6)),) + hidden + (out,)


def _plain_case(kind: int, rng: np.random.Generator):
    """Objective of a bare Net; returns (objective, [(parameter, analytic gradient)])"""
    n = int(rng.integers(1, 5))
    activation = "tanh" if kind == 1 else "identity"
    net = Net.initialize(_dims(rng, int(rng.integers(2, 5))), rng, output_activation=activation)
    x = rng.normal(size=(n, net.input_dim))

    if kind in (0, 1):
        upstream = rng.normal(size=(n, net.output_dim))

        def objective() -> float:
            return float(np.sum(upstream * forward(net, x)))

        tape = backward(net, x, upstream)
        return objective, _pairs(net, tape) + [(x, tape.input)]

    if kind == 2:
        mask = rng.random((n, net.output_dim)) < 0.7
        targets = np.array([rng.choice(np.flatnonzero(row)) if row.any() else 0 for row in mask])
        mask[np.arange(n), targets] = True

        def objective() -> float:
            logp = log_softmax(forward(net, x), mask)
            return float(-np.sum(logp[np.arange(n), targets]))

        _, grad = cross_entropy_loss_grad(forward(net, x), targets, mask)
        return objective, _pairs(net, backward(net, x, grad))

    def objective() -> float:
        p = softmax(forward(net, x))
        return float(np.sum(p * np.log(p)))

    _, grad = entropy_loss_grad(forward(net, x))
    return objective, _pairs(net, backward(net, x, grad))


def _critic_case(rng: np.random.Generator):
    n = int(rng.integers(2, 6))
    critic = Net.initialize(_dims(rng, 1), rng)
    batch = PolicyBatch(
        states=rng.normal(size=(n, critic.input_dim)),
        actions=np.zeros(n, dtype=np.int64),
        slots=np.zeros(n, dtype=np.int64),
        rewards=rng.normal(size=n),
        next_states=rng.normal(size=(n, critic.input_dim)),
        terminal=rng.random(n) < 0.3,
    )
    gamma = float(rng.uniform(0.5, 1.0))
    # the bootstrap target is held fixed
    target = batch.rewards + gamma * np.where(batch.terminal, 0.0, forward(critic, batch.next_states)[:, 0])

    def objective() -> float:
        return float(np.mean((target - forward(critic, batch.states)[:, 0]) ** 2))

    _, tape, _ = critic_gradients(critic, batch, gamma)
    return objective, _pairs(critic, tape)


def _headed(rng: np.random.Generator, head_sizes) -> HeadedNet:
    return HeadedNet.initialize(int(rng.integers(2, 6)), head_sizes, rng,
                                hidden_width=int(rng.integers(2, 6)), hidden_layers=int(rng.integers(1, 3)))


def _classification_case(rng: np.random.Generator):
    n = int(rng.integers(1, 6))
    sizes = {"first": int(rng.integers(2, 5)), "second": int(rng.integers(2, 5))}
    net = _headed(rng, sizes)
    x = rng.normal(size=(n, net.trunk.input_dim))
    labels = {name: rng.integers(0, size, size=n) for name, size in sizes.items()}
    weights = {"second": (rng.random(n) < 0.5).astype(np.float64)}

    def objective() -> float:
        _, logits, _ = net.forward(x)
        total = 0.0
        for name, target in labels.items():
            loss = -log_softmax(logits[name])[np.arange(n), target]
            total += float(np.sum(loss * weights.get(name, 1.0)))
        return total / n

    _, tapes = classification_gradients(net, x, labels, weights=weights)
    return objective, _headed_pairs(net, tapes)


def _policy_case(rng: np.random.Generator):
    n, n_slots = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    policy = _headed(rng, {"action": int(rng.integers(2, 5)), "slot": n_slots + 1})
    bearing = rng.random(n) < 0.5
    batch = PolicyBatch(
        states=rng.normal(size=(n, policy.trunk.input_dim)),
        actions=rng.integers(0, policy.heads["action"].output_dim, size=n),
        slots=np.where(bearing, rng.integers(0, n_slots, size=n), n_slots),
        rewards=np.zeros(n),
        next_states=np.zeros((n, policy.trunk.input_dim)),
        terminal=np.ones(n, dtype=bool),
    )
    advantages = rng.normal(size=n)
    beta = float(rng.uniform(0.0, 0.1))
    masks = slot_masks(bearing, n_slots)
    rows = np.arange(n)

    def entropy(logits: np.ndarray, mask=None) -> np.ndarray:
        p = softmax(logits, mask)
        logp = np.where(p > 0, log_softmax(logits, mask), 0.0)
        return -np.sum(p * logp, axis=-1)

    def objective() -> float:
        _, logits, _ = policy.forward(batch.states)
        logp_a = log_softmax(logits["action"])[rows, batch.actions]
        logp_s = np.where(bearing, np.where(masks, log_softmax(logits["slot"], masks), 0.0)[rows, batch.slots], 0.0)
        h = entropy(logits["action"]) + entropy(logits["slot"], masks)
        return float(np.mean(-advantages * (logp_a + logp_s)) - beta * np.mean(h))

    _, tapes = policy_gradients(policy, batch, advantages, bearing, beta)
    return objective, _headed_pairs(policy, tapes)


@pytest.mark.parametrize("seed", range(100))
def test_gradients_match_finite_differences(seed: int) -> None:
    rng = np.random.default_rng(seed)
    kind = seed % 7
    if kind < 4:
        objective, pairs = _plain_case(kind, rng)
    elif kind == 4:
        objective, pairs = _critic_case(rng)
    elif kind == 5:
        objective, pairs = _classification_case(rng)
    else:
        objective, pairs = _policy_case(rng)
    for param, analytic in pairs:
        assert_allclose(analytic, _numeric_grad(objective, param), rtol=1e-4, atol=1e-6)


def test_forward_rejects_wrong_input_width() -> None:
    net = Net.initialize((4, 3), np.random.default_rng(0))
    with pytest.raises(DimensionMismatchError):
        forward(net, np.zeros(5))


def test_net_rejects_bad_layer_dims() -> None:
    with pytest.raises(DimensionMismatchError):
        Net.zeros((4,))


def test_softmax_sums_to_one_and_respects_mask() -> None:
    logits = np.array([1000.0, 999.0, -5.0, 3.0])
    p = softmax(logits)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.isfinite(p))

    mask = np.array([False, True, True, False])
    masked = softmax(logits, mask)
    assert masked[0] == 0.0 and masked[3] == 0.0
    assert masked.sum() == pytest.approx(1.0)


def test_softmax_sample_follows_the_distribution() -> None:
    logits = np.log(np.array([0.7, 0.2, 0.1]))
    rng = np.random.default_rng(11)
    draws = [softmax_sample(logits, rng)[0] for _ in range(5000)]
    freq = np.bincount(draws, minlength=3) / len(draws)
    assert_allclose(freq, [0.7, 0.2, 0.1], atol=0.03)

    index, logp = softmax_sample(logits, rng)
    assert logp == pytest.approx(np.log([0.7, 0.2, 0.1])[index])


def test_softmax_sample_never_picks_masked_entries() -> None:
    rng = np.random.default_rng(2)
    mask = np.array([False, True, False])
    assert {softmax_sample(np.zeros(3), rng, mask)[0] for _ in range(200)} == {1}


def test_softmax_sample_rejects_non_finite_logits() -> None:
    with pytest.raises(TrainingError):
        softmax_sample(np.array([0.0, np.nan]), np.random.default_rng(0))


def test_cross_entropy_value_and_gradient() -> None:
    logits = np.array([2.0, 1.0, 0.0])
    loss, grad = cross_entropy_loss_grad(logits, 0)
    p = softmax(logits)
    assert loss == pytest.approx(-np.log(p[0]))
    assert_allclose(grad, p - np.array([1.0, 0.0, 0.0]))

    with pytest.raises(DimensionMismatchError):
        cross_entropy_loss_grad(logits, 3)


def test_log_prob_grad_is_one_hot_minus_softmax_in_batch() -> None:
    logits = np.array([[0.0, 1.0], [2.0, -1.0]])
    grad = log_prob_grad(logits, np.array([1, 0]))
    p = softmax(logits)
    assert_allclose(grad, np.array([[0.0, 1.0], [1.0, 0.0]]) - p)


def test_entropy_of_uniform_distribution() -> None:
    entropy, grad = entropy_loss_grad(np.zeros(4))
    assert float(entropy) == pytest.approx(np.log(4))
    assert_allclose(grad, np.zeros(4), atol=1e-12)


def test_advantage_and_critic_loss() -> None:
    assert advantage(1.0, 0.9, 2.0, 0.5, False) == pytest.approx(1.0 + 1.8 - 0.5)
    assert advantage(1.0, 0.9, 2.0, 0.5, True) == pytest.approx(0.5)

    loss, grad = critic_loss_grad(1.0, 0.9, 2.0, 0.5, False)
    assert loss == pytest.approx(2.3 ** 2)
    assert grad == pytest.approx(-2 * 2.3)

    with pytest.raises(TrainingError):
        critic_loss_grad(1.0, 1.5, 0.0, 0.0, True)


def test_policy_loss_is_negative_advantage_weighted_log_prob() -> None:
    objective, (coef_a, coef_s) = policy_loss_grad(2.0, -0.5, -1.0)
    assert objective == pytest.approx(3.0)
    assert coef_a == coef_s == pytest.approx(-2.0)

    with pytest.raises(TrainingError):
        policy_loss_grad(np.inf, 0.0, 0.0)


def test_adam_step_moves_against_the_gradient() -> None:
    net = Net.zeros((2, 1))
    opt = OptimizerState.for_net(net, learning_rate=0.1)
    tape = GradientTape([np.array([[1.0, -1.0]])], [np.array([0.5])])
    apply_gradients(net, tape, opt)
    # first bias-corrected Adam step is lr * sign(g)
    assert_allclose(net.weights[0], [[-0.1, 0.1]], atol=1e-6)
    assert_allclose(net.biases[0], [-0.1], atol=1e-6)
    assert opt.step == 1


def test_gradients_are_clipped_to_global_norm() -> None:
    net = Net.zeros((1, 1))
    opt = OptimizerState.for_net(net, learning_rate=1.0, clip_norm=1.0)
    opt.beta1 = 0.0
    opt.beta2 = 0.0
    tape = GradientTape([np.array([[30.0]])], [np.array([40.0])])
    apply_gradients(net, tape, opt)
    # with zero betas the step is lr * g / |g| regardless of scale, so look at m instead
    assert_allclose(opt.m[0], [[0.6]])
    assert_allclose(opt.m[1], [0.8])


def test_non_finite_gradients_are_refused() -> None:
    net = Net.zeros((1, 1))
    opt = OptimizerState.for_net(net, learning_rate=0.1)
    with pytest.raises(TrainingError):
        apply_gradients(net, GradientTape([np.array([[np.nan]])], [np.zeros(1)]), opt)


def test_learning_rate_must_be_positive() -> None:
    with pytest.raises(TrainingError):
        OptimizerState.for_net(Net.zeros((1, 1)), learning_rate=0.0)


def test_save_and_load_restore_parameters(tmp_path) -> None:
    net = Net.initialize((3, 4, 2), np.random.default_rng(5), output_activation="tanh")
    path = save_net(net, tmp_path / "net.bin")
    loaded = load_net(path)
    assert loaded.layer_dims == net.layer_dims
    assert loaded.output_activation == "tanh"
    for a, b in zip(loaded.parameters(), net.parameters()):
        assert np.array_equal(a, b)


def test_load_rejects_missing_and_corrupt_files(tmp_path) -> None:
    with pytest.raises(CheckpointError):
        load_net(tmp_path / "absent.bin")

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(CheckpointError):
        load_net(bad_magic)

    path = save_net(Net.zeros((2, 2)), tmp_path / "net.bin")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError):
        load_net(path)
