import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose

from aurl.core.encoding import FeatureEncoder
from aurl.core.heads import HeadedNet
from aurl.schemas.config import NetConfig
from aurl.schemas.constants import DecodeMode, Speaker, SystemAction, UserAction, UserStatus
from aurl.schemas.models import Schema, UserGoal
from aurl.schemas.types import BeliefState, PolicyTransition, SystemDecision, UserStateVector, Utterance
from aurl.services.scripted import make_system_decision
from aurl.services.system_agent import SystemAgent, apply_slot_op, op_clear, op_keep, op_set, system_utterance
from aurl.services.user_agent import (
    UserAgent,
    make_user_decision,
    second_slot,
    update_user_state,
    verbalize,
)
from aurl.utils.errors import CheckpointError, SchemaMismatchError

NET = NetConfig(hidden_width=8, hidden_layers=1)


@pytest.fixture
def goal() -> UserGoal:
    return UserGoal(
        targets={"s0": "s0_v0", "s1": "s1_v1", "s2": "s2_v2"},
        update_schedule={"s0": ("s0_v3", 2)},
    )


# User state automaton
def test_inform_marks_slot_provided_and_update_fires_later(schema: Schema, goal: UserGoal) -> None:
    state = UserStateVector.initial(schema.n_slots)
    decision = make_user_decision(schema, UserAction.INFORM_NORM.value, "s0")
    state = update_user_state(state, decision, goal, 1, schema)
    assert state.status == (UserStatus.PROVIDED, UserStatus.NOT_PROVIDED, UserStatus.NOT_PROVIDED)

    silence = make_user_decision(schema, UserAction.SILENCE.value, None)
    state = update_user_state(state, silence, goal, 2, schema)
    assert state.status[0] == UserStatus.NEED_UPDATE
    assert "s0" in state.fired

    update = make_user_decision(schema, UserAction.UPDATE_SUB.value, "s0")
    state = update_user_state(state, update, goal, 3, schema)
    assert state.status[0] == UserStatus.PROVIDED
    # a revision fires once
    state = update_user_state(state, silence, goal, 4, schema)
    assert state.status[0] == UserStatus.PROVIDED


def test_unprovided_slots_never_jump_to_need_update(schema: Schema, goal: UserGoal) -> None:
    state = UserStateVector.initial(schema.n_slots)
    silence = make_user_decision(schema, UserAction.SILENCE.value, None)
    state = update_user_state(state, silence, goal, 5, schema)
    assert state.status == (0, 0, 0)


def test_inform_multi_provides_both_slots(schema: Schema, goal: UserGoal) -> None:
    state = UserStateVector.initial(schema.n_slots)
    decision = make_user_decision(schema, UserAction.INFORM_MULTI.value, "s1")
    utt, applied = verbalize(decision, state, goal, 1, schema)
    assert utt.value_tokens == ("s1_v1", "s2_v2")
    state = update_user_state(state, applied, goal, 1, schema, utt)
    assert state.status == (0, 1, 1)


def test_second_slot_prefers_unprovided_slots(schema: Schema) -> None:
    state = UserStateVector((1, 1, 0))
    assert second_slot(state, "s0", schema) == "s2"
    assert second_slot(UserStateVector((1, 1, 1)), "s2", schema) == "s0"


def test_verbalize_uses_the_current_intended_value(schema: Schema, goal: UserGoal) -> None:
    state = UserStateVector((UserStatus.NEED_UPDATE, 0, 0), fired=frozenset({"s0"}))
    decision = make_user_decision(schema, UserAction.UPDATE_SUB.value, "s0")
    utt, applied = verbalize(decision, state, goal, 3, schema)
    assert utt.value_tokens == ("s0_v3",)
    assert not applied.fallback


@pytest.mark.parametrize("action,slot,status", [
    (UserAction.UPDATE_SUB.value, "s0", (1, 0, 0)),
    (UserAction.RESTART_SLOT.value, "s1", (1, 0, 0)),
    (UserAction.INFORM_NORM.value, None, (0, 0, 0)),
])
def test_inapplicable_decisions_fall_back_to_silence(schema, goal, action, slot, status) -> None:
    decision = make_user_decision(schema, action, slot)
    utt, applied = verbalize(decision, UserStateVector(status), goal, 2, schema)
    assert utt.action == UserAction.SILENCE.value
    assert utt.value_tokens == ()
    assert applied.fallback
    assert applied.action_index == schema.user_action_index(UserAction.SILENCE.value)


def test_affirm_carries_no_values(schema: Schema, goal: UserGoal) -> None:
    utt, applied = verbalize(make_user_decision(schema, UserAction.AFFIRM.value, None),
                             UserStateVector((1, 0, 0)), goal, 2, schema)
    assert (utt.action, utt.slot, utt.value_tokens) == ("affirm", None, ())
    assert not applied.fallback


def test_user_state_length_must_match(schema: Schema, goal: UserGoal) -> None:
    with pytest.raises(SchemaMismatchError):
        update_user_state(UserStateVector((0, 0)), make_user_decision(schema, "silence", None), goal, 1, schema)


# System slot operations
def test_slot_operations() -> None:
    vocab = ["a", "b", "c"]
    assert apply_slot_op("b", op_keep(), vocab) == "b"
    assert apply_slot_op(None, op_set(2), vocab) == "c"
    assert apply_slot_op("a", op_clear(len(vocab)), vocab) is None


def test_confirm_utterance_shows_the_believed_value(schema: Schema) -> None:
    bs = BeliefState({"s0": "s0_v2", "s1": None, "s2": None})
    confirm = make_system_decision(schema, SystemAction.CONFIRM.value, "s0")
    utt = system_utterance(confirm, bs, 4)
    assert (utt.speaker, utt.action, utt.slot, utt.value_tokens, utt.turn) == ("system", "confirm", "s0", ("s0_v2",), 4)

    empty = system_utterance(make_system_decision(schema, SystemAction.CONFIRM.value, "s1"), bs, 4)
    assert empty.value_tokens == ()
    request = system_utterance(make_system_decision(schema, SystemAction.REQUEST.value, "s1"), bs, 4)
    assert request.value_tokens == ()


# Learned agents
def test_system_agent_step_shapes(schema: Schema, encoder: FeatureEncoder) -> None:
    agent = SystemAgent.initialize(schema, encoder, NET, np.random.default_rng(0))
    bs = BeliefState.empty(schema.slots)
    prompt = Utterance(Speaker.SYSTEM.value, SystemAction.GREET.value)
    reply = Utterance(Speaker.USER.value, UserAction.INFORM_NORM.value, "s0", ("s0_v1",), 1)
    out = agent.dst_step(bs, prompt, reply)
    schema.check_belief(out.belief)
    assert out.context.shape == (NET.hidden_width,)
    assert out.predicted_user_action in schema.user_actions

    ops, actions = agent.predict_ops(np.stack([out.features, out.features]))
    assert ops.shape == (2, schema.n_slots)
    assert actions.shape == (2,)


def test_system_policy_only_names_slots_for_slot_actions(schema: Schema, encoder: FeatureEncoder) -> None:
    agent = SystemAgent.initialize(schema, encoder, NET, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    x = rng.normal(size=encoder.system_policy_dim(agent.context_dim))
    for _ in range(50):
        decision = agent.dp_step(x, DecodeMode.SAMPLE, rng)
        if decision.action in ("request", "confirm"):
            assert decision.slot in schema.slots
        else:
            assert decision.slot is None and decision.slot_index == schema.n_slots
        assert decision.logp_action <= 0.0


def test_a2c_update_moves_policy_and_critic(schema: Schema, encoder: FeatureEncoder) -> None:
    agent = UserAgent.initialize(schema, encoder, NET, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    states = rng.normal(size=(3, encoder.user_policy_dim))
    transitions = [
        PolicyTransition(states[0], 0, 1, -0.02, states[1], False),
        PolicyTransition(states[1], 4, schema.n_slots, 0.0, states[2], False),
        PolicyTransition(states[2], 7, schema.n_slots, 2.0, None, True),
    ]
    before_critic = agent.critic.weights[-1].copy()
    before_policy = agent.policy.heads["action"].weights[0].copy()
    losses = agent.a2c_update(transitions, 0.99)
    assert set(losses) == {"critic_loss", "policy_loss"}
    assert not np.array_equal(agent.critic.weights[-1], before_critic)
    assert not np.array_equal(agent.policy.heads["action"].weights[0], before_policy)


def test_user_clone_is_independent(schema: Schema, encoder: FeatureEncoder) -> None:
    agent = UserAgent.initialize(schema, encoder, NET, np.random.default_rng(0))
    twin = agent.clone(1)
    twin.policy.trunk.weights[0] += 1.0
    assert twin.user_id == 1
    assert not np.array_equal(twin.policy.trunk.weights[0], agent.policy.trunk.weights[0])


def test_nlu_step_reads_system_utterances_only(schema: Schema, encoder: FeatureEncoder, goal: UserGoal) -> None:
    agent = UserAgent.initialize(schema, encoder, NET, np.random.default_rng(0))
    out = agent.nlu_step(goal, Utterance(Speaker.SYSTEM.value, SystemAction.REQUEST.value, "s1"))
    assert out.action in schema.system_actions
    with pytest.raises(SchemaMismatchError):
        agent.nlu_step(goal, Utterance(Speaker.USER.value, UserAction.AFFIRM.value))


def test_agents_survive_a_save_and_load(tmp_path, schema: Schema, encoder: FeatureEncoder) -> None:
    system = SystemAgent.initialize(schema, encoder, NET, np.random.default_rng(0))
    user = UserAgent.initialize(schema, encoder, NET, np.random.default_rng(1))
    system.save(tmp_path / "system")
    user.save(tmp_path / "user")

    loaded_system = SystemAgent.load(tmp_path / "system", schema, encoder, NET)
    loaded_user = UserAgent.load(tmp_path / "user", schema, encoder, NET)
    x = np.random.default_rng(3).normal(size=encoder.user_policy_dim)
    assert loaded_user.value(x) == user.value(x)
    assert np.array_equal(loaded_system.dst.trunk.weights[0], system.dst.trunk.weights[0])


def test_system_checkpoint_for_another_schema_is_rejected(tmp_path, schema: Schema, encoder: FeatureEncoder) -> None:
    from aurl.core.domain import build_schema

    SystemAgent.initialize(schema, encoder, NET, np.random.default_rng(0)).save(tmp_path)
    other = build_schema({"slot_count": 3, "vocab_size": 5})
    with pytest.raises(CheckpointError):
        SystemAgent.load(tmp_path, other, FeatureEncoder(other), NET)


# Exhaustive user state transitions
def _consistent_states(schema: Schema):
    for status in itertools.product(range(3), repeat=schema.n_slots):
        for k in range(schema.n_slots + 1):
            for fired in itertools.combinations(schema.slots, k):
                # need-update implies the revision fired; not-provided implies it has not
                if all((s == UserStatus.NEED_UPDATE) <= (slot in fired) and
                       (s == UserStatus.NOT_PROVIDED) <= (slot not in fired)
                       for slot, s in zip(schema.slots, status)):
                    yield UserStateVector(status, frozenset(fired))


def test_user_state_transitions_are_exactly_the_likert_automaton(schema: Schema) -> None:
    goal = UserGoal(
        targets={"s0": "s0_v0", "s1": "s1_v1", "s2": "s2_v2"},
        update_schedule={"s0": ("s0_v3", 2), "s1": ("s1_v0", 1), "s2": ("s2_v1", 3)},
    )
    checked = 0
    for state in _consistent_states(schema):
        for action in schema.user_actions:
            for slot in [None, *schema.slots]:
                for turn in range(1, 5):
                    decision = make_user_decision(schema, action, slot)
                    utt, applied = verbalize(decision, state, goal, turn, schema)
                    after = update_user_state(state, applied, goal, turn, schema, utt)
                    informed = {schema.token_slot(t) for t in utt.value_tokens}
                    for i, name in enumerate(schema.slots):
                        before, now = state.status[i], after.status[i]
                        fires = name not in state.fired and goal.due(name, turn)
                        if before == UserStatus.NOT_PROVIDED:
                            expected = UserStatus.NOT_PROVIDED if name not in informed else (
                                UserStatus.NEED_UPDATE if fires else UserStatus.PROVIDED)
                        elif before == UserStatus.PROVIDED:
                            expected = UserStatus.NEED_UPDATE if fires else UserStatus.PROVIDED
                        else:
                            expected = UserStatus.PROVIDED if name in informed else UserStatus.NEED_UPDATE
                        assert now == expected, (state, action, slot, turn, name)
                    assert after.fired == state.fired | {
                        name for i, name in enumerate(schema.slots)
                        if after.status[i] == UserStatus.NEED_UPDATE and state.status[i] != UserStatus.NEED_UPDATE
                    }
                    checked += 1
    # per slot: (0, not fired), (1, fired or not), (2, fired)
    assert checked == 4 ** schema.n_slots * len(schema.user_actions) * (schema.n_slots + 1) * 4


# Slot relabelling
SWAP = {"s0": "s1", "s1": "s0"}


def _swap_token(schema: Schema, token: str) -> str:
    slot = schema.token_slot(token)
    return schema.value_vocab[SWAP.get(slot, slot)][schema.value_index(token)]


def _swap_utterance(schema: Schema, utt: Utterance) -> Utterance:
    slot = SWAP.get(utt.slot, utt.slot) if utt.slot is not None else None
    return Utterance(utt.speaker, utt.action, slot, tuple(_swap_token(schema, t) for t in utt.value_tokens), utt.turn)


def _swap_belief(schema: Schema, bs: BeliefState) -> BeliefState:
    return BeliefState({SWAP.get(slot, slot): (_swap_token(schema, v) if v is not None else None)
                        for slot, v in bs.values.items()})


def _swap_columns(schema: Schema, encoder: FeatureEncoder) -> np.ndarray:
    """Column k of the relabelled DST input reads column perm[k] of the original"""
    tokens = sorted((t for s in schema.slots for t in schema.value_vocab[s]), key=schema.token_index)
    slot_perm = [schema.slot_index(SWAP.get(s, s)) for s in schema.slots] + [schema.n_slots]
    token_perm = [schema.token_index(_swap_token(schema, t)) for t in tokens]

    def utterance_perm(speaker: str) -> list:
        n = encoder.utterance_dim(speaker) - encoder.slot_dim - encoder.n_tokens
        return (list(range(n)) + [n + i for i in slot_perm]
                + [n + encoder.slot_dim + i for i in token_perm])

    offsets, offset = {}, 0
    for slot in schema.slots:
        offsets[slot] = offset
        offset += len(schema.value_vocab[slot]) + 1
    belief_perm = [offsets[SWAP.get(slot, slot)] + j
                   for slot in schema.slots for j in range(len(schema.value_vocab[slot]) + 1)]

    sys_part = utterance_perm(Speaker.SYSTEM.value)
    user_part = utterance_perm(Speaker.USER.value)
    base = len(sys_part)
    perm = sys_part + [base + i for i in user_part]
    base += len(user_part)
    return np.array(perm + [base + i for i in belief_perm])


def test_dst_result_does_not_depend_on_slot_order(schema: Schema, encoder: FeatureEncoder) -> None:
    agent = SystemAgent.initialize(schema, encoder, NET, np.random.default_rng(4))
    perm = _swap_columns(schema, encoder)
    assert sorted(perm) == list(range(encoder.dst_input_dim))

    trunk = agent.dst.trunk.copy()
    trunk.weights[0] = trunk.weights[0][:, perm]
    heads = {name: net.copy() for name, net in agent.dst.heads.items()}
    heads["slot_0"], heads["slot_1"] = heads["slot_1"], heads["slot_0"]
    relabelled = SystemAgent(schema, encoder, HeadedNet(trunk, heads), agent.policy, agent.critic, NET)

    rng = np.random.default_rng(5)
    for _ in range(50):
        prev = BeliefState({
            slot: None if rng.random() < 0.4 else schema.value_vocab[slot][int(rng.integers(schema.vocab_size))]
            for slot in schema.slots
        })
        slot = schema.slots[int(rng.integers(schema.n_slots))]
        prompt = system_utterance(make_system_decision(schema, SystemAction.CONFIRM.value, slot), prev, 2)
        values = tuple(schema.value_vocab[s][int(rng.integers(schema.vocab_size))] for s in schema.slots[:2])
        reply = Utterance(Speaker.USER.value, UserAction.INFORM_MULTI.value, "s0", values, 2)

        out = agent.dst_step(prev, prompt, reply)
        swapped = relabelled.dst_step(
            _swap_belief(schema, prev), _swap_utterance(schema, prompt), _swap_utterance(schema, reply),
        )
        assert_allclose(swapped.features, out.features[perm])
        assert swapped.belief == _swap_belief(schema, out.belief)
        assert swapped.predicted_user_action == out.predicted_user_action
        assert_allclose(swapped.slot_logits[0], out.slot_logits[1])
        assert_allclose(swapped.slot_logits[2], out.slot_logits[2])
