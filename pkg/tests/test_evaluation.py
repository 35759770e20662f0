import numpy as np
import pytest

from aurl.schemas.config import RunConfig
from aurl.schemas.constants import Outcome, Speaker, SystemAction, UserAction, UserStatus
from aurl.schemas.models import Environment, Metrics, Schema, UserGoal
from aurl.schemas.types import Utterance
from aurl.services.episode import ScriptedSystemSide
from aurl.services.evaluation import (
    FsaState,
    FsaUser,
    RandomSystemSide,
    aggregate_metrics,
    evaluate,
    fsa_step,
    metrics_from_logs,
    run_fsa_episodes,
)

from .conftest import small_config

GOAL = UserGoal(targets={"s0": "s0_v0", "s1": "s1_v1", "s2": "s2_v2"})


def _sys(action: str, slot=None, tokens=()) -> Utterance:
    return Utterance(Speaker.SYSTEM.value, action, slot, tuple(tokens), 0)


def _noiseless() -> RunConfig:
    base = small_config()
    return small_config(domain={**base.domain.model_dump(), "noise_rate": 0.0},
                        eval={**base.eval.model_dump(), "dump_transcripts": True})


def test_request_for_an_unprovided_slot_is_answered_from_the_goal(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    step = fsa_step(user, _sys(SystemAction.REQUEST.value, "s1"))
    assert (step.action, step.slot, step.value_tokens) == (UserAction.INFORM_NORM.value, "s1", ("s1_v1",))
    assert step.state == FsaState.ANSWERING
    assert user.status.status[1] == UserStatus.PROVIDED


def test_request_for_a_provided_slot_restarts_it(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    fsa_step(user, _sys(SystemAction.REQUEST.value, "s0"))
    step = fsa_step(user, _sys(SystemAction.REQUEST.value, "s0"))
    assert (step.action, step.value_tokens) == (UserAction.RESTART_SLOT.value, ("s0_v0",))


def test_wrong_confirmation_is_denied(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    fsa_step(user, _sys(SystemAction.REQUEST.value, "s0"))
    step = fsa_step(user, _sys(SystemAction.CONFIRM.value, "s0", ["s0_v3"]))
    assert step.action == UserAction.DENY.value
    assert step.state == FsaState.CONFIRMING


def test_affirming_the_last_slot_moves_to_closing(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    for slot in schema.slots:
        fsa_step(user, _sys(SystemAction.REQUEST.value, slot))
    step = fsa_step(user, _sys(SystemAction.CONFIRM.value, "s2", ["s2_v2"]))
    assert (step.action, step.state) == (UserAction.AFFIRM.value, FsaState.CLOSING)
    assert fsa_step(user, _sys(SystemAction.INFORM_RESULT.value)).action == UserAction.BYE.value


def test_result_before_everything_is_provided_is_denied(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    assert fsa_step(user, _sys(SystemAction.INFORM_RESULT.value)).action == UserAction.DENY.value


def test_fired_update_is_voiced_first(schema: Schema) -> None:
    goal = UserGoal(targets=GOAL.targets, update_schedule={"s0": ("s0_v2", 1)})
    user = FsaUser(schema, goal)
    fsa_step(user, _sys(SystemAction.REQUEST.value, "s0"))
    step = fsa_step(user, _sys(SystemAction.REQUEST.value, "s1"))
    assert (step.action, step.slot, step.value_tokens) == (UserAction.UPDATE_SUB.value, "s0", ("s0_v2",))
    assert step.state == FsaState.UPDATING
    # the old value is now wrong
    assert fsa_step(user, _sys(SystemAction.CONFIRM.value, "s0", ["s0_v0"])).action == UserAction.DENY.value


def test_greet_opens_and_bye_closes(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    step = fsa_step(user, _sys(SystemAction.GREET.value))
    assert (step.action, step.slot) == (UserAction.INFORM_NORM.value, "s0")
    # a second greeting carries no question
    assert fsa_step(user, _sys(SystemAction.GREET.value)).action == UserAction.SILENCE.value
    assert fsa_step(user, _sys(SystemAction.BYE.value)).state == FsaState.CLOSING


def test_repeat_answers_the_last_prompt_again(schema: Schema) -> None:
    user = FsaUser(schema, GOAL)
    fsa_step(user, _sys(SystemAction.REQUEST.value, "s1"))
    step = fsa_step(user, _sys(SystemAction.REPEAT.value))
    assert (step.action, step.slot) == (UserAction.RESTART_SLOT.value, "s1")


def test_scripted_system_always_succeeds_without_noise(env: Environment) -> None:
    config = _noiseless()
    report = evaluate(ScriptedSystemSide(env.schema_), env, config, n_dialogs=30, repeats=2)
    assert report.aggregate.dialog_succ == 1.0
    assert report.aggregate.dst_acc == 1.0
    assert report.aggregate.n_dialogs == 60
    assert report.aggregate.avg_reward > 1.0


def test_random_system_is_far_below_the_scripted_one(env: Environment) -> None:
    config = _noiseless()
    scripted = evaluate(ScriptedSystemSide(env.schema_), env, config, n_dialogs=100, repeats=1)
    random = evaluate(RandomSystemSide(env.schema_), env, config, n_dialogs=100, repeats=1)
    assert random.aggregate.dialog_succ < 0.5
    assert random.aggregate.dialog_succ < scripted.aggregate.dialog_succ
    assert random.aggregate.avg_reward < scripted.aggregate.avg_reward


def test_evaluation_is_deterministic(env: Environment) -> None:
    config = small_config()
    first = evaluate(RandomSystemSide(env.schema_), env, config, n_dialogs=10, repeats=2, record_timing=False)
    second = evaluate(RandomSystemSide(env.schema_), env, config, n_dialogs=10, repeats=2, record_timing=False)
    assert first.repeats == second.repeats


def test_transcripts_reproduce_the_metrics(env: Environment) -> None:
    config = small_config(eval={**small_config().eval.model_dump(), "dump_transcripts": True})
    report = evaluate(RandomSystemSide(env.schema_), env, config, n_dialogs=20, repeats=1)
    succ, acc = metrics_from_logs(report.logs)
    assert succ == pytest.approx(report.aggregate.dialog_succ)
    assert acc == pytest.approx(report.aggregate.dst_acc)


def test_every_fsa_episode_terminates(env: Environment, config: RunConfig) -> None:
    results = run_fsa_episodes(RandomSystemSide(env.schema_), env, config, 20, ("check",))
    for result in results:
        assert result.outcome in (Outcome.SUCCESS, Outcome.FAILURE)
        assert result.turn_count <= config.domain.max_turns


def test_aggregate_is_the_mean_over_repeats() -> None:
    a = Metrics(dialog_succ=0.5, avg_turn=8.0, avg_reward=0.2, dst_acc=0.9, avg_time=1.0, n_dialogs=10)
    b = Metrics(dialog_succ=1.0, avg_turn=6.0, avg_reward=1.2, dst_acc=0.7, avg_time=3.0, n_dialogs=10)
    total = aggregate_metrics([a, b])
    assert total.dialog_succ == pytest.approx(0.75)
    assert total.avg_turn == pytest.approx(7.0)
    assert total.dst_acc == pytest.approx(0.8)
    assert total.n_dialogs == 20


def test_metrics_of_an_empty_log_are_zero() -> None:
    assert metrics_from_logs([]) == (0.0, 0.0)
    assert np.isclose(aggregate_metrics([Metrics(dialog_succ=0, avg_turn=0, avg_reward=0, dst_acc=0)]).avg_time, 0.0)
