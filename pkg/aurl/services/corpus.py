"""
Scripted dialog corpus and the supervised examples pretraining draws from it.
"""
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from aurl.core.domain import db_query, sample_goal
from aurl.core.encoding import FeatureEncoder
from aurl.schemas.config import RunConfig
from aurl.schemas.constants import DecodeMode, Outcome
from aurl.schemas.models import CorpusDialog, EntityTable, Environment, Schema
from aurl.schemas.types import DstTransition, NluTransition
from aurl.services.episode import EpisodeSettings, ScriptedSystemSide, ScriptedUserSide, run_episode
from aurl.services.scripted import ScriptedUser, gold_slot_ops
from aurl.services.system_agent import SystemAgent
from aurl.utils.artifacts import read_jsonl, write_jsonl
from aurl.utils.errors import ConfigurationError, TrainingError
from aurl.utils.logger import logger
from aurl.utils.seeding import make_rng


def generate_corpus(
        env: Environment,
        config: RunConfig,
        n_dialogs: int,
        seed: int,
        progress: bool = False,
) -> List[CorpusDialog]:
    """
    Scripted system against the scripted user, noise applied to user surfaces,
    labels taken from the clean side. Dialog i draws only from its own stream.
    """
    if n_dialogs < 1:
        raise ConfigurationError(f"n_dialogs must be >= 1, got {n_dialogs}")
    schema = env.schema_
    settings = EpisodeSettings.from_run_config(config, record_timing=False)
    system = ScriptedSystemSide(schema)
    user = ScriptedUserSide(ScriptedUser(
        schema, config.orchestrator.multi_prob, config.orchestrator.silence_prob,
    ))
    dialogs = []
    for i in tqdm(range(n_dialogs), desc="corpus", disable=not progress, leave=False):
        rng = make_rng(seed, "corpus", i)
        goal = sample_goal(schema, config.domain.update_prob, rng)
        result = run_episode(system, user, env, goal, settings, rng, DecodeMode.GREEDY, episode=i)
        dialogs.append(result.corpus_dialog())

    stats = corpus_stats(dialogs)
    logger.info(
        f"📚 corpus.py: {n_dialogs} dialogs, {stats['turns']} turns, "
        f"success {stats['success_rate']:.3f}"
    )
    return dialogs


def corpus_stats(dialogs: Sequence[CorpusDialog]) -> dict:
    actions = Counter(t.user_action for d in dialogs for t in d.turns)
    turns = sum(actions.values())
    successes = sum(1 for d in dialogs if d.outcome == Outcome.SUCCESS)
    return {
        "dialogs": len(dialogs),
        "turns": turns,
        "success_rate": successes / len(dialogs) if dialogs else 0.0,
        "user_actions": {a: actions[a] / turns for a in sorted(actions)} if turns else {},
    }


def write_corpus(path: Union[str, Path], dialogs: Sequence[CorpusDialog]) -> Path:
    return write_jsonl(path, dialogs)


def read_corpus(path: Union[str, Path]) -> List[CorpusDialog]:
    return read_jsonl(path, CorpusDialog)


def split_corpus(dialogs: Sequence[CorpusDialog], held_out_fraction: float) -> Tuple[List[CorpusDialog], List[CorpusDialog]]:
    """Train/held-out split by order; both parts non-empty when there are two dialogs or more"""
    if not 0.0 < held_out_fraction < 1.0:
        raise ConfigurationError(f"held_out_fraction must be in (0, 1), got {held_out_fraction}")
    n_held = int(round(len(dialogs) * held_out_fraction))
    if len(dialogs) > 1:
        n_held = min(max(n_held, 1), len(dialogs) - 1)
    cut = len(dialogs) - n_held
    return list(dialogs[:cut]), list(dialogs[cut:])


def check_corpus(dialogs: Sequence[CorpusDialog]) -> None:
    if not dialogs or not any(d.turns for d in dialogs):
        raise TrainingError("corpus is empty")
    actions = {t.user_action for d in dialogs for t in d.turns}
    if len(actions) < 2:
        logger.error(f"❌ corpus.py: degenerate corpus, only {sorted(actions)}")
        raise TrainingError("degenerate corpus: a single user action type", data={"actions": sorted(actions)})


# Supervised examples
def dst_examples(dialogs: Sequence[CorpusDialog], schema: Schema, encoder: FeatureEncoder) -> List[DstTransition]:
    examples = []
    for dialog in dialogs:
        for t in dialog.turns:
            examples.append(DstTransition(
                features=encoder.dst_input(t.prev_belief, t.system_prompt, t.user_noisy),
                slot_ops=gold_slot_ops(t.prev_belief, t.oracle, schema),
                user_action=schema.user_action_index(t.user_action),
                user_action_name=t.user_action,
            ))
    return examples


def nlu_examples(dialogs: Sequence[CorpusDialog], schema: Schema, encoder: FeatureEncoder) -> List[NluTransition]:
    examples = []
    for dialog in dialogs:
        for t in dialog.turns:
            prompt = t.system_prompt
            examples.append(NluTransition(
                features=encoder.nlu_input(dialog.goal, prompt),
                action=schema.system_action_index(prompt.action),
                slot=schema.n_slots if prompt.slot is None else schema.slot_index(prompt.slot),
            ))
    return examples


@dataclass
class PolicyExamples:
    features: np.ndarray
    actions: np.ndarray
    slots: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


def user_dp_examples(dialogs: Sequence[CorpusDialog], schema: Schema, encoder: FeatureEncoder) -> PolicyExamples:
    """User policy inputs as the user sees them, labelled with the scripted user's moves"""
    features, actions, slots = [], [], []
    for dialog in dialogs:
        for t in dialog.turns:
            prompt = t.system_prompt
            match = encoder.confirm_match(t.user_state, dialog.goal, prompt)
            features.append(encoder.user_policy_input(t.user_prev_action, prompt.action, prompt.slot, t.user_state, match))
            actions.append(schema.user_action_index(t.user_action))
            slots.append(schema.n_slots if t.user_slot is None else schema.slot_index(t.user_slot))
    return PolicyExamples(np.stack(features), np.array(actions, dtype=np.int64), np.array(slots, dtype=np.int64))


def system_dp_examples(
        dialogs: Sequence[CorpusDialog],
        system: SystemAgent,
        db: EntityTable,
) -> PolicyExamples:
    """
    System policy inputs built with the current DST trunk as context, so the
    policy is pretrained on the features it will see at run time.
    """
    schema, encoder = system.schema, system.encoder
    turns = [t for dialog in dialogs for t in dialog.turns]
    contexts, _, _ = system.dst.forward(np.stack([
        encoder.dst_input(t.prev_belief, t.system_prompt, t.user_noisy) for t in turns
    ]))
    features, actions, slots = [], [], []
    for t, context in zip(turns, contexts):
        features.append(system.policy_input(t.system_prompt.action, t.belief, context, db_query(t.belief, db)))
        actions.append(schema.system_action_index(t.system_action))
        slots.append(schema.n_slots if t.system_slot is None else schema.slot_index(t.system_slot))
    return PolicyExamples(np.stack(features), np.array(actions, dtype=np.int64), np.array(slots, dtype=np.int64))
