"""
The synthetic slot-filling world: schema, entity table, user goals, the value
noise channel, database query features and the terminal signal.
"""
from typing import Any, Mapping, Union

import numpy as np
from pydantic import ValidationError

from aurl.schemas.config import DomainConfig
from aurl.schemas.constants import Outcome, SystemAction, UserAction
from aurl.schemas.models import EntityTable, Environment, Schema, UserGoal
from aurl.schemas.types import BeliefState, QueryFeature, Utterance
from aurl.utils.errors import ConfigurationError
from aurl.utils.logger import logger
from aurl.utils.seeding import make_rng

# exhaustive sampling of the combination space below this size
_ENUMERATE_LIMIT = 1_000_000


def slot_name(i: int) -> str:
    return f"s{i}"


def value_token(slot: str, j: int) -> str:
    return f"{slot}_v{j}"


def _as_domain_config(config: Union[DomainConfig, Mapping[str, Any]]) -> DomainConfig:
    if isinstance(config, DomainConfig):
        return config
    try:
        return DomainConfig.model_validate(dict(config))
    except ValidationError as e:
        raise ConfigurationError(f"invalid domain configuration: {e.errors()[0]['msg']}",
                                 data={"errors": [err["loc"] for err in e.errors()]})


def build_schema(config: Union[DomainConfig, Mapping[str, Any]]) -> Schema:
    """Deterministic schema: slots s0..sN-1, tokens s<i>_v<j>, default action inventories plus fillers"""
    config = _as_domain_config(config)
    slots = [slot_name(i) for i in range(config.slot_count)]
    system_actions = [a.value for a in SystemAction]
    system_actions += [f"sys_filler_{k}" for k in range(config.extra_system_actions)]
    user_actions = [a.value for a in UserAction]
    user_actions += [f"usr_filler_{k}" for k in range(config.extra_user_actions)]
    return Schema(
        slots=slots,
        value_vocab={slot: [value_token(slot, j) for j in range(config.vocab_size)] for slot in slots},
        system_actions=system_actions,
        user_actions=user_actions,
        max_turns=config.max_turns,
    )


def build_entity_table(schema: Schema, db_size: int, rng: np.random.Generator) -> EntityTable:
    """Distinct value combinations drawn uniformly from the full product space"""
    radices = [len(schema.value_vocab[slot]) for slot in schema.slots]
    total = int(np.prod([float(r) for r in radices]))
    size = min(db_size, total)
    if total <= _ENUMERATE_LIMIT:
        codes = sorted(int(c) for c in rng.choice(total, size=size, replace=False))
    else:
        picked = set()
        while len(picked) < size:
            picked.add(tuple(int(rng.integers(r)) for r in radices))
        codes = sorted(picked)

    entities = []
    for code in codes:
        if isinstance(code, tuple):
            digits = code
        else:
            digits, rest = [], code
            for r in reversed(radices):
                digits.append(rest % r)
                rest //= r
            digits = tuple(reversed(digits))
        entities.append({slot: schema.value_vocab[slot][d] for slot, d in zip(schema.slots, digits)})
    return EntityTable(entities=entities)


def build_environment(config: Union[DomainConfig, Mapping[str, Any]]) -> Environment:
    config = _as_domain_config(config)
    schema = build_schema(config)
    db = build_entity_table(schema, config.db_size, make_rng(config.seed, "environment"))
    logger.debug(f"🔍 domain.py: schema {schema.n_slots}x{schema.vocab_size}, db {len(db.entities)} entities")
    return Environment(schema=schema, db=db)


def sample_goal(schema: Schema, update_prob: float, rng: np.random.Generator) -> UserGoal:
    """One uniform value per slot; each slot independently scheduled for a revision"""
    if not 0.0 <= update_prob < 1.0:
        raise ConfigurationError(f"update_prob must be in [0, 1), got {update_prob}")
    targets = {}
    for slot in schema.slots:
        vocab = schema.value_vocab[slot]
        targets[slot] = vocab[int(rng.integers(len(vocab)))]

    schedule = {}
    for slot in schema.slots:
        vocab = schema.value_vocab[slot]
        if rng.random() >= update_prob or len(vocab) < 2:
            continue
        original = schema.value_index(targets[slot])
        revised = vocab[(original + 1 + int(rng.integers(len(vocab) - 1))) % len(vocab)]
        earliest = int(rng.integers(1, schema.n_slots + 1))
        schedule[slot] = (revised, earliest)
    return UserGoal(targets=targets, update_schedule=schedule)


def corrupt(utterance: Utterance, noise_rate: float, schema: Schema, rng: np.random.Generator) -> Utterance:
    """Replace each value token by its confusable neighbor with probability noise_rate"""
    if not 0.0 <= noise_rate < 1.0:
        raise ConfigurationError(f"noise_rate must be in [0, 1), got {noise_rate}")
    if not utterance.value_tokens:
        return utterance
    draws = rng.random(len(utterance.value_tokens))
    tokens = tuple(
        schema.neighbor(token) if draw < noise_rate else token
        for token, draw in zip(utterance.value_tokens, draws)
    )
    return utterance.with_values(tokens)


def success_check(
        bs: BeliefState,
        goal: UserGoal,
        turn: int,
        max_turns: int,
        closed: bool = False,
) -> Outcome:
    """
    Terminal signal. `closed` means the system issued its closing action this turn;
    a user `bye` alone never ends the dialog.
    """
    if closed:
        final = goal.final_targets
        equal = all(bs.values.get(slot) == final.get(slot) for slot in bs.values)
        return Outcome.SUCCESS if equal else Outcome.FAILURE
    if turn >= max_turns:
        return Outcome.FAILURE
    return Outcome.ONGOING


def db_query(bs: BeliefState, db: EntityTable) -> QueryFeature:
    if not db.entities:
        raise ConfigurationError("entity table is empty")
    filled = {slot: value for slot, value in bs.values.items() if value is not None}
    matches = 0
    for entity in db.entities:
        if all(entity.get(slot) == value for slot, value in filled.items()):
            matches += 1
            if matches > 1:
                break
    return QueryFeature(
        match_count_bucket=min(matches, 2),
        filled_fraction=len(filled) / len(bs.values) if bs.values else 0.0,
    )
