from pathlib import Path

import numpy as np
import pytest

from aurl.core.domain import build_environment
from aurl.core.encoding import FeatureEncoder
from aurl.dependencies import reset_cache
from aurl.schemas.config import (
    BufferConfig,
    CurriculumConfig,
    DomainConfig,
    EvalConfig,
    NetConfig,
    OrchestratorConfig,
    RunConfig,
)
from aurl.schemas.models import Environment, Schema


def small_config(**overrides) -> RunConfig:
    """A run small enough for unit tests: 3 slots, 4 values, tiny nets"""
    base = RunConfig(
        name="test",
        epochs=4,
        dialogs_per_epoch=3,
        seed=7,
        domain=DomainConfig(slot_count=3, vocab_size=4, db_size=20, max_turns=16),
        nnet=NetConfig(hidden_width=16, hidden_layers=1, sl_epochs=2, sl_batch_size=32, sl_checkpoints=2),
        buffers=BufferConfig(user_dp=3, user_nlu=3, sys_dp=3, sys_dst=40),
        curriculum=CurriculumConfig(enabled=False, min_coverage=1, batch_size=16),
        orchestrator=OrchestratorConfig(corpus_dialogs=40, eval_interval=2),
        eval=EvalConfig(n_dialogs=6, repeats=2, train_eval_dialogs=4),
    )
    return RunConfig.model_validate({**base.model_dump(), **overrides}) if overrides else base


@pytest.fixture(autouse=True)
def _fresh_cache():
    reset_cache()
    yield
    reset_cache()


@pytest.fixture
def config() -> RunConfig:
    return small_config()


@pytest.fixture
def env(config: RunConfig) -> Environment:
    return build_environment(config.domain)


@pytest.fixture
def schema(env: Environment) -> Schema:
    return env.schema_


@pytest.fixture
def encoder(schema: Schema) -> FeatureEncoder:
    return FeatureEncoder(schema)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def pretrained_dir(tmp_path_factory) -> Path:
    """One supervised checkpoint shared by the training tests"""
    from aurl.services.orchestrator import pretrain_sl

    root = tmp_path_factory.mktemp("pretrain")
    return pretrain_sl(small_config(), root).directory


def pytest_addoption(parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run slow full-size tests")


def pytest_collection_modifyitems(config, items) -> None:
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
