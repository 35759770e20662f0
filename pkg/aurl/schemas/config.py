from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from aurl.schemas.constants import DefaultValues, RunMode


class ConfigBlock(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class DomainConfig(ConfigBlock):
    slot_count: int = Field(DefaultValues.SLOT_COUNT, ge=1)
    vocab_size: int = Field(DefaultValues.VOCAB_SIZE, ge=2)
    noise_rate: float = Field(DefaultValues.NOISE_RATE, ge=0.0, lt=1.0)
    update_prob: float = Field(DefaultValues.UPDATE_PROB, ge=0.0, lt=1.0)
    max_turns: int = Field(DefaultValues.MAX_TURNS, ge=2)
    db_size: int = Field(DefaultValues.DB_SIZE, ge=1)
    seed: int = DefaultValues.SEED
    extra_system_actions: int = Field(0, ge=0, le=DefaultValues.MAX_SYSTEM_ACTIONS - 6)
    extra_user_actions: int = Field(0, ge=0, le=DefaultValues.MAX_USER_ACTIONS - 8)


class NetConfig(ConfigBlock):
    hidden_width: int = Field(DefaultValues.HIDDEN_WIDTH, ge=1)
    hidden_layers: int = Field(DefaultValues.HIDDEN_LAYERS, ge=1)
    sl_learning_rate: float = Field(DefaultValues.SL_LEARNING_RATE, gt=0)
    rl_learning_rate: float = Field(DefaultValues.RL_LEARNING_RATE, gt=0)
    clip_norm: float = Field(DefaultValues.CLIP_NORM, gt=0)
    entropy_coef: float = Field(DefaultValues.ENTROPY_COEF, ge=0)
    sl_epochs: int = Field(12, ge=1)
    sl_batch_size: int = Field(32, ge=1)
    sl_checkpoints: int = Field(5, ge=1)


class RewardConfig(ConfigBlock):
    success_reward: float = DefaultValues.SUCCESS_REWARD
    failure_penalty: float = DefaultValues.FAILURE_PENALTY
    system_penalty_unit: float = DefaultValues.SYSTEM_PENALTY_UNIT
    user_penalty_unit: float = DefaultValues.USER_PENALTY_UNIT
    gamma: float = Field(DefaultValues.GAMMA, gt=0.0, le=1.0)

    # system triggers
    penalize_confirm_empty: bool = True
    penalize_request_confirmed: bool = True
    penalize_result_after_deny: bool = True
    penalize_early_bye: bool = True
    # user triggers
    penalize_repeat_inform: bool = True
    penalize_unprompted_affirm: bool = True
    penalize_silence_fallback: bool = True

    @model_validator(mode="after")
    def _check_signs(self) -> "RewardConfig":
        if not self.success_reward > 0 > self.failure_penalty:
            raise ValueError("success_reward must be > 0 and failure_penalty < 0")
        if self.system_penalty_unit >= 0 or self.user_penalty_unit >= 0:
            raise ValueError("penalty units must be negative")
        return self


class BufferConfig(ConfigBlock):
    user_dp: int = Field(DefaultValues.USER_DP_CAPACITY, ge=1)
    user_nlu: int = Field(DefaultValues.USER_NLU_CAPACITY, ge=1)
    sys_dp: int = Field(DefaultValues.SYS_DP_CAPACITY, ge=1)
    sys_dst: int = Field(DefaultValues.SYS_DST_CAPACITY, ge=1)
    # unit of one sys_dst entry
    dst_unit: Literal["turns", "dialogs"] = "turns"


class CurriculumConfig(ConfigBlock):
    enabled: bool = True
    easy_threshold: float = Field(DefaultValues.EASY_THRESHOLD, ge=0.0, le=1.0)
    middle_threshold: float = Field(DefaultValues.MIDDLE_THRESHOLD, ge=0.0, le=1.0)
    batch_size: int = Field(DefaultValues.CURRICULUM_BATCH, ge=1)
    min_coverage: int = Field(DefaultValues.MIN_ACTION_COVERAGE, ge=1)
    remeasure: bool = False

    @model_validator(mode="after")
    def _check_order(self) -> "CurriculumConfig":
        if self.middle_threshold > self.easy_threshold:
            raise ValueError("middle_threshold must not exceed easy_threshold")
        return self


class OrchestratorConfig(ConfigBlock):
    corpus_dialogs: int = Field(DefaultValues.CORPUS_DIALOGS, ge=1)
    held_out_fraction: float = Field(DefaultValues.HELD_OUT_FRACTION, gt=0.0, lt=1.0)
    eval_interval: int = Field(DefaultValues.EVAL_INTERVAL, ge=1)
    # scripted corpus user
    multi_prob: float = Field(0.2, ge=0.0, le=1.0)
    silence_prob: float = Field(0.03, ge=0.0, le=1.0)
    save_checkpoints: bool = True


class EvalConfig(ConfigBlock):
    n_dialogs: int = Field(DefaultValues.EVAL_DIALOGS, ge=1)
    repeats: int = Field(DefaultValues.EVAL_REPEATS, ge=1)
    train_eval_dialogs: int = Field(DefaultValues.TRAIN_EVAL_DIALOGS, ge=1)
    record_timing: bool = False
    dump_transcripts: bool = False


class RunConfig(ConfigBlock):
    name: str = "aurl"
    mode: RunMode = RunMode.AURL
    n_users: int = Field(1, ge=1)
    epochs: int = Field(DefaultValues.EPOCHS, ge=0)
    dialogs_per_epoch: int = Field(DefaultValues.DIALOGS_PER_EPOCH, ge=1)
    seed: int = DefaultValues.SEED

    domain: DomainConfig = Field(default_factory=DomainConfig)
    nnet: NetConfig = Field(default_factory=NetConfig)
    rewards: RewardConfig = Field(default_factory=RewardConfig)
    buffers: BufferConfig = Field(default_factory=BufferConfig)
    curriculum: CurriculumConfig = Field(default_factory=CurriculumConfig)
    orchestrator: OrchestratorConfig = Field(default_factory=OrchestratorConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _check_mode(self) -> "RunConfig":
        if self.mode == RunMode.AURL_MURL and self.n_users < 2:
            raise ValueError("mode AURL-MURL requires n_users >= 2")
        if self.mode != RunMode.AURL_MURL and self.n_users != 1:
            raise ValueError(f"mode {self.mode.value} requires n_users == 1")
        # one seed drives everything, including the environment tables
        if self.domain.seed != self.seed:
            self.domain.seed = self.seed
        return self

    @property
    def dst_trainable(self) -> bool:
        return self.mode not in (RunMode.SL, RunMode.RL_FIXED_DST)

    @property
    def curriculum_active(self) -> bool:
        return self.curriculum.enabled and self.mode in (RunMode.AURL, RunMode.AURL_MURL)

    def effective_buffers(self) -> BufferConfig:
        """Buffer layout implied by the mode; the synchronous baseline is just smaller DST capacity"""
        if self.mode == RunMode.RL_TRAIN_DST:
            n = self.dialogs_per_epoch
            return BufferConfig(user_dp=n, user_nlu=n, sys_dp=n, sys_dst=n, dst_unit="dialogs")
        return self.buffers
