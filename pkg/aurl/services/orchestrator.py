"""
The outer loop: scripted corpus, supervised pretraining, then RL with
asynchronously drained buffers.

Small buffers (sys_dp, user_dp, user_nlu) hold one entry per dialog and feed
the fast modules at epoch end; the large sys_dst buffer holds one entry per
turn and feeds the curriculum DST update whenever it fills, which pauses
episode generation. Every baseline is a configuration of this one loop.
"""
import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from aurl.config import dump_run_config
from aurl.core.domain import build_schema, sample_goal
from aurl.core.heads import HeadedNet
from aurl.dependencies import get_encoder, get_environment
from aurl.schemas.config import RunConfig
from aurl.schemas.constants import BufferName, DecodeMode, RunMode, UpdateType
from aurl.schemas.models import (
    CorpusDialog,
    DifficultyTable,
    Environment,
    Metrics,
    MetricsRow,
    UpdateEvent,
)
from aurl.schemas.types import DialogRecord, DstTransition
from aurl.services.buffers import BufferSet, schedule_check
from aurl.services.corpus import (
    check_corpus,
    corpus_stats,
    dst_examples,
    generate_corpus,
    nlu_examples,
    read_corpus,
    split_corpus,
    system_dp_examples,
    user_dp_examples,
    write_corpus,
)
from aurl.services.curriculum import measure_difficulty, run_curriculum_update
from aurl.services.episode import AgentSystemSide, AgentUserSide, EpisodeSettings, run_episode
from aurl.services.evaluation import EvalReport, compute_metrics, evaluate, run_fsa_episodes
from aurl.services.system_agent import SystemAgent
from aurl.services.user_agent import UserAgent
from aurl.utils.artifacts import (
    EVAL_FIELDS,
    METRICS_FIELDS,
    PHASE_FIELDS,
    UPDATE_FIELDS,
    CsvLog,
    RunLayout,
    append_jsonl,
    read_difficulty_csv,
    verify_manifest,
    write_csv,
    write_difficulty_csv,
    write_json,
    write_manifest,
)
from aurl.utils.errors import CheckpointError, MeasurementError, TrainingError
from aurl.utils.logger import logger
from aurl.utils.seeding import make_rng

PRETRAINED_DIR = "pretrained"
HELDOUT_FILE = "heldout.jsonl"
REPORT_FILE = "pretrain_report.json"


# Checkpoints
@dataclass
class Checkpoint:
    env: Environment
    system: SystemAgent
    users: List[UserAgent]
    table: Optional[DifficultyTable] = None


def save_checkpoint(
        directory: Union[str, Path],
        env: Environment,
        system: SystemAgent,
        users: Sequence[UserAgent],
        table: Optional[DifficultyTable] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "environment.json").write_text(env.model_dump_json(by_alias=True), encoding="utf-8")
    system.save(directory / "system")
    for user in users:
        user.save(directory / f"user_{user.user_id}")
    if table is not None:
        write_difficulty_csv(directory / "difficulty.csv", table)
    write_manifest(directory)
    logger.info(f"💾 orchestrator.py: checkpoint written to {directory}")
    return directory


def load_checkpoint(directory: Union[str, Path], config: RunConfig, n_users: int = 1) -> Checkpoint:
    """
    Load and verify a checkpoint directory; missing users are cloned from
    the first one (multi-user runs start from a single pretrained user).
    """
    directory = Path(directory)
    if not directory.is_dir():
        logger.error(f"❌ orchestrator.py: checkpoint directory not found: {directory}")
        raise CheckpointError(f"checkpoint directory not found: {directory}", data={"path": str(directory)})
    verify_manifest(directory)
    try:
        env = Environment.model_validate_json((directory / "environment.json").read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise CheckpointError(f"cannot read environment of {directory}: {e}", data={"path": str(directory)})
    if env.schema_ != build_schema(config.domain):
        raise CheckpointError(f"checkpoint in {directory} was built for a different domain",
                              data={"path": str(directory)})

    schema = env.schema_
    encoder = get_encoder(schema)
    system = SystemAgent.load(directory / "system", schema, encoder, config.nnet)
    user_dirs = sorted(
        (p for p in directory.glob("user_*") if p.is_dir()),
        key=lambda p: int(p.name.split("_")[1]),
    )
    if not user_dirs:
        raise CheckpointError(f"no user agents in {directory}", data={"path": str(directory)})
    users = [UserAgent.load(p, schema, encoder, config.nnet, user_id=i) for i, p in enumerate(user_dirs[:n_users])]
    while len(users) < n_users:
        users.append(users[0].clone(len(users)))
    return Checkpoint(env, system, users, read_difficulty_csv(directory / "difficulty.csv"))


def parameter_digest(net: HeadedNet) -> str:
    digest = hashlib.sha256()
    for role, part in sorted(net.roles().items()):
        digest.update(role.encode("utf-8"))
        for array in part.parameters():
            digest.update(np.ascontiguousarray(array).tobytes())
    return digest.hexdigest()


# Supervised pretraining
@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    directory: Path
    report: Dict


def _loss_points(losses: Sequence[float], n_points: int) -> List[float]:
    """Training loss at `n_points` evenly spaced epochs"""
    if not losses:
        return []
    idx = np.unique(np.linspace(0, len(losses) - 1, min(n_points, len(losses))).round().astype(int))
    return [float(losses[i]) for i in idx]


def heldout_accuracy(system: SystemAgent, examples: Sequence[DstTransition]) -> Tuple[float, Dict[str, float]]:
    """(belief joint accuracy, per-action accuracy with the user action included)"""
    if not examples:
        return 0.0, {}
    ops, actions = system.predict_ops(np.stack([t.features for t in examples]))
    gold_ops = np.array([t.slot_ops for t in examples])
    gold_actions = np.array([t.user_action for t in examples])
    belief_hits = np.all(ops == gold_ops, axis=1)
    full_hits = belief_hits & (actions == gold_actions)
    per_action: Dict[str, List[bool]] = defaultdict(list)
    for t, hit in zip(examples, full_hits):
        per_action[t.user_action_name].append(bool(hit))
    return float(np.mean(belief_hits)), {a: float(np.mean(h)) for a, h in sorted(per_action.items())}


def pretrain_sl(
        config: RunConfig,
        out_dir: Union[str, Path],
        corpus: Optional[Sequence[CorpusDialog]] = None,
        progress: bool = False,
) -> PretrainResult:
    """
    DST and NLU by cross-entropy on gold labels, both policies on the scripted
    decisions; the system policy is fitted after the DST so its context
    features come from the trained trunk.
    """
    env = get_environment(config.domain)
    schema = env.schema_
    encoder = get_encoder(schema)
    nnet = config.nnet
    if corpus is None:
        corpus = generate_corpus(env, config, config.orchestrator.corpus_dialogs, config.seed, progress)
    check_corpus(corpus)
    train_set, held_set = split_corpus(corpus, config.orchestrator.held_out_fraction)

    system = SystemAgent.initialize(schema, encoder, nnet, make_rng(config.seed, "init", "system"))
    user = UserAgent.initialize(schema, encoder, nnet, make_rng(config.seed, "init", "user"), user_id=0)

    dst_train = dst_examples(train_set, schema, encoder)
    nlu_train = nlu_examples(train_set, schema, encoder)
    user_dp = user_dp_examples(train_set, schema, encoder)
    logger.info(
        f"🎓 orchestrator.py: pretraining on {len(train_set)} dialogs ({len(dst_train)} turns), "
        f"{len(held_set)} held out"
    )

    dst_losses, nlu_losses, user_losses = [], [], []
    batch = nnet.sl_batch_size
    for epoch in tqdm(range(nnet.sl_epochs), desc="pretrain", disable=not progress, leave=False):
        rng = make_rng(config.seed, "sl", epoch)
        order = rng.permutation(len(dst_train))
        losses = [system.dst_supervised_update([dst_train[i] for i in order[s:s + batch]])
                  for s in range(0, len(order), batch)]
        dst_losses.append(float(np.mean(losses)))
        losses = [user.nlu_update([nlu_train[i] for i in order[s:s + batch]])
                  for s in range(0, len(order), batch)]
        nlu_losses.append(float(np.mean(losses)))
        losses = [user.dp_supervised_update(user_dp.features[idx], user_dp.actions[idx], user_dp.slots[idx])
                  for idx in (order[s:s + batch] for s in range(0, len(order), batch))]
        user_losses.append(float(np.mean(losses)))
        if not np.isfinite(dst_losses[-1] + nlu_losses[-1] + user_losses[-1]):
            raise TrainingError("non-finite pretraining loss", data={"epoch": epoch})
        logger.debug(f"🔍 orchestrator.py: sl epoch {epoch} dst={dst_losses[-1]:.4f} "
                     f"nlu={nlu_losses[-1]:.4f} user_dp={user_losses[-1]:.4f}")

    sys_dp = system_dp_examples(train_set, system, env.db)
    sys_losses = []
    for epoch in range(nnet.sl_epochs):
        order = make_rng(config.seed, "sl", "system_dp", epoch).permutation(len(sys_dp))
        losses = [system.dp_supervised_update(sys_dp.features[idx], sys_dp.actions[idx], sys_dp.slots[idx])
                  for idx in (order[s:s + batch] for s in range(0, len(order), batch))]
        sys_losses.append(float(np.mean(losses)))

    held_dst = dst_examples(held_set, schema, encoder)
    joint, per_action = heldout_accuracy(system, held_dst)
    table = None
    try:
        table = measure_difficulty(system, held_dst, config.curriculum, schema)
    except MeasurementError as e:
        if config.curriculum_active:
            logger.error(f"❌ orchestrator.py: the curriculum needs a difficulty table: {e.message}")
            raise
        logger.warning(f"⚠️ orchestrator.py: no difficulty table: {e.message}")

    directory = Path(out_dir) / PRETRAINED_DIR
    checkpoint = Checkpoint(env, system, [user], table)
    write_corpus(directory / HELDOUT_FILE, held_set)
    report = {
        "corpus": corpus_stats(corpus),
        "train_dialogs": len(train_set),
        "heldout_dialogs": len(held_set),
        "heldout_dst_joint_acc": joint,
        "heldout_action_acc": per_action,
        "dst_loss_points": _loss_points(dst_losses, nnet.sl_checkpoints),
        "nlu_loss_points": _loss_points(nlu_losses, nnet.sl_checkpoints),
        "user_dp_loss_points": _loss_points(user_losses, nnet.sl_checkpoints),
        "system_dp_loss_points": _loss_points(sys_losses, nnet.sl_checkpoints),
        "difficulty": table.model_dump(mode="json") if table else None,
    }
    write_json(directory / REPORT_FILE, report)
    save_checkpoint(directory, env, system, [user], table)
    logger.info(f"✅ orchestrator.py: pretrained, held-out DST joint accuracy {joint:.4f}")
    return PretrainResult(checkpoint, directory, report)


# RL training
@dataclass
class TrainResult:
    layout: RunLayout
    metrics: List[MetricsRow] = field(default_factory=list)
    updates: List[UpdateEvent] = field(default_factory=list)
    total_turns: int = 0
    summary: Dict = field(default_factory=dict)

    def count(self, buffer: str) -> int:
        return sum(1 for u in self.updates if u.buffer == buffer)


class Trainer:
    """One training run; holds the agents, the buffers and the run's logs"""

    def __init__(self, config: RunConfig, checkpoint: Checkpoint, layout: RunLayout, progress: bool = False):
        self.config = config
        self.env = checkpoint.env
        self.schema = checkpoint.env.schema_
        self.system = checkpoint.system
        self.users = checkpoint.users
        self.table = checkpoint.table
        self.layout = layout
        self.progress = progress

        self.buffers = BufferSet(config.effective_buffers())
        self.settings = EpisodeSettings.from_run_config(config, record_timing=False)
        self.system_side = AgentSystemSide(self.system, self.env.db)
        self.user_sides = [AgentUserSide(u) for u in self.users]

        self.metrics_log = CsvLog(layout.metrics, METRICS_FIELDS)
        self.updates_log = CsvLog(layout.updates, UPDATE_FIELDS)
        self.phases_log = CsvLog(layout.curriculum, PHASE_FIELDS)
        self.result = TrainResult(layout)

        self.dialog_index = 0
        self.fallbacks = 0
        self.dst_update_index = 0
        self.dialogs_per_user = [0] * len(self.users)

    # Updates
    def _log_update(self, event: UpdateEvent) -> None:
        self.result.updates.append(event)
        self.updates_log.append(event.model_dump())

    def fast_update(self, epoch: int) -> None:
        """A2C for both policies and critics, NLU for each user, from the drained small buffers"""
        gamma = self.config.rewards.gamma
        sys_records: List[DialogRecord] = self.buffers.sys_dp.drain()
        sys_transitions = [t for r in sys_records for t in r.transitions]
        losses = self.system.a2c_update(sys_transitions, gamma) if sys_transitions else {}
        self._log_update(UpdateEvent(epoch=epoch, buffer=BufferName.SYS_DP.value, size=len(sys_records),
                                     update_type=UpdateType.FAST.value, loss=losses.get("policy_loss")))

        for buffer, step in ((self.buffers.user_dp, "dp"), (self.buffers.user_nlu, "nlu")):
            records: List[DialogRecord] = buffer.drain()
            by_user: Dict[int, list] = defaultdict(list)
            for r in records:
                by_user[r.user_id].extend(r.transitions)
            user_losses = []
            for user_id in sorted(by_user):
                transitions = by_user[user_id]
                if not transitions:
                    continue
                user = self.users[user_id]
                if step == "dp":
                    user_losses.append(user.a2c_update(transitions, gamma)["policy_loss"])
                else:
                    user_losses.append(user.nlu_update(transitions))
            self._log_update(UpdateEvent(epoch=epoch, buffer=buffer.name, size=len(records),
                                         update_type=UpdateType.FAST.value,
                                         loss=float(np.mean(user_losses)) if user_losses else None))

    def dst_update(self, epoch: int) -> None:
        drained = self.buffers.sys_dst.drain()
        if self.buffers.dst_counts_dialogs:
            transitions = [t for dialog in drained for t in dialog]
        else:
            transitions = drained
        active = self.config.curriculum_active
        curriculum = run_curriculum_update(self.system, transitions, self.table, self.config.curriculum,
                                           enabled=active)
        self.dst_update_index += 1
        self._log_update(UpdateEvent(
            epoch=epoch, buffer=BufferName.SYS_DST.value, size=len(drained),
            update_type=(UpdateType.DST_CURRICULUM if active else UpdateType.DST).value,
            loss=curriculum.mean_loss,
        ))
        for phase in curriculum.phases:
            self.phases_log.append({"epoch": epoch, "update": self.dst_update_index, **phase.model_dump()})
        logger.info(f"🧠 orchestrator.py: DST update {self.dst_update_index} at epoch {epoch} "
                    f"({len(transitions)} turns, {curriculum.steps} steps)")

    # Episodes
    def run_dialog(self, epoch: int) -> None:
        if self.buffers.any_small_full():
            logger.warning("⚠️ orchestrator.py: small buffer full before the epoch ended, flushing early")
            self.fast_update(epoch)
        user_id = self.dialog_index % len(self.users)
        rng = make_rng(self.config.seed, "episode", self.dialog_index)
        goal = sample_goal(self.schema, self.config.domain.update_prob, rng)
        result = run_episode(self.system_side, self.user_sides[user_id], self.env, goal, self.settings, rng,
                             DecodeMode.SAMPLE, episode=self.dialog_index)
        self.dialog_index += 1
        self.dialogs_per_user[user_id] += 1
        self.result.total_turns += result.turn_count
        self.fallbacks += result.fallbacks
        if result.fallbacks:
            logger.debug(f"🔍 orchestrator.py: dialog {result.episode} had {result.fallbacks} fallbacks")

        self.buffers.sys_dp.push(DialogRecord(user_id, result.system_transitions()))
        self.buffers.user_dp.push(DialogRecord(user_id, result.user_transitions()))
        self.buffers.user_nlu.push(DialogRecord(user_id, result.nlu_transitions()))
        if self.config.dst_trainable:
            dst = result.dst_transitions(self.schema)
            if self.buffers.dst_counts_dialogs:
                self.buffers.sys_dst.push(dst)
                if self.buffers.sys_dst.is_full():
                    self.dst_update(epoch)
            else:
                for transition in dst:
                    self.buffers.sys_dst.push(transition)
                    if self.buffers.sys_dst.is_full():
                        self.dst_update(epoch)
        if self.config.eval.dump_transcripts:
            append_jsonl(self.layout.transcripts, [result.log()])

    # Metrics
    def evaluate(self, epoch: int) -> MetricsRow:
        timing = self.config.eval.record_timing
        settings = EpisodeSettings.from_run_config(self.config, record_timing=timing)
        results = run_fsa_episodes(self.system_side, self.env, self.config, self.config.eval.train_eval_dialogs,
                                   ("train_eval", epoch), settings)
        metrics = compute_metrics(results)
        row = metrics_row(epoch, self.config.mode, metrics, timing)
        self.result.metrics.append(row)
        self.metrics_log.append(row.model_dump())
        logger.info(f"📊 orchestrator.py: epoch {epoch} succ={row.dialog_succ:.3f} turns={row.avg_turn:.2f} "
                    f"reward={row.avg_reward:.3f} dst={row.dst_acc:.3f} fallbacks={self.fallbacks}")
        return row

    def checkpoint(self, epoch: int) -> None:
        if self.config.orchestrator.save_checkpoints:
            save_checkpoint(self.layout.epoch_dir(epoch), self.env, self.system, self.users, self.table)

    def run(self) -> TrainResult:
        config = self.config
        dst_start = parameter_digest(self.system.dst)
        self.evaluate(0)
        interval = config.orchestrator.eval_interval
        for epoch in tqdm(range(1, config.epochs + 1), desc=config.mode.value, disable=not self.progress):
            for _ in range(config.dialogs_per_epoch):
                self.run_dialog(epoch)
            if schedule_check(self.buffers).update_fast_modules:
                self.fast_update(epoch)
            logger.debug(f"🔍 orchestrator.py: epoch {epoch} done, {self.result.total_turns} turns so far")
            if epoch % interval == 0 or epoch == config.epochs:
                self.evaluate(epoch)
                self.checkpoint(epoch)

        dst_end = parameter_digest(self.system.dst)
        self.result.summary = {
            "mode": config.mode.value,
            "n_users": len(self.users),
            "epochs": config.epochs,
            "dialogs": self.dialog_index,
            "dialogs_per_user": self.dialogs_per_user,
            "total_turns": self.result.total_turns,
            "dp_updates": self.result.count(BufferName.SYS_DP.value),
            "dst_updates": self.result.count(BufferName.SYS_DST.value),
            "dst_capacity": self.buffers.sys_dst.capacity,
            "dst_unit": self.buffers.config.dst_unit,
            "dst_pending": len(self.buffers.sys_dst),
            "fallbacks": self.fallbacks,
            "dst_digest_start": dst_start,
            "dst_digest_end": dst_end,
        }
        write_json(self.layout.summary, self.result.summary)
        logger.info(
            f"✅ orchestrator.py: {config.mode.value} finished, {self.result.total_turns} turns, "
            f"{self.result.summary['dp_updates']} DP updates, {self.result.summary['dst_updates']} DST updates"
        )
        return self.result


def metrics_row(epoch: int, mode: RunMode, metrics: Metrics, timing: bool) -> MetricsRow:
    return MetricsRow(
        epoch=epoch,
        mode=mode.value,
        dialog_succ=metrics.dialog_succ,
        avg_turn=metrics.avg_turn,
        avg_reward=metrics.avg_reward,
        dst_acc=metrics.dst_acc,
        wall_ms_per_turn=metrics.avg_time if timing else None,
    )


def _difficulty_for_run(config: RunConfig, checkpoint: Checkpoint, pretrained_dir: Path) -> Optional[DifficultyTable]:
    if not config.curriculum_active:
        return checkpoint.table
    table = checkpoint.table
    if config.curriculum.remeasure or table is None:
        heldout = pretrained_dir / HELDOUT_FILE
        if heldout.is_file():
            schema = checkpoint.env.schema_
            examples = dst_examples(read_corpus(heldout), schema, get_encoder(schema))
            table = measure_difficulty(checkpoint.system, examples, config.curriculum, schema)
    if table is None:
        logger.error("❌ orchestrator.py: curriculum needs a difficulty table and the checkpoint has none")
        raise MeasurementError("no difficulty table in the pretrained checkpoint",
                               data={"path": str(pretrained_dir)})
    return table


def train(
        config: RunConfig,
        out_dir: Union[str, Path],
        pretrained_dir: Optional[Union[str, Path]] = None,
        progress: bool = False,
) -> TrainResult:
    """Run one experiment in `out_dir`; SL mode only evaluates the pretrained agents"""
    layout = RunLayout(Path(out_dir)).prepare()
    dump_run_config(config, layout.config)
    pretrained_dir = Path(pretrained_dir) if pretrained_dir else layout.root / PRETRAINED_DIR

    if config.mode == RunMode.SL:
        if pretrained_dir.is_dir():
            checkpoint = load_checkpoint(pretrained_dir, config)
        else:
            logger.info(f"🎓 orchestrator.py: no checkpoint at {pretrained_dir}, pretraining first")
            checkpoint = pretrain_sl(config, layout.root, progress=progress).checkpoint
        trainer = Trainer(config.model_copy(update={"epochs": 0}), checkpoint, layout, progress)
        return trainer.run()

    checkpoint = load_checkpoint(pretrained_dir, config, config.n_users)
    checkpoint.table = _difficulty_for_run(config, checkpoint, pretrained_dir)
    rl_rate = config.nnet.rl_learning_rate
    checkpoint.system.use_learning_rate(rl_rate)
    for user in checkpoint.users:
        user.use_learning_rate(rl_rate)
    logger.info(f"🚀 orchestrator.py: {config.mode.value} for {config.epochs} epochs with {config.n_users} user(s)")
    try:
        return Trainer(config, checkpoint, layout, progress).run()
    except TrainingError as e:
        logger.error(f"❌ orchestrator.py: training aborted: {e.message} {e.data}")
        raise


# Evaluation of a checkpoint
def evaluate_checkpoint(
        config: RunConfig,
        checkpoint_dir: Union[str, Path],
        out_dir: Union[str, Path],
        progress: bool = False,
) -> EvalReport:
    checkpoint = load_checkpoint(checkpoint_dir, config)
    system = AgentSystemSide(checkpoint.system, checkpoint.env.db)
    report = evaluate(system, checkpoint.env, config, record_timing=True, progress=progress)
    eval_dir = Path(out_dir) / "eval"
    rows = [{"repeat": r, **m.model_dump()} for r, m in enumerate(report.repeats)]
    rows.append({"repeat": "mean", **report.aggregate.model_dump()})
    write_csv(eval_dir / "metrics.csv", EVAL_FIELDS, rows)
    if report.logs:
        append_jsonl(eval_dir / "transcripts.jsonl", report.logs)
    logger.info(f"✅ orchestrator.py: evaluation written to {eval_dir}")
    return report


def corpus_command(config: RunConfig, out_dir: Union[str, Path], progress: bool = False) -> List[CorpusDialog]:
    env = get_environment(config.domain)
    dialogs = generate_corpus(env, config, config.orchestrator.corpus_dialogs, config.seed, progress)
    out_dir = Path(out_dir)
    write_corpus(out_dir / "corpus.jsonl", dialogs)
    write_json(out_dir / "corpus_stats.json", corpus_stats(dialogs))
    return dialogs
