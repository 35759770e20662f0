import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import typer
from typing_extensions import Annotated

from aurl.config import load_run_config, settings
from aurl.schemas.config import RunConfig
from aurl.schemas.constants import RunMode
from aurl.services import acceptance, orchestrator, reporting
from aurl.utils.errors import AurlError, ExitCode, handle_error
from aurl.utils.logger import attach_file_handler, detach_handler, logger, set_level

app = typer.Typer(
    name="aurl",
    help="Asynchronous-updating multi-agent RL for slot-filling dialog.",
    no_args_is_help=True,
    add_completion=False,
    pretty_exceptions_enable=False,
)

ConfigOpt = Annotated[Optional[Path], typer.Option("--config", help="Run configuration (YAML).")]
SeedOpt = Annotated[Optional[int], typer.Option("--seed", help="Single seed for all randomness.")]
OutOpt = Annotated[Path, typer.Option("--out", help="Directory receiving every artifact.")]
ModeOpt = Annotated[Optional[RunMode], typer.Option("--mode", help="Training mode.")]
UsersOpt = Annotated[Optional[int], typer.Option("--n-users", help="Number of user agents.")]
EpochsOpt = Annotated[Optional[int], typer.Option("--epochs", help="Training epochs.")]
QuietOpt = Annotated[bool, typer.Option("--quiet", help="Only log errors.")]


class _Session:
    """Logging and config for one command; the file handler lives under --out"""

    def __init__(self, out: Optional[Path], quiet: bool):
        self.out = out
        self.quiet = quiet
        self.handler = None

    def __enter__(self) -> "_Session":
        set_level("ERROR" if self.quiet else settings.LOG_LEVEL)
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            self.handler = attach_file_handler(self.out / "aurl.log")
        return self

    def __exit__(self, *exc) -> None:
        detach_handler(self.handler)

    @property
    def progress(self) -> bool:
        return settings.PROGRESS and not self.quiet

    @staticmethod
    def config(path: Optional[Path], overrides: Dict[str, Any]) -> RunConfig:
        return load_run_config(path or Path(settings.DEFAULT_CONFIG), overrides)


def _overrides(seed, mode, n_users, epochs) -> Dict[str, Any]:
    return {"seed": seed, "mode": mode.value if mode else None, "n_users": n_users, "epochs": epochs}


@app.command("gen-corpus")
def gen_corpus(
        config: ConfigOpt = None,
        seed: SeedOpt = None,
        out: OutOpt = Path("runs/corpus"),
        quiet: QuietOpt = False,
):
    """Generate the scripted, labelled dialog corpus."""
    with _Session(out, quiet) as session:
        run_config = session.config(config, _overrides(seed, None, None, None))
        orchestrator.corpus_command(run_config, out, session.progress)


@app.command()
def pretrain(
        config: ConfigOpt = None,
        seed: SeedOpt = None,
        out: OutOpt = Path("runs/aurl"),
        corpus: Annotated[Optional[Path], typer.Option("--corpus", help="Existing corpus.jsonl.")] = None,
        quiet: QuietOpt = False,
):
    """Supervised pretraining of every module; writes <out>/pretrained."""
    with _Session(out, quiet) as session:
        run_config = session.config(config, _overrides(seed, None, None, None))
        dialogs = orchestrator.read_corpus(corpus) if corpus else None
        orchestrator.pretrain_sl(run_config, out, dialogs, session.progress)


@app.command()
def train(
        config: ConfigOpt = None,
        seed: SeedOpt = None,
        out: OutOpt = Path("runs/aurl"),
        mode: ModeOpt = None,
        n_users: UsersOpt = None,
        epochs: EpochsOpt = None,
        pretrained: Annotated[Optional[Path], typer.Option("--pretrained", help="Pretrained checkpoint.")] = None,
        quiet: QuietOpt = False,
):
    """RL training from a pretrained checkpoint (defaults to <out>/pretrained)."""
    with _Session(out, quiet) as session:
        run_config = session.config(config, _overrides(seed, mode, n_users, epochs))
        orchestrator.train(run_config, out, pretrained, session.progress)


@app.command("eval")
def evaluate(
        checkpoint: Annotated[Path, typer.Option("--checkpoint", help="Checkpoint directory.")],
        config: ConfigOpt = None,
        seed: SeedOpt = None,
        out: OutOpt = Path("runs/eval"),
        quiet: QuietOpt = False,
):
    """Evaluate a checkpoint against the FSA user; writes <out>/eval/metrics.csv."""
    with _Session(out, quiet) as session:
        run_config = session.config(config, _overrides(seed, None, None, None))
        orchestrator.evaluate_checkpoint(run_config, checkpoint, out, session.progress)


@app.command()
def inspect(
        runs: Annotated[List[Path], typer.Argument(help="One or more run directories.")],
        quiet: QuietOpt = False,
):
    """Summarize finished runs; several runs are also compared side by side."""
    with _Session(None, quiet):
        summaries = [reporting.read_run(run) for run in runs]
        for summary in summaries:
            reporting.render_summary(summary)
        if len(summaries) > 1:
            reporting.render_comparison(summaries)


@app.command()
def accept(
        config: ConfigOpt = None,
        seed: SeedOpt = None,
        out: OutOpt = Path("runs/acceptance"),
        seeds: Annotated[int, typer.Option("--seeds", min=1, help="Consecutive seeds to run.")] = 5,
        quiet: QuietOpt = False,
):
    """Pretrain and train every compared mode on several seeds; exits 2 when a criterion fails."""
    with _Session(out, quiet) as session:
        run_config = session.config(config, _overrides(seed, None, None, None))
        report = acceptance.run_acceptance(run_config, out, seeds, session.progress)
        if not quiet:
            reporting.render_acceptance(report)
        return ExitCode.OK if report.passed else ExitCode.RUNTIME


def parse_and_dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one command and map the outcome to an exit code"""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=argv, prog_name="aurl", standalone_mode=False)
        return result if isinstance(result, int) else ExitCode.OK
    except click.exceptions.Abort:
        return ExitCode.RUNTIME
    except click.ClickException as e:
        e.show()
        return ExitCode.CONFIGURATION
    except AurlError as e:
        logger.error(f"❌ main.py: {handle_error(e)}")
        return e.code
    except Exception as e:
        logger.exception(f"💥 main.py: {handle_error(e)}")
        return ExitCode.RUNTIME


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
