"""
Run-directory layout and the small file formats every command shares:
metric/update/phase CSVs, JSON-lines transcripts and checkpoint manifests.
"""
import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from aurl.schemas.constants import Level
from aurl.schemas.models import DifficultyTable
from aurl.utils.errors import CheckpointError, ReportError
from aurl.utils.logger import logger

M = TypeVar("M", bound=BaseModel)

METRICS_FIELDS = ["epoch", "mode", "dialog_succ", "avg_turn", "avg_reward", "dst_acc", "wall_ms_per_turn"]
UPDATE_FIELDS = ["epoch", "buffer", "size", "update_type", "loss"]
PHASE_FIELDS = ["epoch", "update", "phase", "level", "transitions", "steps", "loss"]
EVAL_FIELDS = ["repeat", "dialog_succ", "avg_turn", "avg_reward", "dst_acc", "avg_time", "n_dialogs"]
DIFFICULTY_FIELDS = ["action", "accuracy", "level", "count"]
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class RunLayout:
    """Where one run keeps its files; everything lives under `root`"""
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.yaml"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def updates(self) -> Path:
        return self.root / "updates.csv"

    @property
    def curriculum(self) -> Path:
        return self.root / "curriculum.csv"

    @property
    def transcripts(self) -> Path:
        return self.root / "transcripts.jsonl"

    @property
    def summary(self) -> Path:
        return self.root / "run_summary.json"

    @property
    def log(self) -> Path:
        return self.root / "aurl.log"

    def epoch_dir(self, epoch: int) -> Path:
        return self.root / f"epoch_{epoch}"

    def prepare(self) -> "RunLayout":
        self.root.mkdir(parents=True, exist_ok=True)
        return self


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if hasattr(value, "value"):
        return value.value
    return value


class CsvLog:
    """Header on creation, one row per append; the file is always valid CSV"""

    def __init__(self, path: Union[str, Path], fields: Sequence[str]):
        self.path = Path(path)
        self.fields = list(fields)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow(self.fields)

    def append(self, row: Dict[str, Any]) -> None:
        with self.path.open("a", newline="", encoding="utf-8") as f:
            csv.writer(f).writerow([_cell(row.get(name)) for name in self.fields])


def write_csv(path: Union[str, Path], fields: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    log = CsvLog(path, fields)
    for row in rows:
        log.append(row)
    return log.path


def read_csv_rows(path: Union[str, Path], required: Sequence[str] = ()) -> List[Dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"missing file {path}", data={"path": str(path)})
    try:
        with path.open(newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            missing = [name for name in required if name not in header]
            if missing:
                raise ReportError(f"{path} lacks columns {missing}", data={"path": str(path)})
            rows = list(reader)
    except csv.Error as e:
        raise ReportError(f"cannot parse {path}: {e}", data={"path": str(path)})
    for i, row in enumerate(rows):
        if None in row or any(value is None for value in row.values()):
            raise ReportError(f"{path}: row {i + 1} has the wrong number of fields", data={"path": str(path)})
    return rows


def append_jsonl(path: Union[str, Path], records: Iterable[BaseModel]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")


def write_jsonl(path: Union[str, Path], records: Iterable[BaseModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("", encoding="utf-8")
    append_jsonl(path, records)
    return path


def read_jsonl(path: Union[str, Path], model: Type[M]) -> List[M]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"missing file {path}", data={"path": str(path)})
    records = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(model.model_validate_json(line))
        except ValidationError as e:
            raise ReportError(f"{path}:{number}: invalid {model.__name__} record: {e.error_count()} errors",
                              data={"path": str(path), "line": number})
    return records


def write_json(path: Union[str, Path], payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"missing file {path}", data={"path": str(path)})
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ReportError(f"cannot parse {path}: {e}", data={"path": str(path)})


# Checkpoint manifests
def sha256_file(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(directory: Union[str, Path]) -> Path:
    """sha256 of every file below `directory` (the manifest itself excluded)"""
    directory = Path(directory)
    files = sorted(p for p in directory.rglob("*") if p.is_file() and p.name != MANIFEST)
    entries = {p.relative_to(directory).as_posix(): sha256_file(p) for p in files}
    path = write_json(directory / MANIFEST, {"files": entries})
    logger.debug(f"🔍 artifacts.py: manifest of {len(entries)} files in {directory}")
    return path


def verify_manifest(directory: Union[str, Path]) -> Dict[str, str]:
    directory = Path(directory)
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise CheckpointError(f"no {MANIFEST} in {directory}", data={"path": str(directory)})
    entries = json.loads(manifest.read_text(encoding="utf-8")).get("files", {})
    for name, expected in entries.items():
        path = directory / name
        if not path.is_file():
            raise CheckpointError(f"checkpoint file missing: {path}", data={"path": str(path)})
        if sha256_file(path) != expected:
            raise CheckpointError(f"checkpoint file corrupt: {path}", data={"path": str(path)})
    return entries


# Difficulty tables
def write_difficulty_csv(path: Union[str, Path], table: DifficultyTable) -> Path:
    rows = [
        {"action": action, "accuracy": table.accuracy[action], "level": table.levels[action],
         "count": table.counts.get(action, 0)}
        for action in table.accuracy
    ]
    return write_csv(path, DIFFICULTY_FIELDS, rows)


def read_difficulty_csv(path: Union[str, Path]) -> Optional[DifficultyTable]:
    path = Path(path)
    if not path.is_file():
        return None
    rows = read_csv_rows(path, DIFFICULTY_FIELDS)
    try:
        return DifficultyTable(
            accuracy={r["action"]: float(r["accuracy"]) for r in rows},
            levels={r["action"]: Level(r["level"]) for r in rows},
            counts={r["action"]: int(r["count"]) for r in rows},
        )
    except ValueError as e:
        raise CheckpointError(f"malformed difficulty table {path}: {e}", data={"path": str(path)})
