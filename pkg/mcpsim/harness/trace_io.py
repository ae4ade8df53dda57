import json
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

from mcpsim.harness.trace import TraceEvent


class FileType(Enum):
    TRACE = "trace"
    DICT = "dict"
    TEXT = "text"


@dataclass
class SourceInfo:
    path: Path
    file_type: FileType
    name: Optional[str] = None


def detect_file_type(path: str | Path) -> FileType:
    suffix = Path(path).suffix
    if suffix == ".jsonl":
        return FileType.TRACE
    elif suffix == ".json":
        return FileType.DICT
    elif suffix == ".txt":
        return FileType.TEXT
    else:
        raise ValueError(f"Unsupported file type: {path}")


def events_to_jsonl(events: Iterable[TraceEvent]) -> str:
    """Canonical trace serialisation: identical events give identical bytes"""
    return "".join(
        json.dumps(e.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for e in events
    )


def pretty_dump_json(data: Any, file_path: str | Path) -> None:
    with open(file_path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


class BaseIO(ABC):
    @abstractmethod
    def load(self, path: Path) -> Any:
        pass

    @abstractmethod
    def write(self, data: Any, path: Path) -> None:
        pass


class LocalTrace(BaseIO):
    def load(self, path: Path) -> list[TraceEvent]:
        with open(path) as f:
            return [TraceEvent.from_dict(json.loads(line)) for line in f if line.strip()]

    def write(self, data: Iterable[TraceEvent], path: Path) -> None:
        Path(path).write_text(events_to_jsonl(data))


class LocalDict(BaseIO):
    def load(self, path: Path) -> dict:
        with open(path) as f:
            return json.load(f)

    def write(self, data: dict, path: Path) -> None:
        pretty_dump_json(data, path)


class LocalText(BaseIO):
    def load(self, path: Path) -> str:
        return Path(path).read_text()

    def write(self, data: str, path: Path) -> None:
        Path(path).write_text(data)


class LocalRepository:
    """Reads and writes traces, configs and reports, picking the format by extension"""

    def __init__(self):
        self.sources = {
            FileType.TRACE: LocalTrace(),
            FileType.DICT: LocalDict(),
            FileType.TEXT: LocalText(),
        }

    def _load_data(self, source_info: SourceInfo):
        return self.sources[source_info.file_type].load(source_info.path)

    def _write_data(self, data: Any, source_info: SourceInfo):
        source_info.path.parent.mkdir(parents=True, exist_ok=True)
        return self.sources[source_info.file_type].write(data, source_info.path)

    def load(self, path: str | Path):
        source_info = SourceInfo(Path(path), detect_file_type(path))
        return self._load_data(source_info)

    def write(self, data: Any, path: str | Path):
        source_info = SourceInfo(Path(path), detect_file_type(path))
        return self._write_data(data, source_info)


def truth_path(trace_path: str | Path) -> Path:
    """`out.jsonl` -> `out.truth.json`"""
    path = Path(trace_path)
    return path.with_name(path.stem + ".truth.json")
