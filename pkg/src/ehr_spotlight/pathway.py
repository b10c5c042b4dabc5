"""Clinical event ingestion and 2D pathway-image composition.

Events carry a patient id, a day-offset time (0 = no associated time), a
coded observation and the dimension that groups it. A pathway is the
time-ordered event list of one patient; its image places event i in column i
with the row chosen by the event's dimension. Cell values are vocabulary
indices, 0 meaning empty.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    PathwayLengthError,
    UnlabeledPathwayError,
    VocabularyError,
)

DEFAULT_WIDTH = 400
DEFAULT_MAX_CONDITIONS = 2

PWIM_MAGIC = b"PWIM"
PWIM_VERSION = 1
PWIM_HEADER = struct.Struct("<4sBHI4s")  # magic, version, height, width, reserved


@dataclass(frozen=True)
class Event:
    """One clinical occurrence."""

    patient_id: str
    time: int
    code: str
    system: str
    dimension: str

    def __post_init__(self):
        if self.time < 0:
            raise ContractError(f"event time must be >= 0, got {self.time}")

    @property
    def key(self) -> str:
        return f"{self.system}:{self.code}"


@dataclass(frozen=True)
class DimensionConfig:
    """The six event-grouping rows of a pathway image, one of them the label row."""

    dimensions: tuple[str, ...]
    condition: str

    def __post_init__(self):
        if len(self.dimensions) != 6:
            raise ConfigError(f"exactly six dimensions required, got {len(self.dimensions)}")
        if len(set(self.dimensions)) != 6:
            raise ConfigError("dimension names must be distinct")
        if self.condition not in self.dimensions:
            raise ConfigError(f"condition dimension {self.condition!r} not among {self.dimensions}")

    @classmethod
    def default(cls) -> "DimensionConfig":
        return cls(
            dimensions=(
                "demographics",
                "conditions",
                "procedures",
                "medications",
                "observations",
                "encounters",
            ),
            condition="conditions",
        )

    @property
    def condition_row(self) -> int:
        return self.dimensions.index(self.condition)

    def row_of(self, name: str) -> int:
        try:
            return self.dimensions.index(name)
        except ValueError:
            raise ConfigError(f"unknown dimension {name!r}") from None

    def input_rows(self) -> list[str]:
        """Dimension names in row order with the condition row removed."""
        return [d for d in self.dimensions if d != self.condition]

    def to_json_dict(self) -> dict:
        return {"dimensions": list(self.dimensions), "condition": self.condition}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "DimensionConfig":
        try:
            return cls(tuple(payload["dimensions"]), payload["condition"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad dimension config: {exc}") from exc


@dataclass
class Pathway:
    """Time-ordered events of one patient."""

    patient_id: str
    events: list[Event]

    def __post_init__(self):
        for ev in self.events:
            if ev.patient_id != self.patient_id:
                raise ContractError(
                    f"pathway {self.patient_id} holds event of patient {ev.patient_id}"
                )
        times = [ev.time for ev in self.events]
        if any(a > b for a, b in zip(times, times[1:])):
            raise ContractError("pathway events must be in non-decreasing time order")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class VocabEntry:
    code: str
    system: str
    dimension: str
    group: str | None = None


class CodeVocabulary:
    """Bidirectional code/index map; index 0 is reserved for empty cells.

    An optional remap table collapses raw ``SYSTEM:CODE`` keys into named
    groups before indexing, mirroring diagnosis-group reclassification.
    """

    def __init__(self, remap: dict[str, str] | None = None):
        self.remap = dict(remap) if remap else {}
        for key in self.remap:
            if ":" not in key:
                raise ConfigError(f"remap key {key!r} lacks a SYSTEM:CODE syntax tag")
        self._key_to_index: dict[str, int] = {}
        self._entries: list[VocabEntry | None] = [None]

    @property
    def size(self) -> int:
        return len(self._entries) - 1

    def __len__(self) -> int:
        return self.size

    def mapped_key(self, system: str, code: str) -> str:
        raw = f"{system}:{code}"
        group = self.remap.get(raw)
        return f"group:{group}" if group is not None else raw

    def add_event(self, event: Event) -> int:
        key = self.mapped_key(event.system, event.code)
        index = self._key_to_index.get(key)
        if index is not None:
            return index
        group = self.remap.get(event.key)
        if group is not None:
            entry = VocabEntry(code=group, system="group", dimension=event.dimension, group=group)
        else:
            entry = VocabEntry(code=event.code, system=event.system, dimension=event.dimension)
        self._entries.append(entry)
        index = len(self._entries) - 1
        self._key_to_index[key] = index
        return index

    def index_for(self, system: str, code: str) -> int:
        key = self.mapped_key(system, code)
        index = self._key_to_index.get(key)
        if index is None:
            raise VocabularyError(f"code {key!r} not in vocabulary")
        return index

    def index_for_event(self, event: Event) -> int:
        return self.index_for(event.system, event.code)

    def entry(self, index: int) -> VocabEntry:
        if not 1 <= index <= self.size:
            raise VocabularyError(f"index {index} outside 1..{self.size}")
        return self._entries[index]

    def key_of(self, index: int) -> str:
        entry = self.entry(index)
        return f"{entry.system}:{entry.code}"

    def items(self) -> list[tuple[int, VocabEntry]]:
        return [(i, e) for i, e in enumerate(self._entries) if i > 0]

    def to_json_dict(self) -> dict:
        payload = {}
        for index, entry in self.items():
            payload[str(index)] = {
                "code": entry.code,
                "system": entry.system,
                "dimension": entry.dimension,
                "group": entry.group,
            }
        return {"entries": payload, "remap": self.remap}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "CodeVocabulary":
        vocab = cls(remap=payload.get("remap") or {})
        entries = payload.get("entries", {})
        for index in sorted(entries, key=int):
            row = entries[index]
            entry = VocabEntry(
                code=row["code"],
                system=row["system"],
                dimension=row["dimension"],
                group=row.get("group"),
            )
            vocab._entries.append(entry)
            vocab._key_to_index[f"{entry.system}:{entry.code}"] = int(index)
        if [i for i, _ in vocab.items()] != list(range(1, vocab.size + 1)):
            raise FormatError("vocabulary indices are not contiguous from 1")
        return vocab


@dataclass
class PathwayImage:
    """2D grid of vocabulary indices: rows are dimensions, columns event ranks."""

    patient_id: str
    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.int64)
        if self.grid.ndim != 2:
            raise ContractError(f"pathway image grid must be 2D, got shape {self.grid.shape}")
        if self.grid.size and self.grid.min() < 0:
            raise ContractError("pathway image cells must be non-negative")

    @property
    def height(self) -> int:
        return self.grid.shape[0]

    @property
    def width(self) -> int:
        return self.grid.shape[1]


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class LabelSpace:
    """Maps condition-row vocabulary indices to dense class ids, plus END."""

    class_keys: list[str] = field(default_factory=list)
    vocab_indices: list[int] = field(default_factory=list)

    @classmethod
    def from_vocabulary(cls, vocab: CodeVocabulary, dims: DimensionConfig) -> "LabelSpace":
        keys, indices = [], []
        for index, entry in vocab.items():
            if entry.dimension == dims.condition:
                keys.append(f"{entry.system}:{entry.code}")
                indices.append(index)
        return cls(class_keys=keys, vocab_indices=indices)

    @property
    def end_class(self) -> int:
        return len(self.class_keys)

    @property
    def num_classes(self) -> int:
        """Condition classes plus the END terminator."""
        return len(self.class_keys) + 1

    def class_of_vocab_index(self, vocab_index: int) -> int:
        try:
            return self.vocab_indices.index(vocab_index)
        except ValueError:
            raise VocabularyError(f"vocab index {vocab_index} is not a condition class") from None

    def name_of(self, class_index: int) -> str:
        if class_index == self.end_class:
            return "END"
        key = self.class_keys[class_index]
        return key.split(":", 1)[1]

    def to_json_dict(self) -> dict:
        return {"class_keys": self.class_keys, "vocab_indices": self.vocab_indices}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "LabelSpace":
        return cls(list(payload["class_keys"]), [int(i) for i in payload["vocab_indices"]])


# ---------------------------------------------------------------------------
# operations


def ingest_events(source, column_map: dict, dims: DimensionConfig) -> tuple[list[Event], list[RowError]]:
    """Read events from delimited text.

    ``source`` may be a path or an open text stream with a header row.
    Row-level problems (bad times, unmapped dimensions) are collected, not
    fatal; a missing column is a configuration error. Events come back grouped
    by patient in first-appearance order and stably sorted by time.
    """
    required = ("patient", "time", "code", "system", "dimension")
    missing = [k for k in required if k not in column_map]
    if missing:
        raise ConfigError(f"column map lacks entries for {missing}")

    if isinstance(source, (str, Path)):
        handle = open(source, newline="", encoding="utf-8")
        close = True
    else:
        handle, close = source, False
    try:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            return [], []
        for key in required:
            if column_map[key] not in reader.fieldnames:
                raise ConfigError(f"column {column_map[key]!r} not in header {reader.fieldnames}")
        by_patient: dict[str, list[Event]] = {}
        errors: list[RowError] = []
        for line, row in enumerate(reader, start=2):  # header is line 1
            raw_time = (row[column_map["time"]] or "").strip()
            if raw_time == "":
                time = 0  # no associated time
            else:
                try:
                    time = int(raw_time)
                except ValueError:
                    errors.append(RowError(line, f"unparseable time {raw_time!r}"))
                    continue
                if time < 0:
                    errors.append(RowError(line, f"negative time {time}"))
                    continue
            dimension = (row[column_map["dimension"]] or "").strip()
            if dimension not in dims.dimensions:
                errors.append(RowError(line, f"unmapped dimension {dimension!r}"))
                continue
            event = Event(
                patient_id=(row[column_map["patient"]] or "").strip(),
                time=time,
                code=(row[column_map["code"]] or "").strip(),
                system=(row[column_map["system"]] or "").strip(),
                dimension=dimension,
            )
            by_patient.setdefault(event.patient_id, []).append(event)
    finally:
        if close:
            handle.close()

    events: list[Event] = []
    for patient_events in by_patient.values():
        events.extend(sorted(patient_events, key=lambda e: e.time))  # stable
    return events, errors


def build_vocabulary(events, remap: dict[str, str] | None = None) -> CodeVocabulary:
    """Index every distinct (post-remap) code in first-appearance order."""
    vocab = CodeVocabulary(remap=remap)
    for event in events:
        vocab.add_event(event)
    return vocab


def compose_pathway(events) -> Pathway:
    """Stably sort one patient's events by time."""
    events = list(events)
    if not events:
        raise ContractError("cannot compose a pathway from zero events")
    patients = {e.patient_id for e in events}
    if len(patients) != 1:
        raise ContractError(f"events span multiple patients: {sorted(patients)}")
    ordered = sorted(events, key=lambda e: e.time)  # stable sort keeps tie order
    return Pathway(patient_id=events[0].patient_id, events=ordered)


def render_image(
    pathway: Pathway,
    vocab: CodeVocabulary,
    dims: DimensionConfig,
    width: int = DEFAULT_WIDTH,
) -> PathwayImage:
    """Place event i at column i, row per its dimension; empty cells stay 0."""
    if len(pathway) > width:
        raise PathwayLengthError(
            f"pathway {pathway.patient_id} has {len(pathway)} events, width is {width}"
        )
    grid = np.zeros((len(dims.dimensions), width), dtype=np.int64)
    for column, event in enumerate(pathway.events):
        row = dims.row_of(event.dimension)
        grid[row, column] = vocab.index_for_event(event)
    return PathwayImage(patient_id=pathway.patient_id, grid=grid)


def extract_labels(
    image: PathwayImage,
    dims: DimensionConfig,
    label_space: LabelSpace,
    max_len: int = DEFAULT_MAX_CONDITIONS,
) -> tuple[np.ndarray, list[int]]:
    """Split an image into the model input and its condition-label sequence.

    The condition row is removed from the grid. Its non-zero entries, in
    column order and deduplicated to first occurrence, become the label
    sequence, truncated to ``max_len``; END is appended when room remains.
    """
    row = dims.condition_row
    condition_cells = image.grid[row]
    seen: dict[int, None] = {}
    for value in condition_cells:
        if value != 0:
            seen.setdefault(int(value), None)
    if not seen:
        raise UnlabeledPathwayError(f"pathway {image.patient_id} has an empty condition row")
    labels = [label_space.class_of_vocab_index(v) for v in seen][:max_len]
    if len(labels) < max_len:
        labels.append(label_space.end_class)
    input_grid = np.delete(image.grid, row, axis=0)
    return input_grid, labels


# ---------------------------------------------------------------------------
# PWIM binary format


def serialize_image(image: PathwayImage) -> bytes:
    """Encode a pathway image as PWIM v1 bytes."""
    if image.grid.size and image.grid.max() > 0xFFFFFFFF:
        raise FormatError("cell values exceed 32-bit range")
    header = PWIM_HEADER.pack(PWIM_MAGIC, PWIM_VERSION, image.height, image.width, b"\x00" * 4)
    cells = image.grid.astype("<u4").tobytes()
    return header + cells


def deserialize_image(data: bytes, patient_id: str = "") -> PathwayImage:
    if len(data) < PWIM_HEADER.size:
        raise FormatError(f"truncated PWIM header: {len(data)} bytes")
    magic, version, height, width, _ = PWIM_HEADER.unpack_from(data)
    if magic != PWIM_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != PWIM_VERSION:
        raise FormatError(f"unsupported PWIM version {version}")
    expected = PWIM_HEADER.size + height * width * 4
    if len(data) != expected:
        raise FormatError(f"PWIM payload is {len(data)} bytes, expected {expected}")
    grid = np.frombuffer(data, dtype="<u4", offset=PWIM_HEADER.size).reshape(height, width)
    return PathwayImage(patient_id=patient_id, grid=grid.astype(np.int64))


def save_image(image: PathwayImage, path) -> None:
    Path(path).write_bytes(serialize_image(image))


def load_image(path) -> PathwayImage:
    path = Path(path)
    return deserialize_image(path.read_bytes(), patient_id=path.stem)


def save_vocabulary(vocab: CodeVocabulary, path) -> None:
    Path(path).write_text(json.dumps(vocab.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8")


def load_vocabulary(path) -> CodeVocabulary:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"vocabulary file is not valid JSON: {exc}") from exc
    return CodeVocabulary.from_json_dict(payload)


def save_dimensions(dims: DimensionConfig, path) -> None:
    Path(path).write_text(json.dumps(dims.to_json_dict(), indent=2), encoding="utf-8")


def load_dimensions(path) -> DimensionConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"dimension file is not valid JSON: {exc}") from exc
    return DimensionConfig.from_json_dict(payload)


def load_remap(path) -> dict[str, str]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"remap file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in payload.items()
    ):
        raise ConfigError("remap file must map 'SYSTEM:CODE' strings to group names")
    return payload


def read_events_text(text: str, column_map: dict, dims: DimensionConfig):
    """Convenience wrapper for ingesting CSV content held in memory."""
    return ingest_events(io.StringIO(text), column_map, dims)
