"""Deterministic synthetic cohorts with planted condition-signal events.

Each pathway gets a main condition, optionally a second one, a pool of
background noise events, and short contiguous runs of class-specific signal
codes whose coordinates are recorded in a manifest. The manifest is the
ground truth for checking that attention lands on the events that actually
carry the label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CohortSpecError, UndefinedRatioError
from .pathway import (
    CodeVocabulary,
    DimensionConfig,
    Event,
    LabelSpace,
    PathwayImage,
    build_vocabulary,
    compose_pathway,
    extract_labels,
    render_image,
)

SIGNAL_SYSTEM = "sig"
BACKGROUND_SYSTEM = "bg"
CONDITION_SYSTEM = "cond"

MAX_RUN = 3  # planted runs span 1..MAX_RUN columns


@dataclass(frozen=True)
class ConditionClass:
    """A condition label and the signal codes that betray it."""

    name: str
    signal_codes: tuple[str, ...]

    def __post_init__(self):
        if not self.signal_codes:
            raise CohortSpecError(f"class {self.name!r} needs at least one signal code")


@dataclass
class CohortSpec:
    n_patients: int
    main_classes: list[ConditionClass]
    second_classes: list[ConditionClass] = field(default_factory=list)
    p_second: float = 0.5
    plant_probability: float = 1.0
    background_pool: int = 50
    sparsity: float = 14.0
    width: int = 400
    length_low: int | None = None
    length_high: int | None = None
    class_weights: list[float] | None = None
    seed: int = 0
    max_conditions: int = 2
    dims: DimensionConfig = field(default_factory=DimensionConfig.default)

    def __post_init__(self):
        if self.n_patients < 1:
            raise CohortSpecError("n_patients must be at least 1")
        if not self.main_classes:
            raise CohortSpecError("at least one main condition class is required")
        if not 0.0 <= self.p_second <= 1.0:
            raise CohortSpecError(f"p_second must lie in [0,1], got {self.p_second}")
        if not 0.0 <= self.plant_probability <= 1.0:
            raise CohortSpecError(f"plant_probability must lie in [0,1], got {self.plant_probability}")
        if self.sparsity <= 0:
            raise CohortSpecError(f"sparsity ratio must be positive, got {self.sparsity}")
        if self.background_pool < 1:
            raise CohortSpecError("background_pool must be at least 1")
        names = [c.name for c in self.main_classes + self.second_classes]
        if len(set(names)) != len(names):
            raise CohortSpecError("condition class names must be distinct")
        for cls in self.main_classes + self.second_classes:
            for code in cls.signal_codes:
                if code.startswith("BG"):
                    raise CohortSpecError(
                        f"signal code {code!r} collides with the background pool namespace"
                    )
        if self.class_weights is not None and len(self.class_weights) != len(self.main_classes):
            raise CohortSpecError("class_weights must match main_classes in length")
        low, high = self.event_count_bounds()
        if low < 2 * MAX_RUN + self.max_conditions:
            raise CohortSpecError(
                f"pathways of {low} background events cannot hold planted runs and conditions"
            )
        if high + self.max_conditions > self.width:
            raise CohortSpecError(
                f"up to {high} events plus conditions exceed image width {self.width}"
            )

    def event_count_bounds(self) -> tuple[int, int]:
        """Background-event count range; derived from sparsity unless pinned."""
        if self.length_low is not None and self.length_high is not None:
            if self.length_low > self.length_high:
                raise CohortSpecError("length_low exceeds length_high")
            return self.length_low, self.length_high
        non_condition_cells = (len(self.dims.dimensions) - 1) * self.width
        target = non_condition_cells / (1.0 + self.sparsity)
        low = max(1, int(round(target * 0.85)))
        high = max(low, int(round(target * 1.15)))
        return low, high

    def to_json_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "main_classes": [
                {"name": c.name, "signal_codes": list(c.signal_codes)} for c in self.main_classes
            ],
            "second_classes": [
                {"name": c.name, "signal_codes": list(c.signal_codes)} for c in self.second_classes
            ],
            "p_second": self.p_second,
            "plant_probability": self.plant_probability,
            "background_pool": self.background_pool,
            "sparsity": self.sparsity,
            "width": self.width,
            "length_low": self.length_low,
            "length_high": self.length_high,
            "class_weights": self.class_weights,
            "seed": self.seed,
            "max_conditions": self.max_conditions,
            "dims": self.dims.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "CohortSpec":
        def classes(rows):
            return [ConditionClass(r["name"], tuple(r["signal_codes"])) for r in rows]

        try:
            return cls(
                n_patients=int(payload["n_patients"]),
                main_classes=classes(payload["main_classes"]),
                second_classes=classes(payload.get("second_classes", [])),
                p_second=float(payload.get("p_second", 0.5)),
                plant_probability=float(payload.get("plant_probability", 1.0)),
                background_pool=int(payload.get("background_pool", 50)),
                sparsity=float(payload.get("sparsity", 14.0)),
                width=int(payload.get("width", 400)),
                length_low=payload.get("length_low"),
                length_high=payload.get("length_high"),
                class_weights=payload.get("class_weights"),
                seed=int(payload.get("seed", 0)),
                max_conditions=int(payload.get("max_conditions", 2)),
                dims=DimensionConfig.from_json_dict(payload["dims"])
                if "dims" in payload
                else DimensionConfig.default(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CohortSpecError(f"bad cohort spec: {exc}") from exc


@dataclass(frozen=True)
class PlantedSignal:
    """One planted signal cell: where it is and which class it encodes."""

    patient_id: str
    row: int
    column: int
    code: str  # vocabulary key, SYSTEM:CODE
    class_name: str

    def to_json_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "row": self.row,
            "column": self.column,
            "code": self.code,
            "class": self.class_name,
        }


@dataclass
class Cohort:
    spec: CohortSpec
    images: list[PathwayImage]
    labels: list[list[int]]
    vocab: CodeVocabulary
    dims: DimensionConfig
    label_space: LabelSpace
    manifest: list[PlantedSignal]


def default_cohort_spec(n_patients: int = 200, seed: int = 0, **overrides) -> CohortSpec:
    """A three-main-class cohort with five signal codes per class."""

    def signals(name):
        return tuple(f"{name}_sig{j}" for j in range(5))

    mains = [ConditionClass(n, signals(n)) for n in ("cond_a", "cond_b", "cond_c")]
    seconds = [ConditionClass(n, signals(n)) for n in ("cond_x", "cond_y", "cond_z")]
    return CohortSpec(
        n_patients=n_patients,
        main_classes=mains,
        second_classes=seconds,
        seed=seed,
        **overrides,
    )


def _plant_rows(dims: DimensionConfig) -> list[str]:
    """Signal runs live in the observation/medication rows when present."""
    preferred = [d for d in dims.dimensions if d in ("observations", "medications")]
    return preferred or dims.input_rows()[:2]


def generate_cohort(spec: CohortSpec) -> Cohort:
    """Build a deterministic labeled cohort and its planted-signal manifest."""
    rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    background_dims = dims.input_rows()
    plant_dims = _plant_rows(dims)
    low, high = spec.event_count_bounds()
    weights = None
    if spec.class_weights is not None:
        weights = np.asarray(spec.class_weights, dtype=float)
        weights = weights / weights.sum()

    all_events: list[list[Event]] = []
    plant_plan: list[list[tuple[int, str, str]]] = []  # per patient: (column, code, class)
    patient_ids: list[str] = []

    for index in range(spec.n_patients):
        pid = f"P{index:05d}"
        main = spec.main_classes[int(rng.choice(len(spec.main_classes), p=weights))]
        second = None
        if spec.second_classes and rng.random() < spec.p_second:
            second = spec.second_classes[int(rng.integers(len(spec.second_classes)))]

        n_background = int(rng.integers(low, high + 1))
        n_events = n_background + 1 + (1 if second else 0)

        # columns: main condition first, optional second in the later half
        second_col = int(rng.integers(n_events // 2, n_events)) if second else -1
        times = np.cumsum(rng.integers(0, 3, size=n_events))

        planted: list[tuple[int, str, str]] = []  # column -> (code, class)
        taken: set[int] = set()
        for cls in filter(None, (main, second)):
            if rng.random() >= spec.plant_probability:
                continue
            run = int(rng.integers(1, MAX_RUN + 1))
            for _ in range(64):  # rejection sampling over a sparse column set
                start = int(rng.integers(1, n_events - run + 1))
                cols = set(range(start, start + run))
                if second_col not in cols and not cols & taken:
                    taken |= cols
                    for col in sorted(cols):
                        code = str(rng.choice(cls.signal_codes))
                        planted.append((col, code, cls.name))
                    break
            else:
                raise CohortSpecError("could not place a signal run; pathways too short")

        planted_by_col = {col: (code, cls) for col, code, cls in planted}
        events: list[Event] = []
        for col in range(n_events):
            t = int(times[col])
            if col == 0:
                events.append(Event(pid, t, main.name, CONDITION_SYSTEM, dims.condition))
            elif col == second_col:
                events.append(Event(pid, t, second.name, CONDITION_SYSTEM, dims.condition))
            elif col in planted_by_col:
                code, _cls = planted_by_col[col]
                dim = plant_dims[int(rng.integers(len(plant_dims)))]
                events.append(Event(pid, t, code, SIGNAL_SYSTEM, dim))
            else:
                code = f"BG{int(rng.integers(spec.background_pool)):04d}"
                dim = background_dims[int(rng.integers(len(background_dims)))]
                events.append(Event(pid, t, code, BACKGROUND_SYSTEM, dim))

        all_events.append(events)
        plant_plan.append(planted)
        patient_ids.append(pid)

    flat = [event for events in all_events for event in events]
    vocab = build_vocabulary(flat)
    label_space = LabelSpace.from_vocabulary(vocab, dims)

    images: list[PathwayImage] = []
    labels: list[list[int]] = []
    manifest: list[PlantedSignal] = []
    for pid, events, planted in zip(patient_ids, all_events, plant_plan):
        image = render_image(compose_pathway(events), vocab, dims, width=spec.width)
        images.append(image)
        _, seq = extract_labels(image, dims, label_space, max_len=spec.max_conditions)
        labels.append(seq)
        for col, code, cls_name in planted:
            row = int(np.nonzero(image.grid[:, col])[0][0])
            manifest.append(
                PlantedSignal(
                    patient_id=pid,
                    row=row,
                    column=col,
                    code=f"{SIGNAL_SYSTEM}:{code}",
                    class_name=cls_name,
                )
            )

    return Cohort(
        spec=spec,
        images=images,
        labels=labels,
        vocab=vocab,
        dims=dims,
        label_space=label_space,
        manifest=manifest,
    )


def cohort_samples(cohort: Cohort):
    """Model-ready (input grid, labels) pairs, condition row removed."""
    from .training import Sample

    samples = []
    for image, labels in zip(cohort.images, cohort.labels):
        grid = np.delete(image.grid, cohort.dims.condition_row, axis=0)
        samples.append(Sample(patient_id=image.patient_id, grid=grid, labels=tuple(labels)))
    return samples


def sparsity_report(images, dims: DimensionConfig) -> float:
    """Empty-to-event cell ratio over all non-condition rows."""
    if not images:
        raise UndefinedRatioError("no images to measure")
    row = dims.condition_row
    zeros = 0
    events = 0
    for image in images:
        grid = np.delete(image.grid, row, axis=0)
        events += int((grid != 0).sum())
        zeros += int((grid == 0).sum())
    if events == 0:
        raise UndefinedRatioError("images hold no event cells outside the condition row")
    return zeros / events


def save_manifest(manifest, path) -> None:
    payload = [signal.to_json_dict() for signal in manifest]
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_manifest(path) -> list[PlantedSignal]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        PlantedSignal(
            patient_id=row["patient_id"],
            row=int(row["row"]),
            column=int(row["column"]),
            code=row["code"],
            class_name=row["class"],
        )
        for row in payload
    ]
