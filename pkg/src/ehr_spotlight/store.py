"""On-disk layout shared by the CLI: a cohort directory holds PWIM images,
the vocabulary, dimension config, labels, and (for synthetic data) the
planted-signal manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .pathway import (
    CodeVocabulary,
    DimensionConfig,
    LabelSpace,
    PathwayImage,
    load_dimensions,
    load_image,
    load_vocabulary,
    save_dimensions,
    save_image,
    save_vocabulary,
)
from .synth import Cohort, PlantedSignal, load_manifest, save_manifest
from .training import Sample

IMAGES_DIR = "images"
VOCAB_FILE = "vocab.json"
DIMS_FILE = "dims.json"
LABELS_FILE = "labels.json"
MANIFEST_FILE = "manifest.json"
SPEC_FILE = "cohort_spec.json"


@dataclass
class CohortStore:
    """A loaded cohort directory."""

    images: list[PathwayImage]
    labels: dict[str, list[int]]
    vocab: CodeVocabulary
    dims: DimensionConfig
    label_space: LabelSpace
    manifest: list[PlantedSignal] = field(default_factory=list)

    def samples(self) -> list[Sample]:
        row = self.dims.condition_row
        out = []
        for image in self.images:
            grid = np.delete(image.grid, row, axis=0)
            out.append(
                Sample(
                    patient_id=image.patient_id,
                    grid=grid,
                    labels=tuple(self.labels[image.patient_id]),
                )
            )
        return out


def save_labels(path, label_space: LabelSpace, labels: dict[str, list[int]]) -> None:
    payload = {
        "label_space": label_space.to_json_dict(),
        "labels": {pid: list(seq) for pid, seq in labels.items()},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_labels(path) -> tuple[LabelSpace, dict[str, list[int]]]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        space = LabelSpace.from_json_dict(payload["label_space"])
        labels = {pid: [int(v) for v in seq] for pid, seq in payload["labels"].items()}
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"bad labels file {path}: {exc}") from exc
    return space, labels


def write_cohort_dir(out_dir, cohort: Cohort) -> Path:
    out = Path(out_dir)
    images_dir = out / IMAGES_DIR
    images_dir.mkdir(parents=True, exist_ok=True)
    for image in cohort.images:
        save_image(image, images_dir / f"{image.patient_id}.pwim")
    save_vocabulary(cohort.vocab, out / VOCAB_FILE)
    save_dimensions(cohort.dims, out / DIMS_FILE)
    save_labels(
        out / LABELS_FILE,
        cohort.label_space,
        {img.patient_id: labels for img, labels in zip(cohort.images, cohort.labels)},
    )
    save_manifest(cohort.manifest, out / MANIFEST_FILE)
    (out / SPEC_FILE).write_text(
        json.dumps(cohort.spec.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return out


def write_composed_dir(out_dir, images, vocab, dims, label_space, labels, skipped) -> Path:
    """Composed (real-data) cohorts share the synthetic layout minus manifest."""
    out = Path(out_dir)
    images_dir = out / IMAGES_DIR
    images_dir.mkdir(parents=True, exist_ok=True)
    for image in images:
        save_image(image, images_dir / f"{image.patient_id}.pwim")
    save_vocabulary(vocab, out / VOCAB_FILE)
    save_dimensions(dims, out / DIMS_FILE)
    save_labels(out / LABELS_FILE, label_space, labels)
    if skipped:
        (out / "skipped.json").write_text(json.dumps(skipped, indent=2), encoding="utf-8")
    return out


def load_cohort_dir(path) -> CohortStore:
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"{root} is not a cohort directory")
    images_dir = root / IMAGES_DIR
    if not images_dir.is_dir():
        raise ConfigError(f"{root} lacks an {IMAGES_DIR}/ subdirectory")
    vocab = load_vocabulary(root / VOCAB_FILE)
    dims = load_dimensions(root / DIMS_FILE)
    label_space, labels = load_labels(root / LABELS_FILE)
    images = [load_image(p) for p in sorted(images_dir.glob("*.pwim"))]
    if not images:
        raise ConfigError(f"{images_dir} holds no .pwim images")
    missing = [img.patient_id for img in images if img.patient_id not in labels]
    if missing:
        raise FormatError(f"labels file lacks entries for {missing[:5]}")
    manifest_path = root / MANIFEST_FILE
    manifest = load_manifest(manifest_path) if manifest_path.exists() else []
    return CohortStore(
        images=images,
        labels=labels,
        vocab=vocab,
        dims=dims,
        label_space=label_space,
        manifest=manifest,
    )
