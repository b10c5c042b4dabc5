"""Evaluation surface: per-class scores, confusion matrix, sequence overlap,
and threshold-based extraction of the events attention points at.

Condition sequences are scored as composite classes (e.g. "a->b"), so a
two-step prediction is right only when both steps are. Overlap between a
predicted and true sequence is the Dice coefficient over label multisets,
which is 1 exactly on a perfect match; the plain intersection-over-union
reading is reported alongside it.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

SEQUENCE_JOINER = "->"


def strip_end(sequence, end_class: int) -> list[int]:
    """Drop the END terminator (and anything after it) from a label sequence."""
    out = []
    for value in sequence:
        if int(value) == end_class:
            break
        out.append(int(value))
    return out


def sequence_key(sequence, names=None) -> str:
    if names is None:
        return SEQUENCE_JOINER.join(str(v) for v in sequence)
    return SEQUENCE_JOINER.join(names[int(v)] for v in sequence)


@dataclass
class ClassMetrics:
    label: str
    true_count: int
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    undefined: bool = False


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def precision_recall_f1(predictions, truths) -> list[ClassMetrics]:
    """Per-class rows over composite sequence labels.

    Rows are ordered singles first, then longer sequences, alphabetically
    within each length. Classes with a zero denominator report 0 and are
    flagged undefined.
    """
    predictions = [tuple(p) for p in predictions]
    truths = [tuple(t) for t in truths]
    if len(predictions) != len(truths):
        raise ContractError(f"{len(predictions)} predictions vs {len(truths)} truths")
    universe = sorted(set(predictions) | set(truths), key=lambda s: (len(s), s))
    rows = []
    for label in universe:
        tp = sum(1 for p, t in zip(predictions, truths) if p == label and t == label)
        fp = sum(1 for p, t in zip(predictions, truths) if p == label and t != label)
        fn = sum(1 for p, t in zip(predictions, truths) if p != label and t == label)
        undefined = (tp + fp == 0) or (tp + fn == 0)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        rows.append(
            ClassMetrics(
                label=sequence_key(label),
                true_count=tp + fn,
                tp=tp,
                fp=fp,
                fn=fn,
                precision=precision,
                recall=recall,
                f1=f1_score(precision, recall),
                undefined=undefined,
            )
        )
    return rows


@dataclass
class ConfusionMatrix:
    labels: list[str]
    percent: np.ndarray  # rows: truth, columns: prediction, row-normalized to 100
    empty_rows: list[str] = field(default_factory=list)


def confusion_matrix(predictions, truths) -> ConfusionMatrix:
    """Row-normalized percentage matrix over composite sequence labels."""
    predictions = [tuple(p) for p in predictions]
    truths = [tuple(t) for t in truths]
    if len(predictions) != len(truths):
        raise ContractError(f"{len(predictions)} predictions vs {len(truths)} truths")
    universe = sorted(set(predictions) | set(truths), key=lambda s: (len(s), s))
    index = {label: i for i, label in enumerate(universe)}
    counts = np.zeros((len(universe), len(universe)))
    for p, t in zip(predictions, truths):
        counts[index[t], index[p]] += 1
    percent = np.zeros_like(counts)
    empty = []
    for i, label in enumerate(universe):
        row_total = counts[i].sum()
        if row_total == 0:
            empty.append(sequence_key(label))
        else:
            percent[i] = 100.0 * counts[i] / row_total
    return ConfusionMatrix(
        labels=[sequence_key(label) for label in universe],
        percent=percent,
        empty_rows=empty,
    )


def overlap_scores(pred_seq, true_seq) -> tuple[float, float, bool]:
    """(dice, iou, vacuous) over label multisets; both-empty counts as a match."""
    pred = Counter(pred_seq)
    true = Counter(true_seq)
    if not pred and not true:
        return 1.0, 1.0, True
    inter = sum((pred & true).values())
    union = sum((pred | true).values())
    dice = 2.0 * inter / (sum(pred.values()) + sum(true.values()))
    iou = inter / union if union else 0.0
    return dice, iou, False


def sequence_overlap(pred_seq, true_seq) -> float:
    """Dice overlap in [0, 1]; exactly 1 iff the label multisets match."""
    return overlap_scores(pred_seq, true_seq)[0]


# ---------------------------------------------------------------------------
# attention-mask geometry


def upsample_mask(mask, feature_shape: tuple[int, int], out_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of a flat or 2D mask onto the input grid."""
    fh, fw = feature_shape
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim == 1:
        if mask.size != fh * fw:
            raise DimensionError(f"mask of {mask.size} values does not cover {fh}x{fw} locations")
        mask = mask.reshape(fh, fw)
    elif mask.shape != (fh, fw):
        raise DimensionError(f"mask shape {mask.shape} does not match feature shape {(fh, fw)}")
    oh, ow = out_shape
    rows = np.minimum((np.arange(oh) * fh) // oh, fh - 1)
    cols = np.minimum((np.arange(ow) * fw) // ow, fw - 1)
    return mask[np.ix_(rows, cols)]


def input_column_mass(mask, feature_shape: tuple[int, int], width: int) -> np.ndarray:
    """Distribute mask probability mass across the input columns it covers."""
    fh, fw = feature_shape
    mask = np.asarray(mask, dtype=np.float64).reshape(fh, fw)
    column_mass = mask.sum(axis=0)  # total mass per feature column
    cols = np.minimum((np.arange(width) * fw) // width, fw - 1)
    spread = np.bincount(cols, minlength=fw).astype(np.float64)
    out = column_mass[cols] / spread[cols]
    return out


@dataclass(frozen=True)
class AttentionEvent:
    code: str
    dimension: str
    count: int


def top_attention_events(
    pathway_masks,
    grids,
    vocab,
    input_dims,
    feature_shape: tuple[int, int],
    threshold: float = 0.9,
    top_k: int = 20,
    normalized: bool = True,
) -> list[AttentionEvent]:
    """Rank input events by how often a near-peak mask cell lands on them.

    Per decode step, a cell counts when its upsampled mask value reaches
    ``threshold`` times the step's peak (or the absolute threshold when
    ``normalized`` is off) and the cell holds an event. Counts aggregate over
    all pathways and steps; ties break on the code for order invariance.
    """
    counts: Counter = Counter()
    for masks, grid in zip(pathway_masks, grids):
        grid = np.asarray(grid)
        for mask in masks:
            up = upsample_mask(mask, feature_shape, grid.shape)
            cut = threshold * up.max() if normalized else threshold
            passing = (up >= cut) & (grid > 0)
            for row, col in np.argwhere(passing):
                code = vocab.key_of(int(grid[row, col]))
                counts[(code, input_dims[int(row)])] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [AttentionEvent(code=c, dimension=d, count=n) for (c, d), n in ranked[:top_k]]


# ---------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    rows: list[ClassMetrics]
    confusion: ConfusionMatrix
    mean_overlap: float
    mean_iou: float
    counts: dict[str, int]
    top_events: list[AttentionEvent] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "classes": [
                {
                    "label": r.label,
                    "true_count": r.true_count,
                    "tp": r.tp,
                    "fp": r.fp,
                    "fn": r.fn,
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "undefined": r.undefined,
                }
                for r in self.rows
            ],
            "confusion": {
                "labels": self.confusion.labels,
                "rows": [[float(v) for v in row] for row in self.confusion.percent],
                "empty_rows": self.confusion.empty_rows,
            },
            "overlap": {"dice_mean": self.mean_overlap, "iou_mean": self.mean_iou},
            "counts": self.counts,
            "top_events": [
                {"code": e.code, "dimension": e.dimension, "count": e.count} for e in self.top_events
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def format_text(self) -> str:
        lines = []
        width = max([len("condition sequence")] + [len(r.label) for r in self.rows])
        lines.append(f"{'condition sequence':<{width}}  {'n':>5}  {'precision':>9}  {'recall':>9}  {'f1':>9}")
        for r in self.rows:
            flag = " *" if r.undefined else ""
            lines.append(
                f"{r.label:<{width}}  {r.true_count:>5}  {r.precision:>9.3f}  {r.recall:>9.3f}  {r.f1:>9.3f}{flag}"
            )
        if any(r.undefined for r in self.rows):
            lines.append("(* zero-denominator class, scores reported as 0)")
        lines.append("")
        lines.append(f"mean sequence overlap (dice): {self.mean_overlap:.4f}")
        lines.append(f"mean sequence overlap (iou):  {self.mean_iou:.4f}")
        lines.append("")
        lines.append("confusion matrix, % of each true row:")
        label_w = max(len(label) for label in self.confusion.labels)
        header = " " * (label_w + 2) + "  ".join(f"{label:>{max(6, len(label))}}" for label in self.confusion.labels)
        lines.append(header)
        for label, row in zip(self.confusion.labels, self.confusion.percent):
            cells = "  ".join(
                f"{value:>{max(6, len(col))}.2f}" for value, col in zip(row, self.confusion.labels)
            )
            lines.append(f"{label:<{label_w}}  {cells}")
        if self.confusion.empty_rows:
            lines.append(f"(rows never seen in truth: {', '.join(self.confusion.empty_rows)})")
        if self.top_events:
            lines.append("")
            lines.append(f"top {len(self.top_events)} attention events:")
            for event in self.top_events:
                lines.append(f"  {event.count:>6}  {event.code}  [{event.dimension}]")
        return "\n".join(lines) + "\n"


def build_report(
    predicted_sequences,
    true_sequences,
    end_class: int,
    class_names=None,
    top_events=(),
) -> EvalReport:
    """Score predictions against truths; sequences may still carry END."""
    pred = [tuple(strip_end(p, end_class)) for p in predicted_sequences]
    true = [tuple(strip_end(t, end_class)) for t in true_sequences]
    names = None
    if class_names is not None:
        names = list(class_names)
    def render(seq):
        return tuple(names[v] for v in seq) if names else seq

    pred_named = [render(p) for p in pred]
    true_named = [render(t) for t in true]
    rows = precision_recall_f1(pred_named, true_named)
    confusion = confusion_matrix(pred_named, true_named)
    overlaps = [overlap_scores(p, t) for p, t in zip(pred, true)]
    mean_overlap = float(np.mean([o[0] for o in overlaps])) if overlaps else 0.0
    mean_iou = float(np.mean([o[1] for o in overlaps])) if overlaps else 0.0
    counts = Counter(sequence_key(t) for t in true_named)
    return EvalReport(
        rows=rows,
        confusion=confusion,
        mean_overlap=mean_overlap,
        mean_iou=mean_iou,
        counts=dict(sorted(counts.items())),
        top_events=list(top_events),
    )
