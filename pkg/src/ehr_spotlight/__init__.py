"""Pathway-image encoding and attention-based condition-sequence prediction.

The pipeline: clinical events become 6-row pathway images (`pathway`),
either ingested from CSV or generated with planted signals (`synth`); a
dilated-conv + attention + LSTM model predicts condition sequences and emits
per-step attention masks (`model`, `training`); evaluation reproduces the
precision/recall/F1, confusion-matrix, and sequence-overlap surface and
extracts the events attention highlights (`metrics`, `render`, `cli`).
"""

from . import errors, metrics, model, numeric, pathway, render, synth, training

__version__ = "0.1.0"

__all__ = [
    "errors",
    "metrics",
    "model",
    "numeric",
    "pathway",
    "render",
    "synth",
    "training",
    "__version__",
]
