"""Optimization loop, dataset splitting, and reproducibility controls."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SplitError, TrainingDivergedError
from .model import (
    ModelConfig,
    ParameterSet,
    TeacherForcedPass,
    forward_train,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .numeric import GradTape, add, backward, no_grad, scale


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    train_fraction: float = 0.8
    eval_every: int = 1
    target_train_loss: float | None = None
    target_seq_accuracy: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs cannot be negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0,1), got {self.train_fraction}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be positive")

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
            "train_fraction": self.train_fraction,
            "eval_every": self.eval_every,
            "target_train_loss": self.target_train_loss,
            "target_seq_accuracy": self.target_seq_accuracy,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TrainConfig":
        try:
            return cls(**{k: payload[k] for k in payload})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


@dataclass(frozen=True)
class Sample:
    """One training item: the model input grid and its label sequence."""

    patient_id: str
    grid: np.ndarray
    labels: tuple[int, ...]


def split_dataset(items, fraction: float, seed: int, labels=None):
    """Deterministic shuffled split; stratified by label when labels are given.

    With labels, each class keeps round(n * fraction) members on the train
    side, clamped so classes of two or more land on both sides; singleton
    classes go to train.
    """
    items = list(items)
    n = len(items)
    if n < 2:
        raise SplitError(f"need at least 2 items to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise SplitError(f"fraction must lie in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)

    if labels is None:
        order = rng.permutation(n)
        n_train = int(round(n * fraction))
        if n_train == 0 or n_train == n:
            raise SplitError(f"fraction {fraction} leaves one side of {n} items empty")
        train = [items[i] for i in order[:n_train]]
        test = [items[i] for i in order[n_train:]]
        return train, test

    labels = list(labels)
    if len(labels) != n:
        raise SplitError("labels must align with items")
    groups: dict = {}
    for index, label in enumerate(labels):
        groups.setdefault(label, []).append(index)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for members in groups.values():
        members = [members[i] for i in rng.permutation(len(members))]
        g = len(members)
        if g == 1:
            train_idx.extend(members)
            continue
        keep = int(round(g * fraction))
        keep = min(max(keep, 1), g - 1)
        train_idx.extend(members[:keep])
        test_idx.extend(members[keep:])
    if not train_idx or not test_idx:
        raise SplitError("stratified split left one side empty")
    train_idx = [train_idx[i] for i in rng.permutation(len(train_idx))]
    test_idx = [test_idx[i] for i in rng.permutation(len(test_idx))]
    return [items[i] for i in train_idx], [items[i] for i in test_idx]


class AdamState:
    """First/second moment estimates per parameter tensor."""

    def __init__(self, params: ParameterSet):
        self.step = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.named()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.named()}

    def to_blob(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}

    @classmethod
    def from_blob(cls, params: ParameterSet, blob: dict) -> "AdamState":
        state = cls(params)
        state.step = int(blob["step"])
        for name in state.m:
            state.m[name] = np.asarray(blob["m"][name], dtype=np.float64).copy()
            state.v[name] = np.asarray(blob["v"][name], dtype=np.float64).copy()
        return state


def clip_gradient_norm(params: ParameterSet, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    total = 0.0
    for name, tensor in params.named():
        if tensor.grad is None:
            continue
        if not np.all(np.isfinite(tensor.grad)):
            raise TrainingDivergedError(f"non-finite gradient in {name}")
        total += float((tensor.grad ** 2).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _, tensor in params.named():
            if tensor.grad is not None:
                tensor.grad *= factor
    return norm


def update_parameters(params: ParameterSet, state: AdamState, config: TrainConfig) -> None:
    """Adaptive-moment step with bias correction; gradients clipped first."""
    clip_gradient_norm(params, config.clip_norm)
    state.step += 1
    t = state.step
    for name, tensor in params.named():
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        m = state.m[name]
        v = state.v[name]
        m[:] = config.beta1 * m + (1.0 - config.beta1) * grad
        v[:] = config.beta2 * v + (1.0 - config.beta2) * grad * grad
        m_hat = m / (1.0 - config.beta1 ** t)
        v_hat = v / (1.0 - config.beta2 ** t)
        tensor.data -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)


def train_step(batch, params: ParameterSet, state: AdamState, config: TrainConfig) -> float:
    """One optimization step over a batch of samples; returns the batch loss."""
    params.zero_grads()
    with GradTape():
        total = None
        for sample in batch:
            step_pass: TeacherForcedPass = forward_train(sample.grid, sample.labels, params, training=True)
            total = step_pass.loss if total is None else add(total, step_pass.loss)
        loss = scale(total, 1.0 / len(batch))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(f"batch loss is {value}")
        backward(loss)
    update_parameters(params, state, config)
    params.zero_grads()
    return value


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_loss: float | None
    seq_accuracy: float | None


@dataclass
class FitResult:
    params: ParameterSet
    best_params: ParameterSet
    log: list[EpochStats] = field(default_factory=list)
    diverged: bool = False
    stopped_early: bool = False


def teacher_forced_loss(items, params: ParameterSet) -> float:
    """Mean eval-mode loss over a dataset, without touching gradients."""
    with no_grad():
        losses = [forward_train(s.grid, s.labels, params, training=False).loss.item() for s in items]
    return float(np.mean(losses))


def sequence_accuracy(items, params: ParameterSet) -> float:
    """Fraction of items whose free-running prediction matches exactly."""
    hits = 0
    for sample in items:
        if predict(sample.grid, params).classes == list(sample.labels):
            hits += 1
    return hits / len(items) if items else 0.0


def fit(
    train_items,
    model_config: ModelConfig,
    train_config: TrainConfig,
    test_items=(),
    params: ParameterSet | None = None,
) -> FitResult:
    """Run shuffled mini-batch epochs; keep the checkpoint with best test loss.

    The shuffle stream is independent of parameter initialization, and both
    derive from ``train_config.seed``, so a fixed seed reproduces the run.
    """
    train_items = list(train_items)
    test_items = list(test_items)
    if not train_items:
        raise ConfigError("training needs a non-empty train split")
    init_seed, shuffle_seed = np.random.SeedSequence(train_config.seed).spawn(2)
    if params is None:
        params = ParameterSet.initialize(model_config, seed=init_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    state = AdamState(params)

    result = FitResult(params=params, best_params=params.clone())
    best_score = np.inf
    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(len(train_items))
        epoch_loss = 0.0
        try:
            for start in range(0, len(order), train_config.batch_size):
                batch = [train_items[i] for i in order[start:start + train_config.batch_size]]
                epoch_loss += train_step(batch, params, state, train_config) * len(batch)
        except TrainingDivergedError:
            result.diverged = True
            result.params = result.best_params
            break
        train_loss = epoch_loss / len(train_items)

        test_loss = None
        accuracy = None
        if epoch % train_config.eval_every == 0 or epoch == train_config.epochs:
            if test_items:
                test_loss = teacher_forced_loss(test_items, params)
                accuracy = sequence_accuracy(test_items, params)
            else:
                accuracy = sequence_accuracy(train_items, params)
        result.log.append(EpochStats(epoch, train_loss, test_loss, accuracy))

        score = test_loss if test_loss is not None else train_loss
        if score < best_score:
            best_score = score
            result.best_params = params.clone()

        loss_ok = train_config.target_train_loss is None or train_loss <= train_config.target_train_loss
        acc_ok = train_config.target_seq_accuracy is None or (
            accuracy is not None and accuracy >= train_config.target_seq_accuracy
        )
        has_target = train_config.target_train_loss is not None or train_config.target_seq_accuracy is not None
        if has_target and loss_ok and acc_ok:
            result.stopped_early = True
            break
    return result


def save_training_checkpoint(path, params: ParameterSet, state: AdamState | None = None) -> None:
    save_checkpoint(path, params, optimizer_blob=state.to_blob() if state else None)


def load_training_checkpoint(path) -> tuple[ParameterSet, AdamState | None]:
    params, blob = load_checkpoint(path)
    return params, AdamState.from_blob(params, blob) if blob else None


def write_log_csv(path, log) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "train_loss", "test_loss", "seq_accuracy"])
        for row in log:
            writer.writerow(
                [
                    row.epoch,
                    f"{row.train_loss:.10f}",
                    "" if row.test_loss is None else f"{row.test_loss:.10f}",
                    "" if row.seq_accuracy is None else f"{row.seq_accuracy:.6f}",
                ]
            )


def load_train_config(path) -> TrainConfig:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"train config is not valid JSON: {exc}") from exc
    return TrainConfig.from_json_dict(payload)
