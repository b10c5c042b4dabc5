"""The sequence predictor: dilated-conv encoder, additive attention, LSTM decoder.

The encoder turns a (h-1) x w index grid into H = h' x w' feature vectors of
F channels. Each decode step scores all H locations against the previous
hidden state, softmaxes the scores into a mask, feeds the mask-weighted
feature sum (with the previous label one-hot) into an LSTM cell, and reads
class logits off the hidden state. Training is teacher-forced; prediction
free-runs on its own argmaxes until it emits END or hits the length cap.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, FormatError
from .numeric import (
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    concat,
    conv2d_dilated,
    cross_entropy,
    gather_rows,
    matmul,
    mul,
    no_grad,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    tanh_act,
    transpose2d,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

CHECKPOINT_MAGIC = b"SPOT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class LayerSpec:
    """One encoder stage: dilated conv -> batch norm -> ReLU."""

    filters: int
    kernel: tuple[int, int] = (3, 3)
    dilation: int = 1
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] | None = None  # None: center pad (k-1)*d//2 per axis

    def pad(self) -> tuple[int, int]:
        if self.padding is not None:
            return self.padding
        kh, kw = self.kernel
        return (kh - 1) * self.dilation // 2, (kw - 1) * self.dilation // 2

    def out_extents(self, height: int, width: int) -> tuple[int, int]:
        ph, pw = self.pad()
        kh, kw = self.kernel
        eff_h = (kh - 1) * self.dilation + 1
        eff_w = (kw - 1) * self.dilation + 1
        hp, wp = height + 2 * ph, width + 2 * pw
        if eff_h > hp or eff_w > wp:
            raise ConfigError(
                f"layer kernel {self.kernel} at dilation {self.dilation} "
                f"does not fit a {height}x{width} input"
            )
        return (hp - eff_h) // self.stride[0] + 1, (wp - eff_w) // self.stride[1] + 1

    def to_json_dict(self) -> dict:
        return {
            "filters": self.filters,
            "kernel": list(self.kernel),
            "dilation": self.dilation,
            "stride": list(self.stride),
            "padding": list(self.padding) if self.padding is not None else None,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "LayerSpec":
        return cls(
            filters=int(payload["filters"]),
            kernel=tuple(payload.get("kernel", (3, 3))),
            dilation=int(payload.get("dilation", 1)),
            stride=tuple(payload.get("stride", (1, 1))),
            padding=tuple(payload["padding"]) if payload.get("padding") is not None else None,
        )


def default_encoder() -> list[LayerSpec]:
    """Four stages; dilations grow exponentially, width strides tame w=400."""
    filters = [16, 32, 64, 64]
    dilations = [1, 2, 4, 8]
    width_strides = [1, 2, 2, 2]
    return [
        LayerSpec(filters=f, dilation=d, stride=(1, s))
        for f, d, s in zip(filters, dilations, width_strides)
    ]


@dataclass
class ModelConfig:
    height: int  # input rows: image height minus the condition row
    width: int
    vocab_size: int
    num_classes: int  # condition classes + END
    max_seq_len: int = 2
    encoder: list[LayerSpec] = field(default_factory=default_encoder)
    attention_hidden: int = 64
    lstm_hidden: int = 64
    cell_encoding: str = "scalar"  # or "embedding"
    embed_channels: int = 8

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"input extents must be positive, got {self.height}x{self.width}")
        if self.vocab_size < 0:
            raise ConfigError("vocab_size cannot be negative")
        if self.num_classes < 2:
            raise ConfigError("need at least one condition class plus END")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be positive")
        if not self.encoder:
            raise ConfigError("encoder needs at least one layer")
        if self.attention_hidden < 1 or self.lstm_hidden < 1:
            raise ConfigError("hidden sizes must be positive")
        if self.cell_encoding not in ("scalar", "embedding"):
            raise ConfigError(f"unknown cell encoding {self.cell_encoding!r}")
        if self.cell_encoding == "embedding" and self.embed_channels < 1:
            raise ConfigError("embed_channels must be positive")
        self.feature_shape()  # fail fast on impossible extents

    @property
    def input_channels(self) -> int:
        return self.embed_channels if self.cell_encoding == "embedding" else 1

    def feature_shape(self) -> tuple[int, int]:
        h, w = self.height, self.width
        for layer in self.encoder:
            h, w = layer.out_extents(h, w)
        if h < 1 or w < 1:
            raise ConfigError("encoder collapses the input to zero extent")
        return h, w

    @property
    def num_locations(self) -> int:
        h, w = self.feature_shape()
        return h * w

    @property
    def feature_dim(self) -> int:
        return self.encoder[-1].filters

    def to_json_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "vocab_size": self.vocab_size,
            "num_classes": self.num_classes,
            "max_seq_len": self.max_seq_len,
            "encoder": [layer.to_json_dict() for layer in self.encoder],
            "attention_hidden": self.attention_hidden,
            "lstm_hidden": self.lstm_hidden,
            "cell_encoding": self.cell_encoding,
            "embed_channels": self.embed_channels,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ModelConfig":
        try:
            return cls(
                height=int(payload["height"]),
                width=int(payload["width"]),
                vocab_size=int(payload["vocab_size"]),
                num_classes=int(payload["num_classes"]),
                max_seq_len=int(payload.get("max_seq_len", 2)),
                encoder=[LayerSpec.from_json_dict(p) for p in payload["encoder"]]
                if "encoder" in payload
                else default_encoder(),
                attention_hidden=int(payload.get("attention_hidden", 64)),
                lstm_hidden=int(payload.get("lstm_hidden", 64)),
                cell_encoding=payload.get("cell_encoding", "scalar"),
                embed_channels=int(payload.get("embed_channels", 8)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc


@dataclass
class EncoderLayerParams:
    kernel: Tensor
    gamma: Tensor
    beta: Tensor
    state: BatchNormState


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterSet:
    """All learnable values, in a fixed declaration order for checkpoints."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.embed_table: Tensor | None = None
        self.layers: list[EncoderLayerParams] = []
        self.attn_w_feat: Tensor | None = None
        self.attn_w_hidden: Tensor | None = None
        self.attn_bias: Tensor | None = None
        self.attn_score_vec: Tensor | None = None
        self.lstm_w_in: Tensor | None = None
        self.lstm_w_rec: Tensor | None = None
        self.lstm_bias: Tensor | None = None
        self.head_weight: Tensor | None = None
        self.head_bias: Tensor | None = None

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "ParameterSet":
        """Glorot-uniform weights, unit gammas, +1 forget-gate bias."""
        rng = np.random.default_rng(seed)
        params = cls(config)

        def param(values) -> Tensor:
            return Tensor(values, requires_grad=True)

        if config.cell_encoding == "embedding":
            rows = config.vocab_size + 1  # row 0 embeds the empty cell
            params.embed_table = param(_glorot(rng, (rows, config.embed_channels), rows, config.embed_channels))

        c_in = config.input_channels
        for layer in config.encoder:
            kh, kw = layer.kernel
            fan_in = c_in * kh * kw
            fan_out = layer.filters * kh * kw
            params.layers.append(
                EncoderLayerParams(
                    kernel=param(_glorot(rng, (layer.filters, c_in, kh, kw), fan_in, fan_out)),
                    gamma=param(np.ones(layer.filters)),
                    beta=param(np.zeros(layer.filters)),
                    state=BatchNormState.fresh(layer.filters),
                )
            )
            c_in = layer.filters

        f = config.feature_dim
        a = config.attention_hidden
        hid = config.lstm_hidden
        params.attn_w_feat = param(_glorot(rng, (f, a), f, a))
        params.attn_w_hidden = param(_glorot(rng, (hid, a), hid, a))
        params.attn_bias = param(np.zeros(a))
        params.attn_score_vec = param(_glorot(rng, (a, 1), a, 1))

        k = config.num_classes
        in_dim = f + k
        gates = 4 * hid
        params.lstm_w_in = param(_glorot(rng, (in_dim, gates), in_dim, gates))
        params.lstm_w_rec = param(_glorot(rng, (hid, gates), hid, gates))
        bias = np.zeros(gates)
        bias[hid:2 * hid] = 1.0  # forget gate opens at init
        params.lstm_bias = param(bias)
        params.head_weight = param(_glorot(rng, (hid, k), hid, k))
        params.head_bias = param(np.zeros(k))
        return params

    def named(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        if self.embed_table is not None:
            out.append(("embed.table", self.embed_table))
        for i, layer in enumerate(self.layers):
            out.append((f"enc{i}.kernel", layer.kernel))
            out.append((f"enc{i}.gamma", layer.gamma))
            out.append((f"enc{i}.beta", layer.beta))
        out.extend(
            [
                ("attn.w_feat", self.attn_w_feat),
                ("attn.w_hidden", self.attn_w_hidden),
                ("attn.bias", self.attn_bias),
                ("attn.score_vec", self.attn_score_vec),
                ("lstm.w_in", self.lstm_w_in),
                ("lstm.w_rec", self.lstm_w_rec),
                ("lstm.bias", self.lstm_bias),
                ("head.weight", self.head_weight),
                ("head.bias", self.head_bias),
            ]
        )
        return out

    def tensor(self, name: str) -> Tensor:
        for key, value in self.named():
            if key == name:
                return value
        raise KeyError(name)

    def zero_grads(self) -> None:
        for _, tensor in self.named():
            tensor.zero_grad()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for _, t in self.named())

    def clone(self) -> "ParameterSet":
        copy = ParameterSet(self.config)
        if self.embed_table is not None:
            copy.embed_table = Tensor(self.embed_table.data.copy(), requires_grad=True)
        for layer in self.layers:
            copy.layers.append(
                EncoderLayerParams(
                    kernel=Tensor(layer.kernel.data.copy(), requires_grad=True),
                    gamma=Tensor(layer.gamma.data.copy(), requires_grad=True),
                    beta=Tensor(layer.beta.data.copy(), requires_grad=True),
                    state=layer.state.copy(),
                )
            )
        for name in (
            "attn_w_feat",
            "attn_w_hidden",
            "attn_bias",
            "attn_score_vec",
            "lstm_w_in",
            "lstm_w_rec",
            "lstm_bias",
            "head_weight",
            "head_bias",
        ):
            setattr(copy, name, Tensor(getattr(self, name).data.copy(), requires_grad=True))
        return copy


@dataclass
class DecoderState:
    hidden: Tensor
    cell: Tensor


def initial_state(config: ModelConfig) -> DecoderState:
    return DecoderState(
        hidden=Tensor(np.zeros((1, config.lstm_hidden))),
        cell=Tensor(np.zeros((1, config.lstm_hidden))),
    )


def one_hot_token(class_index: int | None, num_classes: int) -> Tensor:
    """Previous-label encoding; None gives the all-zero step-0 token."""
    row = np.zeros((1, num_classes))
    if class_index is not None:
        row[0, int(class_index)] = 1.0
    return Tensor(row)


def encode_input(grid: np.ndarray, params: ParameterSet) -> Tensor:
    """Index grid -> channel image, by normalized scalar or learned embedding."""
    config = params.config
    grid = np.asarray(grid)
    if grid.shape != (config.height, config.width):
        raise DimensionError(
            f"input grid is {grid.shape}, model expects {(config.height, config.width)}"
        )
    if config.cell_encoding == "embedding":
        rows = gather_rows(params.embed_table, grid.astype(np.int64).ravel())
        channels_last = transpose2d(rows)  # (C, h*w)
        return reshape(channels_last, (config.embed_channels, config.height, config.width))
    denom = float(max(config.vocab_size, 1))
    return Tensor((grid.astype(np.float64) / denom)[None, :, :])


def encode_features(x: Tensor, params: ParameterSet, training: bool = True) -> Tensor:
    """Run the encoder stack and flatten to H x F, row-major over locations."""
    config = params.config
    mode = "train" if training else "eval"
    out = x
    for spec, layer in zip(config.encoder, params.layers):
        out = conv2d_dilated(
            out, layer.kernel, dilation=spec.dilation, stride=spec.stride, zero_padding=spec.pad()
        )
        c, h, w = out.shape
        out = reshape(out, (1, c, h, w))
        out = batch_norm(
            out, layer.gamma, layer.beta, eps=BN_EPS, mode=mode, state=layer.state, momentum=BN_MOMENTUM
        )
        out = relu(reshape(out, (c, h, w)))
    c, h, w = out.shape
    return transpose2d(reshape(out, (c, h * w)))  # (H, F); row j maps to location j


def attention_score(a: Tensor, h_prev: Tensor, params: ParameterSet) -> Tensor:
    """Additive attention: v^T tanh(a W_feat + h W_hidden + bias), per location."""
    mixed = add(matmul(a, params.attn_w_feat), add(matmul(h_prev, params.attn_w_hidden), params.attn_bias))
    scores = matmul(tanh_act(mixed), params.attn_score_vec)  # (H, 1)
    return reshape(scores, (scores.shape[0],))


def attention_mask(scores: Tensor) -> Tensor:
    return softmax(scores)


def attention_apply(a: Tensor, mask: Tensor) -> tuple[Tensor, Tensor]:
    """Weight each feature row by its mask value and sum into a context vector."""
    locations = a.shape[0]
    weighted = mul(a, reshape(mask, (locations, 1)))
    context = reshape(reduce_sum(weighted, axis=0), (1, a.shape[1]))
    return weighted, context


def lstm_step(
    context: Tensor, prev_token: Tensor, state: DecoderState, params: ParameterSet
) -> tuple[Tensor, DecoderState]:
    """One LSTM cell update over [context || previous token]; returns logits."""
    hidden_size = params.config.lstm_hidden
    u = concat([context, prev_token], axis=1)
    z = add(add(matmul(u, params.lstm_w_in), matmul(state.hidden, params.lstm_w_rec)), params.lstm_bias)
    gate_in = sigmoid(z[:, 0:hidden_size])
    gate_forget = sigmoid(z[:, hidden_size:2 * hidden_size])
    gate_out = sigmoid(z[:, 2 * hidden_size:3 * hidden_size])
    candidate = tanh_act(z[:, 3 * hidden_size:4 * hidden_size])
    cell = add(mul(gate_forget, state.cell), mul(gate_in, candidate))
    hidden = mul(gate_out, tanh_act(cell))
    logits = add(matmul(hidden, params.head_weight), params.head_bias)
    return logits, DecoderState(hidden=hidden, cell=cell)


@dataclass
class TeacherForcedPass:
    loss: Tensor
    masks: list[np.ndarray]
    probs: list[np.ndarray]


def forward_train(
    grid: np.ndarray, labels, params: ParameterSet, training: bool = True
) -> TeacherForcedPass:
    """Teacher-forced pass: mean cross-entropy over the label sequence.

    Step i attends with the previous hidden state and feeds the one-hot of
    label i-1 (a zero vector at step 1). The sequence must end with END or
    fill the length cap.
    """
    config = params.config
    labels = [int(y) for y in labels]
    if not labels:
        raise ContractError("label sequence is empty")
    if len(labels) > config.max_seq_len:
        raise ContractError(f"label sequence longer than cap {config.max_seq_len}")
    end_class = config.num_classes - 1
    if labels[-1] != end_class and len(labels) != config.max_seq_len:
        raise ContractError("label sequence must end with END or fill the length cap")

    x = encode_input(grid, params)
    a = encode_features(x, params, training=training)
    state = initial_state(config)
    losses = []
    masks: list[np.ndarray] = []
    probs: list[np.ndarray] = []
    for i, target in enumerate(labels):
        mask = attention_mask(attention_score(a, state.hidden, params))
        _, context = attention_apply(a, mask)
        prev = one_hot_token(labels[i - 1] if i > 0 else None, config.num_classes)
        logits, state = lstm_step(context, prev, state, params)
        dist = softmax(reshape(logits, (config.num_classes,)))
        losses.append(cross_entropy(dist, target))
        masks.append(mask.data.copy())
        probs.append(dist.data.copy())
    total = losses[0]
    for extra in losses[1:]:
        total = add(total, extra)
    return TeacherForcedPass(loss=scale(total, 1.0 / len(losses)), masks=masks, probs=probs)


@dataclass
class PredictionResult:
    classes: list[int]
    probs: list[np.ndarray]
    masks: list[np.ndarray]
    stop_reason: str  # "end" | "length"

    def __post_init__(self):
        if len(self.probs) != len(self.masks):
            raise ContractError("per-step distributions and masks must align")


def predict(grid: np.ndarray, params: ParameterSet) -> PredictionResult:
    """Free-running decode: feed back the argmax, stop on END or the cap."""
    config = params.config
    end_class = config.num_classes - 1
    with no_grad():
        x = encode_input(grid, params)
        a = encode_features(x, params, training=False)
        state = initial_state(config)
        prev = one_hot_token(None, config.num_classes)
        classes: list[int] = []
        probs: list[np.ndarray] = []
        masks: list[np.ndarray] = []
        stop_reason = "length"
        for _ in range(config.max_seq_len):
            mask = attention_mask(attention_score(a, state.hidden, params))
            _, context = attention_apply(a, mask)
            logits, state = lstm_step(context, prev, state, params)
            dist = softmax(reshape(logits, (config.num_classes,)))
            chosen = int(np.argmax(dist.data))
            classes.append(chosen)
            probs.append(dist.data.copy())
            masks.append(mask.data.copy())
            if chosen == end_class:
                stop_reason = "end"
                break
            prev = one_hot_token(chosen, config.num_classes)
    return PredictionResult(classes=classes, probs=probs, masks=masks, stop_reason=stop_reason)


def receptive_field(config: ModelConfig, row: int, col: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Input-cell window influencing one feature location, as inclusive
    (row_lo, row_hi), (col_lo, col_hi) clipped to the input extents."""
    fh, fw = config.feature_shape()
    if not (0 <= row < fh and 0 <= col < fw):
        raise DimensionError(f"feature location {(row, col)} outside {fh}x{fw}")
    r_lo, r_hi = row, row
    c_lo, c_hi = col, col
    for layer in reversed(config.encoder):
        ph, pw = layer.pad()
        kh, kw = layer.kernel
        sh, sw = layer.stride
        d = layer.dilation
        r_lo, r_hi = r_lo * sh - ph, r_hi * sh - ph + (kh - 1) * d
        c_lo, c_hi = c_lo * sw - pw, c_hi * sw - pw + (kw - 1) * d
    return (
        (max(r_lo, 0), min(r_hi, config.height - 1)),
        (max(c_lo, 0), min(c_hi, config.width - 1)),
    )


# ---------------------------------------------------------------------------
# checkpoint format


def parameter_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Declaration-order tensor shapes, fully derived from the config."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    if config.cell_encoding == "embedding":
        shapes.append(("embed.table", (config.vocab_size + 1, config.embed_channels)))
    c_in = config.input_channels
    for i, layer in enumerate(config.encoder):
        kh, kw = layer.kernel
        shapes.append((f"enc{i}.kernel", (layer.filters, c_in, kh, kw)))
        shapes.append((f"enc{i}.gamma", (layer.filters,)))
        shapes.append((f"enc{i}.beta", (layer.filters,)))
        c_in = layer.filters
    f, a, h, k = config.feature_dim, config.attention_hidden, config.lstm_hidden, config.num_classes
    shapes.extend(
        [
            ("attn.w_feat", (f, a)),
            ("attn.w_hidden", (h, a)),
            ("attn.bias", (a,)),
            ("attn.score_vec", (a, 1)),
            ("lstm.w_in", (f + k, 4 * h)),
            ("lstm.w_rec", (h, 4 * h)),
            ("lstm.bias", (4 * h,)),
            ("head.weight", (h, k)),
            ("head.bias", (k,)),
        ]
    )
    return shapes


def _write_array(chunks: list[bytes], values: np.ndarray) -> None:
    chunks.append(struct.pack("<B", values.ndim))
    chunks.append(struct.pack(f"<{values.ndim}I", *values.shape))
    chunks.append(values.astype("<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.data):
            raise FormatError("checkpoint is truncated")
        chunk = self.data[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def read_array(self, expected_shape: tuple[int, ...] | None = None) -> np.ndarray:
        ndim = struct.unpack("<B", self.take(1))[0]
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(self.take(8 * count), dtype="<f8").reshape(shape)
        if expected_shape is not None and tuple(shape) != tuple(expected_shape):
            raise FormatError(f"tensor shape {shape} does not match config {expected_shape}")
        return values.astype(np.float64)

    def done(self) -> bool:
        return self.offset == len(self.data)


def save_checkpoint(path, params: ParameterSet, optimizer_blob: dict | None = None) -> None:
    """Write parameters (declaration order), running stats, optimizer moments."""
    config_json = json.dumps(params.config.to_json_dict(), sort_keys=True).encode("utf-8")
    chunks: list[bytes] = [CHECKPOINT_MAGIC, struct.pack("<B", CHECKPOINT_VERSION)]
    chunks.append(struct.pack("<I", len(config_json)))
    chunks.append(config_json)
    named = params.named()
    for _, tensor in named:
        _write_array(chunks, tensor.data)
    chunks.append(struct.pack("<I", len(params.layers)))
    for layer in params.layers:
        _write_array(chunks, layer.state.mean)
        _write_array(chunks, layer.state.var)
    if optimizer_blob is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<Q", int(optimizer_blob["step"])))
        for name, tensor in named:
            _write_array(chunks, np.asarray(optimizer_blob["m"][name]))
            _write_array(chunks, np.asarray(optimizer_blob["v"][name]))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[ParameterSet, dict | None]:
    reader = _Reader(Path(path).read_bytes())
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    version = struct.unpack("<B", reader.take(1))[0]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    config_len = struct.unpack("<I", reader.take(4))[0]
    try:
        config = ModelConfig.from_json_dict(json.loads(reader.take(config_len).decode("utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint config: {exc}") from exc

    params = ParameterSet(config)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config):
        arrays[name] = reader.read_array(expected_shape=shape)

    if config.cell_encoding == "embedding":
        params.embed_table = Tensor(arrays["embed.table"], requires_grad=True)
    for i, layer in enumerate(config.encoder):
        params.layers.append(
            EncoderLayerParams(
                kernel=Tensor(arrays[f"enc{i}.kernel"], requires_grad=True),
                gamma=Tensor(arrays[f"enc{i}.gamma"], requires_grad=True),
                beta=Tensor(arrays[f"enc{i}.beta"], requires_grad=True),
                state=BatchNormState.fresh(layer.filters),
            )
        )
    params.attn_w_feat = Tensor(arrays["attn.w_feat"], requires_grad=True)
    params.attn_w_hidden = Tensor(arrays["attn.w_hidden"], requires_grad=True)
    params.attn_bias = Tensor(arrays["attn.bias"], requires_grad=True)
    params.attn_score_vec = Tensor(arrays["attn.score_vec"], requires_grad=True)
    params.lstm_w_in = Tensor(arrays["lstm.w_in"], requires_grad=True)
    params.lstm_w_rec = Tensor(arrays["lstm.w_rec"], requires_grad=True)
    params.lstm_bias = Tensor(arrays["lstm.bias"], requires_grad=True)
    params.head_weight = Tensor(arrays["head.weight"], requires_grad=True)
    params.head_bias = Tensor(arrays["head.bias"], requires_grad=True)

    n_states = struct.unpack("<I", reader.take(4))[0]
    if n_states != len(params.layers):
        raise FormatError(f"checkpoint has {n_states} norm states, config needs {len(params.layers)}")
    for layer in params.layers:
        layer.state.mean = reader.read_array(expected_shape=layer.state.mean.shape)
        layer.state.var = reader.read_array(expected_shape=layer.state.var.shape)

    has_opt = struct.unpack("<B", reader.take(1))[0]
    optimizer_blob = None
    if has_opt:
        step = struct.unpack("<Q", reader.take(8))[0]
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name, shape in parameter_shapes(config):
            m[name] = reader.read_array(expected_shape=shape)
            v[name] = reader.read_array(expected_shape=shape)
        optimizer_blob = {"step": int(step), "m": m, "v": v}
    if not reader.done():
        raise FormatError("trailing bytes after checkpoint payload")
    return params, optimizer_blob
