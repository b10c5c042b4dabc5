"""Command-line surface: compose, synth, train, predict, eval, render."""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DimensionError, SpotlightError
from .metrics import build_report, top_attention_events, upsample_mask
from .model import (
    ModelConfig,
    load_checkpoint,
    predict,
)
from .pathway import (
    DimensionConfig,
    LabelSpace,
    PathwayLengthError,
    UnlabeledPathwayError,
    build_vocabulary,
    compose_pathway,
    extract_labels,
    ingest_events,
    load_dimensions,
    load_image,
    load_remap,
    load_vocabulary,
    render_image,
)
from .render import RenderSpec, parse_zoom, render_heatmap, write_raster
from .store import load_cohort_dir, write_cohort_dir, write_composed_dir
from .synth import CohortSpec, default_cohort_spec, generate_cohort, sparsity_report
from .training import (
    TrainConfig,
    fit,
    load_train_config,
    save_training_checkpoint,
    split_dataset,
    write_log_csv,
)


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _error_slug(exc: Exception) -> str:
    name = type(exc).__name__
    if name.endswith("Error"):
        name = name[: -len("Error")]
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).lower() or "error"


def _load_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_compose(args) -> int:
    dims = load_dimensions(args.dims)
    column_map = _load_json(args.columns, "column map")
    remap = load_remap(args.remap) if args.remap else None
    events, row_errors = ingest_events(args.events, column_map, dims)
    vocab = build_vocabulary(events, remap=remap)
    label_space = LabelSpace.from_vocabulary(vocab, dims)

    by_patient: dict[str, list] = {}
    for event in events:
        by_patient.setdefault(event.patient_id, []).append(event)

    images, labels, skipped = [], {}, []
    for pid, patient_events in by_patient.items():
        try:
            image = render_image(compose_pathway(patient_events), vocab, dims, width=args.width)
            _, seq = extract_labels(image, dims, label_space)
        except PathwayLengthError as exc:
            skipped.append({"patient_id": pid, "reason": f"length: {exc}"})
            continue
        except UnlabeledPathwayError as exc:
            skipped.append({"patient_id": pid, "reason": f"unlabeled: {exc}"})
            continue
        images.append(image)
        labels[pid] = seq
    if not images:
        raise ConfigError("no usable pathways were composed")

    out = write_composed_dir(args.out, images, vocab, dims, label_space, labels, skipped)
    if row_errors:
        (out / "row_errors.json").write_text(
            json.dumps([{"line": e.line, "message": e.message} for e in row_errors], indent=2),
            encoding="utf-8",
        )
    _say(args, f"composed {len(images)} pathway images into {out}")
    _say(args, f"  vocabulary: {vocab.size} codes, classes: {label_space.num_classes - 1} + END")
    if skipped:
        _say(args, f"  skipped {len(skipped)} pathways (see skipped.json)")
    if row_errors:
        _say(args, f"  {len(row_errors)} bad rows (see row_errors.json)")
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        spec = CohortSpec.from_json_dict(_load_json(args.spec, "cohort spec"))
        if args.n is not None or args.seed is not None:
            payload = spec.to_json_dict()
            if args.n is not None:
                payload["n_patients"] = args.n
            if args.seed is not None:
                payload["seed"] = args.seed
            spec = CohortSpec.from_json_dict(payload)
    else:
        spec = default_cohort_spec(
            n_patients=args.n if args.n is not None else 200,
            seed=args.seed if args.seed is not None else 0,
        )
    cohort = generate_cohort(spec)
    out = write_cohort_dir(args.out, cohort)
    ratio = sparsity_report(cohort.images, cohort.dims)
    _say(args, f"generated {len(cohort.images)} pathways into {out}")
    _say(args, f"  empty:event ratio {ratio:.2f}, planted signals: {len(cohort.manifest)}")
    return 0


def _model_config_from(args, store) -> ModelConfig:
    payload = _load_json(args.model, "model config") if args.model else {}
    payload.setdefault("height", len(store.dims.dimensions) - 1)
    payload.setdefault("width", store.images[0].width)
    payload.setdefault("vocab_size", store.vocab.size)
    payload.setdefault("num_classes", store.label_space.num_classes)
    return ModelConfig.from_json_dict(payload)


def cmd_train(args) -> int:
    store = load_cohort_dir(args.data)
    model_config = _model_config_from(args, store)
    train_config = load_train_config(args.train) if args.train else TrainConfig(epochs=args.epochs)
    if args.seed is not None:
        payload = train_config.to_json_dict()
        payload["seed"] = args.seed
        train_config = TrainConfig.from_json_dict(payload)

    samples = store.samples()
    labels = [s.labels for s in samples]
    train_items, test_items = split_dataset(
        samples, train_config.train_fraction, train_config.seed, labels=labels
    )
    _say(args, f"training on {len(train_items)} pathways, testing on {len(test_items)}")

    result = fit(train_items, model_config, train_config, test_items=test_items)

    ckpt_dir = Path(args.ckpt)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_training_checkpoint(ckpt_dir / "best.spot", result.best_params)
    save_training_checkpoint(ckpt_dir / "last.spot", result.params)
    write_log_csv(ckpt_dir / "log.csv", result.log)
    (ckpt_dir / "split.json").write_text(
        json.dumps(
            {
                "train": [s.patient_id for s in train_items],
                "test": [s.patient_id for s in test_items],
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    if result.log:
        final = result.log[-1]
        test_part = "-" if final.test_loss is None else f"{final.test_loss:.4f}"
        acc_part = "-" if final.seq_accuracy is None else f"{final.seq_accuracy:.3f}"
        _say(
            args,
            f"epoch {final.epoch}: train loss {final.train_loss:.4f}, "
            f"test loss {test_part}, sequence accuracy {acc_part}",
        )
    if result.diverged:
        _say(args, "training diverged; checkpoints hold the last good parameters")
        return 1
    _say(args, f"checkpoints written to {ckpt_dir}")
    return 0


def _input_grid_for(params, image, dims: DimensionConfig | None) -> np.ndarray:
    config = params.config
    if image.height == config.height:
        return image.grid
    if image.height == config.height + 1:
        if dims is None:
            raise DimensionError(
                f"image {image.patient_id} still has its condition row; pass --dims to drop it"
            )
        return np.delete(image.grid, dims.condition_row, axis=0)
    raise DimensionError(
        f"image height {image.height} fits neither the model input {config.height} "
        f"nor input+condition {config.height + 1}"
    )


def cmd_predict(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    image = load_image(args.image)
    dims = load_dimensions(args.dims) if args.dims else None
    grid = _input_grid_for(params, image, dims)
    result = predict(grid, params)
    steps = []
    for i, (cls, probs) in enumerate(zip(result.classes, result.probs)):
        steps.append(
            {
                "class": cls,
                "probs": [float(p) for p in probs],
                "stop_reason": result.stop_reason if i == len(result.classes) - 1 else None,
            }
        )
    payload = {
        "patient_id": image.patient_id,
        "steps": steps,
        "masks": [[float(v) for v in mask] for mask in result.masks],
        "feature_shape": list(params.config.feature_shape()),
    }
    Path(args.out).write_text(json.dumps(payload, indent=2), encoding="utf-8")
    _say(args, f"predicted {len(steps)} steps for {image.patient_id} -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.ckpt)
    store = load_cohort_dir(args.data)
    samples = store.samples()
    if args.subset != "all":
        labels = [s.labels for s in samples]
        train_items, test_items = split_dataset(samples, args.fraction, args.split_seed, labels=labels)
        samples = train_items if args.subset == "train" else test_items
    _say(args, f"evaluating {len(samples)} pathways")

    predicted, truths, all_masks, grids = [], [], [], []
    for sample in samples:
        result = predict(sample.grid, params)
        predicted.append(result.classes)
        truths.append(list(sample.labels))
        all_masks.append(result.masks)
        grids.append(sample.grid)

    end_class = store.label_space.end_class
    names = [store.label_space.name_of(i) for i in range(store.label_space.num_classes)]
    top = top_attention_events(
        all_masks,
        grids,
        store.vocab,
        store.dims.input_rows(),
        params.config.feature_shape(),
        threshold=args.threshold,
        top_k=args.topk,
        normalized=not args.absolute_threshold,
    )
    report = build_report(predicted, truths, end_class, class_names=names, top_events=top)
    report_path = Path(args.report)
    report_path.write_text(report.to_json(), encoding="utf-8")
    report_path.with_suffix(report_path.suffix + ".txt").write_text(
        report.format_text(), encoding="utf-8"
    )
    _say(args, report.format_text())
    _say(args, f"report written to {report_path}")
    return 0


def _mask_for_render(args) -> tuple[np.ndarray, tuple[int, int] | None] | None:
    if not args.mask:
        return None
    payload = _load_json(args.mask, "mask")
    if isinstance(payload, dict) and "masks" in payload:
        masks = payload["masks"]
        if not 0 <= args.step < len(masks):
            raise ConfigError(f"--step {args.step} outside the {len(masks)} recorded steps")
        feature_shape = tuple(payload.get("feature_shape", ()))
        if len(feature_shape) != 2:
            raise ConfigError("mask file lacks its feature_shape")
        return np.asarray(masks[args.step], dtype=np.float64), feature_shape
    return np.asarray(payload, dtype=np.float64), None


def cmd_render(args) -> int:
    image = load_image(args.image)
    dims = load_dimensions(args.dims) if args.dims else None
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    grid = image.grid

    mask = None
    loaded = _mask_for_render(args)
    if loaded is not None:
        values, feature_shape = loaded
        input_height = grid.shape[0] - 1 if dims is not None else grid.shape[0]
        if feature_shape is not None:
            values = upsample_mask(values, feature_shape, (input_height, grid.shape[1]))
        if values.shape == (grid.shape[0] - 1, grid.shape[1]):
            if dims is None:
                raise DimensionError("mask covers the condition-stripped image; pass --dims")
            values = np.insert(values, dims.condition_row, 0.0, axis=0)
        mask = values

    zoom = parse_zoom(args.zoom) if args.zoom else None
    spec = RenderSpec(grid=grid, mask=mask, zoom=zoom, block_size=args.block, vocab=vocab)
    pixels = render_heatmap(spec)
    write_raster(args.out, pixels)
    _say(args, f"rendered {pixels.shape[1]}x{pixels.shape[0]} raster -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spotlight",
        description="Encode clinical pathways as images, predict condition sequences, "
        "and render the attention masks that explain each prediction.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="override configured RNG seeds")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")

    # the global flags are also accepted after the subcommand; SUPPRESS keeps
    # the pre-subcommand value when the flag is absent there
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override configured RNG seeds")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress progress output")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", parents=[common],
                       help="turn an event CSV into a pathway-image directory")
    p.add_argument("--events", required=True, help="event CSV file")
    p.add_argument("--columns", required=True, help="JSON column map")
    p.add_argument("--dims", required=True, help="JSON dimension config")
    p.add_argument("--remap", help="JSON code-group remap")
    p.add_argument("--width", type=int, default=400)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_compose)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cohort with planted signals")
    p.add_argument("--spec", help="cohort spec JSON (defaults to a built-in cohort)")
    p.add_argument("--n", type=int, help="override the number of patients")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train on a cohort directory")
    p.add_argument("--data", required=True, help="cohort directory")
    p.add_argument("--model", help="model config JSON (data-dependent fields auto-filled)")
    p.add_argument("--train", help="train config JSON")
    p.add_argument("--epochs", type=int, default=10, help="epochs when no train config is given")
    p.add_argument("--ckpt", required=True, help="checkpoint output directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict one pathway image")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--image", required=True, help="PWIM image file")
    p.add_argument("--dims", help="dimension config, needed when the image has its condition row")
    p.add_argument("--out", required=True, help="prediction JSON output")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint over a cohort directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="report JSON output path")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--topk", type=int, default=20)
    p.add_argument("--absolute-threshold", action="store_true",
                   help="apply the threshold to raw mask values instead of peak-normalized ones")
    p.add_argument("--subset", choices=("all", "train", "test"), default="all")
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="rasterize a pathway image, optionally with a mask overlay")
    p.add_argument("--image", required=True, help="PWIM image file")
    p.add_argument("--mask", help="prediction JSON or a plain 2D JSON mask")
    p.add_argument("--step", type=int, default=0, help="which prediction step's mask to draw")
    p.add_argument("--zoom", help="window r0:r1,c0:c1")
    p.add_argument("--block", type=int, default=2, help="pixels per cell")
    p.add_argument("--dims", help="dimension config for condition-row alignment")
    p.add_argument("--vocab", help="vocabulary JSON for code annotations")
    p.add_argument("--out", required=True, help="raster output (.ppm, or .png with Pillow)")
    p.set_defaults(handler=cmd_render)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except SpotlightError as exc:
        print(f"error: {_error_slug(exc)}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
