import json
from pathlib import Path

import numpy as np
import pytest

from ehr_spotlight.cli import main
from ehr_spotlight.pathway import DimensionConfig
from ehr_spotlight.store import load_cohort_dir
from ehr_spotlight.synth import default_cohort_spec


def run(argv):
    return main([str(a) for a in argv])


def dir_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort") / "data"
    spec = default_cohort_spec(n_patients=14, width=48, seed=3)
    spec_path = out.parent / "spec.json"
    spec_path.write_text(json.dumps(spec.to_json_dict()))
    assert run(["--quiet", "synth", "--spec", spec_path, "--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, synth_dir):
    ckpt = tmp_path_factory.mktemp("ckpt")
    model_cfg = {
        "encoder": [
            {"filters": 4, "dilation": 1, "stride": [1, 1]},
            {"filters": 8, "dilation": 2, "stride": [1, 2]},
        ],
        "attention_hidden": 8,
        "lstm_hidden": 8,
        "cell_encoding": "embedding",
        "embed_channels": 4,
    }
    train_cfg = {"epochs": 2, "batch_size": 4, "seed": 1}
    model_path = ckpt / "model.json"
    train_path = ckpt / "train.json"
    model_path.write_text(json.dumps(model_cfg))
    train_path.write_text(json.dumps(train_cfg))
    code = run(
        ["--quiet", "train", "--data", synth_dir, "--model", model_path, "--train", train_path,
         "--ckpt", ckpt]
    )
    assert code == 0
    return ckpt


def test_synth_is_idempotent_per_seed(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["--quiet", "synth", "--n", 8, "--seed", 7, "--out", a]) == 0
    assert run(["--quiet", "synth", "--n", 8, "--seed", 7, "--out", b]) == 0
    assert dir_bytes(a) == dir_bytes(b)
    c = tmp_path / "c"
    assert run(["--quiet", "synth", "--n", 8, "--seed", 8, "--out", c]) == 0
    assert dir_bytes(a) != dir_bytes(c)


def test_synth_writes_cohort_layout(synth_dir):
    store = load_cohort_dir(synth_dir)
    assert len(store.images) == 14
    assert store.manifest
    assert (synth_dir / "cohort_spec.json").exists()


def test_train_writes_checkpoints_and_log(trained_dir):
    assert (trained_dir / "best.spot").exists()
    assert (trained_dir / "last.spot").exists()
    log = (trained_dir / "log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,test_loss,seq_accuracy"
    assert len(log) == 3
    split = json.loads((trained_dir / "split.json").read_text())
    assert not set(split["train"]) & set(split["test"])


def test_predict_outputs_aligned_steps_and_masks(tmp_path, synth_dir, trained_dir):
    image = sorted((synth_dir / "images").glob("*.pwim"))[0]
    out = tmp_path / "prediction.json"
    code = run(
        ["--quiet", "predict", "--ckpt", trained_dir / "best.spot", "--image", image,
         "--dims", synth_dir / "dims.json", "--out", out]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["patient_id"] == image.stem
    assert len(payload["steps"]) == len(payload["masks"]) >= 1
    assert payload["steps"][-1]["stop_reason"] in ("end", "length")
    fh, fw = payload["feature_shape"]
    assert all(len(mask) == fh * fw for mask in payload["masks"])
    for step in payload["steps"]:
        assert abs(sum(step["probs"]) - 1.0) < 1e-6


def test_eval_writes_report(tmp_path, synth_dir, trained_dir):
    report = tmp_path / "report.json"
    code = run(
        ["--quiet", "eval", "--ckpt", trained_dir / "best.spot", "--data", synth_dir,
         "--report", report]
    )
    assert code == 0
    payload = json.loads(report.read_text())
    assert {"classes", "confusion", "overlap", "counts", "top_events"} <= set(payload)
    assert report.with_suffix(".json.txt").exists()


def test_render_writes_ppm_with_expected_size(tmp_path, synth_dir):
    image = sorted((synth_dir / "images").glob("*.pwim"))[0]
    out = tmp_path / "img.ppm"
    assert run(["--quiet", "render", "--image", image, "--block", 2, "--out", out]) == 0
    data = out.read_bytes()
    assert data.startswith(b"P6\n96 12\n255\n")  # 48x6 cells at block 2


def test_render_with_prediction_mask(tmp_path, synth_dir, trained_dir):
    image = sorted((synth_dir / "images").glob("*.pwim"))[0]
    prediction = tmp_path / "prediction.json"
    run(
        ["--quiet", "predict", "--ckpt", trained_dir / "best.spot", "--image", image,
         "--dims", synth_dir / "dims.json", "--out", prediction]
    )
    out = tmp_path / "overlay.ppm"
    code = run(
        ["--quiet", "render", "--image", image, "--mask", prediction, "--step", 0,
         "--dims", synth_dir / "dims.json", "--zoom", "0:6,0:24", "--block", 4, "--out", out]
    )
    assert code == 0
    assert out.read_bytes().startswith(b"P6\n96 24\n255\n")


def test_compose_pipeline(tmp_path):
    dims = DimensionConfig.default()
    events_csv = tmp_path / "events.csv"
    events_csv.write_text(
        "pid,days,code,system,dim\n"
        "p1,0,cond1,icd9,conditions\n"
        "p1,1,751-1,loinc,observations\n"
        "p1,2,0001,ndc,medications\n"
        "p2,0,cond2,icd9,conditions\n"
        "p2,1,751-1,loinc,observations\n"
        "p2,bad,x,icd9,observations\n"
        "p3,0,lonely,icd9,observations\n"
    )
    columns = tmp_path / "columns.json"
    columns.write_text(json.dumps({
        "patient": "pid", "time": "days", "code": "code", "system": "system", "dimension": "dim",
    }))
    dims_path = tmp_path / "dims.json"
    dims_path.write_text(json.dumps(dims.to_json_dict()))
    out = tmp_path / "composed"
    code = run(
        ["--quiet", "compose", "--events", events_csv, "--columns", columns,
         "--dims", dims_path, "--width", 16, "--out", out]
    )
    assert code == 0
    store = load_cohort_dir(out)
    assert {img.patient_id for img in store.images} == {"p1", "p2"}
    assert json.loads((out / "row_errors.json").read_text())[0]["line"] == 7
    skipped = json.loads((out / "skipped.json").read_text())
    assert skipped[0]["patient_id"] == "p3"


def test_missing_file_gives_one_line_error(tmp_path, capsys):
    code = run(["predict", "--ckpt", tmp_path / "nope.spot", "--image", tmp_path / "x.pwim",
                "--out", tmp_path / "o.json"])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: ") and "\n" not in err


def test_bad_config_gives_machine_parseable_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code = run(["synth", "--spec", bad, "--out", tmp_path / "out"])
    assert code == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: config:")


def test_unknown_subcommand_exits_with_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        run(["frobnicate"])
    assert excinfo.value.code == 2
