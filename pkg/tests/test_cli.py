import csv

import numpy as np
import pytest
from PIL import Image as PILImage

from puddleseg.cli import main

MICRO_CONFIG = """
strategy = two-stage
epochs_stage1 = 1
epochs_stage2 = 1
batch_size = 4
image_side = 32
patch_size = 8
embed_dim = 16
num_heads = 2
encoder_depth = 2
small_width = 4
grid_size = 2
seed = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    root = ws / "bench"
    assert main(["gen-data", "--root", str(root), "--seed", "5",
                 "--n-train", "8", "--n-test", "4", "--side", "32"]) == 0
    cfg_path = ws / "train.cfg"
    cfg_path.write_text(MICRO_CONFIG)
    ckpt = ws / "model.ckpt"
    log = ws / "train_log.csv"
    assert main(["train", "--config", str(cfg_path), "--data", str(root),
                 "--out", str(ckpt), "--log", str(log)]) == 0
    return {"ws": ws, "root": root, "cfg": cfg_path, "ckpt": ckpt, "log": log}


def test_training_log_schema(workspace):
    with open(workspace["log"]) as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    assert list(rows[0].keys()) == ["step", "stage", "lr", "focal", "ce",
                                    "iou", "proto", "small", "total"]
    assert rows[0]["stage"] == "stage-1"
    assert rows[-1]["stage"] == "stage-2"


def test_stage1_checkpoint_written(workspace):
    assert (workspace["ws"] / "model.ckpt.stage1").exists()


def test_stage1_checkpoint_evaluates_promptless(workspace, capsys):
    # the boundary checkpoint is the no-prompt baseline
    from puddleseg.training import pipeline_from_checkpoint
    _, _, prompted = pipeline_from_checkpoint(
        str(workspace["ws"] / "model.ckpt.stage1"))
    assert prompted is False
    assert main(["eval", "--checkpoint", str(workspace["ws"] / "model.ckpt.stage1"),
                 "--data", str(workspace["root"])]) == 0
    assert "iou=" in capsys.readouterr().out


def test_eval_all_and_hard(workspace, capsys):
    for split in ("all", "hard"):
        assert main(["eval", "--checkpoint", str(workspace["ckpt"]),
                     "--data", str(workspace["root"]), "--split", split]) == 0
        out = capsys.readouterr().out
        assert "iou=" in out and f"split=test-{split}" in out


def test_eval_pr_curve_output(workspace, tmp_path):
    pr_path = tmp_path / "curve.csv"
    assert main(["eval", "--checkpoint", str(workspace["ckpt"]),
                 "--data", str(workspace["root"]),
                 "--pr-out", str(pr_path), "--pr-thresholds", "5"]) == 0
    with open(pr_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert list(rows[0].keys()) == ["threshold", "precision", "recall"]
    recalls = [float(r["recall"]) for r in rows]
    assert all(b <= a + 1e-12 for a, b in zip(recalls, recalls[1:]))


def test_predict_writes_png(workspace, tmp_path):
    img_path = next((workspace["root"] / "test" / "images").glob("*.png"))
    out_path = tmp_path / "mask.png"
    assert main(["predict", "--checkpoint", str(workspace["ckpt"]),
                 "--image", str(img_path), "--out", str(out_path)]) == 0
    with PILImage.open(out_path) as im:
        arr = np.asarray(im)
    assert arr.shape == (32, 32)
    assert set(np.unique(arr)) <= {0, 255}


def test_ablate_ratio_axis(workspace, tmp_path):
    out_csv = tmp_path / "ratio.csv"
    assert main(["ablate", "--axis", "ratio", "--data", str(workspace["root"]),
                 "--out", str(out_csv), "--config", str(workspace["cfg"])]) == 0
    with open(out_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert [float(r["ratio"]) for r in rows] == [0.25, 0.5, 1.0]
    assert all(r["error"] == "" for r in rows)


def test_report_efficiency(workspace, capsys):
    assert main(["report-efficiency", "--checkpoint", str(workspace["ckpt"]),
                 "--data", str(workspace["root"])]) == 0
    out = capsys.readouterr().out
    assert "parameters per component" in out
    assert "inference time" in out
    for group in ("small", "encoder", "he", "decoder"):
        assert group in out


def test_train_flag_overrides(workspace, tmp_path):
    out = tmp_path / "one.ckpt"
    assert main(["train", "--config", str(workspace["cfg"]),
                 "--data", str(workspace["root"]), "--out", str(out),
                 "--strategy", "one", "--epochs-stage1", "1",
                 "--spatial-mode", "point", "--tau", "0.6"]) == 0
    from puddleseg.training import pipeline_from_checkpoint
    _, cfg, prompted = pipeline_from_checkpoint(str(out))
    assert cfg.strategy == "one-stage"
    assert cfg.spatial_mode == "point"
    assert cfg.tau == 0.6
    assert prompted


def test_resume_from_cli(workspace, tmp_path):
    # interrupted run: the checkpoint carries enough state to continue
    out = tmp_path / "resume.ckpt"
    from puddleseg import data as pdata
    from puddleseg.config import TrainConfig
    from puddleseg.training import train
    cfg = TrainConfig.from_file(workspace["cfg"])
    dataset = pdata.load_arrays(pdata.load_split(workspace["root"], "train"))
    train(cfg, dataset, checkpoint_out=str(out), stop_after_epochs=1)
    assert main(["train", "--config", str(workspace["cfg"]),
                 "--data", str(workspace["root"]), "--out", str(out),
                 "--resume", str(out)]) == 0
