import numpy as np
import pytest

from puddleseg import data
from puddleseg.ablation import COMPONENT_ROWS, run_ablation
from puddleseg.config import ONE_STAGE, TrainConfig


def micro_cfg(**kw):
    base = dict(strategy="two-stage", epochs_stage1=1, epochs_stage2=1,
                batch_size=4, image_side=32, patch_size=8, embed_dim=16,
                num_heads=2, encoder_depth=2, small_width=4, grid_size=2,
                seed=13)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def micro_bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("abl")
    data.generate_synthetic_dataset(root, seed=19, n_train=12, n_test=6,
                                    side=32)
    return root


def test_component_grid_is_cumulative():
    assert len(COMPONENT_ROWS) == 6
    keys = ("use_he", "use_spatial", "use_semantic", "use_style", "use_dpc")
    on_counts = [sum(row[k] for k in keys) for row in COMPONENT_ROWS]
    assert on_counts == [0, 1, 2, 3, 4, 5]


def test_tau_axis_row_count_and_mode(micro_bench):
    rows = run_ablation("tau", micro_cfg(), micro_bench)
    assert [r["tau"] for r in rows] == [0.3, 0.4, 0.5, 0.6, 0.7]
    assert all(r["error"] == "" for r in rows)


def test_lambda_axis_forces_one_stage(micro_bench):
    captured = []
    import puddleseg.ablation as abl
    orig = abl.train

    def spy(cfg, dataset, **kw):
        captured.append(cfg.strategy)
        return orig(cfg, dataset, **kw)

    abl.train = spy
    try:
        rows = run_ablation("lambda", micro_cfg(), micro_bench,
                            values=(1.0, 0.1))
    finally:
        abl.train = orig
    assert captured == [ONE_STAGE, ONE_STAGE]
    assert [r["lambda"] for r in rows] == [1.0, 0.1]


def test_failed_row_recorded_and_run_continues(micro_bench):
    rows = run_ablation("tau", micro_cfg(), micro_bench, values=(0.5, -0.3))
    assert rows[0]["error"] == ""
    assert rows[1]["error"] != ""
    assert rows[1]["iou"] == ""
    assert len(rows) == 2


def test_unknown_axis_rejected(micro_bench):
    with pytest.raises(ValueError):
        run_ablation("gamma", micro_cfg(), micro_bench)


def test_ratio_direction_on_benchmark(tmp_path):
    # paired seeded runs at benchmark scale: more training data must not
    # hurt, up to a 2-point noise band
    root = tmp_path / "bench"
    data.generate_synthetic_dataset(root, seed=7, n_train=200, n_test=50,
                                    side=64)
    base = TrainConfig(strategy="two-stage", epochs_stage1=12,
                       epochs_stage2=12, seed=42)
    rows = run_ablation("ratio", base, root)
    assert [r["ratio"] for r in rows] == [0.25, 0.5, 1.0]
    ious = [r["iou"] for r in rows]
    assert all(isinstance(v, float) for v in ious)
    assert all(b >= a - 0.02 for a, b in zip(ious, ious[1:])), ious
