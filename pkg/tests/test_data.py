import numpy as np
import pytest

from puddleseg.data import (FG_FRACTION_RANGE, HARD_PROFILE, DatasetIndex,
                            generate_synthetic_dataset, load_arrays,
                            load_split)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    generate_synthetic_dataset(root, seed=5, n_train=6, n_test=5, side=32,
                               hard_fraction=0.4)
    return root


def test_counts_and_layout(small_dataset):
    train = load_split(small_dataset, "train")
    test_all = load_split(small_dataset, "test-all")
    test_hard = load_split(small_dataset, "test-hard")
    assert len(train.pairs) == 6
    assert len(test_all.pairs) == 5
    assert len(test_hard.pairs) == 2  # round(0.4 * 5)
    hard_stems = {p.stem for p, _ in test_hard.pairs}
    all_stems = {p.stem for p, _ in test_all.pairs}
    assert hard_stems <= all_stems
    assert (small_dataset / "hard.txt").exists()


def test_regeneration_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for root in (a, b):
        generate_synthetic_dataset(root, seed=9, n_train=3, n_test=2, side=32)
    for rel in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_different_seed_differs(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_synthetic_dataset(a, seed=1, n_train=1, n_test=1, side=32)
    generate_synthetic_dataset(b, seed=2, n_train=1, n_test=1, side=32)
    pa = next((a / "train" / "images").glob("*.png"))
    pb = next((b / "train" / "images").glob("*.png"))
    assert pa.read_bytes() != pb.read_bytes()


def test_foreground_fraction_band(small_dataset):
    for split in ("train", "test-all"):
        _, masks = load_arrays(load_split(small_dataset, split))
        fracs = masks.mean(axis=(1, 2))
        assert (fracs >= FG_FRACTION_RANGE[0]).all()
        assert (fracs <= FG_FRACTION_RANGE[1]).all()


def test_loader_round_trip(small_dataset):
    images, masks = load_arrays(load_split(small_dataset, "train"))
    assert images.shape == (6, 32, 32)
    assert images.min() >= 0.0 and images.max() <= 1.0
    assert set(np.unique(masks)) <= {0.0, 1.0}
    # PNG is lossless: reloading produces identical arrays
    images2, masks2 = load_arrays(load_split(small_dataset, "train"))
    np.testing.assert_array_equal(images, images2)
    np.testing.assert_array_equal(masks, masks2)


def test_masks_binary_after_threshold(small_dataset):
    _, masks = load_arrays(load_split(small_dataset, "test-all"))
    assert ((masks == 0) | (masks == 1)).all()


def test_hard_profile_darkens(tmp_path):
    root = tmp_path / "c"
    generate_synthetic_dataset(root, seed=3, n_train=2, n_test=10, side=32,
                               hardness=HARD_PROFILE, hard_fraction=0.5)
    all_imgs, _ = load_arrays(load_split(root, "test-all"))
    hard_idx = load_split(root, "test-hard")
    hard_stems = {p.stem for p, _ in hard_idx.pairs}
    all_pairs = load_split(root, "test-all").pairs
    hard_means, general_means = [], []
    for (img_path, _), img in zip(all_pairs, all_imgs):
        (hard_means if img_path.stem in hard_stems else general_means).append(
            img.mean())
    assert np.mean(hard_means) < np.mean(general_means)


def test_invalid_split_rejected(small_dataset):
    with pytest.raises(ValueError):
        load_split(small_dataset, "validation")


def test_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path / "nope", "train")


def test_side_minimum():
    with pytest.raises(ValueError):
        generate_synthetic_dataset("/tmp/unused", seed=1, n_train=1, n_test=1,
                                   side=16)
