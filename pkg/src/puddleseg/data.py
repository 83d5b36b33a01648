"""Synthetic benchmark generation and dataset ingestion.

Generated scenes are smooth-noise road backgrounds with one or two irregular
low-contrast standing-water blobs; the ground-truth mask is the exact blob
support. A hardness profile (used for the flagged hard subset of the test
split) reduces contrast, overlays specular streaks and darkens the scene.

On-disk layout:

    root/{train,test}/{images,masks}/NNNN.png   (8-bit grayscale PNG)
    root/hard.txt                               (stems of the hard test images)

Masks store foreground as 255 and are binarized at >127 when loaded.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

SPLITS = ("train", "test-all", "test-hard")
FG_FRACTION_RANGE = (0.05, 0.40)


@dataclass
class HardnessProfile:
    contrast: float = 0.35        # blob darkening relative to background
    streak_strength: float = 0.0  # specular streak overlay amplitude
    gamma: float = 1.0            # >1 darkens the whole scene
    noise: float = 0.02


GENERAL_PROFILE = HardnessProfile()
HARD_PROFILE = HardnessProfile(contrast=0.16, streak_strength=0.35,
                               gamma=1.7, noise=0.03)


def lerp_profiles(a: HardnessProfile, b: HardnessProfile,
                  t: float) -> HardnessProfile:
    """Linear interpolation between two hardness profiles."""
    return HardnessProfile(
        contrast=a.contrast + t * (b.contrast - a.contrast),
        streak_strength=a.streak_strength + t * (b.streak_strength - a.streak_strength),
        gamma=a.gamma + t * (b.gamma - a.gamma),
        noise=a.noise + t * (b.noise - a.noise),
    )


@dataclass
class DatasetIndex:
    root: Path
    pairs: list[tuple[Path, Path]]
    split: str


def _smooth_field(rng: np.random.Generator, side: int, cells: int) -> np.ndarray:
    """Bilinear upsampling of a coarse uniform grid; values in [-1, 1]."""
    coarse = rng.uniform(-1.0, 1.0, size=(cells, cells))
    src = np.linspace(0.0, cells - 1.0, side)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, cells - 1)
    frac = src - i0
    rows = (coarse[i0] * (1 - frac)[:, None] + coarse[i1] * frac[:, None])
    cols = (rows[:, i0] * (1 - frac)[None, :] + rows[:, i1] * frac[None, :])
    return cols


def _blob_mask(rng: np.random.Generator, side: int, scale: float) -> np.ndarray:
    """Star-convex blob: a radial boundary perturbed by low harmonics."""
    cy = rng.uniform(0.3, 0.7) * side
    cx = rng.uniform(0.3, 0.7) * side
    r0 = scale * side
    amps = rng.normal(0.0, 0.25, size=4) / np.arange(2, 6)
    phases = rng.uniform(0.0, 2 * np.pi, size=4)
    yy, xx = np.mgrid[0:side, 0:side]
    theta = np.arctan2(yy - cy, xx - cx)
    boundary = r0 * (1.0 + sum(
        a * np.cos(m * theta + p)
        for a, m, p in zip(amps, range(2, 6), phases)))
    dist = np.hypot(yy - cy, xx - cx)
    return dist <= np.maximum(boundary, 2.0)


def _render_scene(rng: np.random.Generator, side: int,
                  profile: HardnessProfile) -> tuple[np.ndarray, np.ndarray]:
    """One (image, mask) pair; the foreground fraction is kept in band by
    resampling the blob layout."""
    bg = 0.52 + 0.16 * _smooth_field(rng, side, 6) \
        + 0.04 * _smooth_field(rng, side, 16)
    for _ in range(40):
        mask = _blob_mask(rng, side, rng.uniform(0.14, 0.30))
        if rng.random() < 0.5:
            mask |= _blob_mask(rng, side, rng.uniform(0.08, 0.16))
        frac = mask.mean()
        if FG_FRACTION_RANGE[0] <= frac <= FG_FRACTION_RANGE[1]:
            break
    else:
        raise RuntimeError("could not sample a blob in the foreground band")
    water_tex = 0.5 + 0.5 * _smooth_field(rng, side, 8)
    img = bg.copy()
    img[mask] -= profile.contrast * (0.55 + 0.45 * water_tex[mask])
    if profile.streak_strength > 0.0:
        for _ in range(rng.integers(1, 4)):
            center = rng.uniform(0.1, 0.9) * side
            width = rng.uniform(1.0, 3.0)
            rows = np.arange(side)
            band = np.exp(-((rows - center) / width) ** 2)
            img += profile.streak_strength * band[:, None] * \
                rng.uniform(0.5, 1.0)
    img = np.clip(img, 0.02, 0.98) ** profile.gamma
    img += rng.normal(0.0, profile.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return img, mask.astype(np.float64)


def _write_pair(img: np.ndarray, mask: np.ndarray, img_path: Path,
                mask_path: Path) -> None:
    PILImage.fromarray(np.rint(img * 255).astype(np.uint8), mode="L").save(img_path)
    PILImage.fromarray((mask > 0.5).astype(np.uint8) * 255, mode="L").save(mask_path)


def generate_synthetic_dataset(root, seed: int, n_train: int, n_test: int,
                               side: int = 64,
                               hardness: HardnessProfile = HARD_PROFILE,
                               hard_fraction: float = 0.4) -> DatasetIndex:
    """Write a seeded synthetic benchmark under `root`.

    The test split mixes general scenes with a `hard_fraction` of scenes
    rendered under the given hardness profile; those stems are listed in
    root/hard.txt. Training scenes span the whole difficulty continuum
    between the general and hard profiles, mirroring a capture campaign
    that includes adverse conditions. Returns the train-split index.
    """
    if side < 32:
        raise ValueError("side must be >= 32")
    root = Path(root)
    rng = np.random.default_rng(seed)
    for split in ("train", "test"):
        (root / split / "images").mkdir(parents=True, exist_ok=True)
        (root / split / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(n_train):
        profile = lerp_profiles(GENERAL_PROFILE, hardness, float(rng.random()))
        img, mask = _render_scene(rng, side, profile)
        stem = f"{i:04d}.png"
        _write_pair(img, mask, root / "train" / "images" / stem,
                    root / "train" / "masks" / stem)
    n_hard = int(round(hard_fraction * n_test))
    hard_flags = np.zeros(n_test, dtype=bool)
    hard_flags[rng.permutation(n_test)[:n_hard]] = True
    hard_stems = []
    for i in range(n_test):
        profile = hardness if hard_flags[i] else GENERAL_PROFILE
        img, mask = _render_scene(rng, side, profile)
        stem = f"{i:04d}"
        if hard_flags[i]:
            hard_stems.append(stem)
        _write_pair(img, mask, root / "test" / "images" / f"{stem}.png",
                    root / "test" / "masks" / f"{stem}.png")
    with open(root / "hard.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(hard_stems) + ("\n" if hard_stems else ""))
    return load_split(root, "train")


def load_split(root, split: str) -> DatasetIndex:
    """Index one split; 'test-hard' is the hard.txt subset of 'test-all'."""
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(root)
    subdir = "train" if split == "train" else "test"
    img_dir = root / subdir / "images"
    mask_dir = root / subdir / "masks"
    if not img_dir.is_dir():
        raise FileNotFoundError(f"no such split directory: {img_dir}")
    stems = sorted(p.stem for p in img_dir.glob("*.png"))
    if split == "test-hard":
        hard_path = root / "hard.txt"
        wanted = set()
        if hard_path.exists():
            wanted = {line.strip() for line in hard_path.read_text().splitlines()
                      if line.strip()}
        stems = [s for s in stems if s in wanted]
    pairs = []
    for stem in stems:
        img_path = img_dir / f"{stem}.png"
        mask_path = mask_dir / f"{stem}.png"
        if not mask_path.exists():
            raise FileNotFoundError(f"image {img_path} has no mask {mask_path}")
        pairs.append((img_path, mask_path))
    return DatasetIndex(root=root, pairs=pairs, split=split)


def load_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def load_arrays(index: DatasetIndex) -> tuple[np.ndarray, np.ndarray]:
    """Load a split into (images, masks) float64 stacks; masks are {0, 1}
    after thresholding at 127/255."""
    images, masks = [], []
    for img_path, mask_path in index.pairs:
        images.append(load_image(img_path))
        with PILImage.open(mask_path) as im:
            masks.append((np.asarray(im.convert("L")) > 127).astype(np.float64))
    return np.stack(images), np.stack(masks)
