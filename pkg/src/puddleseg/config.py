"""Flat training configuration and its `key = value` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

ONE_STAGE = "one-stage"
TWO_STAGE = "two-stage"


@dataclass
class TrainConfig:
    # strategy and schedule
    strategy: str = TWO_STAGE
    epochs_stage1: int = 40      # also the epoch count for one-stage runs
    epochs_stage2: int = 20
    batch_size: int = 4
    lr: float = 5e-4
    weight_decay: float = 0.0
    seed: int = 42
    ratio: float = 1.0           # fraction of the training set actually used
    flip_augment: bool = True
    checkpoint_every: int = 0    # epochs between periodic saves; 0 = final only

    # loss weights / shapes
    lam: float = 1.0             # small-model loss weight (one-stage total)
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    proto_temperature: float = 0.1

    # prompting
    tau: float = 0.4             # point-prompt confidence threshold
    grid_size: int = 4
    spatial_mode: str = "mask"   # mask | box | point
    bin_threshold: float = 0.5
    num_classes: int = 2
    num_prototypes_per_class: int = 2
    proto_momentum: float = 0.999
    adaptive_tokens: int = 1

    # architecture
    image_side: int = 64
    encoder_depth: int = 4
    embed_dim: int = 32
    patch_size: int = 8
    num_heads: int = 4
    small_width: int = 8
    cutoff_ratio: float = 0.25

    # component toggles (ablation harness)
    use_he: bool = True
    use_spatial: bool = True
    use_semantic: bool = True
    use_style: bool = True
    use_dpc: bool = True

    def validate(self) -> None:
        if self.strategy not in (ONE_STAGE, TWO_STAGE):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 < self.ratio <= 1.0:
            raise ValueError("ratio must lie in (0, 1]")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.spatial_mode not in ("mask", "box", "point"):
            raise ValueError(f"unknown spatial mode {self.spatial_mode!r}")
        if self.image_side % self.patch_size != 0:
            raise ValueError("image_side must be divisible by patch_size")
        if self.epochs_stage1 < 1:
            raise ValueError("epochs_stage1 must be >= 1")
        if self.strategy == TWO_STAGE and self.epochs_stage2 < 1:
            raise ValueError("epochs_stage2 must be >= 1 for two-stage runs")

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(types[key], value, key)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def _parse_value(typ, value: str, key: str):
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "bool":
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {value!r}")
    if name == "int":
        return int(value)
    if name == "float":
        return float(value)
    return value
