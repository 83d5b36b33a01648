"""One-stage and two-stage optimization harness.

One-stage: the encoder is frozen and everything else (small model, adapter,
prompters, combiner, decoder) is optimized jointly; the small model receives
gradient only from its own loss (the predicted mask is a stop-gradient).

Two-stage: stage 1 trains the large branch (encoder, adapter, decoder) with
a prompt-free default decoder input and the small model independently, with
no prompt machinery involved; stage 2 freezes the small model, encoder and
adapter, and trains the prompters, combiner and decoder with the prototype
term added to the loss.

All runs are bit-reproducible from the seed; checkpoints capture parameters,
optimizer state, RNG state and counters so a resumed run continues the exact
trajectory at epoch granularity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .checkpoint import (Checkpoint, load_checkpoint, rng_state_from_tensor,
                         rng_state_to_tensor, save_checkpoint)
from .config import ONE_STAGE, TWO_STAGE, TrainConfig
from .errors import EmptyDataset, NonFiniteLoss
from .optim import AdamW
from .pipeline import SegmentationPipeline, downsample_labels

LOG_FIELDS = ("step", "stage", "lr", "focal", "ce", "iou", "proto", "small", "total")


@dataclass
class StageSpec:
    name: str
    epochs: int
    frozen: set
    prompted: bool
    proto_updates: bool
    train_small: bool
    small_scale: float


@dataclass
class TrainResult:
    pipeline: SegmentationPipeline
    cfg: TrainConfig
    log_rows: list[dict] = field(default_factory=list)
    checkpoint_path: str | None = None
    stage1_checkpoint_path: str | None = None
    finished: bool = True


def stage_plan(cfg: TrainConfig) -> list[StageSpec]:
    disabled = {flag_group for flag_group, on in (
        ("he", cfg.use_he), ("spatial", cfg.use_spatial),
        ("semantic", cfg.use_semantic), ("style", cfg.use_style),
        ("dpc", cfg.use_dpc)) if not on}
    if cfg.strategy == ONE_STAGE:
        return [StageSpec(
            name=losses.ONE_STAGE, epochs=cfg.epochs_stage1,
            frozen={"encoder"} | disabled, prompted=True,
            proto_updates=cfg.use_semantic, train_small=True,
            small_scale=cfg.lam)]
    return [
        StageSpec(name=losses.STAGE_1, epochs=cfg.epochs_stage1,
                  frozen={"spatial", "semantic", "style", "dpc"} | disabled,
                  prompted=False, proto_updates=False, train_small=True,
                  small_scale=1.0),
        StageSpec(name=losses.STAGE_2, epochs=cfg.epochs_stage2,
                  frozen={"small", "encoder", "he"} | disabled, prompted=True,
                  proto_updates=cfg.use_semantic, train_small=False,
                  small_scale=0.0),
    ]


def subsample_indices(n: int, ratio: float, seed: int) -> np.ndarray:
    """Seeded selection of ceil(ratio * n) training indices."""
    keep = max(1, math.ceil(ratio * n))
    rng = np.random.default_rng([seed, 1])
    return np.sort(rng.permutation(n)[:keep])


def flip_horizontal(images: np.ndarray, masks: np.ndarray,
                    bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same left-right flip to each selected image/mask pair."""
    out_i, out_m = images.copy(), masks.copy()
    out_i[bits] = out_i[bits, :, ::-1]
    out_m[bits] = out_m[bits, :, ::-1]
    return out_i, out_m


class _TrainLoop:
    def __init__(self, cfg: TrainConfig, images: np.ndarray, masks: np.ndarray):
        cfg.validate()
        if images.shape[0] == 0:
            raise EmptyDataset("training set is empty")
        keep = subsample_indices(images.shape[0], cfg.ratio, cfg.seed)
        self.images = images[keep]
        self.masks = masks[keep]
        self.cfg = cfg
        self.pipeline = SegmentationPipeline(cfg, np.random.default_rng(cfg.seed))
        self.train_rng = np.random.default_rng([cfg.seed, 2])
        self.plan = stage_plan(cfg)
        self.stage_idx = 0
        self.epochs_done = 0          # within the current stage
        self.global_step = 0
        self.opt: AdamW | None = None
        self.log_rows: list[dict] = []
        self.steps_per_epoch = math.ceil(self.images.shape[0] / cfg.batch_size)

    # -- checkpoint plumbing ------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        tensors: dict[str, np.ndarray] = {}
        frozen: dict[str, bool] = {}
        for name, p in self.pipeline.named_params().items():
            tensors[f"param.{name}"] = p.value
            frozen[f"param.{name}"] = p.frozen
        if self.opt is not None:
            tensors.update(self.opt.state_tensors())
            opt_t, sched_step = self.opt.t, self.opt.schedule.step
        else:
            opt_t = sched_step = 0
        tensors["meta.rng"] = rng_state_to_tensor(self.train_rng)
        tensors["meta.counters"] = np.array(
            [self.stage_idx, self.epochs_done, self.global_step, opt_t, sched_step],
            dtype=np.uint64)
        return Checkpoint(tensors=tensors, frozen=frozen,
                          config_text=self.cfg.to_text())

    def restore(self, ckpt: Checkpoint) -> None:
        params = self.pipeline.named_params()
        for name, p in params.items():
            key = f"param.{name}"
            if key not in ckpt.tensors:
                raise KeyError(f"checkpoint is missing tensor {key!r}")
            p.value[...] = ckpt.tensors[key]
        counters = ckpt.tensors["meta.counters"]
        self.stage_idx = int(counters[0])
        self.epochs_done = int(counters[1])
        self.global_step = int(counters[2])
        self.train_rng = rng_state_from_tensor(ckpt.tensors["meta.rng"])
        if self.stage_idx < len(self.plan):
            self._build_optimizer(self.plan[self.stage_idx])
            self.opt.load_state_tensors(ckpt.tensors)
            self.opt.t = int(counters[3])
            self.opt.schedule.step = int(counters[4])

    def _build_optimizer(self, stage: StageSpec) -> None:
        self.pipeline.set_frozen(stage.frozen)
        self.opt = AdamW(self.pipeline.named_params(), base_lr=self.cfg.lr,
                         total_steps=stage.epochs * self.steps_per_epoch,
                         weight_decay=self.cfg.weight_decay)

    # -- the loop -------------------------------------------------------------

    def run_step(self, stage: StageSpec, x: np.ndarray, y: np.ndarray) -> dict:
        cfg = self.cfg
        pipe = self.pipeline
        fwd = pipe.forward(x, prompted=stage.prompted)
        l_focal, g_focal = losses.focal_loss(fwd.logits, y, cfg.focal_gamma,
                                             cfg.focal_alpha)
        l_ce, g_ce = losses.ce_loss(fwd.logits, y)
        l_iou, g_iou = losses.iou_loss(fwd.logits, y)
        parts = {"focal": l_focal, "ce": l_ce, "iou": l_iou}
        dsim = None
        if stage.name != losses.STAGE_1:
            if fwd.sim is not None:
                grid = fwd.sim.shape[1]
                gt_grid = downsample_labels(y, grid)
                l_proto, dsim = losses.proto_loss(
                    fwd.sim, gt_grid, cfg.num_prototypes_per_class,
                    cfg.proto_temperature)
                parts["proto"] = l_proto
            else:
                parts["proto"] = 0.0
        small_grad = None
        if stage.train_small:
            l_ce_s, g_ce_s = losses.ce_loss(fwd.small_logits, y)
            l_iou_s, g_iou_s = losses.iou_loss(fwd.small_logits, y)
            parts["small"] = l_ce_s + l_iou_s
            small_grad = g_ce_s + g_iou_s
        elif stage.name == losses.ONE_STAGE:
            parts["small"] = 0.0
        report = losses.compose(stage.name, parts, cfg.lam)
        try:
            report.validate()
        except ValueError as exc:
            raise NonFiniteLoss(
                f"bad loss at step {self.global_step} ({stage.name}): {exc}; "
                f"components {report.as_row()}") from exc
        pipe.zero_grads()
        dlogits = (g_focal + g_ce + g_iou).astype(np.float32)
        through_encoder = not ({"encoder", "he"} <= stage.frozen)
        pipe.backward_large(fwd, dlogits,
                            None if dsim is None else dsim.astype(np.float32),
                            through_encoder=through_encoder)
        if stage.train_small and small_grad is not None:
            pipe.backward_small(
                fwd, (stage.small_scale * small_grad).astype(np.float32))
        lr = self.opt.step()
        if stage.proto_updates:
            pipe.proto_update(fwd)
        self.global_step += 1
        row = {"step": self.global_step, "stage": stage.name, "lr": lr}
        for key in ("focal", "ce", "iou", "proto", "small", "total"):
            row[key] = getattr(report, key)
        return row

    def run(self, checkpoint_out=None, log_path=None,
            stop_after_epochs: int | None = None) -> TrainResult:
        cfg = self.cfg
        result = TrainResult(pipeline=self.pipeline, cfg=cfg)
        log_file = open(log_path, "w", newline="") if log_path else None
        writer = None
        if log_file:
            writer = csv.DictWriter(log_file, fieldnames=LOG_FIELDS)
            writer.writeheader()
        total_done = sum(s.epochs for s in self.plan[:self.stage_idx]) + self.epochs_done

        def emit(row):
            self.log_rows.append(row)
            if writer:
                writer.writerow(row)
                log_file.flush()

        def save(path):
            if path:
                save_checkpoint(self.to_checkpoint(), path)

        try:
            while self.stage_idx < len(self.plan):
                stage = self.plan[self.stage_idx]
                if self.opt is None:
                    self._build_optimizer(stage)
                n = self.images.shape[0]
                while self.epochs_done < stage.epochs:
                    perm = self.train_rng.permutation(n)
                    if cfg.flip_augment:
                        bits = self.train_rng.random(n) < 0.5
                    else:
                        bits = np.zeros(n, dtype=bool)
                    x_ep, y_ep = flip_horizontal(self.images[perm],
                                                 self.masks[perm], bits)
                    for start in range(0, n, cfg.batch_size):
                        x = x_ep[start:start + cfg.batch_size]
                        y = y_ep[start:start + cfg.batch_size]
                        emit(self.run_step(stage, x, y))
                    self.epochs_done += 1
                    total_done += 1
                    if cfg.checkpoint_every and (
                            self.epochs_done % cfg.checkpoint_every == 0):
                        save(checkpoint_out)
                    if stop_after_epochs is not None and total_done >= stop_after_epochs:
                        save(checkpoint_out)
                        result.log_rows = self.log_rows
                        result.checkpoint_path = checkpoint_out
                        result.finished = False
                        return result
                # stage boundary
                self.stage_idx += 1
                self.epochs_done = 0
                self.opt = None
                if (checkpoint_out and cfg.strategy == TWO_STAGE
                        and self.stage_idx == 1):
                    boundary = f"{checkpoint_out}.stage1"
                    save(boundary)
                    result.stage1_checkpoint_path = boundary
            save(checkpoint_out)
            result.checkpoint_path = checkpoint_out
            result.log_rows = self.log_rows
            return result
        finally:
            if log_file:
                log_file.close()


def _run(cfg: TrainConfig, dataset, **kwargs) -> TrainResult:
    images, masks = dataset
    resume = kwargs.pop("resume", None)
    loop = _TrainLoop(cfg, np.asarray(images, dtype=np.float64),
                      np.asarray(masks, dtype=np.float64))
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ckpt.config_text != cfg.to_text():
            raise ValueError("resume checkpoint was written with a different config")
        loop.restore(ckpt)
    return loop.run(**kwargs)


def train_one_stage(cfg: TrainConfig, dataset, **kwargs) -> TrainResult:
    if cfg.strategy != ONE_STAGE:
        raise ValueError("config strategy must be one-stage")
    return _run(cfg, dataset, **kwargs)


def train_two_stage(cfg: TrainConfig, dataset, **kwargs) -> TrainResult:
    if cfg.strategy != TWO_STAGE:
        raise ValueError("config strategy must be two-stage")
    return _run(cfg, dataset, **kwargs)


def train(cfg: TrainConfig, dataset, **kwargs) -> TrainResult:
    if cfg.strategy == ONE_STAGE:
        return train_one_stage(cfg, dataset, **kwargs)
    return train_two_stage(cfg, dataset, **kwargs)


def pipeline_from_checkpoint(path) -> tuple[SegmentationPipeline, TrainConfig, bool]:
    """Rebuild a pipeline from a checkpoint file.

    Returns (pipeline, cfg, prompted) where `prompted` says whether the
    checkpoint's training stage had the prompt machinery active.
    """
    ckpt = load_checkpoint(path)
    cfg = TrainConfig.from_text(ckpt.config_text)
    pipe = SegmentationPipeline(cfg, np.random.default_rng(cfg.seed))
    for name, p in pipe.named_params().items():
        key = f"param.{name}"
        if key in ckpt.tensors:
            p.value[...] = ckpt.tensors[key]
    counters = ckpt.tensors["meta.counters"]
    stage_idx, epochs_done = int(counters[0]), int(counters[1])
    # a checkpoint sitting exactly at the stage-1/stage-2 boundary has not
    # trained its prompt machinery yet
    prompted = cfg.strategy == ONE_STAGE or stage_idx >= 2 or (
        stage_idx == 1 and epochs_done > 0)
    return pipe, cfg, prompted
