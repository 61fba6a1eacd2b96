"""Optimization loop: Adam with bias correction, cosine learning-rate schedule,
augmentation wiring, per-epoch evaluation, resumable checkpoints.

Every random decision is drawn from a numpy generator keyed on
``(seed, epoch, stream)``, so a run is a deterministic function of the manifest
and the config, and resuming from a checkpoint reproduces the uninterrupted
metric log exactly. Batch preparation runs in-process (worker count 1, recorded
in checkpoint metadata); the augmentation streams are already split per purpose
so a pipelined loader could be added without perturbing results.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augment as aug
from . import checkpoint as ckpt
from .augment import AugmentConfig
from .dataset import Manifest, SPLIT_TEST, SPLIT_TRAIN
from .errors import FormatError, NumericError
from .model import ALN, ALNConfig, build_model, loss as model_loss, normalize_clips
from .storage import atomic_write_bytes, read_clip

log = logging.getLogger(__name__)

METRIC_HEADER = "epoch,step,lr,train_loss,test_acc"

_STREAM_SHUFFLE = 0
_STREAM_AUGMENT = 1
_STREAM_MIXUP = 2
_STREAM_DROPBLOCK = 3


@dataclass
class TrainConfig:
    lr_max: float = 1e-4
    lr_min: float = 0.0
    batch_size: int = 32
    epochs: int = 60
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    schedule: str = "cosine"
    weight_decay: float = 0.0
    grad_clip: float = 0.0
    max_skip_fraction: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ALNConfig = field(default_factory=ALNConfig)

    def validate(self) -> None:
        if not 0.0 <= self.lr_min <= self.lr_max:
            raise ValueError(f"need 0 <= lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if not 0.0 <= self.max_skip_fraction <= 1.0:
            raise ValueError(f"max_skip_fraction must be in [0, 1]")
        self.augment.validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        d["augment"]["cutout"] = list(self.augment.cutout) if self.augment.cutout else None
        d["augment"]["dropblock"] = (
            list(self.augment.dropblock) if self.augment.dropblock else None
        )
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam_betas"] = tuple(d["adam_betas"])
        a = dict(d["augment"])
        a["cutout"] = tuple(a["cutout"]) if a.get("cutout") else None
        a["dropblock"] = tuple(a["dropblock"]) if a.get("dropblock") else None
        d["augment"] = AugmentConfig(**a)
        d["model"] = ALNConfig.from_dict(d["model"])
        return cls(**d)


@dataclass
class TrainState:
    model: ALN
    m: dict[str, torch.Tensor]
    v: dict[str, torch.Tensor]
    step: int = 0
    epoch: int = 0
    best_acc: float = -1.0
    metric_rows: list[dict] = field(default_factory=list)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Half-cosine decay from ``lr_max`` at step 0 to ``lr_min`` at ``total_steps``."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def init_train_state(config: TrainConfig) -> TrainState:
    config.validate()
    model = build_model(config.model, seed=config.seed)
    m = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    v = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    return TrainState(model=model, m=m, v=v)


def adam_step(
    state: TrainState,
    grads: dict[str, torch.Tensor],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> TrainState:
    """One bias-corrected Adam update over the state's parameters, in place.

    Parameters without an entry in ``grads`` are treated as zero-gradient:
    their moments decay but still produce the standard update.
    """
    state.step += 1
    t = state.step
    b1, b2 = betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    with torch.no_grad():
        for name, p in state.model.named_parameters():
            g = grads.get(name)
            if g is None:
                g = torch.zeros_like(p)
            if not torch.isfinite(g).all():
                raise NumericError(f"non-finite gradient for tensor {name!r}")
            if weight_decay:
                g = g + weight_decay * p
            m = state.m[name]
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / c1, (v / c2).sqrt() + eps, value=-lr)
    return state


def _epoch_rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch, stream])))


def _metric_line(row: dict) -> str:
    return (
        f"{row['epoch']},{row['step']},{row['lr']:.12g},"
        f"{row['train_loss']:.12g},{row['test_acc']:.12g}"
    )


def write_metric_csv(rows: list[dict], path: str | os.PathLike) -> None:
    lines = [METRIC_HEADER] + [_metric_line(r) for r in rows]
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def save_train_state(state: TrainState, config: TrainConfig, path: str | os.PathLike) -> None:
    tensors = {
        name: t.detach().cpu().numpy()
        for name, t in state.model.state_dict().items()
        if t.is_floating_point()
    }
    for name, t in state.m.items():
        tensors[f"opt.m.{name}"] = t.detach().cpu().numpy()
    for name, t in state.v.items():
        tensors[f"opt.v.{name}"] = t.detach().cpu().numpy()
    meta = {
        "kind": "train_state",
        "config": model_config_meta(state.model),
        "dtype": "f64" if next(state.model.parameters()).dtype == torch.float64 else "f32",
        "train_config": config.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "best_acc": state.best_acc,
        "metric_rows": state.metric_rows,
        "workers": 1,
    }
    ckpt.write_tensors(path, tensors, meta)


def model_config_meta(model: ALN) -> dict:
    return model.config.to_dict()


def load_train_state(path: str | os.PathLike) -> tuple[TrainState, TrainConfig]:
    tensors, meta = ckpt.read_tensors(path)
    if meta.get("kind") != "train_state":
        raise FormatError(f"{path}: not a training checkpoint (kind={meta.get('kind')!r})")
    model_tensors = {k: v for k, v in tensors.items() if not k.startswith("opt.")}
    model = ckpt.restore_model(model_tensors, meta)
    m, v = {}, {}
    for name, p in model.named_parameters():
        for store, prefix in ((m, "opt.m."), (v, "opt.v.")):
            key = prefix + name
            if key not in tensors:
                raise FormatError(f"{path}: missing optimizer moment {key!r}")
            store[name] = torch.from_numpy(tensors[key]).to(p.dtype)
    config = TrainConfig.from_dict(meta["train_config"])
    state = TrainState(
        model=model,
        m=m,
        v=v,
        step=int(meta["step"]),
        epoch=int(meta["epoch"]),
        best_acc=float(meta["best_acc"]),
        metric_rows=list(meta["metric_rows"]),
    )
    return state, config


def _prepare_clip(clip: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = aug.random_crop_consistent(clip, cfg.crop_size, rng)
    out = aug.horizontal_flip(out, cfg.flip_prob, rng)
    if cfg.cutout is not None:
        out = aug.cutout(out, cfg.cutout[0], cfg.cutout[1], rng)
    return out


def _resolved_model_config(config: TrainConfig, manifest: Manifest) -> ALNConfig:
    model_cfg = dataclasses.replace(config.model, dropblock=config.augment.dropblock)
    if model_cfg.num_classes is None:
        model_cfg = dataclasses.replace(model_cfg, num_classes=len(manifest.classes))
    elif model_cfg.num_classes != len(manifest.classes):
        raise ValueError(
            f"config says {model_cfg.num_classes} classes but manifest has {len(manifest.classes)}"
        )
    return model_cfg


def _test_accuracy(model: ALN, manifest: Manifest, batch_size: int) -> float:
    from .evaluation import evaluate

    return evaluate(model, manifest, batch_size=batch_size).top1


def train(
    manifest: Manifest,
    config: TrainConfig,
    out_dir: str | os.PathLike,
    *,
    resume: bool = False,
    stop_after_epoch: int | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run the full recipe on the manifest's train split, evaluating per epoch.

    Writes ``metrics.csv``, ``latest.ckpt`` and ``best.ckpt`` under ``out_dir``.
    With ``resume=True`` an existing ``latest.ckpt`` restores the run, which
    then continues exactly as if never interrupted. ``stop_after_epoch``
    simulates an interruption after that epoch without altering the schedule.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_records = manifest.split_records(SPLIT_TRAIN)
    test_records = manifest.split_records(SPLIT_TEST)
    if not train_records or not test_records:
        raise ValueError("manifest must contain both train and test records")
    model_cfg = _resolved_model_config(config, manifest)
    resolved = dataclasses.replace(config, model=model_cfg)

    latest_path = out_dir / "latest.ckpt"
    metrics_path = out_dir / "metrics.csv"
    if resume and latest_path.exists():
        state, saved_cfg = load_train_state(latest_path)
        if saved_cfg.to_dict() != resolved.to_dict():
            raise ValueError(
                f"{latest_path}: checkpoint was written with a different config; "
                "refusing to resume"
            )
        log.info("resuming from %s at epoch %d", latest_path, state.epoch)
    else:
        state = init_train_state(resolved)
    write_metric_csv(state.metric_rows, metrics_path)

    steps_per_epoch = math.ceil(len(train_records) / config.batch_size)
    total_steps = max(1, config.epochs * steps_per_epoch)
    if config.epochs == 0:
        save_train_state(state, resolved, latest_path)
        return state, state.metric_rows

    betas, eps = config.adam_betas, config.adam_eps
    num_classes = len(manifest.classes)
    a_cfg = config.augment
    last_epoch = config.epochs if stop_after_epoch is None else min(stop_after_epoch, config.epochs)
    for epoch in range(state.epoch + 1, last_epoch + 1):
        shuffle_rng = _epoch_rng(config.seed, epoch, _STREAM_SHUFFLE)
        aug_rng = _epoch_rng(config.seed, epoch, _STREAM_AUGMENT)
        mix_rng = _epoch_rng(config.seed, epoch, _STREAM_MIXUP)
        drop_rng = _epoch_rng(config.seed, epoch, _STREAM_DROPBLOCK)
        order = shuffle_rng.permutation(len(train_records))
        state.model.train()
        losses: list[float] = []
        skipped = 0
        lr = cosine_lr(state.step, total_steps, config.lr_max, config.lr_min) \
            if config.schedule == "cosine" else config.lr_max
        for start in range(0, len(order), config.batch_size):
            clips, labels = [], []
            for idx in order[start : start + config.batch_size]:
                rec = train_records[idx]
                try:
                    clip = read_clip(manifest.resolve(rec))
                except (OSError, FormatError) as exc:
                    skipped += 1
                    log.warning("skipping unreadable clip %s: %s", rec.clip_path, exc)
                    if skipped > config.max_skip_fraction * len(train_records):
                        raise RuntimeError(
                            f"{skipped} unreadable clips exceed the configured "
                            f"skip fraction {config.max_skip_fraction}"
                        ) from exc
                    continue
                clips.append(_prepare_clip(clip, a_cfg, aug_rng))
                labels.append(rec.class_id)
            if not clips:
                continue
            batch = np.stack(clips)
            targets = aug.label_smooth(np.array(labels), num_classes, a_cfg.smoothing_eps)
            if a_cfg.mixup_alpha is not None:
                perm = mix_rng.permutation(len(clips))
                batch, targets = aug.mixup(
                    batch,
                    targets,
                    batch[perm],
                    targets[perm],
                    a_cfg.mixup_alpha,
                    mix_rng,
                    per_sample=a_cfg.mixup_per_sample,
                )
            x = normalize_clips(batch)
            _, pooled = state.model(x, rng=drop_rng)
            batch_loss = model_loss(pooled, torch.from_numpy(targets))
            state.model.zero_grad(set_to_none=True)
            batch_loss.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(state.model.parameters(), config.grad_clip)
            grads = {
                n: p.grad for n, p in state.model.named_parameters() if p.grad is not None
            }
            lr = cosine_lr(state.step, total_steps, config.lr_max, config.lr_min) \
                if config.schedule == "cosine" else config.lr_max
            adam_step(state, grads, lr, betas, eps, config.weight_decay)
            losses.append(float(batch_loss.detach()))
        acc = _test_accuracy(state.model, manifest, config.batch_size)
        row = {
            "epoch": epoch,
            "step": state.step,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "test_acc": acc,
        }
        state.metric_rows.append(row)
        state.epoch = epoch
        write_metric_csv(state.metric_rows, metrics_path)
        if acc > state.best_acc:
            state.best_acc = acc
            save_train_state(state, resolved, out_dir / "best.ckpt")
        save_train_state(state, resolved, latest_path)
        log.info(
            "epoch %d/%d lr=%.3g loss=%.4f test_acc=%.4f",
            epoch, config.epochs, lr, row["train_loss"], acc,
        )
    return state, state.metric_rows
