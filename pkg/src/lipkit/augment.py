"""Clip-level augmentations and label-space regularizers.

Every spatial augmentation draws its random decision once per clip and applies
it to all frames, so a clip never mixes augmented and clean frames. All
randomness comes from an explicit ``numpy.random.Generator``; callers own the
seeding and may partition streams across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    """Switches of the train-time augmentation recipe.

    ``cutout`` is (n_holes, hole_size); ``dropblock`` is (block_size, drop_rate)
    and is applied to feature maps inside the model, not to pixels. ``None``
    disables the corresponding augmentation; ``mixup_alpha=None`` disables MixUp.
    """

    crop_size: int = 88
    flip_prob: float = 0.5
    cutout: tuple[int, int] | None = None
    mixup_alpha: float | None = 0.4
    smoothing_eps: float = 0.1
    dropblock: tuple[int, float] | None = (3, 0.1)
    mixup_per_sample: bool = False

    def validate(self) -> None:
        if self.crop_size < 1:
            raise ValueError(f"crop_size must be positive, got {self.crop_size}")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must be a probability, got {self.flip_prob}")
        if not 0.0 <= self.smoothing_eps < 1.0:
            raise ValueError(f"smoothing_eps must be in [0, 1), got {self.smoothing_eps}")
        if self.mixup_alpha is not None and self.mixup_alpha <= 0.0:
            raise ValueError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        if self.cutout is not None:
            n_holes, hole_size = self.cutout
            if n_holes < 0 or hole_size < 1:
                raise ValueError(f"bad cutout setting {self.cutout}")
        if self.dropblock is not None:
            block_size, drop_rate = self.dropblock
            if block_size < 1 or not 0.0 <= drop_rate < 1.0:
                raise ValueError(f"bad dropblock setting {self.dropblock}")


def random_crop_consistent(
    clip: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Crop the same random ``size`` x ``size`` window out of every frame.

    The (row, col) offset is drawn once per clip, row first.
    """
    t, h, w = clip.shape
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds clip frames of {h}x{w}")
    dr = int(rng.integers(0, h - size + 1))
    dc = int(rng.integers(0, w - size + 1))
    return clip[:, dr : dr + size, dc : dc + size].copy()


def center_crop(clip: np.ndarray, size: int) -> np.ndarray:
    """Deterministic central ``size`` x ``size`` crop, the eval-time counterpart
    of :func:`random_crop_consistent`."""
    t, h, w = clip.shape
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds clip frames of {h}x{w}")
    dr = (h - size) // 2
    dc = (w - size) // 2
    return clip[:, dr : dr + size, dc : dc + size]


def horizontal_flip(clip: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Mirror every frame about the vertical axis with probability ``p``.

    One draw per clip; the decision is never per-frame. A draw is consumed even
    when ``p`` is 0 or 1 so rng streams stay aligned across configurations.
    """
    if rng.random() < p:
        return clip[:, :, ::-1].copy()
    return clip


def cutout(
    clip: np.ndarray, n_holes: int, hole_size: int, rng: np.random.Generator
) -> np.ndarray:
    """Zero ``n_holes`` squares of side ``hole_size`` at clip-constant positions.

    Hole centers are drawn uniformly over the frame, once per clip, and holes
    are clipped at the borders.
    """
    t, h, w = clip.shape
    if hole_size > min(h, w):
        raise ValueError(f"hole size {hole_size} exceeds clip frames of {h}x{w}")
    out = clip.copy()
    for _ in range(n_holes):
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        y0 = max(0, cy - hole_size // 2)
        x0 = max(0, cx - hole_size // 2)
        out[:, y0 : min(h, y0 + hole_size), x0 : min(w, x0 + hole_size)] = 0
    return out


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels out of range [0, {num_classes})")
    return np.eye(num_classes, dtype=np.float64)[labels]


def _as_distribution(labels: np.ndarray, num_classes: int | None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 1:
        if num_classes is None:
            raise ValueError("num_classes is required for integer labels")
        return one_hot(labels.astype(np.int64), num_classes)
    if labels.ndim == 2:
        return labels.astype(np.float64)
    raise ValueError(f"labels must be class ids or distributions, got shape {labels.shape}")


def mixup(
    clips_a: np.ndarray,
    labels_a: np.ndarray,
    clips_b: np.ndarray,
    labels_b: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    *,
    num_classes: int | None = None,
    lam: float | None = None,
    per_sample: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex-combine two clip batches and their labels with a Beta(alpha, alpha) weight.

    Labels may be integer class ids (converted to one-hot with ``num_classes``)
    or ready distributions. By default one lambda is drawn for the whole batch;
    ``per_sample`` draws one per pair. ``lam`` forces the coefficient (used in
    tests and to disable mixing with ``lam=1``).
    """
    clips_a = np.asarray(clips_a)
    clips_b = np.asarray(clips_b)
    if clips_a.shape != clips_b.shape:
        raise ValueError(f"batch shapes differ: {clips_a.shape} vs {clips_b.shape}")
    dist_a = _as_distribution(labels_a, num_classes)
    dist_b = _as_distribution(labels_b, num_classes)
    if dist_a.shape != dist_b.shape:
        raise ValueError(f"label shapes differ: {dist_a.shape} vs {dist_b.shape}")
    if dist_a.shape[0] != clips_a.shape[0]:
        raise ValueError("labels do not match the batch size")
    if lam is not None:
        lam_arr = np.full(clips_a.shape[0] if per_sample else 1, float(lam))
    elif per_sample:
        lam_arr = rng.beta(alpha, alpha, size=clips_a.shape[0])
    else:
        lam_arr = np.array([rng.beta(alpha, alpha)])
    pix = lam_arr.reshape((-1,) + (1,) * (clips_a.ndim - 1))
    mixed = pix * clips_a.astype(np.float32) + (1.0 - pix) * clips_b.astype(np.float32)
    lab = lam_arr.reshape(-1, 1)
    labels = lab * dist_a + (1.0 - lab) * dist_b
    return mixed, labels


def label_smooth(class_id, num_classes: int, eps: float) -> np.ndarray:
    """Smoothed target ``(1 - eps) * one_hot + eps / num_classes``.

    ``class_id`` may be a scalar (returns a vector) or an array (returns a matrix).
    """
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must be in [0, 1), got {eps}")
    ids = np.atleast_1d(np.asarray(class_id, dtype=np.int64))
    hot = one_hot(ids, num_classes)
    smoothed = (1.0 - eps) * hot + eps / num_classes
    return smoothed[0] if np.isscalar(class_id) or np.asarray(class_id).ndim == 0 else smoothed


def dropblock_mask(
    height: int,
    width: int,
    block_size: int,
    drop_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Binary keep-mask zeroing contiguous ``block_size`` squares.

    Seed cells are Bernoulli-drawn over the positions where a block fits, with
    the rate adjusted so the expected zeroed fraction is about ``drop_rate``.
    ``block_size=1`` reduces to plain element-wise dropout. The caller rescales
    kept activations by the reciprocal kept fraction (see the model's dropblock
    application).
    """
    if block_size < 1 or block_size > min(height, width):
        raise ValueError(f"block_size {block_size} does not fit a {height}x{width} map")
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
    if drop_rate == 0.0:
        return np.ones((height, width), dtype=np.float32)
    valid_h = height - block_size + 1
    valid_w = width - block_size + 1
    gamma = drop_rate / block_size**2 * (height * width) / (valid_h * valid_w)
    seeds = rng.random((valid_h, valid_w)) < gamma
    if block_size == 1:
        return (~seeds).astype(np.float32)
    drop = np.zeros((height, width), dtype=bool)
    for y, x in zip(*np.nonzero(seeds)):
        drop[y : y + block_size, x : x + block_size] = True
    return (~drop).astype(np.float32)
