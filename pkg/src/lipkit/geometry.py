"""Geometric mouth-ROI operations: crop sizing, rotation alignment, IoU track filtering.

Coordinates are pixels, x rightward and y downward. Clips are T x H x W uint8
arrays. Every function here is pure and safe to call from parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import cv2
import numpy as np

# Below this angle (radians) a rotation is treated as identity and the clip is
# passed through untouched.
_ZERO_ANGLE = 1e-9

#: Pluggable clip-quality predicate (clip -> keep?). The default accepts everything;
#: callers may plug in a trained filter.
ClipQualityPredicate = Callable[[np.ndarray], bool]


def accept_all_clips(clip: np.ndarray) -> bool:
    """Default quality predicate: keep every clip."""
    return True


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class FrameLandmarks:
    """Per-frame facial keypoints driving alignment and cropping."""

    left_lip_corner: Point2
    right_lip_corner: Point2
    lip_center: Point2
    nose_tip: Point2

    def mouth_nose_distance(self) -> float:
        """Euclidean distance between the nose tip and the lip center."""
        return math.hypot(
            self.nose_tip.x - self.lip_center.x, self.nose_tip.y - self.lip_center.y
        )


@dataclass(frozen=True)
class BoundingBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(
                f"degenerate box: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def crop_side_length(d_mn: float, x_l: float, x_r: float) -> float:
    """Side of the square mouth crop, in pixels.

    ``d_mn`` is the mouth-to-nose distance, ``x_l``/``x_r`` the x coordinates of
    the lip corners. The corner-spread term ``1.05 * x_r - 0.95 * x_l`` is
    clamped to ``[1.5 * d_mn, 3 * d_mn]``, so the result always lies in that
    interval. Corner coordinates are interpreted in the face-bounding-box frame.
    """
    if d_mn <= 0:
        raise ValueError(f"mouth-to-nose distance must be positive, got {d_mn}")
    return min(3.0 * d_mn, max(1.5 * d_mn, 1.05 * x_r - 0.95 * x_l))


def _corner_angle(lm: FrameLandmarks) -> float:
    return math.atan2(
        lm.right_lip_corner.y - lm.left_lip_corner.y,
        lm.right_lip_corner.x - lm.left_lip_corner.x,
    )


def _rotation_about(center: Point2, theta: float) -> np.ndarray:
    """2x3 affine matrix rotating points by -theta about ``center``."""
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = center.x, center.y
    return np.array(
        [
            [c, s, cx - c * cx - s * cy],
            [-s, c, cy + s * cx - c * cy],
        ],
        dtype=np.float64,
    )


def _apply_affine(m: np.ndarray, p: Point2) -> Point2:
    return Point2(
        m[0, 0] * p.x + m[0, 1] * p.y + m[0, 2],
        m[1, 0] * p.x + m[1, 1] * p.y + m[1, 2],
    )


def align_rotation(
    clip: np.ndarray, landmarks: Sequence[FrameLandmarks]
) -> tuple[np.ndarray, list[FrameLandmarks]]:
    """Rotate every frame about its lip center so the lip-corner line is horizontal.

    Landmarks are transformed by the same rotation. Pixels rotated in from
    outside the canvas are zero and interpolation is bilinear. Frames whose
    corners are already horizontal are passed through bit-identically.
    """
    clip = np.asarray(clip)
    if clip.ndim != 3:
        raise ValueError(f"expected a T x H x W clip, got shape {clip.shape}")
    if len(landmarks) != clip.shape[0]:
        raise ValueError(
            f"landmark count {len(landmarks)} does not match frame count {clip.shape[0]}"
        )
    h, w = clip.shape[1:]
    out = np.empty_like(clip)
    out_landmarks: list[FrameLandmarks] = []
    for t, lm in enumerate(landmarks):
        theta = _corner_angle(lm)
        if abs(theta) < _ZERO_ANGLE:
            out[t] = clip[t]
            out_landmarks.append(lm)
            continue
        m = _rotation_about(lm.lip_center, theta)
        out[t] = cv2.warpAffine(
            clip[t],
            m,
            (w, h),
            flags=cv2.INTER_LINEAR,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=0,
        )
        out_landmarks.append(
            FrameLandmarks(
                left_lip_corner=_apply_affine(m, lm.left_lip_corner),
                right_lip_corner=_apply_affine(m, lm.right_lip_corner),
                lip_center=_apply_affine(m, lm.lip_center),
                nose_tip=_apply_affine(m, lm.nose_tip),
            )
        )
    return out, out_landmarks


def crop_box(lm: FrameLandmarks) -> BoundingBox:
    """The square crop box implied by the landmarks, centered on the lip center."""
    side = crop_side_length(
        lm.mouth_nose_distance(), lm.left_lip_corner.x, lm.right_lip_corner.x
    )
    cx, cy = lm.lip_center.x, lm.lip_center.y
    return BoundingBox(cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)


def extract_mouth_crop(
    frame: np.ndarray, lm: FrameLandmarks, out_size: int = 112
) -> np.ndarray:
    """Cut the landmark-defined square around the lip center and resize it.

    The crop is clipped to the frame; anything outside is zero-padded before
    the bilinear resize to ``out_size`` x ``out_size``. When the integer crop
    side already equals ``out_size`` the raw crop is returned without resampling.
    """
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise ValueError(f"expected a single H x W frame, got shape {frame.shape}")
    if out_size < 1:
        raise ValueError(f"out_size must be positive, got {out_size}")
    h, w = frame.shape
    cx, cy = lm.lip_center.x, lm.lip_center.y
    if not (0 <= cx < w and 0 <= cy < h):
        raise ValueError(f"lip center ({cx}, {cy}) outside frame of size {w}x{h}")
    side_f = crop_side_length(
        lm.mouth_nose_distance(), lm.left_lip_corner.x, lm.right_lip_corner.x
    )
    side = max(1, int(round(side_f)))
    x0 = int(round(cx - side_f / 2))
    y0 = int(round(cy - side_f / 2))
    canvas = np.zeros((side, side), dtype=frame.dtype)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, w), min(y0 + side, h)
    if sx1 > sx0 and sy1 > sy0:
        canvas[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = frame[sy0:sy1, sx0:sx1]
    if side == out_size:
        return canvas
    return cv2.resize(canvas, (out_size, out_size), interpolation=cv2.INTER_LINEAR)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two axis-aligned boxes, in [0, 1]."""
    ix0, iy0 = max(a.x0, b.x0), max(a.y0, b.y0)
    ix1, iy1 = min(a.x1, b.x1), min(a.y1, b.y1)
    inter = max(0.0, ix1 - ix0) * max(0.0, iy1 - iy0)
    return inter / (a.area + b.area - inter)


def motion_filter(track: Sequence[BoundingBox], min_iou: float = 0.5) -> bool:
    """Keep a track only if no consecutive pair of boxes jumps below ``min_iou``.

    A length-1 track is always kept.
    """
    if len(track) == 0:
        raise ValueError("motion_filter needs at least one box")
    return all(iou(a, b) >= min_iou for a, b in zip(track, track[1:]))
