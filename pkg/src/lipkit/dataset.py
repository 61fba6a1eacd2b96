"""Dataset catalogue: manifest records, class balancing, upsampling, synthetic clips.

Manifest file format (UTF-8, line-delimited):

    #lrwr-manifest v1
    <clip_path>\t<class_name>\t<class_id>\t<split>\t<frame_count>\t<origin>

``clip_path`` is stored relative to the manifest location so a dataset tree is
relocatable. Sampling uses numpy's PCG64 generator seeded per class from
``SeedSequence([seed, class_id, stream])`` so manifests are reproducible.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError
from .storage import CLIP_SUFFIX, atomic_write_bytes, write_clip

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
ORIGIN_NATURAL = "natural"
ORIGIN_COPY = "upsampled-copy"
MANIFEST_HEADER = "#lrwr-manifest v1"

_SPLITS = (SPLIT_TRAIN, SPLIT_TEST)
_ORIGINS = (ORIGIN_NATURAL, ORIGIN_COPY)


@dataclass(frozen=True)
class SampleRecord:
    clip_path: str
    class_name: str
    class_id: int
    split: str
    frame_count: int
    origin: str = ORIGIN_NATURAL
    # Optional, in-memory only: the v1 manifest format does not persist it.
    speaker: str | None = None

    def __post_init__(self):
        if self.split not in _SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.origin not in _ORIGINS:
            raise ValueError(f"unknown origin {self.origin!r}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")


@dataclass
class Manifest:
    records: list[SampleRecord]
    classes: list[str]
    # Directory clip paths resolve against; set on load/build, never serialized.
    root: Path | None = None
    # Uniform per-class counts after balancing; None for raw pools.
    per_class_train: int | None = None
    per_class_test: int | None = None

    def __post_init__(self):
        for rec in self.records:
            if rec.class_id >= len(self.classes) or self.classes[rec.class_id] != rec.class_name:
                raise ValueError(
                    f"record {rec.clip_path!r}: class_id {rec.class_id} does not map to "
                    f"{rec.class_name!r} in the class list"
                )

    def split_records(self, split: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == split]

    def counts(self, split: str) -> dict[str, int]:
        out = {name: 0 for name in self.classes}
        for rec in self.records:
            if rec.split == split:
                out[rec.class_name] += 1
        return out

    def resolve(self, rec: SampleRecord) -> Path:
        if self.root is None:
            return Path(rec.clip_path)
        return self.root / rec.clip_path

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER]
        for rec in self.records:
            lines.append(
                "\t".join(
                    (
                        rec.clip_path,
                        rec.class_name,
                        str(rec.class_id),
                        rec.split,
                        str(rec.frame_count),
                        rec.origin,
                    )
                )
            )
        return "\n".join(lines) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_bytes(path, self.to_text().encode("utf-8"))


def _uniform_count(counts: dict[str, int]) -> int | None:
    values = set(counts.values())
    return values.pop() if len(values) == 1 else None


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise FormatError(f"{path}: missing manifest header {MANIFEST_HEADER!r}")
    records: list[SampleRecord] = []
    id_to_name: dict[int, str] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
        clip_path, class_name, class_id_s, split, frame_count_s, origin = fields
        try:
            class_id = int(class_id_s)
            frame_count = int(frame_count_s)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
        prev = id_to_name.setdefault(class_id, class_name)
        if prev != class_name:
            raise FormatError(
                f"{path}:{lineno}: class_id {class_id} maps to both {prev!r} and {class_name!r}"
            )
        try:
            records.append(
                SampleRecord(clip_path, class_name, class_id, split, frame_count, origin)
            )
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise FormatError(f"{path}: manifest has no records")
    max_id = max(id_to_name)
    if set(id_to_name) != set(range(max_id + 1)):
        raise FormatError(f"{path}: class ids are not dense 0..{max_id}")
    classes = [id_to_name[i] for i in range(max_id + 1)]
    manifest = Manifest(records, classes, root=path.parent)
    manifest.per_class_train = _uniform_count(manifest.counts(SPLIT_TRAIN))
    manifest.per_class_test = _uniform_count(manifest.counts(SPLIT_TEST))
    return manifest


def _class_rng(seed: int, class_id: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, class_id, stream])))


def merge_class_aliases(pool: Manifest, aliases: Mapping[str, str]) -> Manifest:
    """Rename classes through an alias table (variant -> canonical) and reindex densely.

    Meant to run before :func:`filter_classes`; the table itself is curated by hand.
    """
    renamed = [aliases.get(name, name) for name in pool.classes]
    classes: list[str] = []
    for name in renamed:
        if name not in classes:
            classes.append(name)
    remap = {name: i for i, name in enumerate(classes)}
    records = [
        replace(r, class_name=aliases.get(r.class_name, r.class_name),
                class_id=remap[aliases.get(r.class_name, r.class_name)])
        for r in pool.records
    ]
    return Manifest(records, classes, root=pool.root)


def filter_classes(pool: Manifest, min_count: int) -> Manifest:
    """Drop classes with fewer than ``min_count`` natural samples; reindex ids densely."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    natural = {name: 0 for name in pool.classes}
    for rec in pool.records:
        if rec.origin == ORIGIN_NATURAL:
            natural[rec.class_name] += 1
    kept = [name for name in pool.classes if natural[name] >= min_count]
    if not kept:
        raise ValueError(f"no class has at least {min_count} natural samples")
    remap = {name: i for i, name in enumerate(kept)}
    records = [
        replace(r, class_id=remap[r.class_name]) for r in pool.records if r.class_name in remap
    ]
    return Manifest(records, kept, root=pool.root)


def balance_and_split(
    pool: Manifest, per_class: int, test_per_class: int, seed: int
) -> Manifest:
    """Cap every class at ``per_class`` seeded-uniformly chosen samples and split them.

    ``test_per_class`` of the chosen samples become the test split, the rest
    train. Deterministic: same seed, same manifest bytes.
    """
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    if not 0 <= test_per_class < per_class:
        raise ValueError(
            f"test_per_class must be in [0, per_class), got {test_per_class} with per_class={per_class}"
        )
    by_class: dict[str, list[SampleRecord]] = {name: [] for name in pool.classes}
    for rec in pool.records:
        if rec.origin == ORIGIN_NATURAL:
            by_class[rec.class_name].append(rec)
    records: list[SampleRecord] = []
    for class_id, name in enumerate(pool.classes):
        recs = sorted(by_class[name], key=lambda r: r.clip_path)
        if len(recs) < per_class:
            raise ValueError(
                f"class {name!r} has only {len(recs)} natural samples, need {per_class}"
            )
        rng = _class_rng(seed, class_id, 0)
        chosen = rng.permutation(len(recs))[:per_class]
        test_idx = set(int(i) for i in chosen[:test_per_class])
        train_idx = sorted(int(i) for i in chosen[test_per_class:])
        for i in train_idx:
            records.append(replace(recs[i], class_id=class_id, split=SPLIT_TRAIN))
        for i in sorted(test_idx):
            records.append(replace(recs[i], class_id=class_id, split=SPLIT_TEST))
    return Manifest(
        records,
        list(pool.classes),
        root=pool.root,
        per_class_train=per_class - test_per_class,
        per_class_test=test_per_class,
    )


def subtract(pool: Manifest, used: Manifest) -> Manifest:
    """Records of ``pool`` whose clip_path does not appear in ``used`` (same class list)."""
    if pool.classes != used.classes:
        raise ValueError("pool and used manifests must share the same class list")
    taken = {r.clip_path for r in used.records}
    records = [r for r in pool.records if r.clip_path not in taken]
    return Manifest(records, list(pool.classes), root=pool.root)


def upsample(
    manifest: Manifest, unused_pool: Manifest, target_per_class: int, seed: int
) -> Manifest:
    """Raise each class's train count to ``target_per_class``.

    New records are drawn from ``unused_pool`` first (origin stays natural);
    once that is exhausted, train records of the class are duplicated with
    origin ``upsampled-copy``. The test split is never touched.
    """
    if unused_pool.classes != manifest.classes:
        raise ValueError("unused_pool must share the manifest's class list")
    present = {r.clip_path for r in manifest.records}
    records: list[SampleRecord] = []
    for class_id, name in enumerate(manifest.classes):
        train = [r for r in manifest.records if r.class_name == name and r.split == SPLIT_TRAIN]
        test = [r for r in manifest.records if r.class_name == name and r.split == SPLIT_TEST]
        if target_per_class < len(train):
            raise ValueError(
                f"class {name!r}: target {target_per_class} below current train count {len(train)}"
            )
        need = target_per_class - len(train)
        avail = sorted(
            (
                r
                for r in unused_pool.records
                if r.class_name == name
                and r.origin == ORIGIN_NATURAL
                and r.clip_path not in present
            ),
            key=lambda r: r.clip_path,
        )
        rng = _class_rng(seed, class_id, 1)
        fresh: list[SampleRecord] = []
        if need > 0 and avail:
            take = min(need, len(avail))
            picks = sorted(int(i) for i in rng.permutation(len(avail))[:take])
            fresh = [replace(avail[i], split=SPLIT_TRAIN, origin=ORIGIN_NATURAL) for i in picks]
            need -= take
        naturals = train + fresh
        copies: list[SampleRecord] = []
        if need > 0:
            full, rem = divmod(need, len(naturals))
            copies.extend(
                replace(r, origin=ORIGIN_COPY) for _ in range(full) for r in naturals
            )
            extra = sorted(int(i) for i in rng.permutation(len(naturals))[:rem])
            copies.extend(replace(naturals[i], origin=ORIGIN_COPY) for i in extra)
        records.extend(train)
        records.extend(fresh)
        records.extend(copies)
        records.extend(test)
    return Manifest(
        records,
        list(manifest.classes),
        root=manifest.root,
        per_class_train=target_per_class,
        per_class_test=manifest.per_class_test,
    )


def _synthetic_clip(
    rng: np.random.Generator, class_id: int, frames: int, size: int
) -> np.ndarray:
    """One sample of class ``class_id``: a pulsing bright blob on dark noise.

    The blob orbits, swells and brightens on a shared phase angle that advances
    by ``direction * cycles / frames`` of a turn per frame; direction alternates
    with class parity and the cycle count grows every two classes. The starting
    phase is random per sample, so a single frame carries no class information:
    only the direction and rate of change across frames separate the classes.
    """
    direction = 1.0 if class_id % 2 == 0 else -1.0
    cycles = 1.0 + class_id // 2
    phase = rng.uniform(0.0, 2.0 * math.pi)
    cy = size / 2 + rng.uniform(-size / 16, size / 16)
    cx = size / 2 + rng.uniform(-size / 16, size / 16)
    orbit = size * (0.15 + rng.uniform(-0.02, 0.02))
    base_sigma = size * (0.12 + rng.uniform(-0.01, 0.01))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    clip = rng.integers(0, 40, size=(frames, size, size)).astype(np.float64)
    for t in range(frames):
        theta = phase + direction * 2.0 * math.pi * cycles * t / frames
        by = cy + orbit * math.sin(theta)
        bx = cx + orbit * math.cos(theta)
        sigma = base_sigma * (1.0 + 0.30 * math.sin(theta))
        amp = 150.0 + 70.0 * math.cos(theta)
        clip[t] += amp * np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2.0 * sigma**2))
    return np.clip(clip, 0, 255).astype(np.uint8)


def generate_synthetic(
    out_dir: str | os.PathLike,
    classes: int,
    samples_per_class: int,
    frames: int = 16,
    size: int = 32,
    seed: int = 0,
    test_per_class: int | None = None,
) -> Manifest:
    """Write a synthetic micro-dataset under ``out_dir`` and return its manifest.

    Each class is a distinct deterministic motion pattern (see
    :func:`_synthetic_clip`); per-sample jitter derives from ``seed``. The last
    ``test_per_class`` samples of every class (default: a fifth, at least one)
    form the test split. The manifest is also written to ``out_dir/manifest.tsv``.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if samples_per_class < 2:
        raise ValueError(f"need at least 2 samples per class, got {samples_per_class}")
    if frames < 2:
        raise ValueError(f"need at least 2 frames for a temporal pattern, got {frames}")
    if size < 8:
        raise ValueError(f"frame size must be at least 8, got {size}")
    if test_per_class is None:
        test_per_class = max(1, samples_per_class // 5)
    if not 0 < test_per_class < samples_per_class:
        raise ValueError(
            f"test_per_class must be in (0, samples_per_class), got {test_per_class}"
        )
    out_dir = Path(out_dir)
    class_names = [f"class{k:03d}" for k in range(classes)]
    records: list[SampleRecord] = []
    for k, name in enumerate(class_names):
        for i in range(samples_per_class):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, k, i])))
            clip = _synthetic_clip(rng, k, frames, size)
            rel = f"clips/{name}/sample{i:04d}{CLIP_SUFFIX}"
            write_clip(clip, out_dir / rel)
            split = SPLIT_TEST if i >= samples_per_class - test_per_class else SPLIT_TRAIN
            records.append(SampleRecord(rel, name, k, split, frames))
    manifest = Manifest(
        records,
        class_names,
        root=out_dir,
        per_class_train=samples_per_class - test_per_class,
        per_class_test=test_per_class,
    )
    manifest.save(out_dir / "manifest.tsv")
    return manifest
