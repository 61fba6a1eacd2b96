"""Accuracy metrics over a manifest's test split and report emission."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
import torch

from .augment import center_crop
from .dataset import Manifest, SPLIT_TEST
from .model import ALN, normalize_clips
from .storage import read_clip


@dataclass
class EvalReport:
    top1: float
    topk: dict[int, float]
    per_class: dict[str, float]
    confusion: np.ndarray  # K x K counts, rows = true class, cols = predicted
    sample_count: int
    classes: list[str]


def evaluate(
    model: ALN, manifest: Manifest, *, batch_size: int = 32, ks: tuple[int, ...] = (1, 5)
) -> EvalReport:
    """Top-1/top-k accuracy and confusion counts on the test split.

    Deterministic: eval mode, center crop to the model's input size, no flip.
    """
    records = manifest.split_records(SPLIT_TEST)
    if not records:
        raise ValueError("manifest has no test records")
    k_classes = len(manifest.classes)
    size = model.config.input_size
    confusion = np.zeros((k_classes, k_classes), dtype=np.int64)
    wanted_ks = sorted({1, *(k for k in ks if 1 <= k <= k_classes)})
    topk_hits = {k: 0 for k in wanted_ks}
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            batch = np.stack(
                [center_crop(read_clip(manifest.resolve(r)), size) for r in chunk]
            )
            _, pooled = model(normalize_clips(batch).to(dtype))
            ranked = torch.argsort(pooled, dim=1, descending=True).cpu().numpy()
            for rec, row in zip(chunk, ranked):
                confusion[rec.class_id, row[0]] += 1
                for k in wanted_ks:
                    if rec.class_id in row[:k]:
                        topk_hits[k] += 1
    total = len(records)
    per_class = {}
    for class_id, name in enumerate(manifest.classes):
        row_total = int(confusion[class_id].sum())
        per_class[name] = float(confusion[class_id, class_id] / row_total) if row_total else 0.0
    return EvalReport(
        top1=float(topk_hits[1] / total),
        topk={k: float(h / total) for k, h in topk_hits.items()},
        per_class=per_class,
        confusion=confusion,
        sample_count=total,
        classes=list(manifest.classes),
    )


def emit_report(report: EvalReport, fmt: str = "text") -> bytes:
    """Serialize a report with stable field ordering; ``fmt`` is "text" or "csv"."""
    if fmt == "text":
        return _emit_text(report)
    if fmt == "csv":
        return _emit_csv(report)
    raise ValueError(f"unknown report format {fmt!r}")


def _emit_text(report: EvalReport) -> bytes:
    lines = [f"samples={report.sample_count}", f"top1={report.top1:.6f}"]
    for k in sorted(report.topk):
        lines.append(f"top{k}={report.topk[k]:.6f}")
    for name in report.classes:
        lines.append(f"class {name}: acc={report.per_class[name]:.6f}")
    lines.append("confusion (rows=true, cols=predicted):")
    for class_id, name in enumerate(report.classes):
        counts = " ".join(str(int(c)) for c in report.confusion[class_id])
        lines.append(f"  {name}: {counts}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _emit_csv(report: EvalReport) -> bytes:
    # 4-column layout so one generic csv reader handles every section.
    out = io.StringIO()
    out.write("section,a,b,value\r\n")
    out.write(f"summary,sample_count,,{report.sample_count}\r\n")
    out.write(f"summary,top1,,{report.top1:.6f}\r\n")
    for k in sorted(report.topk):
        out.write(f"topk,{k},,{report.topk[k]:.6f}\r\n")
    for name in report.classes:
        out.write(f"per_class,{name},,{report.per_class[name]:.6f}\r\n")
    for i, true_name in enumerate(report.classes):
        for j, pred_name in enumerate(report.classes):
            out.write(f"confusion,{true_name},{pred_name},{int(report.confusion[i, j])}\r\n")
    return out.getvalue().encode("utf-8")
