import csv
import io

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch import nn

from lipkit.dataset import Manifest, SPLIT_TEST, SPLIT_TRAIN, SampleRecord
from lipkit.evaluation import EvalReport, emit_report, evaluate
from lipkit.figures import render_confusion, render_per_class, render_training_curves
from lipkit.model import ALNConfig, build_model
from lipkit.storage import write_clip
from lipkit.training import write_metric_csv

PNG_MAGIC = b"\x89PNG"


class StubModel(nn.Module):
    """Reads the class id encoded in pixel (0,0,0) and predicts with an offset."""

    def __init__(self, num_classes, size=12, shift=0):
        super().__init__()
        self.config = ALNConfig(num_classes=num_classes, input_size=size)
        self.shift = shift
        self.dummy = nn.Parameter(torch.zeros(1))

    def forward(self, clips, rng=None):
        ids = torch.round(clips[:, 0, 0, 0] * 127.5 + 127.5).long()
        pred = (ids + self.shift) % self.config.num_classes
        logits = F.one_hot(pred, self.config.num_classes).double() * 50.0
        frame = F.log_softmax(logits, dim=-1).unsqueeze(1)
        return frame, frame[:, 0]


def labeled_tree(tmp_path, num_classes=3, per_class=4, size=12):
    """Clips whose first pixel encodes the class id; balanced test split."""
    records = []
    classes = [f"c{i}" for i in range(num_classes)]
    for cid, name in enumerate(classes):
        for i in range(per_class):
            clip = np.zeros((2, size, size), dtype=np.uint8)
            clip[:, 0, 0] = cid
            rel = f"{name}_{i}.lrwr"
            write_clip(clip, tmp_path / rel)
            split = SPLIT_TEST if i % 2 else SPLIT_TRAIN
            records.append(SampleRecord(rel, name, cid, split, 2))
    return Manifest(records, classes, root=tmp_path)


class TestEvaluate:
    def test_perfect_classifier(self, tmp_path):
        manifest = labeled_tree(tmp_path)
        report = evaluate(StubModel(3), manifest)
        assert report.top1 == 1.0
        assert np.array_equal(report.confusion, np.diag([2, 2, 2]))
        assert all(v == 1.0 for v in report.per_class.values())
        assert report.sample_count == 6

    def test_constant_predictor_on_balanced_split(self, tmp_path):
        manifest = labeled_tree(tmp_path, num_classes=4, per_class=4)

        class Constant(StubModel):
            def forward(self, clips, rng=None):
                b = clips.shape[0]
                logits = torch.zeros(b, 4, dtype=torch.float64)
                logits[:, 2] = 50.0
                frame = F.log_softmax(logits, dim=-1).unsqueeze(1)
                return frame, frame[:, 0]

        report = evaluate(Constant(4), manifest)
        assert report.top1 == pytest.approx(1 / 4)

    def test_confusion_cross_checks_top1(self, tmp_path):
        manifest = labeled_tree(tmp_path, num_classes=3, per_class=6)
        report = evaluate(StubModel(3, shift=1), manifest)  # always wrong
        assert report.top1 == 0.0
        assert np.trace(report.confusion) / report.confusion.sum() == report.top1
        # rows still sum to the per-class test counts
        assert (report.confusion.sum(axis=1) == 3).all()

    def test_topk_monotone_and_saturates(self, tmp_path):
        manifest = labeled_tree(tmp_path, num_classes=4, per_class=4)
        model = build_model(
            ALNConfig(num_classes=4, input_size=12, frontend_channels=4,
                      stage_widths=(4,), blocks_per_stage=(1,), radix=2,
                      rnn_hidden=8, rnn_layers=1, dropblock=None),
            seed=0,
        )
        report = evaluate(model, manifest, ks=tuple(range(1, 5)))
        values = [report.topk[k] for k in sorted(report.topk)]
        assert values == sorted(values)
        assert report.topk[4] == 1.0
        assert report.topk[1] == report.top1

    def test_deterministic(self, tmp_path):
        manifest = labeled_tree(tmp_path)
        model = build_model(
            ALNConfig(num_classes=3, input_size=12, frontend_channels=4,
                      stage_widths=(4,), blocks_per_stage=(1,), radix=2,
                      rnn_hidden=8, rnn_layers=1, dropblock=None),
            seed=1,
        )
        a = evaluate(model, manifest)
        b = evaluate(model, manifest)
        assert a.top1 == b.top1
        assert np.array_equal(a.confusion, b.confusion)

    def test_empty_test_split_rejected(self, tmp_path):
        manifest = labeled_tree(tmp_path)
        manifest.records = [r for r in manifest.records if r.split == SPLIT_TRAIN]
        with pytest.raises(ValueError):
            evaluate(StubModel(3), manifest)


class TestEmitReport:
    def _report(self):
        return EvalReport(
            top1=0.75,
            topk={1: 0.75, 2: 1.0},
            per_class={"a": 1.0, "b": 0.5},
            confusion=np.array([[2, 0], [1, 1]]),
            sample_count=4,
            classes=["a", "b"],
        )

    def test_text_contains_top1(self):
        text = emit_report(self._report(), "text").decode()
        assert "top1=0.750000" in text
        assert "samples=4" in text

    def test_csv_parses_and_round_trips_values(self):
        data = emit_report(self._report(), "csv")
        rows = list(csv.reader(io.StringIO(data.decode())))
        assert rows[0] == ["section", "a", "b", "value"]
        table = {(r[0], r[1], r[2]): r[3] for r in rows[1:]}
        assert float(table[("summary", "top1", "")]) == 0.75
        assert int(table[("confusion", "b", "a")]) == 1
        assert float(table[("per_class", "b", "")]) == 0.5

    def test_emission_deterministic(self):
        assert emit_report(self._report(), "csv") == emit_report(self._report(), "csv")
        assert emit_report(self._report(), "text") == emit_report(self._report(), "text")

    def test_unknown_format_rejected(self):
        with pytest.raises(ValueError):
            emit_report(self._report(), "yaml")


class TestFigures:
    def test_report_figures_render(self, tmp_path):
        report = EvalReport(
            top1=0.5,
            topk={1: 0.5},
            per_class={"a": 1.0, "b": 0.0},
            confusion=np.array([[2, 0], [2, 0]]),
            sample_count=4,
            classes=["a", "b"],
        )
        render_confusion(report, tmp_path / "conf.png")
        render_per_class(report, tmp_path / "pc.png")
        for name in ("conf.png", "pc.png"):
            data = (tmp_path / name).read_bytes()
            assert data.startswith(PNG_MAGIC) and len(data) > 1000

    def test_training_curves_render(self, tmp_path):
        rows = [
            {"epoch": 1, "step": 5, "lr": 1e-3, "train_loss": 1.2, "test_acc": 0.3},
            {"epoch": 2, "step": 10, "lr": 8e-4, "train_loss": 0.8, "test_acc": 0.6},
        ]
        write_metric_csv(rows, tmp_path / "metrics.csv")
        render_training_curves(tmp_path / "metrics.csv", tmp_path / "curves.png")
        assert (tmp_path / "curves.png").read_bytes().startswith(PNG_MAGIC)
