import math

import pytest
import torch

from conftest import micro_train_config
from lipkit.config import dump_train_config, parse_train_config
from lipkit.dataset import generate_synthetic
from lipkit.errors import FormatError, NumericError
from lipkit.training import (
    TrainState,
    adam_step,
    cosine_lr,
    init_train_state,
    load_train_state,
    save_train_state,
    train,
)


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 1e-4, 0.0) == 1e-4
        assert cosine_lr(100, 100, 1e-4, 0.0) == pytest.approx(0.0, abs=1e-20)
        assert cosine_lr(50, 100, 1e-4, 0.0) == pytest.approx(5e-5, abs=1e-18)

    def test_matches_closed_form(self):
        for step in range(0, 1001, 7):
            lr = cosine_lr(step, 1000, 3e-3, 1e-5)
            expected = 1e-5 + 0.5 * (3e-3 - 1e-5) * (1 + math.cos(math.pi * step / 1000))
            assert abs(lr - expected) < 1e-12

    def test_monotone_non_increasing(self):
        values = [cosine_lr(s, 500, 1.0, 0.1) for s in range(501)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            cosine_lr(-1, 10, 1e-4)
        with pytest.raises(ValueError):
            cosine_lr(11, 10, 1e-4)
        with pytest.raises(ValueError):
            cosine_lr(0, 0, 1e-4)


def scalar_state(value=1.0, dtype=torch.float64) -> TrainState:
    model = torch.nn.Linear(1, 1, bias=False).to(dtype)
    with torch.no_grad():
        model.weight.fill_(value)
    m = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    v = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    return TrainState(model=model, m=m, v=v)


class TestAdamStep:
    def test_first_step_matches_hand_computation(self):
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        state = scalar_state(1.0)
        g = {"weight": torch.tensor([[1.0]], dtype=torch.float64)}
        adam_step(state, g, lr, (b1, b2), eps)
        # hand-computed bias-corrected update at t=1 with g=1:
        m_hat = (1 - b1) * 1.0 / (1 - b1)
        v_hat = (1 - b2) * 1.0 / (1 - b2)
        expected = 1.0 - lr * m_hat / (math.sqrt(v_hat) + eps)
        assert abs(float(state.model.weight.detach()) - expected) < 1e-12

    def test_two_steps_match_reference_recurrence(self):
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        state = scalar_state(0.5)
        grads = [0.3, -0.7]
        w, m, v = 0.5, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            adam_step(state, {"weight": torch.tensor([[g]], dtype=torch.float64)},
                      lr, (b1, b2), eps)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert abs(float(state.model.weight.detach()) - w) < 1e-12

    def test_zero_grads_from_fresh_state_leave_params(self):
        state = scalar_state(2.5)
        adam_step(state, {"weight": torch.zeros(1, 1, dtype=torch.float64)}, 1e-3)
        assert float(state.model.weight.detach()) == 2.5
        assert state.step == 1

    def test_deterministic(self):
        a, b = scalar_state(1.0), scalar_state(1.0)
        g = {"weight": torch.tensor([[0.2]], dtype=torch.float64)}
        for _ in range(5):
            adam_step(a, g, 1e-3)
            adam_step(b, g, 1e-3)
        assert torch.equal(a.model.weight, b.model.weight)
        assert torch.equal(a.m["weight"], b.m["weight"])

    def test_non_finite_grad_names_tensor(self):
        state = scalar_state(1.0)
        with pytest.raises(NumericError, match="weight"):
            adam_step(state, {"weight": torch.tensor([[float("inf")]], dtype=torch.float64)}, 1e-3)

    def test_weight_decay_contributes(self):
        plain, decayed = scalar_state(1.0), scalar_state(1.0)
        g = {"weight": torch.tensor([[0.1]], dtype=torch.float64)}
        adam_step(plain, g, 1e-3)
        adam_step(decayed, g, 1e-3, weight_decay=0.5)
        assert float(plain.model.weight.detach()) != float(decayed.model.weight.detach())


class TestConfigFile:
    def test_dump_parse_round_trip(self):
        cfg = micro_train_config(3)
        text = dump_train_config(cfg)
        back = parse_train_config(text)
        assert back.to_dict() == cfg.to_dict()

    def test_unknown_key_rejected(self):
        with pytest.raises(FormatError, match="unknown key"):
            parse_train_config("[train]\nlr_maxx = 1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(FormatError, match="unknown section"):
            parse_train_config("[optimizer]\nlr = 1\n")

    def test_bad_value_rejected(self):
        with pytest.raises(FormatError, match="bad value"):
            parse_train_config("[train]\nbatch_size = many\n")

    def test_optional_fields_disable_with_none(self):
        cfg = parse_train_config(
            "[augment]\ncutout = none\nmixup_alpha = none\ndropblock = none\n"
        )
        assert cfg.augment.cutout is None
        assert cfg.augment.mixup_alpha is None
        assert cfg.augment.dropblock is None

    def test_defaults_follow_recipe(self):
        cfg = parse_train_config("")
        assert cfg.lr_max == 1e-4
        assert cfg.batch_size == 32
        assert cfg.epochs == 60
        assert cfg.adam_betas == (0.9, 0.999)
        assert cfg.schedule == "cosine"
        assert cfg.augment.crop_size == 88
        assert cfg.augment.flip_prob == 0.5
        assert cfg.model.input_size == 88

    def test_invalid_semantics_rejected(self):
        with pytest.raises(FormatError):
            parse_train_config("[train]\nlr_min = 2e-4\n")  # above default lr_max


@pytest.fixture(scope="module")
def micro_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro")
    return generate_synthetic(root, classes=2, samples_per_class=6, frames=6, size=16, seed=33)


class TestTrainLoop:
    def test_zero_epochs(self, micro_tree, tmp_path):
        cfg = micro_train_config(2, epochs=0)
        state, rows = train(micro_tree, cfg, tmp_path / "run")
        assert rows == []
        assert state.step == 0
        text = (tmp_path / "run" / "metrics.csv").read_text()
        assert text == "epoch,step,lr,train_loss,test_acc\n"

    def test_deterministic_metric_log(self, micro_tree, tmp_path):
        cfg = micro_train_config(2, epochs=2)
        train(micro_tree, cfg, tmp_path / "a")
        train(micro_tree, cfg, tmp_path / "b")
        a = (tmp_path / "a" / "metrics.csv").read_bytes()
        b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert a == b
        assert a.decode().splitlines()[0] == "epoch,step,lr,train_loss,test_acc"
        assert len(a.decode().splitlines()) == 3

    def test_seed_changes_run(self, micro_tree, tmp_path):
        train(micro_tree, micro_train_config(2, epochs=1, seed=1), tmp_path / "a")
        train(micro_tree, micro_train_config(2, epochs=1, seed=2), tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (
            tmp_path / "b" / "metrics.csv"
        ).read_bytes()

    def test_unreadable_clip_skipped_with_warning(self, tmp_path, caplog):
        manifest = generate_synthetic(
            tmp_path / "data", classes=2, samples_per_class=6, frames=6, size=16, seed=3
        )
        victim = manifest.resolve(manifest.split_records("train")[0])
        victim.write_bytes(b"not a clip")
        cfg = micro_train_config(2, epochs=1, max_skip_fraction=0.5)
        with caplog.at_level("WARNING"):
            train(manifest, cfg, tmp_path / "run")
        assert any("skipping unreadable clip" in r.message for r in caplog.records)

    def test_too_many_unreadable_clips_abort(self, tmp_path):
        manifest = generate_synthetic(
            tmp_path / "data", classes=2, samples_per_class=6, frames=6, size=16, seed=4
        )
        for rec in manifest.split_records("train"):
            manifest.resolve(rec).write_bytes(b"junk")
        cfg = micro_train_config(2, epochs=1, max_skip_fraction=0.1)
        with pytest.raises(RuntimeError, match="skip fraction"):
            train(manifest, cfg, tmp_path / "run")

    def test_class_count_mismatch_rejected(self, micro_tree, tmp_path):
        cfg = micro_train_config(5)  # manifest has 2 classes
        with pytest.raises(ValueError, match="classes"):
            train(micro_tree, cfg, tmp_path / "run")


class TestTrainStateCheckpoint:
    def _tiny_state(self):
        cfg = micro_train_config(2)
        state = init_train_state(cfg)
        # make the moments non-trivial
        grads = {n: torch.full_like(p, 0.01) for n, p in state.model.named_parameters()}
        adam_step(state, grads, 1e-3)
        state.epoch = 1
        state.best_acc = 0.5
        state.metric_rows = [
            {"epoch": 1, "step": 1, "lr": 1e-3, "train_loss": 0.7, "test_acc": 0.5}
        ]
        return cfg, state

    def test_round_trip(self, tmp_path):
        cfg, state = self._tiny_state()
        path = tmp_path / "t.ckpt"
        save_train_state(state, cfg, path)
        back, back_cfg = load_train_state(path)
        assert back_cfg.to_dict() == cfg.to_dict()
        assert back.step == state.step
        assert back.epoch == state.epoch
        assert back.best_acc == state.best_acc
        assert back.metric_rows == state.metric_rows
        for name, p in state.model.named_parameters():
            assert torch.equal(p, dict(back.model.named_parameters())[name])
            assert torch.equal(state.m[name], back.m[name])
            assert torch.equal(state.v[name], back.v[name])
        save_train_state(back, back_cfg, tmp_path / "t2.ckpt")
        assert (tmp_path / "t2.ckpt").read_bytes() == path.read_bytes()

    def test_wrong_kind_rejected(self, tmp_path):
        from lipkit.checkpoint import save_model

        cfg, state = self._tiny_state()
        save_model(state.model, tmp_path / "m.ckpt")
        with pytest.raises(FormatError, match="kind"):
            load_train_state(tmp_path / "m.ckpt")

    def test_truncated_never_partial(self, tmp_path):
        cfg, state = self._tiny_state()
        path = tmp_path / "t.ckpt"
        save_train_state(state, cfg, path)
        path.write_bytes(path.read_bytes()[:-11])
        with pytest.raises(FormatError):
            load_train_state(path)

    def test_version_mismatch_rejected(self, tmp_path):
        import json
        import struct

        cfg, state = self._tiny_state()
        path = tmp_path / "t.ckpt"
        save_train_state(state, cfg, path)
        raw = path.read_bytes()
        (header_len,) = struct.unpack_from("<I", raw, 8)
        header = json.loads(raw[12 : 12 + header_len])
        header["format_version"] = 99
        new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        path.write_bytes(raw[:8] + struct.pack("<I", len(new_header)) + new_header
                         + raw[12 + header_len :])
        with pytest.raises(FormatError, match="version"):
            load_train_state(path)

    def test_resume_refuses_other_config(self, micro_tree, tmp_path):
        cfg = micro_train_config(2, epochs=1)
        train(micro_tree, cfg, tmp_path / "run")
        other = micro_train_config(2, epochs=1, lr_max=5e-3)
        with pytest.raises(ValueError, match="different config"):
            train(micro_tree, other, tmp_path / "run", resume=True)
