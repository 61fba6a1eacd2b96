import numpy as np
import pytest

from lipkit.augment import AugmentConfig
from lipkit.dataset import (
    Manifest,
    ORIGIN_NATURAL,
    SPLIT_TRAIN,
    SampleRecord,
    generate_synthetic,
)
from lipkit.model import ALNConfig
from lipkit.training import TrainConfig


def fake_pool(per_class: dict[str, int], frame_count: int = 16) -> Manifest:
    """A manifest of fake natural train records; no clip files behind the paths."""
    classes = list(per_class)
    records = []
    for class_id, name in enumerate(classes):
        for i in range(per_class[name]):
            records.append(
                SampleRecord(
                    f"clips/{name}/s{i:05d}.lrwr",
                    name,
                    class_id,
                    SPLIT_TRAIN,
                    frame_count,
                    ORIGIN_NATURAL,
                )
            )
    return Manifest(records, classes)


def micro_train_config(num_classes: int, size: int = 16, **overrides) -> TrainConfig:
    """Smallest config that exercises every layer kind; fast enough for unit tests."""
    defaults = dict(
        lr_max=2e-3,
        batch_size=4,
        epochs=2,
        seed=9,
        augment=AugmentConfig(
            crop_size=size - 2,
            flip_prob=0.5,
            cutout=(1, 4),
            mixup_alpha=0.3,
            smoothing_eps=0.1,
            dropblock=(3, 0.05),
        ),
        model=ALNConfig(
            num_classes=num_classes,
            input_size=size - 2,
            frontend_channels=8,
            stage_widths=(8,),
            blocks_per_stage=(1,),
            radix=2,
            rnn_hidden=8,
            rnn_layers=1,
        ),
    )
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def synth_tree(tmp_path_factory):
    """Shared read-only synthetic micro-dataset: 3 classes x 8 samples, 8x16x16."""
    root = tmp_path_factory.mktemp("synth")
    manifest = generate_synthetic(
        root, classes=3, samples_per_class=8, frames=8, size=16, seed=21
    )
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
