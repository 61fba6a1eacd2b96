"""Split-attention video classifier.

A 3D convolution stem (temporal stride 1, spatial stride 2) feeds per-frame 2D
residual stages whose bottlenecks split their feature groups into ``radix``
branches recombined by a softmax attention over branches. Frame descriptors are
globally average-pooled, run through a bidirectional GRU, projected to class
log-probabilities per frame, and averaged over time into one pooled vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .augment import dropblock_mask
from .errors import NumericError

BOTTLENECK_EXPANSION = 4


@dataclass
class ALNConfig:
    num_classes: int | None = None
    input_size: int = 88
    frontend_channels: int = 64
    stage_widths: tuple[int, ...] = (16, 32, 64, 128)
    blocks_per_stage: tuple[int, ...] = (2, 2, 2, 2)
    radix: int = 2
    cardinality: int = 1
    rnn_hidden: int = 512
    rnn_layers: int = 2
    bidirectional: bool = True
    dropblock: tuple[int, float] | None = (3, 0.1)
    frontend_time_kernel: int = 5
    frontend_space_kernel: int = 7
    frontend_space_stride: int = 2

    def validate(self) -> None:
        if self.num_classes is None or self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.stage_widths) != len(self.blocks_per_stage):
            raise ValueError(
                f"stage_widths {self.stage_widths} and blocks_per_stage "
                f"{self.blocks_per_stage} must have the same length"
            )
        if not self.stage_widths:
            raise ValueError("need at least one residual stage")
        if self.radix < 1 or self.cardinality < 1:
            raise ValueError(f"radix and cardinality must be >= 1")
        if self.rnn_hidden < 1 or self.rnn_layers < 1:
            raise ValueError("rnn_hidden and rnn_layers must be positive")
        if self.input_size < 4:
            raise ValueError(f"input_size too small: {self.input_size}")
        if self.dropblock is not None:
            block_size, drop_rate = self.dropblock
            if block_size < 1 or not 0.0 <= drop_rate < 1.0:
                raise ValueError(f"bad dropblock setting {self.dropblock}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_widths"] = list(self.stage_widths)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        d["dropblock"] = list(self.dropblock) if self.dropblock is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ALNConfig":
        d = dict(d)
        d["stage_widths"] = tuple(d["stage_widths"])
        d["blocks_per_stage"] = tuple(d["blocks_per_stage"])
        if d.get("dropblock") is not None:
            block_size, drop_rate = d["dropblock"]
            d["dropblock"] = (int(block_size), float(drop_rate))
        return cls(**d)


class RadixSoftmax(nn.Module):
    """Softmax over the radix axis of the attention logits.

    With radix 1 the softmax over a single branch is identically 1, so the
    attention path has no effect and the block degenerates to a plain
    bottleneck.
    """

    def __init__(self, radix: int, cardinality: int):
        super().__init__()
        self.radix = radix
        self.cardinality = cardinality

    def forward(self, x):
        b = x.shape[0]
        x = x.view(b, self.cardinality, self.radix, -1).transpose(1, 2)
        x = F.softmax(x, dim=1)
        return x.reshape(b, -1)


class SplatConv2d(nn.Module):
    """3x3 convolution over ``radix`` feature-group branches with split attention.

    Branches are produced by one grouped convolution, summed and globally
    pooled into per-channel statistics, squeezed through a small bottleneck,
    and recombined with softmax weights over the radix axis.
    """

    def __init__(
        self,
        in_channels: int,
        channels: int,
        stride: int = 1,
        radix: int = 2,
        cardinality: int = 1,
        reduction: int = 4,
    ):
        super().__init__()
        self.radix = radix
        attn_channels = max(channels * radix // reduction, 8)
        self.conv = nn.Conv2d(
            in_channels,
            channels * radix,
            kernel_size=3,
            stride=stride,
            padding=1,
            groups=cardinality * radix,
            bias=False,
        )
        self.bn0 = nn.BatchNorm2d(channels * radix)
        self.fc1 = nn.Conv2d(channels, attn_channels, 1, groups=cardinality)
        self.bn1 = nn.BatchNorm2d(attn_channels)
        self.fc2 = nn.Conv2d(attn_channels, channels * radix, 1, groups=cardinality)
        self.rsoftmax = RadixSoftmax(radix, cardinality)

    def forward(self, x):
        x = F.relu(self.bn0(self.conv(x)))
        b, rc, h, w = x.shape
        branches = x.view(b, self.radix, rc // self.radix, h, w)
        gap = branches.sum(dim=1).mean(dim=(2, 3), keepdim=True)
        attn = self.fc2(F.relu(self.bn1(self.fc1(gap))))
        weights = self.rsoftmax(attn).view(b, self.radix, rc // self.radix, 1, 1)
        return (branches * weights).sum(dim=1)


class SplitAttentionBlock(nn.Module):
    """Residual bottleneck whose 3x3 stage is a split-attention convolution."""

    expansion = BOTTLENECK_EXPANSION

    def __init__(
        self, in_channels: int, width: int, stride: int = 1, radix: int = 2, cardinality: int = 1
    ):
        super().__init__()
        out_channels = width * self.expansion
        self.conv1 = nn.Conv2d(in_channels, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.splat = SplatConv2d(width, width, stride=stride, radix=radix, cardinality=cardinality)
        self.conv3 = nn.Conv2d(width, out_channels, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_channels)
        if stride != 1 or in_channels != out_channels:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.splat(out)
        out = self.bn3(self.conv3(out))
        return F.relu(out + identity)


class ALN(nn.Module):
    """The full classifier; construct via :func:`build_model` for seeded init."""

    def __init__(self, config: ALNConfig):
        super().__init__()
        config.validate()
        self.config = config
        kt, ks = config.frontend_time_kernel, config.frontend_space_kernel
        self.stem = nn.Conv3d(
            1,
            config.frontend_channels,
            kernel_size=(kt, ks, ks),
            stride=(1, config.frontend_space_stride, config.frontend_space_stride),
            padding=(kt // 2, ks // 2, ks // 2),
            bias=False,
        )
        self.stem_bn = nn.BatchNorm3d(config.frontend_channels)
        stages = []
        in_channels = config.frontend_channels
        for i, (width, blocks) in enumerate(zip(config.stage_widths, config.blocks_per_stage)):
            layer = []
            for j in range(blocks):
                stride = 2 if (i > 0 and j == 0) else 1
                layer.append(
                    SplitAttentionBlock(
                        in_channels, width, stride, config.radix, config.cardinality
                    )
                )
                in_channels = width * BOTTLENECK_EXPANSION
            stages.append(nn.Sequential(*layer))
        self.stages = nn.ModuleList(stages)
        self.feature_dim = in_channels
        self.gru = nn.GRU(
            input_size=self.feature_dim,
            hidden_size=config.rnn_hidden,
            num_layers=config.rnn_layers,
            batch_first=True,
            bidirectional=config.bidirectional,
        )
        rnn_out = config.rnn_hidden * (2 if config.bidirectional else 1)
        self.classifier = nn.Linear(rnn_out, config.num_classes)

    def _apply_dropblock(self, x, rng: np.random.Generator | None):
        block_size, drop_rate = self.config.dropblock
        if drop_rate == 0.0:
            return x
        if rng is None:
            raise ValueError("training with dropblock enabled requires an rng")
        n, _, h, w = x.shape
        masks = np.stack(
            [dropblock_mask(h, w, block_size, drop_rate, rng) for _ in range(n)]
        )
        kept = masks.reshape(n, -1).mean(axis=1)
        scale = np.divide(1.0, kept, out=np.zeros_like(kept), where=kept > 0)
        masks = masks * scale[:, None, None]
        mask_t = torch.from_numpy(masks).to(dtype=x.dtype, device=x.device)
        return x * mask_t.unsqueeze(1)

    def forward(self, clips, rng: np.random.Generator | None = None):
        """Run a normalized B x T x S x S batch; returns (per-frame log-probs, pooled).

        Per-frame rows are valid log-softmax vectors; the pooled B x K output is
        their arithmetic mean over time. Dropblock masks are drawn from ``rng``
        in training mode only.
        """
        if clips.ndim != 4:
            raise ValueError(f"expected B x T x S x S input, got shape {tuple(clips.shape)}")
        s = self.config.input_size
        if clips.shape[2] != s or clips.shape[3] != s:
            raise ValueError(
                f"input frames are {tuple(clips.shape[2:])}, model expects {s}x{s}"
            )
        b, t = clips.shape[:2]
        x = F.relu(self.stem_bn(self.stem(clips.unsqueeze(1))))
        x = x.transpose(1, 2).reshape(b * t, x.shape[1], x.shape[3], x.shape[4])
        use_dropblock = self.training and self.config.dropblock is not None
        for stage in self.stages:
            x = stage(x)
            if use_dropblock:
                x = self._apply_dropblock(x, rng)
        feats = x.mean(dim=(2, 3)).reshape(b, t, self.feature_dim)
        seq, _ = self.gru(feats)
        frame_logprobs = F.log_softmax(self.classifier(seq), dim=-1)
        pooled = temporal_pool(frame_logprobs)
        if not torch.isfinite(pooled).all():
            raise NumericError("forward pass produced non-finite log-probabilities")
        return frame_logprobs, pooled


def temporal_pool(frame_logprobs: torch.Tensor) -> torch.Tensor:
    """Arithmetic mean of per-frame log-probability vectors over time."""
    return frame_logprobs.mean(dim=1)


def normalize_clips(batch: np.ndarray) -> torch.Tensor:
    """Map raw pixel batches to float32 in [-1, 1] via (x - 127.5) / 127.5."""
    arr = np.asarray(batch, dtype=np.float32)
    return torch.from_numpy((arr - 127.5) / 127.5)


def loss(pooled_log_probs: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative inner product of targets with pooled log-probabilities.

    Targets must be distributions (rows non-negative, summing to 1 within
    1e-6), which makes the loss linear in soft targets from mixup or smoothing.
    """
    if not torch.is_tensor(targets):
        targets = torch.as_tensor(np.asarray(targets))
    targets = targets.to(pooled_log_probs.dtype)
    if targets.shape != pooled_log_probs.shape:
        raise ValueError(
            f"target shape {tuple(targets.shape)} does not match pooled shape "
            f"{tuple(pooled_log_probs.shape)}"
        )
    if float(targets.min()) < -1e-9:
        raise ValueError("targets contain negative probabilities")
    sums = targets.sum(dim=1)
    if float((sums - 1.0).abs().max()) > 1e-6:
        raise ValueError("target rows do not sum to 1")
    return -(targets * pooled_log_probs).sum(dim=1).mean()


def predict(model: ALN, clip: np.ndarray) -> tuple[int, float]:
    """Class id and renormalized confidence for one prepared T x S x S clip."""
    model.eval()
    with torch.no_grad():
        _, pooled = model(normalize_clips(np.asarray(clip)[None]).to(
            next(model.parameters()).dtype
        ))
        probs = torch.softmax(pooled[0], dim=0)
        class_id = int(pooled[0].argmax())
        return class_id, float(probs[class_id])


def init_parameters(model: nn.Module, seed: int) -> None:
    """Deterministic fan-in-scaled init; 1-D weights (norm scales) become 1, biases 0."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.ndim >= 2:
                fan_in = p.shape[1] * int(np.prod(p.shape[2:], dtype=np.int64))
                bound = 1.0 / math.sqrt(fan_in)
                vals = rng.uniform(-bound, bound, size=tuple(p.shape))
                p.copy_(torch.from_numpy(vals).to(p.dtype))
            elif name.endswith(".weight"):
                p.fill_(1.0)
            else:
                p.zero_()


def build_model(config: ALNConfig, seed: int = 0) -> ALN:
    """Construct the classifier with deterministic, seed-keyed parameters."""
    model = ALN(config)
    init_parameters(model, seed)
    return model


def recurrent_parameter_count(
    input_size: int, hidden: int, layers: int, bidirectional: bool
) -> int:
    """Closed-form GRU parameter count (3 gates, two bias vectors per direction)."""
    dirs = 2 if bidirectional else 1
    total = 0
    for layer in range(layers):
        in_size = input_size if layer == 0 else hidden * dirs
        total += dirs * (3 * hidden * in_size + 3 * hidden * hidden + 6 * hidden)
    return total
