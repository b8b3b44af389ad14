"""Two-stage detector: a U-Net over the RD map plus an angle classifier.

Stage one (RD-Net) labels every RD cell object/background and exposes its
512-channel bottleneck; a spatial max over that bottleneck gives one global
feature vector per frame. Stage two (Ang-Net) takes a 3x3 crop of the input
channels around a detection, the global feature, and the class one-hot, and
classifies azimuth and elevation bins. During training the crops sit at
ground-truth cells (teacher forcing); at inference they follow the
thresholded, NMS-filtered RD-Net output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classic import local_max_nms, rd_transform
from .core import AngleGrid, Detection4D, RadarParams, RawFrame
from .nn import (
    Concat,
    Conv2d,
    Dropout,
    Flatten,
    GlobalMaxPool,
    Linear,
    MaxPool2d,
    NetGraph,
    ReLU,
    Upsample2x,
)

BOTTLENECK_CHANNELS = 512
DETECTION_THRESHOLD = 0.8


@dataclass(frozen=True)
class RDNetConfig:
    n_channels: int = 16
    encoder_widths: tuple[int, ...] = (64, 128, 256)
    bottleneck: int = BOTTLENECK_CHANNELS
    n_classes: int = 2

    def __post_init__(self):
        if self.bottleneck != BOTTLENECK_CHANNELS:
            raise ValueError(f"bottleneck width is fixed at {BOTTLENECK_CHANNELS}")
        if self.n_classes < 2:
            raise ValueError("need at least object/background classes")
        if not self.encoder_widths or any(w < 1 for w in self.encoder_widths):
            raise ValueError("encoder widths must be positive and non-empty")


@dataclass(frozen=True)
class AngNetConfig:
    n_channels: int = 16
    conv_channels: int = 256
    fc_widths: tuple[int, ...] = (512, 256, 128)
    n_az: int = 32
    n_el: int = 16
    n_classes: int = 2
    dropout: float = 0.2
    with_context: bool = True  # False: crop features only (ablation variant)

    def __post_init__(self):
        if len(self.fc_widths) != 3:
            raise ValueError("expected three fully-connected widths")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def concat_width(self) -> int:
        if not self.with_context:
            return self.conv_channels
        return self.conv_channels + BOTTLENECK_CHANNELS + self.n_classes


def build_rdnet(config: RDNetConfig, rng: np.random.Generator) -> NetGraph:
    """U-Net over (N, n_channels, H, W): outputs "logits" (same spatial size)
    and "gfeat" (per-frame spatial max of the bottleneck)."""
    g = NetGraph(["rd"])
    prev, prev_ch = "rd", config.n_channels
    skips = []
    for i, width in enumerate(config.encoder_widths):
        g.add(f"enc{i}a", Conv2d(prev_ch, width, rng=rng), prev)
        g.add(f"enc{i}a_r", ReLU(), f"enc{i}a")
        g.add(f"enc{i}b", Conv2d(width, width, rng=rng), f"enc{i}a_r")
        g.add(f"enc{i}b_r", ReLU(), f"enc{i}b")
        skips.append((f"enc{i}b_r", width))
        g.add(f"pool{i}", MaxPool2d(), f"enc{i}b_r")
        prev, prev_ch = f"pool{i}", width
    g.add("bota", Conv2d(prev_ch, config.bottleneck, rng=rng), prev)
    g.add("bota_r", ReLU(), "bota")
    g.add("botb", Conv2d(config.bottleneck, config.bottleneck, rng=rng), "bota_r")
    g.add("botb_r", ReLU(), "botb")
    g.add("gfeat", GlobalMaxPool(), "botb_r")
    prev, prev_ch = "botb_r", config.bottleneck
    for i in reversed(range(len(config.encoder_widths))):
        skip_name, width = skips[i]
        g.add(f"up{i}", Upsample2x(), prev)
        g.add(f"upc{i}", Conv2d(prev_ch, width, rng=rng), f"up{i}")
        g.add(f"upc{i}_r", ReLU(), f"upc{i}")
        g.add(f"cat{i}", Concat(), (f"upc{i}_r", skip_name))
        g.add(f"dec{i}a", Conv2d(2 * width, width, rng=rng), f"cat{i}")
        g.add(f"dec{i}a_r", ReLU(), f"dec{i}a")
        g.add(f"dec{i}b", Conv2d(width, width, rng=rng), f"dec{i}a_r")
        g.add(f"dec{i}b_r", ReLU(), f"dec{i}b")
        prev, prev_ch = f"dec{i}b_r", width
    g.add("logits", Conv2d(prev_ch, config.n_classes, k=1, pad=0, rng=rng), prev)
    return g


def build_angnet(config: AngNetConfig, rng: np.random.Generator, seed: int = 0) -> NetGraph:
    """Angle classifier over crops: outputs "az" and "el" logits.

    With context, feeds are ("crop", "gfeat", "onehot"); the ablation variant
    takes "crop" alone and skips the concatenation.
    """
    inputs = ["crop", "gfeat", "onehot"] if config.with_context else ["crop"]
    g = NetGraph(inputs)
    g.add("aconv", Conv2d(config.n_channels, config.conv_channels, k=3, pad=0, rng=rng), "crop")
    g.add("aconv_r", ReLU(), "aconv")
    g.add("aflat", Flatten(), "aconv_r")
    if config.with_context:
        g.add("acat", Concat(), ("aflat", "gfeat", "onehot"))
        prev = "acat"
    else:
        prev = "aflat"
    prev_w = config.concat_width
    for i, width in enumerate(config.fc_widths, start=1):
        g.add(f"fc{i}", Linear(prev_w, width, rng=rng), prev)
        g.add(f"fc{i}_r", ReLU(), f"fc{i}")
        prev, prev_w = f"fc{i}_r", width
        if i == 1 and config.dropout > 0.0:
            g.add("drop1", Dropout(config.dropout, seed=seed), "fc1_r")
            prev = "drop1"
    g.add("az", Linear(prev_w, config.n_az, rng=rng), prev)
    g.add("el", Linear(prev_w, config.n_el, rng=rng), prev)
    return g


def normalize_channels(channels: np.ndarray) -> np.ndarray:
    """Scale each frame so its largest absolute channel value is 1.

    Frame amplitudes vary over orders of magnitude with target strength and
    noise level; without this the logits would track raw signal scale.
    """
    flat_max = np.abs(channels).reshape(channels.shape[0], -1).max(axis=1)
    scale = np.where(flat_max > 0, flat_max, 1.0)
    return (channels / scale[:, None, None, None]).astype(channels.dtype)


def crop3x3(channels: np.ndarray, r_bin: int, d_bin: int) -> np.ndarray:
    """3x3 window of (C, H, W) channels centered at (r, d); at map edges the
    window slides inward so it stays fully inside (uncentered)."""
    _, h, w = channels.shape
    if h < 3 or w < 3:
        raise ValueError("map smaller than 3x3")
    if not (0 <= r_bin < h and 0 <= d_bin < w):
        raise ValueError(f"cell ({r_bin}, {d_bin}) outside {h}x{w} map")
    r0 = min(max(r_bin - 1, 0), h - 3)
    d0 = min(max(d_bin - 1, 0), w - 3)
    return channels[:, r0:r0 + 3, d0:d0 + 3]


def one_hot(indices: np.ndarray, n: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(indices), n), dtype=dtype)
    out[np.arange(len(indices)), indices] = 1.0
    return out


class DRDModel:
    """Both networks plus the shared preprocessing and the inference rule."""

    def __init__(self, params: RadarParams, grid: AngleGrid,
                 rd_config: Optional[RDNetConfig] = None,
                 ang_config: Optional[AngNetConfig] = None,
                 seed: int = 0):
        n_ch = 2 * params.n_antennas
        self.params = params
        self.grid = grid
        self.rd_config = rd_config or RDNetConfig(n_channels=n_ch)
        self.ang_config = ang_config or AngNetConfig(
            n_channels=n_ch, n_az=grid.n_az, n_el=grid.n_el,
            n_classes=self.rd_config.n_classes,
        )
        if self.rd_config.n_channels != n_ch or self.ang_config.n_channels != n_ch:
            raise ValueError(f"model configs expect {n_ch} input channels")
        if (self.ang_config.n_az, self.ang_config.n_el) != (grid.n_az, grid.n_el):
            raise ValueError("angle head sizes do not match the grid")
        ss = np.random.SeedSequence((seed, 0xD24D))
        rd_ss, ang_ss = ss.spawn(2)
        self.rdnet = build_rdnet(self.rd_config, np.random.default_rng(rd_ss))
        self.angnet = build_angnet(self.ang_config, np.random.default_rng(ang_ss), seed=seed)

    def frame_channels(self, frame: RawFrame) -> np.ndarray:
        """(1, 2*Nant, Nr, Nd) normalized network input for one frame."""
        rd = rd_transform(frame)
        return normalize_channels(rd.to_channels()[None])

    def parameters(self) -> dict:
        out = {f"rd.{k}": v for k, v in self.rdnet.parameters().items()}
        out.update({f"ang.{k}": v for k, v in self.angnet.parameters().items()})
        return out

    def load_parameters(self, named: dict) -> None:
        mine = self.parameters()
        if set(named) != set(mine):
            missing = set(mine) ^ set(named)
            raise ValueError(f"parameter names do not match: {sorted(missing)[:4]}...")
        for name, value in named.items():
            net, _, pname = name.partition(".")
            graph = self.rdnet if net == "rd" else self.angnet
            graph.set_parameter(pname, value)

    def infer(self, frame: RawFrame, threshold: float = DETECTION_THRESHOLD,
              nms_radius: int = 1) -> list[Detection4D]:
        """Detect and localize: threshold RD-Net softmax, NMS, then angles."""
        channels = self.frame_channels(frame)
        outs = self.rdnet.forward({"rd": channels}, train=False)
        logits = outs["logits"][0]
        z = logits - logits.max(axis=0, keepdims=True)
        probs = np.exp(z) / np.exp(z).sum(axis=0, keepdims=True)
        classes = probs.argmax(axis=0)
        best_prob = np.take_along_axis(probs, classes[None], axis=0)[0]
        score_map = np.where(classes > 0, best_prob, 0.0)
        rs, ds = np.nonzero((classes > 0) & (best_prob > threshold))
        candidates = sorted(zip(rs.tolist(), ds.tolist()))
        survivors = local_max_nms(candidates, score_map, radius=nms_radius)
        if not survivors:
            return []
        crops = np.stack([crop3x3(channels[0], r, d) for r, d in survivors])
        gfeat = np.repeat(outs["gfeat"], len(survivors), axis=0)
        cls = np.array([classes[r, d] for r, d in survivors])
        feeds = {"crop": crops, "gfeat": gfeat,
                 "onehot": one_hot(cls, self.rd_config.n_classes, dtype=crops.dtype)}
        ang = self.angnet.forward(feeds, train=False)
        detections = []
        for i, (r, d) in enumerate(survivors):
            detections.append(Detection4D(
                r_bin=r, d_bin=d,
                az_bin=int(ang["az"][i].argmax()),
                el_bin=int(ang["el"][i].argmax()),
                class_label=int(cls[i]),
                score=float(best_prob[r, d]),
            ))
        return detections
