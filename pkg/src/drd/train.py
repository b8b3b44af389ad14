"""Training loops for the two-stage detector.

Phase 1 optimizes the segmentation loss alone and touches only RD-Net
weights; phase 2 adds the angle losses with crops teacher-forced at
ground-truth cells, so Ang-Net never sees its own upstream predictions
during training. Learning rate decays by a fixed factor at global optimizer
steps shared across both nets and both phases.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .augment import random_augment
from .classic import rd_transform
from .core import GroundTruthLabel
from .model import DRDModel, crop3x3, normalize_channels, one_hot
from .nn import Adam, Dropout, class_balanced_cross_entropy, softmax_cross_entropy
from .sim import DatasetManifest, add_noise


@dataclass(frozen=True)
class TrainSchedule:
    lr0: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 5e-4
    batch_size: int = 15
    rd_only_epochs: int = 5
    total_epochs: int = 250
    gamma: float = 0.1
    decay_steps: tuple[int, ...] = (5000, 60000, 100000)
    lambda1: float = 1.0
    lambda2: float = 1.0
    threshold: float = 0.8

    def __post_init__(self):
        if self.lr0 <= 0 or self.gamma <= 0 or self.batch_size < 1:
            raise ValueError("learning rate, decay factor, batch size must be positive")
        if self.total_epochs < 0 or self.rd_only_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if list(self.decay_steps) != sorted(set(self.decay_steps)):
            raise ValueError("decay steps must be strictly increasing")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")

    def lr_at(self, step: int) -> float:
        """Learning rate for global optimizer step ``step`` (0-based)."""
        drops = sum(step >= s for s in self.decay_steps)
        return self.lr0 * self.gamma ** drops


@dataclass
class EpochLog:
    epoch: int
    step: int
    lr: float
    l_rd: float
    l_azi: float
    l_ele: float
    val_rd_acc: float = float("nan")
    val_az_acc: float = float("nan")
    val_el_acc: float = float("nan")


@dataclass
class TrainState:
    """Optimizer and schedule position, checkpointable between runs."""

    step: int = 0
    epoch: int = 0
    adam_rd: Optional[dict] = None
    adam_ang: Optional[dict] = None


@dataclass
class TrainResult:
    logs: list = field(default_factory=list)
    state: TrainState = field(default_factory=TrainState)


def _load_split(manifest: DatasetManifest, split: str, model: DRDModel):
    from . import storage

    entries = manifest.split(split)
    frames = [storage.load_frame(e.frame_path, model.params) for e in entries]
    labels = [list(e.labels) for e in entries]
    return frames, labels


def _gather_crops(x_norm: np.ndarray, batch_labels: Sequence[Sequence[GroundTruthLabel]]):
    """One crop per GT target; returns crops, az/el targets, and the owning
    frame index of each crop (for routing the global feature)."""
    crops, az_t, el_t, owner = [], [], [], []
    for bi, labs in enumerate(batch_labels):
        for lab in labs:
            crops.append(crop3x3(x_norm[bi], lab.r_bin, lab.d_bin))
            az_t.append(lab.az_bin)
            el_t.append(lab.el_bin)
            owner.append(bi)
    return (np.stack(crops), np.asarray(az_t), np.asarray(el_t), np.asarray(owner))


def _set_dropout_counter(graph, step: int) -> None:
    for layer in graph.layers():
        if isinstance(layer, Dropout):
            layer.counter = step


def _validate(model: DRDModel, frames, labels, threshold: float):
    from .evaluate import accuracy, combine, match_detections

    if not frames:
        return float("nan"), float("nan"), float("nan")
    results = [
        match_detections(model.infer(f, threshold=threshold), labs)
        for f, labs in zip(frames, labels)
    ]
    rep = accuracy(combine(results))
    return rep.rd_accuracy, rep.az_accuracy, rep.el_accuracy


def train_drd(
    model: DRDModel,
    manifest: DatasetManifest,
    schedule: TrainSchedule,
    seed: int = 0,
    augment: bool = True,
    noise_range: Optional[tuple[float, float]] = None,
    log_path=None,
    state: Optional[TrainState] = None,
) -> TrainResult:
    """Train in place; returns per-epoch logs and the final optimizer state.

    Each presentation of a frame gets a fresh random RD shift (and, with
    ``noise_range``, a fresh noise realization at SNR drawn uniformly from
    that range) before the RD transform. Passing a previous ``state``
    resumes the epoch counter, global step, and Adam moments.
    """
    from . import storage

    frames, labels = _load_split(manifest, "train", model)
    if not frames:
        raise ValueError("manifest has no train split")
    val_frames, val_labels = _load_split(manifest, "val", model)
    b1, b2 = schedule.betas
    adam_rd = Adam(model.rdnet.parameters(), lr=schedule.lr0, beta1=b1, beta2=b2,
                   weight_decay=schedule.weight_decay)
    adam_ang = Adam(model.angnet.parameters(), lr=schedule.lr0, beta1=b1, beta2=b2,
                    weight_decay=schedule.weight_decay)
    step, first_epoch = 0, 1
    if state is not None:
        step, first_epoch = state.step, state.epoch + 1
        if state.adam_rd is not None:
            adam_rd.load_state(state.adam_rd)
        if state.adam_ang is not None:
            adam_ang.load_state(state.adam_ang)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7EA1)))
    n_classes = model.rd_config.n_classes
    logs = []
    for epoch in range(first_epoch, schedule.total_epochs + 1):
        joint = epoch > schedule.rd_only_epochs
        perm = rng.permutation(len(frames))
        loss_sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(perm), schedule.batch_size):
            idxs = perm[start:start + schedule.batch_size]
            lr = schedule.lr_at(step)
            adam_rd.lr = lr
            adam_ang.lr = lr
            batch_ch, batch_labels = [], []
            for i in idxs:
                f, labs = frames[i], labels[i]
                if augment:
                    f, labs, _ = random_augment(f, labs, rng)
                if noise_range is not None:
                    snr = float(rng.uniform(noise_range[0], noise_range[1]))
                    f = add_noise(f, snr, seed=int(rng.integers(2 ** 31 - 1)))
                batch_ch.append(rd_transform(f).to_channels())
                batch_labels.append(labs)
            x = normalize_channels(np.stack(batch_ch))
            tmap = np.zeros((x.shape[0],) + x.shape[2:], dtype=np.int64)
            for bi, labs in enumerate(batch_labels):
                for lab in labs:
                    tmap[bi, lab.r_bin, lab.d_bin] = 1
            outs = model.rdnet.forward({"rd": x}, train=True)
            l_rd, d_logits = class_balanced_cross_entropy(outs["logits"], tmap)
            l_az = l_el = 0.0
            if joint:
                crops, az_t, el_t, owner = _gather_crops(x, batch_labels)
                _set_dropout_counter(model.angnet, step)
                feeds = {
                    "crop": crops,
                    "gfeat": outs["gfeat"][owner],
                    "onehot": one_hot(np.ones(len(owner), dtype=np.int64), n_classes),
                }
                aouts = model.angnet.forward(feeds, train=True)
                l_az, d_az = softmax_cross_entropy(aouts["az"], az_t)
                l_el, d_el = softmax_cross_entropy(aouts["el"], el_t)
                dfeeds = model.angnet.backward({
                    "az": schedule.lambda1 * d_az,
                    "el": schedule.lambda2 * d_el,
                })
                d_gfeat = np.zeros_like(outs["gfeat"])
                np.add.at(d_gfeat, owner, dfeeds["gfeat"])
                model.rdnet.backward({"logits": d_logits, "gfeat": d_gfeat})
                adam_ang.step(model.angnet.gradients())
            else:
                model.rdnet.backward({"logits": d_logits})
            adam_rd.step(model.rdnet.gradients())
            total = l_rd + schedule.lambda1 * l_az + schedule.lambda2 * l_el
            if not math.isfinite(total):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} step {step}: "
                    f"rd={l_rd} az={l_az} el={l_el}"
                )
            loss_sums += (l_rd, l_az, l_el)
            n_batches += 1
            step += 1
        means = loss_sums / max(n_batches, 1)
        v_rd, v_az, v_el = _validate(model, val_frames, val_labels, schedule.threshold)
        logs.append(EpochLog(
            epoch=epoch, step=step, lr=schedule.lr_at(step - 1) if step else schedule.lr0,
            l_rd=float(means[0]), l_azi=float(means[1]), l_ele=float(means[2]),
            val_rd_acc=v_rd, val_az_acc=v_az, val_el_acc=v_el,
        ))
        if log_path is not None:
            storage.write_training_log(log_path, logs)
    final = TrainState(step=step, epoch=max(schedule.total_epochs, first_epoch - 1),
                       adam_rd=adam_rd.state(), adam_ang=adam_ang.state())
    return TrainResult(logs=logs, state=final)


def finetune_noise(
    model: DRDModel,
    manifest: DatasetManifest,
    schedule: TrainSchedule,
    seed: int = 0,
    epochs: int = 200,
    lr: float = 1e-4,
    noise_range: tuple[float, float] = (0.0, 40.0),
    log_path=None,
) -> TrainResult:
    """Continue training a converged model under additive noise.

    Same schedule as training except the learning rate, joint from the first
    epoch, with per-presentation noise at SNR uniform over ``noise_range``.
    Optimizer moments start fresh.
    """
    tuned = dataclasses.replace(schedule, lr0=lr, total_epochs=epochs, rd_only_epochs=0)
    return train_drd(model, manifest, tuned, seed=seed, augment=True,
                     noise_range=noise_range, log_path=log_path)


def drd_gradient_check(
    seed: int = 0,
    eps: float = 1e-4,
    n_per_tensor: int = 8,
    map_size: int = 16,
    n_antennas: int = 8,
    batch: int = 2,
    encoder_widths: tuple[int, ...] = (2, 4),
):
    """Finite-difference check of the full two-net training objective.

    Builds width-reduced nets on a small map, wires up the exact teacher-
    forced loss used by ``train_drd`` (segmentation + both angle heads, crops
    stop-gradient, global feature flowing back into the U-Net), and compares
    every parameter gradient against central differences in float64.
    """
    from .model import AngNetConfig, RDNetConfig, build_angnet, build_rdnet
    from .nn import gradient_check

    n_ch = 2 * n_antennas
    rd_cfg = RDNetConfig(n_channels=n_ch, encoder_widths=encoder_widths)
    ang_cfg = AngNetConfig(n_channels=n_ch)
    ss = np.random.SeedSequence((seed, 0x6C))
    init_rng, data_rng, check_rng = [np.random.default_rng(s) for s in ss.spawn(3)]
    rdnet = build_rdnet(rd_cfg, init_rng).astype(np.float64)
    angnet = build_angnet(ang_cfg, init_rng, seed=seed).astype(np.float64)
    x = data_rng.standard_normal((batch, n_ch, map_size, map_size))
    cells = [(int(data_rng.integers(map_size)), int(data_rng.integers(map_size)))
             for _ in range(batch)]
    az_t = data_rng.integers(ang_cfg.n_az, size=batch)
    el_t = data_rng.integers(ang_cfg.n_el, size=batch)
    tmap = np.zeros((batch, map_size, map_size), dtype=np.int64)
    for bi, (r, d) in enumerate(cells):
        tmap[bi, r, d] = 1
    crops = np.stack([crop3x3(x[bi], r, d) for bi, (r, d) in enumerate(cells)])
    onehot = one_hot(np.ones(batch, dtype=np.int64), rd_cfg.n_classes, dtype=np.float64)

    def run_losses():
        outs = rdnet.forward({"rd": x}, train=True)
        feeds = {"crop": crops, "gfeat": outs["gfeat"], "onehot": onehot}
        aouts = angnet.forward(feeds, train=True)
        l_rd, d_rd = class_balanced_cross_entropy(outs["logits"], tmap)
        l_az, d_az = softmax_cross_entropy(aouts["az"], az_t)
        l_el, d_el = softmax_cross_entropy(aouts["el"], el_t)
        return l_rd + l_az + l_el, (d_rd, d_az, d_el)

    def run():
        loss, _ = run_losses()
        return loss, rdnet.signature() + angnet.signature()

    _, (d_rd, d_az, d_el) = run_losses()
    dfeeds = angnet.backward({"az": d_az, "el": d_el})
    rdnet.backward({"logits": d_rd, "gfeat": dfeeds["gfeat"]})
    tensors = {f"rd.{k}": v for k, v in rdnet.parameters().items()}
    tensors.update({f"ang.{k}": v for k, v in angnet.parameters().items()})
    analytic = {f"rd.{k}": v.copy() for k, v in rdnet.gradients().items()}
    analytic.update({f"ang.{k}": v.copy() for k, v in angnet.gradients().items()})
    return gradient_check(run, tensors, analytic, eps=eps,
                          n_per_tensor=n_per_tensor, rng=check_rng)


def train_separate_angnet(
    manifest: DatasetManifest,
    model: DRDModel,
    seed: int = 0,
    epochs: int = 60,
    lr: float = 0.01,
    batch_size: int = 40,
    weight_decay: float = 5e-4,
):
    """Train the context-free angle net on ground-truth crops alone.

    The variant skips the concatenation: its fc stack sees only the 256
    crop-conv features. Used to measure what the global feature and class
    one-hot buy the joint model.
    """
    from . import storage
    from .model import AngNetConfig, build_angnet

    cfg = dataclasses.replace(model.ang_config, with_context=False)
    net = build_angnet(cfg, np.random.default_rng(np.random.SeedSequence((seed, 0xAB1A))),
                       seed=seed)
    entries = manifest.split("train")
    if not entries:
        raise ValueError("manifest has no train split")
    crops, az_t, el_t = [], [], []
    for e in entries:
        frame = storage.load_frame(e.frame_path, model.params)
        ch = normalize_channels(rd_transform(frame).to_channels()[None])[0]
        for lab in e.labels:
            crops.append(crop3x3(ch, lab.r_bin, lab.d_bin))
            az_t.append(lab.az_bin)
            el_t.append(lab.el_bin)
    crops = np.stack(crops)
    az_t = np.asarray(az_t)
    el_t = np.asarray(el_t)
    adam = Adam(net.parameters(), lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xAB1B)))
    step = 0
    for _ in range(epochs):
        perm = rng.permutation(len(crops))
        for start in range(0, len(perm), batch_size):
            idxs = perm[start:start + batch_size]
            _set_dropout_counter(net, step)
            outs = net.forward({"crop": crops[idxs]}, train=True)
            l_az, d_az = softmax_cross_entropy(outs["az"], az_t[idxs])
            l_el, d_el = softmax_cross_entropy(outs["el"], el_t[idxs])
            if not math.isfinite(l_az + l_el):
                raise FloatingPointError(f"non-finite loss at step {step}")
            net.backward({"az": d_az, "el": d_el})
            adam.step(net.gradients())
            step += 1
    return net
