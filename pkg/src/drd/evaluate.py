"""Detection metrics and the three comparison experiments.

Accuracy follows the detection-count convention: denominators are N_det, so
a false alarm lowers all three percentages while a miss does not (misses are
reported separately as counts). A matched pair scores a hit when its error
is within +/-1 RD bin, or +/-2 azimuth/elevation bins.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .classic import (
    CLASSIC1,
    CLASSIC2,
    CalibrationMatrix,
    CfarParams,
    average_calibration,
    classic_detect,
)
from .core import AngleGrid, Detection4D, GroundTruthLabel, RadarParams
from .model import DRDModel, crop3x3, one_hot
from .sim import DatasetManifest, add_noise, measured_calibration

RD_TOLERANCE = 1
ANGLE_TOLERANCE = 2
UNDEFINED = float("nan")


@dataclass(frozen=True)
class MatchedPair:
    det: Detection4D
    gt: GroundTruthLabel
    r_err: int
    d_err: int
    az_err: float
    el_err: float


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)
    unmatched_dets: list = field(default_factory=list)
    unmatched_gts: list = field(default_factory=list)


def combine(results: Sequence[MatchResult]) -> MatchResult:
    out = MatchResult()
    for r in results:
        out.pairs.extend(r.pairs)
        out.unmatched_dets.extend(r.unmatched_dets)
        out.unmatched_gts.extend(r.unmatched_gts)
    return out


def match_detections(
    dets: Sequence[Detection4D], gts: Sequence[GroundTruthLabel]
) -> MatchResult:
    """Greedy one-to-one pairing by ascending RD error.

    Only pairs within Chebyshev RD distance <= 1 are eligible; the greedy
    order is (r_err + d_err), with indices breaking ties deterministically.
    Leftover detections are false alarms, leftover GTs misses.
    """
    candidates = []
    for i, det in enumerate(dets):
        for j, gt in enumerate(gts):
            r_err = abs(det.r_bin - gt.r_bin)
            d_err = abs(det.d_bin - gt.d_bin)
            if max(r_err, d_err) <= RD_TOLERANCE:
                candidates.append((r_err + d_err, i, j))
    candidates.sort()
    used_det: set = set()
    used_gt: set = set()
    result = MatchResult()
    for _, i, j in candidates:
        if i in used_det or j in used_gt:
            continue
        used_det.add(i)
        used_gt.add(j)
        det, gt = dets[i], gts[j]
        az_err = abs(det.az_bin - gt.az_bin) if det.az_bin is not None else float("inf")
        el_err = abs(det.el_bin - gt.el_bin) if det.el_bin is not None else float("inf")
        result.pairs.append(MatchedPair(
            det=det, gt=gt,
            r_err=abs(det.r_bin - gt.r_bin), d_err=abs(det.d_bin - gt.d_bin),
            az_err=az_err, el_err=el_err,
        ))
    result.unmatched_dets = [d for i, d in enumerate(dets) if i not in used_det]
    result.unmatched_gts = [g for j, g in enumerate(gts) if j not in used_gt]
    return result


@dataclass(frozen=True)
class AccuracyReport:
    rd_accuracy: float
    az_accuracy: float
    el_accuracy: float
    n_det: int
    n_matched: int
    n_miss: int
    n_false_alarm: int

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.rd_accuracy, self.az_accuracy, self.el_accuracy)


def accuracy(match: MatchResult) -> AccuracyReport:
    """Percentages over N_det; NaN when there are no detections at all."""
    n_false = len(match.unmatched_dets)
    n_det = len(match.pairs) + n_false
    if n_det == 0:
        return AccuracyReport(UNDEFINED, UNDEFINED, UNDEFINED,
                              n_det=0, n_matched=0, n_miss=len(match.unmatched_gts),
                              n_false_alarm=0)
    rd_hits = sum(p.r_err <= RD_TOLERANCE and p.d_err <= RD_TOLERANCE for p in match.pairs)
    az_hits = sum(p.az_err <= ANGLE_TOLERANCE for p in match.pairs)
    el_hits = sum(p.el_err <= ANGLE_TOLERANCE for p in match.pairs)
    return AccuracyReport(
        rd_accuracy=100.0 * rd_hits / n_det,
        az_accuracy=100.0 * az_hits / n_det,
        el_accuracy=100.0 * el_hits / n_det,
        n_det=n_det,
        n_matched=len(match.pairs),
        n_miss=len(match.unmatched_gts),
        n_false_alarm=n_false,
    )


def pooled_accuracy(detect: Callable, frames, labels) -> AccuracyReport:
    """Run a detector over frames and pool all matches into one report."""
    results = [match_detections(detect(f), labs) for f, labs in zip(frames, labels)]
    return accuracy(combine(results))


def train_calibration(
    manifest: DatasetManifest, grid: AngleGrid, geometry
) -> CalibrationMatrix:
    """Average calibration over the train-split radars.

    This is what a deployed unit would carry: the mean chamber measurement,
    mismatched against any individual test radar's actual perturbation.
    """
    train_ids = set(manifest.radar_ids("train"))
    mats = [measured_calibration(grid, geometry, p)
            for p in manifest.perturbations if p.radar_id in train_ids]
    if not mats:
        raise ValueError("manifest has no train-split perturbations")
    return average_calibration(mats)


def _load_split_frames(manifest: DatasetManifest, split: str, params: RadarParams):
    from . import storage

    entries = manifest.split(split)
    frames = [storage.load_frame(e.frame_path, params) for e in entries]
    labels = [list(e.labels) for e in entries]
    return frames, labels


def compare_methods(
    manifest: DatasetManifest,
    model: DRDModel,
    cal: Optional[CalibrationMatrix] = None,
    cfar1: CfarParams = CLASSIC1,
    cfar2: CfarParams = CLASSIC2,
    threshold: float = 0.8,
    split: str = "test",
) -> list[tuple]:
    """Three accuracy rows x three methods, plus the honesty counters.

    Row layout matches the comparison CSV: metric, then values for the
    trained model and both CFAR parameter sets.
    """
    frames, labels = _load_split_frames(manifest, split, model.params)
    if cal is None:
        cal = train_calibration(manifest, model.grid, model.params.array_geometry)
    reports = [
        pooled_accuracy(lambda f: model.infer(f, threshold=threshold), frames, labels),
        pooled_accuracy(lambda f: classic_detect(f, cfar1, cal), frames, labels),
        pooled_accuracy(lambda f: classic_detect(f, cfar2, cal), frames, labels),
    ]
    rows = []
    for metric, attr in (("rd_acc", "rd_accuracy"), ("az_acc", "az_accuracy"),
                         ("el_acc", "el_accuracy")):
        rows.append((metric,) + tuple(getattr(r, attr) for r in reports))
    for metric, attr in (("n_det", "n_det"), ("n_miss", "n_miss"),
                         ("n_false", "n_false_alarm")):
        rows.append((metric,) + tuple(float(getattr(r, attr)) for r in reports))
    return rows


def snr_sweep(
    manifest: DatasetManifest,
    model: DRDModel,
    snr_list: Sequence[float],
    trials: int = 1,
    seed: int = 0,
    cal: Optional[CalibrationMatrix] = None,
    cfar1: CfarParams = CLASSIC1,
    cfar2: CfarParams = CLASSIC2,
    threshold: float = 0.8,
    split: str = "test",
) -> list[tuple]:
    """Accuracy of every method at each SNR, pooled over trials and frames.

    Each (SNR, trial, frame) triple gets one noise realization shared by all
    methods, so the comparison is paired. Rows come out sorted by SNR.
    """
    if not snr_list:
        raise ValueError("need at least one SNR point")
    frames, labels = _load_split_frames(manifest, split, model.params)
    if cal is None:
        cal = train_calibration(manifest, model.grid, model.params.array_geometry)
    methods = [
        ("drd", lambda f: model.infer(f, threshold=threshold)),
        ("classic1", lambda f: classic_detect(f, cfar1, cal)),
        ("classic2", lambda f: classic_detect(f, cfar2, cal)),
    ]
    rows = []
    for si, snr in enumerate(sorted(snr_list)):
        matches = {name: [] for name, _ in methods}
        for trial in range(trials):
            for fi, (frame, labs) in enumerate(zip(frames, labels)):
                noise_seed = int(np.random.SeedSequence(
                    (seed, si, trial, fi)).generate_state(1)[0])
                noisy = add_noise(frame, snr, seed=noise_seed)
                for name, detect in methods:
                    matches[name].append(match_detections(detect(noisy), labs))
        for name, _ in methods:
            rep = accuracy(combine(matches[name]))
            rows.append((float(snr), name, rep.rd_accuracy, rep.az_accuracy,
                         rep.el_accuracy))
    return rows


def ablation_separate_angnet(
    manifest: DatasetManifest,
    model: DRDModel,
    seed: int = 0,
    epochs: int = 60,
    lr: float = 0.01,
    batch_size: int = 40,
    split: str = "test",
) -> list[tuple]:
    """Angle accuracy of the joint model vs a crop-only angle net.

    Both variants are scored on the same ground-truth test crops (teacher
    forcing at evaluation), so the comparison isolates what the global
    feature and class one-hot contribute.
    """
    from .train import train_separate_angnet

    separate = train_separate_angnet(manifest, model, seed=seed, epochs=epochs,
                                     lr=lr, batch_size=batch_size)
    frames, labels = _load_split_frames(manifest, split, model.params)
    n_classes = model.rd_config.n_classes
    joint_az, joint_el, sep_az, sep_el = [], [], [], []
    az_gt, el_gt = [], []
    for frame, labs in zip(frames, labels):
        if not labs:
            continue
        channels = model.frame_channels(frame)
        outs = model.rdnet.forward({"rd": channels}, train=False)
        crops = np.stack([crop3x3(channels[0], lab.r_bin, lab.d_bin) for lab in labs])
        gfeat = np.repeat(outs["gfeat"], len(labs), axis=0)
        onehot = one_hot(np.ones(len(labs), dtype=np.int64), n_classes)
        jout = model.angnet.forward(
            {"crop": crops, "gfeat": gfeat, "onehot": onehot}, train=False)
        sout = separate.forward({"crop": crops}, train=False)
        joint_az.extend(jout["az"].argmax(axis=1).tolist())
        joint_el.extend(jout["el"].argmax(axis=1).tolist())
        sep_az.extend(sout["az"].argmax(axis=1).tolist())
        sep_el.extend(sout["el"].argmax(axis=1).tolist())
        az_gt.extend(lab.az_bin for lab in labs)
        el_gt.extend(lab.el_bin for lab in labs)
    if not az_gt:
        raise ValueError(f"no ground-truth crops in split {split!r}")

    def acc(pred, gt):
        pred, gt = np.asarray(pred), np.asarray(gt)
        return float(100.0 * np.mean(np.abs(pred - gt) <= ANGLE_TOLERANCE))

    return [
        ("az_acc", acc(joint_az, az_gt), acc(sep_az, az_gt)),
        ("el_acc", acc(joint_el, el_gt), acc(sep_el, el_gt)),
    ]
