"""Range/Doppler shift augmentation on raw frames.

Multiplying the dechirped frame by a discrete phase ramp moves every target
by an exact integer number of RD bins (DFT shift theorem), so labels stay
exact without resynthesis. Angles are untouched: the per-antenna phases do
not depend on fast-time or slow-time index.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GroundTruthLabel, RawFrame


@dataclass(frozen=True)
class AugmentShift:
    """Integer RD-bin displacement applied to a frame."""

    dr: int
    dd: int


def shift_bounds(
    labels: Sequence[GroundTruthLabel], n_samples: int, n_chirps: int
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Inclusive (dr, dd) ranges that keep every label on the map.

    The spectral shift itself is circular; these bounds exist so no label
    wraps around a map edge and silently becomes wrong.
    """
    if not labels:
        raise ValueError("need at least one label to bound the shift")
    r_bins = [lab.r_bin for lab in labels]
    d_bins = [lab.d_bin for lab in labels]
    dr_lo, dr_hi = -min(r_bins), n_samples - 1 - max(r_bins)
    dd_lo, dd_hi = -min(d_bins), n_chirps - 1 - max(d_bins)
    return (dr_lo, dr_hi), (dd_lo, dd_hi)


def augment_shift(
    frame: RawFrame, labels: Sequence[GroundTruthLabel], shift: AugmentShift
) -> tuple[RawFrame, list[GroundTruthLabel]]:
    """Apply one integer RD shift to a frame and its labels."""
    dr, dd = int(shift.dr), int(shift.dd)
    ns, nc = frame.params.n_samples, frame.params.n_chirps
    (dr_lo, dr_hi), (dd_lo, dd_hi) = shift_bounds(labels, ns, nc)
    if not (dr_lo <= dr <= dr_hi and dd_lo <= dd <= dd_hi):
        raise ValueError(f"shift ({dr}, {dd}) would push a label off the map")
    n = np.arange(ns)
    c = np.arange(nc)
    ramp = np.exp(2j * np.pi * dr * n / ns)[:, None, None] * np.exp(
        2j * np.pi * dd * c / nc
    )[None, :, None]
    shifted = RawFrame(params=frame.params, data=(frame.data * ramp).astype(np.complex64))
    moved = [
        dataclasses.replace(lab, r_bin=lab.r_bin + dr, d_bin=lab.d_bin + dd)
        for lab in labels
    ]
    return shifted, moved


def random_augment(
    frame: RawFrame,
    labels: Sequence[GroundTruthLabel],
    rng: np.random.Generator,
) -> tuple[RawFrame, list[GroundTruthLabel], AugmentShift]:
    """Draw a uniform feasible shift and apply it.

    The zero shift is always feasible for in-bounds labels, so the draw never
    fails; it may well return the identity.
    """
    ns, nc = frame.params.n_samples, frame.params.n_chirps
    (dr_lo, dr_hi), (dd_lo, dd_hi) = shift_bounds(labels, ns, nc)
    shift = AugmentShift(
        dr=int(rng.integers(dr_lo, dr_hi + 1)),
        dd=int(rng.integers(dd_lo, dd_hi + 1)),
    )
    shifted, moved = augment_shift(frame, labels, shift)
    return shifted, moved, shift
