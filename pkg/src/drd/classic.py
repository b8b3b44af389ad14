"""Conventional detection chain: windowed 2D FFT, noise-floor pre-gate,
2D cell-averaging CFAR and Bartlett beamforming against a calibration matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    AngleGrid,
    Detection4D,
    RadarParams,
    RawFrame,
    RDMap,
)

_WINDOWS = {
    "hamming": np.hamming,
    "hann": np.hanning,
    "rect": np.ones,
}


@dataclass(frozen=True)
class CfarParams:
    """CA-CFAR window sizes (Chebyshev half-widths) and thresholds in dB."""

    window_size: int
    guard_size: int
    alpha_db: float = 16.0
    pregate_margin_db: float = 10.0

    def __post_init__(self):
        if not self.window_size > self.guard_size >= 0:
            raise ValueError("need window_size > guard_size >= 0")
        if self.alpha_db < 0:
            raise ValueError("alpha_db must be >= 0")


# the two parameter sets evaluated against the network
CLASSIC1 = CfarParams(window_size=5, guard_size=1)
CLASSIC2 = CfarParams(window_size=10, guard_size=3)


@dataclass(frozen=True)
class CalibrationMatrix:
    """Steering vectors of one radar over all angle-grid cells (azimuth-major columns)."""

    radar_id: str
    grid: AngleGrid
    matrix: np.ndarray  # (Nant, n_az * n_el) complex

    def __post_init__(self):
        m = np.ascontiguousarray(self.matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[1] != self.grid.n_cells:
            raise ValueError("calibration matrix shape does not match grid")
        if not np.all(np.isfinite(m.view(np.float64))):
            raise ValueError("calibration matrix has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_antennas(self) -> int:
        return self.matrix.shape[0]


def rd_transform(frame: RawFrame, window_kind: str = "hamming") -> RDMap:
    """Window both fast/slow time axes and 2D-FFT a frame into an RD map.

    Samples map to range bins, chirps to Doppler bins; the Doppler axis is
    FFT-shifted so zero velocity sits at bin Nc/2.
    """
    try:
        win = _WINDOWS[window_kind]
    except KeyError:
        raise ValueError(f"unknown window kind {window_kind!r}") from None
    ns, nc = frame.params.n_samples, frame.params.n_chirps
    w_r = win(ns).astype(np.float64)
    w_d = win(nc).astype(np.float64)
    x = frame.data.astype(np.complex128) * w_r[:, None, None] * w_d[None, :, None]
    spec = np.fft.fft(np.fft.fft(x, axis=0), axis=1)
    return RDMap(data=np.fft.fftshift(spec, axes=1))


def estimate_noise_floor(
    rd: RDMap,
    exclusion: Sequence[tuple[int, int]] = (),
    radius: int = 2,
) -> float:
    """Median per-cell energy in dB (summed over antennas) outside excluded regions.

    ``exclusion`` lists (r, d) cells; every cell within Chebyshev ``radius`` of
    one of them is dropped. Errors if fewer than 25% of the cells remain.
    """
    energy = rd.cell_energy()
    keep = np.ones(energy.shape, dtype=bool)
    for r, d in exclusion:
        r0, r1 = max(0, r - radius), min(energy.shape[0], r + radius + 1)
        d0, d1 = max(0, d - radius), min(energy.shape[1], d + radius + 1)
        keep[r0:r1, d0:d1] = False
    n_keep = int(keep.sum())
    if n_keep < 0.25 * energy.size:
        raise ValueError("exclusion covers too much of the map")
    med = float(np.median(energy[keep]))
    if med <= 0.0:
        return -math.inf
    return 10.0 * math.log10(med)


def _box_sums(emap: np.ndarray, half: int) -> tuple[np.ndarray, np.ndarray]:
    """Clipped (2*half+1)^2 box sums and box cell counts via integral images."""
    nr, nd = emap.shape
    ii = np.zeros((nr + 1, nd + 1), dtype=np.float64)
    ii[1:, 1:] = np.cumsum(np.cumsum(emap, axis=0), axis=1)
    r = np.arange(nr)
    d = np.arange(nd)
    r0 = np.clip(r - half, 0, nr)[:, None]
    r1 = np.clip(r + half + 1, 0, nr)[:, None]
    d0 = np.clip(d - half, 0, nd)[None, :]
    d1 = np.clip(d + half + 1, 0, nd)[None, :]
    sums = ii[r1, d1] - ii[r0, d1] - ii[r1, d0] + ii[r0, d0]
    counts = (r1 - r0) * (d1 - d0)
    return sums, counts.astype(np.int64)


def _cfar_maps(
    energy_map: np.ndarray, params: CfarParams, noise_floor_db: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Detection mask plus the annulus mean and pregate mask behind it."""
    emap = np.asarray(energy_map, dtype=np.float64)
    if emap.ndim != 2:
        raise ValueError("energy map must be 2-d")
    if np.any(emap < 0):
        raise ValueError("energy map must hold linear (non-negative) energies")
    win_sum, win_cnt = _box_sums(emap, params.window_size)
    grd_sum, grd_cnt = _box_sums(emap, params.guard_size)
    ann_sum = win_sum - grd_sum
    ann_cnt = win_cnt - grd_cnt
    pregate_lin = 10.0 ** ((noise_floor_db + params.pregate_margin_db) / 10.0)
    alpha = 10.0 ** (params.alpha_db / 10.0)
    tested = emap > pregate_lin
    decidable = ann_cnt > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.where(decidable, ann_sum / np.maximum(ann_cnt, 1), np.inf)
    detected = tested & decidable & (emap > alpha * y)
    return detected, y, tested


def ca_cfar(
    energy_map: np.ndarray, params: CfarParams, noise_floor_db: float
) -> list[tuple[int, int]]:
    """2D CA-CFAR over a linear energy map.

    Cells are pre-gated at ``noise_floor_db + pregate_margin_db``; surviving
    cells are declared detections when their energy exceeds ``alpha`` times the
    mean linear energy of the square reference annulus (guard cells excluded,
    edges clipped). Cells whose clipped annulus is empty are undecidable and
    never detected. Returns (r, d) pairs in lexicographic order.
    """
    detected, _, _ = _cfar_maps(energy_map, params, noise_floor_db)
    rr, dd = np.nonzero(detected)
    return [(int(r), int(d)) for r, d in zip(rr, dd)]


def local_max_nms(
    detections: Sequence[tuple[int, int]],
    energy_map: np.ndarray,
    radius: int = 1,
) -> list[tuple[int, int]]:
    """Keep detections that dominate their Chebyshev neighborhood.

    A detection survives when no cell within ``radius`` has strictly greater
    energy and no equal-energy cell precedes it in (r, d) lexicographic order.
    """
    emap = np.asarray(energy_map, dtype=np.float64)
    nr, nd = emap.shape
    out = []
    for r, d in detections:
        e0 = emap[r, d]
        r0, r1 = max(0, r - radius), min(nr, r + radius + 1)
        d0, d1 = max(0, d - radius), min(nd, d + radius + 1)
        window = emap[r0:r1, d0:d1]
        if np.any(window > e0):
            continue
        ties_r, ties_d = np.nonzero(window == e0)
        first = min(zip(ties_r + r0, ties_d + d0))
        if (r, d) == (int(first[0]), int(first[1])):
            out.append((r, d))
    return out


def bartlett_doa(snapshot: np.ndarray, cal: CalibrationMatrix) -> tuple[int, int]:
    """Matched-filter direction estimate: argmax over calibration columns of
    |a^H s|^2 / (a^H a). Ties resolve toward the lower column index."""
    s = np.asarray(snapshot, dtype=np.complex128).reshape(-1)
    if s.shape[0] != cal.n_antennas:
        raise ValueError("snapshot length does not match calibration matrix")
    if not np.any(s):
        raise ValueError("zero snapshot: no signal to beamform")
    proj = cal.matrix.conj().T @ s
    norms = np.sum(cal.matrix.conj() * cal.matrix, axis=0).real
    power = (proj.real**2 + proj.imag**2) / norms
    return cal.grid.unflatten(int(np.argmax(power)))


def ideal_calibration(
    grid: AngleGrid, geometry: Sequence[tuple[float, float]], radar_id: str = "ideal"
) -> CalibrationMatrix:
    """Unperturbed steering-vector table over the whole grid."""
    from .sim import steering_vector  # local import; sim depends on this module

    cols = np.empty((len(geometry), grid.n_cells), dtype=np.complex128)
    for az_bin in range(grid.n_az):
        for el_bin in range(grid.n_el):
            cols[:, grid.flat_index(az_bin, el_bin)] = steering_vector(
                grid.az_of_bin(az_bin), grid.el_of_bin(el_bin), geometry
            )
    return CalibrationMatrix(radar_id=radar_id, grid=grid, matrix=cols)


def average_calibration(mats: Sequence[CalibrationMatrix]) -> CalibrationMatrix:
    """Elementwise complex mean of several calibration matrices."""
    if not mats:
        raise ValueError("need at least one calibration matrix")
    ref = mats[0]
    for m in mats[1:]:
        if m.matrix.shape != ref.matrix.shape or m.grid != ref.grid:
            raise ValueError("calibration matrices must share shape and grid")
    mean = np.mean([m.matrix for m in mats], axis=0)
    return CalibrationMatrix(
        radar_id=f"avg{len(mats)}", grid=ref.grid, matrix=mean
    )


def _score_from_margin_db(margin_db: float, scale_db: float = 4.0) -> float:
    """Logistic squash of the dB margin over the CFAR threshold into [0, 1]."""
    return float(1.0 / (1.0 + math.exp(-margin_db / scale_db)))


def classic_detect(
    frame: RawFrame,
    cfar_params: CfarParams,
    cal: CalibrationMatrix,
    window_kind: str = "hamming",
    nms_radius: int = 1,
) -> list[Detection4D]:
    """Full conventional chain on one frame.

    2D FFT -> noise-floor estimate -> CA-CFAR on antenna-summed energy ->
    local-max suppression -> Bartlett DOA per surviving cell.
    """
    rd = rd_transform(frame, window_kind)
    energy = rd.cell_energy()
    floor_db = estimate_noise_floor(rd)
    detected, y, _ = _cfar_maps(energy, cfar_params, floor_db)
    rr, dd = np.nonzero(detected)
    hits = [(int(r), int(d)) for r, d in zip(rr, dd)]
    alpha = 10.0 ** (cfar_params.alpha_db / 10.0)
    out = []
    for r, d in local_max_nms(hits, energy, nms_radius):
        az_bin, el_bin = bartlett_doa(rd.data[r, d, :], cal)
        margin_db = 10.0 * math.log10(energy[r, d] / (alpha * y[r, d]))
        out.append(
            Detection4D(
                r_bin=r,
                d_bin=d,
                az_bin=az_bin,
                el_bin=el_bin,
                class_label=1,
                score=_score_from_margin_db(margin_db),
            )
        )
    return out
