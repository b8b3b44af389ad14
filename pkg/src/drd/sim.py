"""Synthetic calibration-style radar frames.

Replaces anechoic-chamber acquisition: each synthetic radar is a copy of the
nominal array with small fixed per-antenna complex gain errors, and every
frame holds a corner-reflector-like point target at a known position. The
signal model is the standard dechirped beat: per-sample phase encodes range,
per-chirp phase encodes Doppler, per-antenna phase is the steering vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classic import CalibrationMatrix, estimate_noise_floor, rd_transform
from .core import (
    C_LIGHT,
    AngleGrid,
    GroundTruthLabel,
    RadarParams,
    RawFrame,
    bin_of_doppler,
    bin_of_range,
    range_of_bin,
)


@dataclass(frozen=True)
class TargetSpec:
    """One point target in physical units."""

    range_m: float
    velocity: float = 0.0
    azimuth: float = 0.0
    elevation: float = 0.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class ChannelPerturbation:
    """Fixed per-antenna complex gain error of one radar unit."""

    radar_id: str
    gains_db: tuple[float, ...]
    phases_deg: tuple[float, ...]

    def __post_init__(self):
        if len(self.gains_db) != len(self.phases_deg):
            raise ValueError("gain and phase lists must have equal length")
        vals = self.gains_db + self.phases_deg
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("perturbation gains must be finite")

    def __len__(self) -> int:
        return len(self.gains_db)

    def complex_gains(self) -> np.ndarray:
        amp = 10.0 ** (np.asarray(self.gains_db) / 20.0)
        ph = np.deg2rad(np.asarray(self.phases_deg))
        return amp * np.exp(1j * ph)

    @classmethod
    def identity(cls, n_antennas: int, radar_id: str = "ideal") -> "ChannelPerturbation":
        return cls(radar_id=radar_id, gains_db=(0.0,) * n_antennas, phases_deg=(0.0,) * n_antennas)

    @classmethod
    def random(
        cls,
        n_antennas: int,
        radar_id: str,
        rng: np.random.Generator,
        gain_sigma_db: float = 0.5,
        phase_sigma_deg: float = 5.0,
    ) -> "ChannelPerturbation":
        return cls(
            radar_id=radar_id,
            gains_db=tuple(float(g) for g in rng.normal(0.0, gain_sigma_db, n_antennas)),
            phases_deg=tuple(float(p) for p in rng.normal(0.0, phase_sigma_deg, n_antennas)),
        )


def steering_vector(
    az_deg: float,
    el_deg: float,
    geometry: Sequence[tuple[float, float]],
    perturbation: Optional[ChannelPerturbation] = None,
) -> np.ndarray:
    """Array response to a unit source at (az, el).

    Element a is g_a * exp(j*2*pi*(x_a*sin(az)*cos(el) + y_a*sin(el))) with
    positions in wavelength units; g_a = 1 without a perturbation.
    """
    geom = np.asarray(geometry, dtype=np.float64)
    if geom.ndim != 2 or geom.shape[1] != 2:
        raise ValueError("geometry must be a sequence of (x, y) pairs")
    az = math.radians(az_deg)
    el = math.radians(el_deg)
    u = math.sin(az) * math.cos(el)
    v = math.sin(el)
    phase = 2.0 * np.pi * (geom[:, 0] * u + geom[:, 1] * v)
    sv = np.exp(1j * phase)
    if perturbation is not None:
        if len(perturbation) != geom.shape[0]:
            raise ValueError("perturbation length does not match geometry")
        sv = sv * perturbation.complex_gains()
    return sv


def _validate_target(t: TargetSpec, params: RadarParams, grid: AngleGrid) -> tuple[int, int]:
    r_bin = bin_of_range(t.range_m, params)
    d_bin = bin_of_doppler(t.velocity, params)
    if not grid.az_min <= t.azimuth <= grid.az_max:
        raise ValueError(f"target azimuth {t.azimuth} outside grid span")
    if not grid.el_min <= t.elevation <= grid.el_max:
        raise ValueError(f"target elevation {t.elevation} outside grid span")
    return r_bin, d_bin


def synthesize_frame(
    targets: Sequence[TargetSpec],
    params: RadarParams,
    grid: AngleGrid,
    perturbation: Optional[ChannelPerturbation] = None,
    noise_snr_db: Optional[float] = None,
    seed: int = 0,
) -> tuple[RawFrame, list[GroundTruthLabel]]:
    """Dechirped beat-signal frame for a list of point targets.

    data[n,c,a] = sum_t A * exp(j*2*pi*(f_b*n/fs + f_d*c*T_chirp)) * s_a(az,el)
    with beat frequency f_b = 2*slope*R/c and Doppler f_d = 2*v*fc/c. Labels
    carry the quantized bins. With ``noise_snr_db`` set, complex white noise is
    scaled so the RD-domain peak sits that many dB above the noise floor.
    """
    if not targets:
        raise ValueError("need at least one target")
    ns, nc, na = params.n_samples, params.n_chirps, params.n_antennas
    n = np.arange(ns, dtype=np.float64)
    c = np.arange(nc, dtype=np.float64)
    data = np.zeros((ns, nc, na), dtype=np.complex128)
    labels = []
    radar_id = perturbation.radar_id if perturbation is not None else "ideal"
    for t in targets:
        r_bin, d_bin = _validate_target(t, params, grid)
        f_beat = 2.0 * params.chirp_slope * t.range_m / C_LIGHT
        f_dopp = 2.0 * t.velocity * params.carrier / C_LIGHT
        fast = np.exp(2j * np.pi * f_beat * n / params.sample_rate)
        slow = np.exp(2j * np.pi * f_dopp * c * params.chirp_duration)
        sv = steering_vector(t.azimuth, t.elevation, params.array_geometry, perturbation)
        data += t.amplitude * fast[:, None, None] * slow[None, :, None] * sv[None, None, :]
        labels.append(
            GroundTruthLabel(
                r_bin=r_bin,
                d_bin=d_bin,
                az_bin=grid.bin_of_az(t.azimuth),
                el_bin=grid.bin_of_el(t.elevation),
                radar_id=radar_id,
                snr_db=noise_snr_db if noise_snr_db is not None else float("inf"),
            )
        )
    frame = RawFrame(params=params, data=data.astype(np.complex64))
    if noise_snr_db is not None and not math.isinf(noise_snr_db):
        frame = add_noise(frame, noise_snr_db, seed)
    return frame, labels


def add_noise(frame: RawFrame, snr_db: float, seed: int = 0) -> RawFrame:
    """Add complex white Gaussian noise at a target RD-domain SNR.

    SNR is peak cell energy (summed over antennas) over the noise floor, both
    measured in the RD domain; the noise realization itself is transformed to
    calibrate its floor, so the requested ratio holds per realization. An
    infinite ``snr_db`` returns the frame unchanged.
    """
    if snr_db is None or math.isinf(snr_db):
        return frame
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    shape = frame.data.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    clean_energy = rd_transform(frame).cell_energy()
    peak_db = 10.0 * math.log10(float(clean_energy.max()))
    noise_rd = rd_transform(RawFrame(params=frame.params, data=noise.astype(np.complex64)))
    floor_db = estimate_noise_floor(noise_rd)
    scale = 10.0 ** ((peak_db - floor_db - snr_db) / 20.0)
    return RawFrame(params=frame.params, data=frame.data + scale * noise)


def measured_calibration(
    grid: AngleGrid,
    geometry: Sequence[tuple[float, float]],
    perturbation: ChannelPerturbation,
) -> CalibrationMatrix:
    """Steering-vector table of one perturbed radar over the whole grid,
    standing in for an anechoic-chamber calibration measurement."""
    cols = np.empty((len(geometry), grid.n_cells), dtype=np.complex128)
    for az_bin in range(grid.n_az):
        for el_bin in range(grid.n_el):
            cols[:, grid.flat_index(az_bin, el_bin)] = steering_vector(
                grid.az_of_bin(az_bin), grid.el_of_bin(el_bin), geometry, perturbation
            )
    return CalibrationMatrix(radar_id=perturbation.radar_id, grid=grid, matrix=cols)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    frame_path: str
    label_path: str
    radar_id: str
    split: str
    labels: tuple[GroundTruthLabel, ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    perturbations: tuple[ChannelPerturbation, ...] = ()

    def __post_init__(self):
        by_split: dict[str, set[str]] = {}
        for e in self.entries:
            by_split.setdefault(e.split, set()).add(e.radar_id)
        splits = list(by_split)
        for i, a in enumerate(splits):
            for b in splits[i + 1 :]:
                if by_split[a] & by_split[b]:
                    raise ValueError(f"radar appears in both {a} and {b} splits")

    def split(self, tag: str) -> tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == tag)

    def radar_ids(self, split: Optional[str] = None) -> tuple[str, ...]:
        ids = []
        for e in self.entries:
            if split is not None and e.split != split:
                continue
            if e.radar_id not in ids:
                ids.append(e.radar_id)
        return tuple(ids)

    def perturbation_of(self, radar_id: str) -> ChannelPerturbation:
        for p in self.perturbations:
            if p.radar_id == radar_id:
                return p
        raise KeyError(radar_id)


@dataclass(frozen=True)
class SimConfig:
    """Calibration dataset layout: one on-center target per frame at a fixed
    range bin and zero Doppler, angles swept uniformly over the grid."""

    n_radars: int = 20
    frames_per_radar: int = 100
    range_bin: int = 10
    gain_sigma_db: float = 0.5
    phase_sigma_deg: float = 5.0
    noise_snr_db: float = float("inf")

    def __post_init__(self):
        if self.n_radars < 1 or self.frames_per_radar < 1:
            raise ValueError("counts must be >= 1")


def split_radars(n_radars: int, seed: int) -> list[str]:
    """Split tags per radar index: floor(0.1N) val, floor(0.3N) test, train
    takes the remainder. Assignment order is a seeded shuffle."""
    n_val = int(0.1 * n_radars)
    n_test = int(0.3 * n_radars)
    n_train = n_radars - n_val - n_test
    order = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED))).permutation(n_radars)
    tags = [""] * n_radars
    for pos, idx in enumerate(order):
        if pos < n_train:
            tags[idx] = "train"
        elif pos < n_train + n_val:
            tags[idx] = "val"
        else:
            tags[idx] = "test"
    return tags


def _frame_rng(seed: int, radar_idx: int, frame_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, radar_idx, frame_idx)))


def generate_calibration_dataset(
    out_dir,
    config: SimConfig,
    params: RadarParams,
    grid: AngleGrid,
    seed: int = 0,
) -> DatasetManifest:
    """Write calibration-style frames for ``n_radars`` synthetic radars.

    Each radar draws one fixed channel perturbation; each of its frames holds
    a single unit target at ``config.range_bin`` / zero Doppler with grid-cell
    angles drawn per frame. Splits partition radars 0.6/0.1/0.3.
    """
    from . import storage  # deferred: storage depends on sim types

    out_dir = storage.ensure_dir(out_dir)
    tags = split_radars(config.n_radars, seed)
    r_fixed = range_of_bin(config.range_bin, params)
    entries = []
    perturbations = []
    for radar_idx in range(config.n_radars):
        radar_id = f"radar{radar_idx:03d}"
        pert = ChannelPerturbation.random(
            params.n_antennas,
            radar_id,
            np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE, radar_idx))),
            gain_sigma_db=config.gain_sigma_db,
            phase_sigma_deg=config.phase_sigma_deg,
        )
        perturbations.append(pert)
        for frame_idx in range(config.frames_per_radar):
            rng = _frame_rng(seed, radar_idx, frame_idx)
            az_bin = int(rng.integers(0, grid.n_az))
            el_bin = int(rng.integers(0, grid.n_el))
            target = TargetSpec(
                range_m=r_fixed,
                velocity=0.0,
                azimuth=grid.az_of_bin(az_bin),
                elevation=grid.el_of_bin(el_bin),
            )
            frame_seed = int(rng.integers(0, 2**31 - 1))
            snr = None if math.isinf(config.noise_snr_db) else config.noise_snr_db
            frame, labels = synthesize_frame(
                [target], params, grid, perturbation=pert, noise_snr_db=snr, seed=frame_seed
            )
            stem = f"{radar_id}_f{frame_idx:04d}"
            frame_path = out_dir / f"{stem}.drdf"
            label_path = out_dir / f"{stem}.labels"
            storage.save_frame(frame_path, frame)
            storage.save_labels(label_path, labels)
            entries.append(
                ManifestEntry(
                    frame_path=str(frame_path),
                    label_path=str(label_path),
                    radar_id=radar_id,
                    split=tags[radar_idx],
                    labels=tuple(labels),
                )
            )
    manifest = DatasetManifest(entries=tuple(entries), perturbations=tuple(perturbations))
    storage.save_manifest(out_dir / "manifest.txt", manifest)
    storage.save_radars(out_dir / "radars.csv", manifest, tags_by_id={
        p.radar_id: tags[i] for i, p in enumerate(perturbations)
    })
    return manifest
