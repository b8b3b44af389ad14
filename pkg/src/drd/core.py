"""Shared radar domain types, complex-cube containers and bin/unit conversions.

Conventions used throughout the package:

* A raw frame is a complex cube indexed ``[sample][chirp][antenna]``.
* A range-Doppler (RD) map is a complex cube ``[range_bin][doppler_bin][antenna]``
  with the Doppler axis FFT-shifted so zero velocity sits at bin ``Nc/2``.
* Antenna positions are given in wavelength units as ``(x, y)`` pairs; ``x``
  spans azimuth, ``y`` spans elevation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

C_LIGHT = 299_792_458.0  # m/s


# ---------------------------------------------------------------------------
# parameter blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadarParams:
    """Waveform and array description of one radar unit.

    Attributes
    ----------
    n_samples : samples per chirp (fast time, range axis after FFT)
    n_chirps : chirps per frame (slow time, Doppler axis after FFT)
    n_antennas : receive (virtual) elements
    bandwidth : chirp sweep bandwidth in Hz
    chirp_duration : single chirp duration in s
    carrier : carrier frequency in Hz
    sample_rate : ADC rate in Hz
    array_geometry : per-antenna (x, y) positions in wavelength units
    """

    n_samples: int
    n_chirps: int
    n_antennas: int
    bandwidth: float
    chirp_duration: float
    carrier: float
    sample_rate: float
    array_geometry: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if min(self.n_samples, self.n_chirps, self.n_antennas) < 1:
            raise ValueError("counts must be >= 1")
        for name in ("bandwidth", "chirp_duration", "carrier", "sample_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        geom = tuple((float(x), float(y)) for x, y in self.array_geometry)
        if len(geom) != self.n_antennas:
            raise ValueError("array_geometry length must equal n_antennas")
        object.__setattr__(self, "array_geometry", geom)

    @property
    def chirp_slope(self) -> float:
        """Frequency modulation rate of the chirp in Hz/s."""
        return self.bandwidth / self.chirp_duration

    @property
    def range_bin_width(self) -> float:
        return C_LIGHT * self.sample_rate / (2.0 * self.chirp_slope * self.n_samples)

    @property
    def doppler_bin_width(self) -> float:
        return C_LIGHT / (2.0 * self.carrier * self.n_chirps * self.chirp_duration)


def uniform_rect_array(n_x: int, n_y: int, spacing: float = 0.5) -> tuple[tuple[float, float], ...]:
    """Rectangular virtual array laid out row by row (elevation-major rows)."""
    return tuple((spacing * ix, spacing * iy) for iy in range(n_y) for ix in range(n_x))


def default_params() -> RadarParams:
    """Desk-scale defaults: 64x64 frame, 4x2 half-wavelength virtual array at 77 GHz."""
    n_samples = 64
    chirp_duration = 50e-6
    return RadarParams(
        n_samples=n_samples,
        n_chirps=64,
        n_antennas=8,
        bandwidth=500e6,
        chirp_duration=chirp_duration,
        carrier=77e9,
        sample_rate=n_samples / chirp_duration,
        array_geometry=uniform_rect_array(4, 2),
    )


@dataclass(frozen=True)
class AngleGrid:
    """Uniform azimuth/elevation discretization for the angle classification heads."""

    n_az: int = 32
    n_el: int = 16
    az_min: float = -60.0
    az_max: float = 60.0
    el_min: float = -20.0
    el_max: float = 20.0

    def __post_init__(self):
        if self.n_az < 1 or self.n_el < 1:
            raise ValueError("grid sizes must be >= 1")
        if self.az_min >= self.az_max or self.el_min >= self.el_max:
            raise ValueError("grid spans must satisfy min < max")

    @property
    def n_cells(self) -> int:
        return self.n_az * self.n_el

    def az_of_bin(self, k: int) -> float:
        if not 0 <= k < self.n_az:
            raise ValueError(f"azimuth bin {k} out of range")
        if self.n_az == 1:
            return self.az_min
        return self.az_min + k * (self.az_max - self.az_min) / (self.n_az - 1)

    def el_of_bin(self, k: int) -> float:
        if not 0 <= k < self.n_el:
            raise ValueError(f"elevation bin {k} out of range")
        if self.n_el == 1:
            return self.el_min
        return self.el_min + k * (self.el_max - self.el_min) / (self.n_el - 1)

    def bin_of_az(self, az: float) -> int:
        if not self.az_min <= az <= self.az_max:
            raise ValueError(f"azimuth {az} outside grid span")
        if self.n_az == 1:
            return 0
        return int(round((az - self.az_min) * (self.n_az - 1) / (self.az_max - self.az_min)))

    def bin_of_el(self, el: float) -> int:
        if not self.el_min <= el <= self.el_max:
            raise ValueError(f"elevation {el} outside grid span")
        if self.n_el == 1:
            return 0
        return int(round((el - self.el_min) * (self.n_el - 1) / (self.el_max - self.el_min)))

    def flat_index(self, az_bin: int, el_bin: int) -> int:
        """Column index of a grid cell, azimuth-major."""
        if not (0 <= az_bin < self.n_az and 0 <= el_bin < self.n_el):
            raise ValueError("grid bin out of range")
        return az_bin * self.n_el + el_bin

    def unflatten(self, idx: int) -> tuple[int, int]:
        if not 0 <= idx < self.n_cells:
            raise ValueError("flat index out of range")
        return idx // self.n_el, idx % self.n_el


# ---------------------------------------------------------------------------
# data cubes
# ---------------------------------------------------------------------------

def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RawFrame:
    """One frame of sampled echoes, complex64 cube [sample][chirp][antenna]."""

    params: RadarParams
    data: np.ndarray

    def __post_init__(self):
        expected = (self.params.n_samples, self.params.n_chirps, self.params.n_antennas)
        data = np.ascontiguousarray(self.data, dtype=np.complex64)
        if data.shape != expected:
            raise ValueError(f"frame shape {data.shape} does not match params {expected}")
        if not np.all(np.isfinite(data.view(np.float32))):
            raise ValueError("frame contains non-finite values")
        object.__setattr__(self, "data", _freeze(data))


@dataclass(frozen=True)
class RDMap:
    """Range-Doppler cube [range_bin][doppler_bin][antenna], Doppler axis centered."""

    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data)
        if data.ndim != 3 or not np.iscomplexobj(data):
            raise ValueError("RD map must be a complex 3-d cube")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def n_range(self) -> int:
        return self.data.shape[0]

    @property
    def n_doppler(self) -> int:
        return self.data.shape[1]

    @property
    def n_antennas(self) -> int:
        return self.data.shape[2]

    def cell_energy(self) -> np.ndarray:
        """Per-cell linear energy summed over antennas, float64 (Nr, Nd)."""
        d = self.data.astype(np.complex128, copy=False)
        return np.sum(d.real**2 + d.imag**2, axis=2)

    def to_channels(self) -> np.ndarray:
        """Real-channel view (2*Nant, Nr, Nd) float32; channel 2a = Re, 2a+1 = Im of antenna a."""
        out = np.empty((2 * self.n_antennas, self.n_range, self.n_doppler), dtype=np.float32)
        moved = np.moveaxis(self.data, 2, 0)
        out[0::2] = moved.real.astype(np.float32)
        out[1::2] = moved.imag.astype(np.float32)
        return out

    @classmethod
    def from_channels(cls, channels: np.ndarray) -> "RDMap":
        """Inverse of :meth:`to_channels` (lossless re-interleaving)."""
        if channels.ndim != 3 or channels.shape[0] % 2:
            raise ValueError("channel cube must have an even channel count")
        cube = channels[0::2].astype(np.float32) + 1j * channels[1::2].astype(np.float32)
        return cls(data=np.moveaxis(cube.astype(np.complex64), 0, 2))


# ---------------------------------------------------------------------------
# detections and labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Detection4D:
    """A detection in (range, Doppler, azimuth, elevation) bin space.

    ``az_bin``/``el_bin`` are ``None`` between the detection and angle
    estimation stages.
    """

    r_bin: int
    d_bin: int
    az_bin: Optional[int]
    el_bin: Optional[int]
    class_label: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must lie in [0, 1]")


@dataclass(frozen=True)
class GroundTruthLabel:
    r_bin: int
    d_bin: int
    az_bin: int
    el_bin: int
    radar_id: str = "ideal"
    snr_db: float = float("inf")


# ---------------------------------------------------------------------------
# scalar conversions
# ---------------------------------------------------------------------------

def energy_db(c) -> np.ndarray | float:
    """10*log10(|c|^2); zero magnitude maps to -inf."""
    mag2 = np.abs(np.asarray(c)) ** 2
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(mag2)
    if out.ndim == 0:
        return float(out)
    return out


def range_of_bin(k: int, params: RadarParams) -> float:
    """Center range (m) of range bin ``k``."""
    if not 0 <= k < params.n_samples:
        raise ValueError(f"range bin {k} out of [0, {params.n_samples})")
    return k * params.range_bin_width


def bin_of_range(r: float, params: RadarParams) -> int:
    """Nearest range bin of a physical range; errors if outside the map."""
    k = int(round(r / params.range_bin_width))
    if not 0 <= k < params.n_samples:
        raise ValueError(f"range {r} m outside unambiguous span")
    return k


def doppler_of_bin(k: int, params: RadarParams) -> float:
    """Radial velocity (m/s) of Doppler bin ``k``; bin Nc/2 is zero velocity."""
    if not 0 <= k < params.n_chirps:
        raise ValueError(f"doppler bin {k} out of [0, {params.n_chirps})")
    return (k - params.n_chirps // 2) * params.doppler_bin_width


def bin_of_doppler(v: float, params: RadarParams) -> int:
    k = int(round(v / params.doppler_bin_width)) + params.n_chirps // 2
    if not 0 <= k < params.n_chirps:
        raise ValueError(f"velocity {v} m/s outside unambiguous span")
    return k
