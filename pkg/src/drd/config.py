"""Plain key=value run configuration.

One flat namespace of dotted keys covers the radar, the angle grid, dataset
generation, both networks, the training schedule, CFAR parameters, and the
experiment settings. Unknown keys are rejected; values are validated by
building every domain object once at load time. ``to_text`` produces the
canonical echo embedded in output artifacts, and parsing that echo
reproduces the config exactly.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from .classic import CfarParams
from .core import AngleGrid, RadarParams, uniform_rect_array
from .model import AngNetConfig, RDNetConfig
from .sim import SimConfig
from .train import TrainSchedule

# key -> (kind, default); kinds: int, float, str, ints, floats
_SCHEMA = {
    "seed": ("int", 0),
    "radar.n_samples": ("int", 64),
    "radar.n_chirps": ("int", 64),
    "radar.n_antennas": ("int", 8),
    "radar.bandwidth": ("float", 500e6),
    "radar.chirp_duration": ("float", 50e-6),
    "radar.carrier": ("float", 77e9),
    "radar.sample_rate": ("float", -1.0),  # <= 0: derived as n_samples / chirp_duration
    "radar.array_nx": ("int", 4),
    "radar.array_ny": ("int", 2),
    "radar.array_spacing": ("float", 0.5),
    "grid.n_az": ("int", 32),
    "grid.n_el": ("int", 16),
    "grid.az_min": ("float", -60.0),
    "grid.az_max": ("float", 60.0),
    "grid.el_min": ("float", -20.0),
    "grid.el_max": ("float", 20.0),
    "sim.n_radars": ("int", 20),
    "sim.frames_per_radar": ("int", 100),
    "sim.range_bin": ("int", 10),
    "sim.gain_sigma_db": ("float", 0.5),
    "sim.phase_sigma_deg": ("float", 5.0),
    "sim.noise_snr_db": ("float", float("inf")),
    "model.encoder_widths": ("ints", (64, 128, 256)),
    "model.n_classes": ("int", 2),
    "model.conv_channels": ("int", 256),
    "model.fc_widths": ("ints", (512, 256, 128)),
    "model.dropout": ("float", 0.2),
    "train.lr0": ("float", 1e-3),
    "train.beta1": ("float", 0.9),
    "train.beta2": ("float", 0.999),
    "train.weight_decay": ("float", 5e-4),
    "train.batch_size": ("int", 15),
    "train.rd_only_epochs": ("int", 5),
    "train.total_epochs": ("int", 250),
    "train.gamma": ("float", 0.1),
    "train.decay_steps": ("ints", (5000, 60000, 100000)),
    "train.lambda1": ("float", 1.0),
    "train.lambda2": ("float", 1.0),
    "train.threshold": ("float", 0.8),
    "train.augment": ("int", 1),
    "train.finetune_lr": ("float", 1e-4),
    "train.finetune_epochs": ("int", 200),
    "train.noise_lo": ("float", 0.0),
    "train.noise_hi": ("float", 40.0),
    "cfar.alpha_db": ("float", 16.0),
    "cfar.pregate_margin_db": ("float", 10.0),
    "cfar1.window": ("int", 5),
    "cfar1.guard": ("int", 1),
    "cfar2.window": ("int", 10),
    "cfar2.guard": ("int", 3),
    "eval.snr_list": ("floats", (0.0, 10.0, 20.0, 30.0, 40.0)),
    "eval.trials": ("int", 1),
    "ablation.lr": ("float", 0.01),
    "ablation.batch_size": ("int", 40),
    "ablation.epochs": ("int", 60),
}


def _parse(kind: str, raw: str):
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "ints":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if kind == "floats":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    def __init__(self, overrides: Optional[dict] = None):
        self._values = {k: default for k, (_, default) in _SCHEMA.items()}
        for key, value in (overrides or {}).items():
            if key not in _SCHEMA:
                raise ValueError(f"unknown config key {key!r}")
            self._values[key] = value
        self.validate()

    def __getitem__(self, key: str):
        return self._values[key]

    @property
    def seed(self) -> int:
        return self._values["seed"]

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        overrides = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _SCHEMA:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
            overrides[key] = _parse(_SCHEMA[key][0], raw)
        return cls(overrides)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        """Canonical echo: sorted keys, round-trippable values."""
        return "\n".join(f"{k}={_format(self._values[k])}" for k in sorted(self._values))

    def with_overrides(self, **dotted) -> "RunConfig":
        values = dict(self._values)
        for key, value in dotted.items():
            if key not in _SCHEMA:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = value
        return RunConfig(values)

    def validate(self) -> None:
        """Build every domain object once so module invariants fire here."""
        self.radar_params()
        self.angle_grid()
        self.sim_config()
        self.schedule()
        self.rdnet_config()
        self.angnet_config()
        self.cfar1()
        self.cfar2()

    # -- domain object builders ------------------------------------------

    def radar_params(self) -> RadarParams:
        v = self._values
        fs = v["radar.sample_rate"]
        if fs <= 0:
            fs = v["radar.n_samples"] / v["radar.chirp_duration"]
        n_ant = v["radar.array_nx"] * v["radar.array_ny"]
        if n_ant != v["radar.n_antennas"]:
            raise ValueError("radar.n_antennas must equal array_nx * array_ny")
        return RadarParams(
            n_samples=v["radar.n_samples"],
            n_chirps=v["radar.n_chirps"],
            n_antennas=v["radar.n_antennas"],
            bandwidth=v["radar.bandwidth"],
            chirp_duration=v["radar.chirp_duration"],
            carrier=v["radar.carrier"],
            sample_rate=fs,
            array_geometry=uniform_rect_array(
                v["radar.array_nx"], v["radar.array_ny"], v["radar.array_spacing"]),
        )

    def angle_grid(self) -> AngleGrid:
        v = self._values
        return AngleGrid(
            n_az=v["grid.n_az"], n_el=v["grid.n_el"],
            az_min=v["grid.az_min"], az_max=v["grid.az_max"],
            el_min=v["grid.el_min"], el_max=v["grid.el_max"],
        )

    def sim_config(self) -> SimConfig:
        v = self._values
        return SimConfig(
            n_radars=v["sim.n_radars"],
            frames_per_radar=v["sim.frames_per_radar"],
            range_bin=v["sim.range_bin"],
            gain_sigma_db=v["sim.gain_sigma_db"],
            phase_sigma_deg=v["sim.phase_sigma_deg"],
            noise_snr_db=v["sim.noise_snr_db"],
        )

    def schedule(self) -> TrainSchedule:
        v = self._values
        return TrainSchedule(
            lr0=v["train.lr0"],
            betas=(v["train.beta1"], v["train.beta2"]),
            weight_decay=v["train.weight_decay"],
            batch_size=v["train.batch_size"],
            rd_only_epochs=v["train.rd_only_epochs"],
            total_epochs=v["train.total_epochs"],
            gamma=v["train.gamma"],
            decay_steps=v["train.decay_steps"],
            lambda1=v["train.lambda1"],
            lambda2=v["train.lambda2"],
            threshold=v["train.threshold"],
        )

    def finetune_schedule(self) -> TrainSchedule:
        v = self._values
        return replace(self.schedule(), lr0=v["train.finetune_lr"],
                       total_epochs=v["train.finetune_epochs"], rd_only_epochs=0)

    def rdnet_config(self) -> RDNetConfig:
        v = self._values
        return RDNetConfig(
            n_channels=2 * v["radar.n_antennas"],
            encoder_widths=v["model.encoder_widths"],
            n_classes=v["model.n_classes"],
        )

    def angnet_config(self) -> AngNetConfig:
        v = self._values
        return AngNetConfig(
            n_channels=2 * v["radar.n_antennas"],
            conv_channels=v["model.conv_channels"],
            fc_widths=v["model.fc_widths"],
            n_az=v["grid.n_az"], n_el=v["grid.n_el"],
            n_classes=v["model.n_classes"],
            dropout=v["model.dropout"],
        )

    def cfar1(self) -> CfarParams:
        v = self._values
        return CfarParams(window_size=v["cfar1.window"], guard_size=v["cfar1.guard"],
                          alpha_db=v["cfar.alpha_db"],
                          pregate_margin_db=v["cfar.pregate_margin_db"])

    def cfar2(self) -> CfarParams:
        v = self._values
        return CfarParams(window_size=v["cfar2.window"], guard_size=v["cfar2.guard"],
                          alpha_db=v["cfar.alpha_db"],
                          pregate_margin_db=v["cfar.pregate_margin_db"])
