"""File formats: frames, label sidecars, manifests, checkpoints, CSVs.

All binary values are little-endian. Formats are pinned:

- Frame (.drdf): magic "DRDF", u32 version, u32 Ns, u32 Nc, u32 Nant, then
  Ns*Nc*Nant complex values as interleaved (re, im) f32 in sample-major,
  then chirp, then antenna order.
- Label sidecar: one text line per target
  ``r_bin,d_bin,az_bin,el_bin,radar_id,snr_db``.
- Manifest: one text line per frame ``path,split,radar_id,label_path``.
- Checkpoint (.drdc): magic "DRDC", u32 version, counted named-tensor
  records (u32 name length, UTF-8 name, u32 rank, u32 dims, f32 payload)
  for weights, the same encoding for optimizer state, then a
  length-prefixed config echo text blob.
- CSVs: ``#``-prefixed config-echo comment lines, then a header row.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import GroundTruthLabel, RadarParams, RawFrame
from .sim import ChannelPerturbation, DatasetManifest, ManifestEntry

FRAME_MAGIC = b"DRDF"
CKPT_MAGIC = b"DRDC"
FRAME_VERSION = 1
CKPT_VERSION = 1

COMPARE_HEADER = ("metric", "drd", "classic1", "classic2")
SWEEP_HEADER = ("snr_db", "method", "rd_acc", "az_acc", "el_acc")
LOG_HEADER = ("epoch", "step", "lr", "l_rd", "l_azi", "l_ele",
              "val_rd_acc", "val_az_acc", "val_el_acc")
ABLATION_HEADER = ("metric", "joint", "separate")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# frames and labels
# ---------------------------------------------------------------------------

def save_frame(path, frame: RawFrame) -> None:
    ns, nc, na = frame.data.shape
    with open(path, "wb") as fh:
        fh.write(FRAME_MAGIC)
        fh.write(struct.pack("<4I", FRAME_VERSION, ns, nc, na))
        fh.write(np.ascontiguousarray(frame.data, dtype="<c8").tobytes())


def load_frame(path, params: RadarParams) -> RawFrame:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FRAME_MAGIC:
        raise ValueError(f"{path}: not a frame file")
    version, ns, nc, na = struct.unpack_from("<4I", blob, 4)
    if version != FRAME_VERSION:
        raise ValueError(f"{path}: unsupported frame version {version}")
    if (ns, nc, na) != (params.n_samples, params.n_chirps, params.n_antennas):
        raise ValueError(
            f"{path}: frame dims {(ns, nc, na)} do not match configured radar "
            f"{(params.n_samples, params.n_chirps, params.n_antennas)}"
        )
    count = ns * nc * na
    data = np.frombuffer(blob, dtype="<c8", count=count, offset=20)
    if data.size != count:
        raise ValueError(f"{path}: truncated payload")
    return RawFrame(params=params, data=data.reshape(ns, nc, na).copy())


def save_labels(path, labels: Sequence[GroundTruthLabel]) -> None:
    with open(path, "w") as fh:
        for lab in labels:
            fh.write(f"{lab.r_bin},{lab.d_bin},{lab.az_bin},{lab.el_bin},"
                     f"{lab.radar_id},{lab.snr_db!r}\n")


def load_labels(path) -> list[GroundTruthLabel]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            r, d, az, el, radar_id, snr = line.split(",")
            out.append(GroundTruthLabel(
                r_bin=int(r), d_bin=int(d), az_bin=int(az), el_bin=int(el),
                radar_id=radar_id, snr_db=float(snr),
            ))
    return out


# ---------------------------------------------------------------------------
# manifests and radar perturbations
# ---------------------------------------------------------------------------

def save_manifest(path, manifest: DatasetManifest) -> None:
    """Entries are written with paths relative to the manifest location, so a
    dataset directory can be moved or read from any working directory."""
    base = Path(path).resolve().parent
    with open(path, "w") as fh:
        for e in manifest.entries:
            fp = os.path.relpath(Path(e.frame_path).resolve(), base)
            lp = os.path.relpath(Path(e.label_path).resolve(), base)
            fh.write(f"{fp},{e.split},{e.radar_id},{lp}\n")


def load_manifest(path) -> DatasetManifest:
    """Read a manifest plus label sidecars; picks up radars.csv if present."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            frame_path, split, radar_id, label_path = line.split(",")
            if not os.path.isabs(frame_path):
                frame_path = str(base / frame_path)
            if not os.path.isabs(label_path):
                label_path = str(base / label_path)
            entries.append(ManifestEntry(
                frame_path=frame_path, label_path=label_path,
                radar_id=radar_id, split=split,
                labels=tuple(load_labels(label_path)),
            ))
    radars_path = path.parent / "radars.csv"
    perturbations = ()
    if radars_path.exists():
        perturbations = tuple(p for p, _ in load_radars(radars_path))
    return DatasetManifest(entries=tuple(entries), perturbations=perturbations)


def save_radars(path, manifest: DatasetManifest, tags_by_id: dict) -> None:
    """Per-radar perturbations: ``radar_id,split,g0;g1;...,p0;p1;...``.

    The dataset keeps these so calibration matrices can be rebuilt without
    re-running generation.
    """
    with open(path, "w") as fh:
        for p in manifest.perturbations:
            gains = ";".join(repr(float(g)) for g in p.gains_db)
            phases = ";".join(repr(float(v)) for v in p.phases_deg)
            fh.write(f"{p.radar_id},{tags_by_id[p.radar_id]},{gains},{phases}\n")


def load_radars(path) -> list[tuple[ChannelPerturbation, str]]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            radar_id, split, gains, phases = line.split(",")
            out.append((ChannelPerturbation(
                radar_id=radar_id,
                gains_db=tuple(float(g) for g in gains.split(";")),
                phases_deg=tuple(float(v) for v in phases.split(";")),
            ), split))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _write_records(fh, named: dict) -> None:
    fh.write(struct.pack("<I", len(named)))
    for name in sorted(named):
        arr = np.asarray(named[name], dtype="<f4")
        encoded = name.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_records(blob: bytes, offset: int) -> tuple[dict, int]:
    (count,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        dims = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        out[name] = arr.reshape(dims).copy()
    return out, offset


def save_checkpoint(path, tensors: dict, opt_state: dict, config_echo: str) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        _write_records(fh, tensors)
        _write_records(fh, opt_state)
        encoded = config_echo.encode("utf-8")
        fh.write(struct.pack("<I", len(encoded)))
        fh.write(encoded)


def load_checkpoint(path) -> tuple[dict, dict, str]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    tensors, offset = _read_records(blob, 8)
    opt_state, offset = _read_records(blob, offset)
    (echo_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    echo = blob[offset:offset + echo_len].decode("utf-8")
    return tensors, opt_state, echo


def save_model(path, model, train_state=None, config_echo: str = "") -> None:
    """Checkpoint a model plus (optionally) its optimizer/schedule position."""
    opt = {}
    if train_state is not None:
        opt["schedule.step"] = np.float32(train_state.step)
        opt["schedule.epoch"] = np.float32(train_state.epoch)
        for prefix, adam in (("rd", train_state.adam_rd), ("ang", train_state.adam_ang)):
            if adam is None:
                continue
            for key, val in adam.items():
                opt[f"{prefix}.{key}"] = np.asarray(val, dtype=np.float32)
    save_checkpoint(path, model.parameters(), opt, config_echo)


def load_model(path, expected_echo: Optional[str] = None):
    """Rebuild a model from a checkpoint's config echo.

    Returns (model, train_state, echo). Raises if ``expected_echo`` is given
    and does not match what the checkpoint was saved with.
    """
    from .config import RunConfig
    from .model import DRDModel
    from .train import TrainState

    tensors, opt, echo = load_checkpoint(path)
    if expected_echo is not None and expected_echo != echo:
        raise ValueError(f"{path}: checkpoint config does not match runtime config")
    cfg = RunConfig.from_text(echo)
    model = DRDModel(cfg.radar_params(), cfg.angle_grid(),
                     rd_config=cfg.rdnet_config(), ang_config=cfg.angnet_config(),
                     seed=cfg.seed)
    model.load_parameters(tensors)
    state = TrainState()
    if "schedule.step" in opt:
        state.step = int(opt.pop("schedule.step"))
        state.epoch = int(opt.pop("schedule.epoch"))
        adams = {"rd": {}, "ang": {}}
        for key, val in opt.items():
            prefix, _, rest = key.partition(".")
            adams[prefix][rest] = int(val) if rest == "t" else val
        state.adam_rd = adams["rd"] or None
        state.adam_ang = adams["ang"] or None
    return model, state, echo


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows, echo: Optional[str] = None) -> None:
    with open(path, "w") as fh:
        if echo:
            for line in echo.strip().splitlines():
                fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    """Rows as strings; skips the config-echo comment lines."""
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    if header is None:
        raise ValueError(f"{path}: empty CSV")
    return header, rows


def write_comparison(path, rows, echo: Optional[str] = None) -> None:
    write_csv(path, COMPARE_HEADER, rows, echo)


def write_sweep(path, rows, echo: Optional[str] = None) -> None:
    write_csv(path, SWEEP_HEADER, rows, echo)


def write_ablation(path, rows, echo: Optional[str] = None) -> None:
    write_csv(path, ABLATION_HEADER, rows, echo)


def write_training_log(path, logs, echo: Optional[str] = None) -> None:
    rows = [
        (log.epoch, log.step, log.lr, log.l_rd, log.l_azi, log.l_ele,
         log.val_rd_acc, log.val_az_acc, log.val_el_acc)
        for log in logs
    ]
    write_csv(path, LOG_HEADER, rows, echo)
