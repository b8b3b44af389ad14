"""Command-line front end.

Exit codes: 0 success, 1 usage or I/O failure, 2 numerical failure
(divergent training, failed gradient check).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="drd", description="Deep radar detector pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name, help_text, **flags):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, help="output path")
        p.add_argument("--threads", type=int, default=1,
                       help="BLAS/FFT thread cap (default 1, deterministic)")
        for flag, kw in flags.items():
            p.add_argument(flag, **kw)
        return p

    cmd("simulate", "generate a calibration-style dataset (--out directory)")
    cmd("train", "train the detector",
        **{"--manifest": dict(type=Path, required=True),
           "--log": dict(type=Path, help="training-log CSV path"),
           "--resume": dict(type=Path, help="checkpoint to resume from")})
    cmd("finetune-noise", "continue training under additive noise",
        **{"--manifest": dict(type=Path, required=True),
           "--checkpoint": dict(type=Path, required=True),
           "--log": dict(type=Path)})
    cmd("infer", "detect targets in one frame file",
        **{"--checkpoint": dict(type=Path, required=True),
           "--frame": dict(type=Path, required=True)})
    cmd("eval", "accuracy of one method on a split",
        **{"--manifest": dict(type=Path, required=True),
           "--method": dict(choices=["drd", "classic1", "classic2"], required=True),
           "--checkpoint": dict(type=Path),
           "--split": dict(default="test")})
    cmd("compare", "three-method comparison table",
        **{"--manifest": dict(type=Path, required=True),
           "--checkpoint": dict(type=Path, required=True)})
    cmd("snr-sweep", "accuracy vs noise level for all methods",
        **{"--manifest": dict(type=Path, required=True),
           "--checkpoint": dict(type=Path, required=True)})
    cmd("ablation", "joint model vs crop-only angle net",
        **{"--manifest": dict(type=Path, required=True),
           "--checkpoint": dict(type=Path, required=True)})
    cmd("gradcheck", "finite-difference check of every layer and the full graph")
    cmd("bench", "inference latency over synthetic frames",
        **{"--checkpoint": dict(type=Path),
           "--frames": dict(type=int, default=128)})
    return parser


def _load_config(args):
    from .config import RunConfig

    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command} needs --out")
    return args.out


def _load_model_checked(path, cfg):
    from . import storage

    model, state, echo = storage.load_model(path)
    runtime = cfg.to_text()
    if echo != runtime:
        raise ValueError(
            f"{path}: checkpoint config does not match runtime config; "
            "pass the config the checkpoint was trained with")
    return model, state


def cmd_simulate(args, cfg) -> int:
    from .sim import generate_calibration_dataset

    out = _require_out(args)
    manifest = generate_calibration_dataset(
        out, cfg.sim_config(), cfg.radar_params(), cfg.angle_grid(), seed=cfg.seed)
    (Path(out) / "config.echo").write_text(cfg.to_text() + "\n")
    splits = {tag: len(manifest.split(tag)) for tag in ("train", "val", "test")}
    print(f"wrote {len(manifest.entries)} frames from "
          f"{len(manifest.perturbations)} radars to {out}")
    print(f"splits: train={splits['train']} val={splits['val']} test={splits['test']}")
    return 0


def cmd_train(args, cfg) -> int:
    from . import storage
    from .model import DRDModel
    from .train import train_drd

    out = _require_out(args)
    manifest = storage.load_manifest(args.manifest)
    state = None
    if args.resume is not None:
        model, state = _load_model_checked(args.resume, cfg)
    else:
        model = DRDModel(cfg.radar_params(), cfg.angle_grid(),
                         rd_config=cfg.rdnet_config(), ang_config=cfg.angnet_config(),
                         seed=cfg.seed)
    log_path = args.log or Path(str(out) + ".log.csv")
    result = train_drd(model, manifest, cfg.schedule(), seed=cfg.seed,
                       augment=bool(cfg["train.augment"]), log_path=log_path,
                       state=state)
    storage.save_model(out, model, result.state, cfg.to_text())
    if result.logs:
        last = result.logs[-1]
        print(f"epoch {last.epoch}: l_rd={last.l_rd:.4f} l_azi={last.l_azi:.4f} "
              f"l_ele={last.l_ele:.4f} val_rd={last.val_rd_acc:.2f} "
              f"val_az={last.val_az_acc:.2f} val_el={last.val_el_acc:.2f}")
    print(f"checkpoint: {out}")
    return 0


def cmd_finetune_noise(args, cfg) -> int:
    from . import storage
    from .train import finetune_noise

    out = _require_out(args)
    manifest = storage.load_manifest(args.manifest)
    model, _ = _load_model_checked(args.checkpoint, cfg)
    log_path = args.log or Path(str(out) + ".log.csv")
    result = finetune_noise(
        model, manifest, cfg.schedule(), seed=cfg.seed,
        epochs=cfg["train.finetune_epochs"], lr=cfg["train.finetune_lr"],
        noise_range=(cfg["train.noise_lo"], cfg["train.noise_hi"]),
        log_path=log_path)
    storage.save_model(out, model, result.state, cfg.to_text())
    print(f"checkpoint: {out}")
    return 0


def cmd_infer(args, cfg) -> int:
    from . import storage

    model, _ = _load_model_checked(args.checkpoint, cfg)
    frame = storage.load_frame(args.frame, model.params)
    dets = model.infer(frame, threshold=cfg["train.threshold"])
    lines = ["r_bin,d_bin,az_bin,el_bin,class,score"]
    lines += [f"{d.r_bin},{d.d_bin},{d.az_bin},{d.el_bin},{d.class_label},{d.score!r}"
              for d in dets]
    text = "\n".join(lines) + "\n"
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args, cfg) -> int:
    from . import storage
    from .classic import classic_detect
    from .evaluate import pooled_accuracy, train_calibration

    manifest = storage.load_manifest(args.manifest)
    entries = manifest.split(args.split)
    if not entries:
        raise ValueError(f"manifest has no {args.split!r} split")
    params = cfg.radar_params()
    frames = [storage.load_frame(e.frame_path, params) for e in entries]
    labels = [list(e.labels) for e in entries]
    if args.method == "drd":
        if args.checkpoint is None:
            raise UsageError("eval --method drd needs --checkpoint")
        model, _ = _load_model_checked(args.checkpoint, cfg)
        threshold = cfg["train.threshold"]
        detect = lambda f: model.infer(f, threshold=threshold)
    else:
        cal = train_calibration(manifest, cfg.angle_grid(), params.array_geometry)
        cfar = cfg.cfar1() if args.method == "classic1" else cfg.cfar2()
        detect = lambda f: classic_detect(f, cfar, cal)
    rep = pooled_accuracy(detect, frames, labels)
    for name, val in (("rd_acc", rep.rd_accuracy), ("az_acc", rep.az_accuracy),
                      ("el_acc", rep.el_accuracy), ("n_det", rep.n_det),
                      ("n_matched", rep.n_matched), ("n_miss", rep.n_miss),
                      ("n_false", rep.n_false_alarm)):
        print(f"{name},{val!r}" if isinstance(val, float) else f"{name},{val}")
    return 0


def cmd_compare(args, cfg) -> int:
    from . import storage
    from .evaluate import compare_methods

    out = _require_out(args)
    manifest = storage.load_manifest(args.manifest)
    model, _ = _load_model_checked(args.checkpoint, cfg)
    rows = compare_methods(manifest, model, cfar1=cfg.cfar1(), cfar2=cfg.cfar2(),
                           threshold=cfg["train.threshold"])
    storage.write_comparison(out, rows, cfg.to_text())
    print(f"comparison table: {out}")
    return 0


def cmd_snr_sweep(args, cfg) -> int:
    from . import storage
    from .evaluate import snr_sweep

    out = _require_out(args)
    manifest = storage.load_manifest(args.manifest)
    model, _ = _load_model_checked(args.checkpoint, cfg)
    rows = snr_sweep(manifest, model, cfg["eval.snr_list"], trials=cfg["eval.trials"],
                     seed=cfg.seed, cfar1=cfg.cfar1(), cfar2=cfg.cfar2(),
                     threshold=cfg["train.threshold"])
    storage.write_sweep(out, rows, cfg.to_text())
    print(f"sweep table: {out}")
    return 0


def cmd_ablation(args, cfg) -> int:
    from . import storage
    from .evaluate import ablation_separate_angnet

    out = _require_out(args)
    manifest = storage.load_manifest(args.manifest)
    model, _ = _load_model_checked(args.checkpoint, cfg)
    rows = ablation_separate_angnet(
        manifest, model, seed=cfg.seed, epochs=cfg["ablation.epochs"],
        lr=cfg["ablation.lr"], batch_size=cfg["ablation.batch_size"])
    storage.write_ablation(out, rows, cfg.to_text())
    print(f"ablation table: {out}")
    return 0


def cmd_gradcheck(args, cfg) -> int:
    from .train import drd_gradient_check

    report = drd_gradient_check(seed=cfg.seed)
    print(f"full graph: {report}")
    if report.max_rel_err > GRADCHECK_TOL:
        print(f"FAIL: max relative error {report.max_rel_err:.3e} > {GRADCHECK_TOL}")
        return 2
    print(f"OK: max relative error {report.max_rel_err:.3e} <= {GRADCHECK_TOL}")
    return 0


def cmd_bench(args, cfg) -> int:
    from .model import DRDModel
    from .sim import TargetSpec, synthesize_frame

    params = cfg.radar_params()
    grid = cfg.angle_grid()
    if args.checkpoint is not None:
        model, _ = _load_model_checked(args.checkpoint, cfg)
    else:
        model = DRDModel(params, grid, rd_config=cfg.rdnet_config(),
                         ang_config=cfg.angnet_config(), seed=cfg.seed)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xBE)))
    n = max(args.frames, 100)
    frames = []
    for _ in range(n):
        target = TargetSpec(
            range_m=int(rng.integers(1, params.n_samples)) * params.range_bin_width,
            azimuth=grid.az_of_bin(int(rng.integers(grid.n_az))),
            elevation=grid.el_of_bin(int(rng.integers(grid.n_el))),
        )
        frame, _ = synthesize_frame([target], params, grid)
        frames.append(frame)
    model.infer(frames[0])  # warm caches before timing
    times = np.empty(n)
    for i, frame in enumerate(frames):
        t0 = time.perf_counter()
        model.infer(frame)
        times[i] = (time.perf_counter() - t0) * 1e3
    print(f"frames: {n}")
    print(f"mean_ms: {times.mean():.3f}")
    print(f"median_ms: {np.median(times):.3f}")
    print(f"p99_ms: {np.percentile(times, 99):.3f}")
    print("reference_ms: 20 (informational; hardware differs)")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "finetune-noise": cmd_finetune_noise,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "snr-sweep": cmd_snr_sweep,
    "ablation": cmd_ablation,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        try:
            import threadpoolctl
            limits = threadpoolctl.threadpool_limits(limits=max(args.threads, 1))
        except ImportError:
            limits = None
        try:
            cfg = _load_config(args)
            return _COMMANDS[args.command](args, cfg)
        finally:
            if limits is not None:
                limits.unregister()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
