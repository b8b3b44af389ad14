"""Release acceptance gates, one test per criterion.

Each test prints a single `[criterion N] name: PASS/FAIL (...)` line with the
measured numbers; run with `-s` to see them as they complete. Criteria 1-4
and 9 finish in seconds to minutes. Criteria 5-7 share one desk-scale
experiment (20 simulated radars x 100 frames, full 64x64x8 maps) that is
generated and trained once at session scope; expect roughly 35-45 minutes of
single-core CPU for the whole file, dominated by that training run.
"""

import contextlib
import io
import math
import time
from pathlib import Path

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view

from drd.augment import augment_shift, shift_bounds
from drd.classic import (
    CLASSIC1,
    CLASSIC2,
    bartlett_doa,
    ca_cfar,
    ideal_calibration,
    rd_transform,
)
from drd.cli import main
from drd.core import AngleGrid, default_params
from drd.nn import (
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
    check_graph,
)
from drd.sim import ChannelPerturbation, TargetSpec, steering_vector, synthesize_frame
from drd.storage import read_csv
from drd.train import drd_gradient_check

# Desk-scale experiment: full-size maps and radar count, but a training
# schedule compressed to what a single core finishes in ~20 minutes. The
# decay steps land after epochs 5 and 8 (80 steps/epoch at batch 15 on the
# 1200-frame train split), mirroring the shape of the long schedule. The
# per-radar phase spread is wide enough that the averaged calibration is a
# genuinely wrong match for some test radars; that is the regime the
# classical-vs-learned elevation comparison is about. The crop-only ablation
# baseline gets the same epoch budget as the joint run, so the comparison
# isolates architecture rather than training time. Noise finetuning draws
# SNRs from the regime where targets are detectable at all (>= 20 dB; below
# that even an oracle-calibrated CFAR finds nothing, so such presentations
# only teach the net to hallucinate).
ACCEPT_CFG = """\
sim.noise_snr_db=40.0
sim.phase_sigma_deg=10.0
model.encoder_widths=16,32,64
train.total_epochs=8
train.rd_only_epochs=1
train.decay_steps=400,640,100000
train.finetune_epochs=2
train.noise_lo=20.0
ablation.epochs=8
seed=0
"""

# Miniature end-to-end config for the determinism criterion: every command
# runs in seconds, artifacts stay a few KB.
DETERMINISM_CFG = """\
radar.n_samples=16
radar.n_chirps=16
radar.n_antennas=2
radar.array_nx=2
radar.array_ny=1
grid.n_az=6
grid.n_el=4
model.encoder_widths=4,8
model.conv_channels=8
model.fc_widths=16,12,10
sim.n_radars=10
sim.frames_per_radar=3
sim.range_bin=5
sim.noise_snr_db=30.0
train.total_epochs=2
train.rd_only_epochs=1
train.batch_size=8
train.threshold=0.6
train.finetune_epochs=1
eval.snr_list=20.0,35.0
eval.trials=1
ablation.epochs=2
seed=0
"""


def _report(num: int, name: str, ok: bool, detail: str):
    line = f"[criterion {num}] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


def _nan_to_zero(x: float) -> float:
    return 0.0 if math.isnan(x) else x


def _run_cli(argv: list) -> tuple:
    """Invoke the CLI capturing its stdout, independent of pytest's capture
    mode (so the file behaves the same under plain pytest and -s)."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        rc = main(argv)
    return rc, buf.getvalue()


# ---------------------------------------------------------------------------
# shared desk-scale artifacts (built once, lazily, by the first user)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def acc(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = root / "accept.cfg"
    cfg.write_text(ACCEPT_CFG)
    return {"root": root, "cfg": str(cfg), "timings": {}}


@pytest.fixture(scope="session")
def acc_data(acc):
    out = acc["root"] / "data"
    t0 = time.perf_counter()
    rc = main(["simulate", "--config", acc["cfg"], "--out", str(out)])
    acc["timings"]["simulate"] = time.perf_counter() - t0
    assert rc == 0, "dataset generation failed"
    return str(out / "manifest.txt")


@pytest.fixture(scope="session")
def acc_model(acc, acc_data):
    ckpt = acc["root"] / "model.drdc"
    t0 = time.perf_counter()
    rc = main(["train", "--config", acc["cfg"], "--manifest", acc_data,
               "--out", str(ckpt), "--log", str(acc["root"] / "train.log.csv")])
    acc["timings"]["train"] = time.perf_counter() - t0
    assert rc == 0, "desk-scale training failed"
    return str(ckpt)


@pytest.fixture(scope="session")
def acc_finetuned(acc, acc_data, acc_model):
    ckpt = acc["root"] / "model_ft.drdc"
    t0 = time.perf_counter()
    rc = main(["finetune-noise", "--config", acc["cfg"], "--manifest", acc_data,
               "--checkpoint", acc_model, "--out", str(ckpt)])
    acc["timings"]["finetune"] = time.perf_counter() - t0
    assert rc == 0, "noise finetuning failed"
    return str(ckpt)


# ---------------------------------------------------------------------------
# criterion 1: CFAR equals a brute-force evaluation of its contract
# ---------------------------------------------------------------------------

def brute_cfar(energy, params, floor_db, counts):
    """Materialized-window CFAR: every reference annulus is built explicitly
    with sliding_window_view on a zero-padded map, nothing shared with the
    integral-image implementation under test."""
    h, w = energy.shape
    W, G = params.window_size, params.guard_size
    pad = np.zeros((h + 2 * W, w + 2 * W))
    pad[W:W + h, W:W + w] = energy
    win = sliding_window_view(pad, (2 * W + 1, 2 * W + 1))
    gsl = slice(W - G, W + G + 1)
    ann_sum = win.sum((-1, -2)) - win[:, :, gsl, gsl].sum((-1, -2))
    ann_cnt = counts
    pregate = energy > 10.0 ** ((floor_db + params.pregate_margin_db) / 10.0)
    alpha = 10.0 ** (params.alpha_db / 10.0)
    mean = np.where(ann_cnt > 0, ann_sum / np.maximum(ann_cnt, 1), np.inf)
    det = pregate & (ann_cnt > 0) & (energy > alpha * mean)
    rr, dd = np.nonzero(det)
    return list(zip(rr.tolist(), dd.tolist()))


def _annulus_counts(shape, params):
    # in-bounds cell count per annulus, from an explicit ones map
    h, w = shape
    W, G = params.window_size, params.guard_size
    ones = np.zeros((h + 2 * W, w + 2 * W))
    ones[W:W + h, W:W + w] = 1.0
    win = sliding_window_view(ones, (2 * W + 1, 2 * W + 1))
    gsl = slice(W - G, W + G + 1)
    return win.sum((-1, -2)) - win[:, :, gsl, gsl].sum((-1, -2))


def test_c1_cfar_brute_force_equivalence():
    rng = np.random.default_rng(11)
    n_maps, shape = 1000, (32, 32)
    counts = {p: _annulus_counts(shape, p) for p in (CLASSIC1, CLASSIC2)}
    t0 = time.perf_counter()
    n_det = 0
    for i in range(n_maps):
        kind = i % 3
        if kind == 0:
            emap = np.full(shape, 1.0)
        else:
            emap = rng.exponential(1.0, size=shape)
        if kind != 1:
            for _ in range(int(rng.integers(1, 6))):
                r, d = rng.integers(32), rng.integers(32)
                emap[r, d] += 10.0 ** rng.uniform(2.5, 5.0)
        floor_db = 10.0 * np.log10(np.median(emap)) + rng.uniform(-2.0, 2.0)
        for params in (CLASSIC1, CLASSIC2):
            got = ca_cfar(emap, params, floor_db)
            want = brute_cfar(emap, params, floor_db, counts[params])
            assert got == want, f"map {i}, window {params.window_size}: {got} != {want}"
            n_det += len(got)
    dt = time.perf_counter() - t0
    _report(1, "cfar-brute-force-equivalence",
            dt < 10.0,
            f"{n_maps} maps x classic-1/2 identical, {n_det} detections, {dt:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: phase-ramp augmentation shifts the RD map exactly
# ---------------------------------------------------------------------------

def test_c2_augmentation_shift_theorem():
    params = default_params()
    grid = AngleGrid()
    rng = np.random.default_rng(23)
    t0 = time.perf_counter()
    for i in range(100):
        r_bin = int(rng.integers(2, params.n_samples - 2))
        d_bin = int(rng.integers(2, params.n_chirps - 2)) - params.n_chirps // 2
        target = TargetSpec(
            range_m=r_bin * params.range_bin_width,
            velocity=d_bin * params.doppler_bin_width,
            azimuth=grid.az_of_bin(int(rng.integers(grid.n_az))),
            elevation=grid.el_of_bin(int(rng.integers(grid.n_el))),
            amplitude=float(rng.uniform(0.5, 2.0)),
        )
        pert = ChannelPerturbation.random(
            params.n_antennas, f"r{i}", np.random.default_rng(1000 + i))
        frame, labels = synthesize_frame([target], params, grid, perturbation=pert,
                                         noise_snr_db=30.0, seed=i)
        (dr_lo, dr_hi), (dd_lo, dd_hi) = shift_bounds(
            labels, params.n_samples, params.n_chirps)
        from drd.augment import AugmentShift
        shift = AugmentShift(dr=int(rng.integers(dr_lo, dr_hi + 1)),
                             dd=int(rng.integers(dd_lo, dd_hi + 1)))
        shifted, moved = augment_shift(frame, labels, shift)
        e0 = rd_transform(frame).cell_energy()
        e1 = rd_transform(shifted).cell_energy()
        p0 = np.unravel_index(np.argmax(e0), e0.shape)
        p1 = np.unravel_index(np.argmax(e1), e1.shape)
        assert p1 == (p0[0] + shift.dr, p0[1] + shift.dd), f"frame {i}: argmax wrong"
        rel = abs(e1[p1] - e0[p0]) / e0[p0]
        assert rel < 1e-4, f"frame {i}: peak energy moved by {rel:.2e}"
        assert moved[0].r_bin == labels[0].r_bin + shift.dr
        assert moved[0].d_bin == labels[0].d_bin + shift.dd
        assert (moved[0].az_bin, moved[0].el_bin) == (labels[0].az_bin, labels[0].el_bin)
    dt = time.perf_counter() - t0
    _report(2, "augmentation-shift-theorem",
            dt < 5.0, f"100 frames, exact argmax moves, peak within 1e-4, {dt:.1f}s")


# ---------------------------------------------------------------------------
# criterion 3: matched-filter direction estimate recovers the grid
# ---------------------------------------------------------------------------

def test_c3_beamforming_recovery():
    params = default_params()
    grid = AngleGrid()
    geom = params.array_geometry
    cal = ideal_calibration(grid, geom)
    t0 = time.perf_counter()

    for az_bin in range(grid.n_az):
        for el_bin in range(grid.n_el):
            snap = steering_vector(grid.az_of_bin(az_bin), grid.el_of_bin(el_bin), geom)
            assert bartlett_doa(snap, cal) == (az_bin, el_bin)

    rng = np.random.default_rng(31)
    snr_lin = 10.0 ** (30.0 / 10.0)
    sigma = math.sqrt(1.0 / snr_lin)  # unit-power elements
    hits = 0
    trials = 1000
    for _ in range(trials):
        az_bin = int(rng.integers(grid.n_az))
        el_bin = int(rng.integers(grid.n_el))
        snap = steering_vector(grid.az_of_bin(az_bin), grid.el_of_bin(el_bin), geom)
        noise = (rng.standard_normal(len(geom)) + 1j * rng.standard_normal(len(geom)))
        snap = snap + sigma / math.sqrt(2.0) * noise
        hits += bartlett_doa(snap, cal) == (az_bin, el_bin)
    dt = time.perf_counter() - t0
    _report(3, "beamforming-recovery",
            hits >= 990 and dt < 30.0,
            f"noiseless grid {grid.n_az}x{grid.n_el} exact, "
            f"30dB Monte Carlo {hits}/{trials}, {dt:.1f}s")


# ---------------------------------------------------------------------------
# criterion 4: analytic gradients match central differences everywhere
# ---------------------------------------------------------------------------

def test_c4_gradient_correctness():
    rng_data = np.random.default_rng(41)

    def weighted_sum(out_name, seed=1):
        w_box = {}

        def fn(outs):
            y = outs[out_name]
            if "w" not in w_box:
                w_box["w"] = np.random.default_rng(seed).normal(size=y.shape)
            return float(np.sum(w_box["w"] * y)), {out_name: w_box["w"]}

        return fn

    layer_cases = [
        ("conv3x3", Conv2d(2, 3, k=3), [(2, 2, 5, 5)]),
        ("conv1x1", Conv2d(3, 2, k=1, pad=0), [(2, 3, 4, 4)]),
        ("linear", Linear(6, 4), [(3, 6)]),
        ("relu", ReLU(), [(2, 3, 4, 4)]),
        ("maxpool", MaxPool2d(), [(2, 2, 4, 4)]),
        ("maxpool-odd", MaxPool2d(), [(1, 2, 5, 5)]),
        ("upsample", Upsample2x(), [(2, 2, 3, 3)]),
        ("dropout", Dropout(0.4, seed=1), [(3, 10)]),
        ("concat", Concat(), [(2, 2, 3, 3), (2, 4, 3, 3)]),
        ("globalmaxpool", GlobalMaxPool(), [(2, 3, 4, 4)]),
        ("flatten", Flatten(), [(2, 3, 4, 4)]),
    ]
    t0 = time.perf_counter()
    worst_layer = 0.0
    n_checked = 0
    for name, layer, shapes in layer_cases:
        names = [f"x{i}" for i in range(len(shapes))]
        g = NetGraph(names)
        g.add("y", layer, names if len(names) > 1 else names[0])
        feeds = {n: rng_data.normal(size=s) for n, s in zip(names, shapes)}
        rep = check_graph(g, feeds, weighted_sum("y"), n_per_tensor=12,
                          rng=np.random.default_rng(0))
        assert rep.max_rel_err <= 1e-4, f"{name}: {rep}"
        worst_layer = max(worst_layer, rep.max_rel_err)
        n_checked += rep.n_checked

    # reduced end-to-end graph: 16-channel 16x16 input, both nets, the
    # exact teacher-forced objective used in training
    full = drd_gradient_check(seed=0)
    assert full.max_rel_err <= 1e-4, str(full)
    dt = time.perf_counter() - t0
    _report(4, "gradient-correctness",
            dt < 120.0,
            f"{len(layer_cases)} layer types worst {worst_layer:.1e}, "
            f"full graph worst {full.max_rel_err:.1e} "
            f"({full.n_checked} checked, {full.n_skipped} kink-skipped), {dt:.0f}s")


# ---------------------------------------------------------------------------
# criterion 5: desk-scale training gate and method ordering
# ---------------------------------------------------------------------------

def test_c5_desk_scale_training_gate(acc, acc_data, acc_model):
    out = acc["root"] / "compare.csv"
    rc = main(["compare", "--config", acc["cfg"], "--manifest", acc_data,
               "--checkpoint", acc_model, "--out", str(out)])
    assert rc == 0
    _, rows = read_csv(out)
    vals = {r[0]: [float(v) for v in r[1:]] for r in rows}
    rd, az, el = vals["rd_acc"][0], vals["az_acc"][0], vals["el_acc"][0]
    el_c1, el_c2 = vals["el_acc"][1], vals["el_acc"][2]
    t_min = (acc["timings"]["simulate"] + acc["timings"]["train"]) / 60.0
    ok = (rd >= 99.0 and az >= 95.0 and el >= 90.0
          and el >= el_c2 and el_c2 >= el_c1 - 1.0)
    _report(5, "desk-scale-training-gate", ok,
            f"drd rd/az/el {rd:.2f}/{az:.2f}/{el:.2f} "
            f"vs floors 99/95/90; el ordering drd {el:.2f} >= classic2 {el_c2:.2f} "
            f"~>= classic1 {el_c1:.2f}; sim+train {t_min:.1f} min (target 30)")


# ---------------------------------------------------------------------------
# criterion 6: noise finetuning keeps the model usable across SNR
# ---------------------------------------------------------------------------

def test_c6_noise_robustness(acc, acc_data, acc_finetuned):
    out = acc["root"] / "sweep.csv"
    t0 = time.perf_counter()
    rc = main(["snr-sweep", "--config", acc["cfg"], "--manifest", acc_data,
               "--checkpoint", acc_finetuned, "--out", str(out)])
    t_sweep = time.perf_counter() - t0
    assert rc == 0
    _, rows = read_csv(out)
    table = {}  # (snr, method) -> (rd, az, el), detection-less rows as zeros
    for snr, method, rd, az, el in rows:
        table[(float(snr), method)] = tuple(_nan_to_zero(float(v)) for v in (rd, az, el))
    snrs = sorted({k[0] for k in table})
    assert snrs == [0.0, 10.0, 20.0, 30.0, 40.0]

    lo, hi = table[(0.0, "drd")], table[(40.0, "drd")]
    ok = all(h >= l for h, l in zip(hi, lo))
    margins = []
    for snr in snrs:
        el_drd = table[(snr, "drd")][2]
        el_classic = max(table[(snr, "classic1")][2], table[(snr, "classic2")][2])
        margins.append(el_drd - el_classic)
        ok = ok and el_drd >= el_classic
    dt_min = (acc["timings"]["finetune"] + t_sweep) / 60.0
    _report(6, "noise-robustness", ok and dt_min <= 15.0,
            f"drd 40dB {hi} >= 0dB {lo}; el margin over classics per SNR "
            f"{['%.1f' % m for m in margins]}; finetune+sweep {dt_min:.1f} min")


# ---------------------------------------------------------------------------
# criterion 7: joint training beats a crop-only angle net
# ---------------------------------------------------------------------------

def test_c7_joint_vs_separate_ablation(acc, acc_data, acc_model):
    out = acc["root"] / "ablation.csv"
    t0 = time.perf_counter()
    rc = main(["ablation", "--config", acc["cfg"], "--manifest", acc_data,
               "--checkpoint", acc_model, "--out", str(out)])
    dt_min = (time.perf_counter() - t0) / 60.0
    assert rc == 0
    _, rows = read_csv(out)
    vals = {r[0]: (float(r[1]), float(r[2])) for r in rows}
    az_joint, az_sep = vals["az_acc"]
    el_joint, el_sep = vals["el_acc"]
    ok = az_joint >= az_sep and el_joint >= el_sep and dt_min <= 20.0
    _report(7, "joint-vs-separate-ablation", ok,
            f"az {az_joint:.2f} vs {az_sep:.2f}, el {el_joint:.2f} vs {el_sep:.2f} "
            f"on identical test crops; {dt_min:.1f} min")


# ---------------------------------------------------------------------------
# criterion 8: inference latency (informational, no hard gate)
# ---------------------------------------------------------------------------

def test_c8_inference_throughput(acc, acc_model):
    rc, out = _run_cli(["bench", "--config", acc["cfg"], "--checkpoint",
                        acc_model, "--frames", "100"])
    assert rc == 0
    stats = dict(line.split(": ") for line in out.strip().splitlines())
    mean_ms = float(stats["mean_ms"])
    p99_ms = float(stats["p99_ms"])
    _report(8, "inference-throughput", math.isfinite(mean_ms),
            f"mean {mean_ms:.1f} ms, p99 {p99_ms:.1f} ms over 100 frames; "
            f"informational against the ~20 ms reference point")


# ---------------------------------------------------------------------------
# criterion 9: byte-identical artifacts on rerun
# ---------------------------------------------------------------------------

def test_c9_rerun_determinism(tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text(DETERMINISM_CFG)
    t0 = time.perf_counter()

    def chain(root: Path) -> dict:
        """Run every artifact-producing command into one directory; return
        {relative name: bytes} plus captured stdout of the print-only ones."""
        root.mkdir()
        data = root / "data"
        ckpt = root / "model.drdc"
        ft = root / "model_ft.drdc"
        c = str(cfg)
        man = str(data / "manifest.txt")
        # artifact-producing commands echo output paths, which differ between
        # run directories by construction; only their exit codes matter here
        assert _run_cli(["simulate", "--config", c, "--out", str(data)])[0] == 0
        assert _run_cli(["train", "--config", c, "--manifest", man,
                         "--out", str(ckpt),
                         "--log", str(root / "train.log.csv")])[0] == 0
        assert _run_cli(["finetune-noise", "--config", c, "--manifest", man,
                         "--checkpoint", str(ckpt), "--out", str(ft)])[0] == 0
        assert _run_cli(["infer", "--config", c, "--checkpoint", str(ckpt),
                         "--frame", str(data / "radar000_f0000.drdf"),
                         "--out", str(root / "dets.csv")])[0] == 0
        assert _run_cli(["compare", "--config", c, "--manifest", man,
                         "--checkpoint", str(ckpt),
                         "--out", str(root / "compare.csv")])[0] == 0
        assert _run_cli(["snr-sweep", "--config", c, "--manifest", man,
                         "--checkpoint", str(ckpt),
                         "--out", str(root / "sweep.csv")])[0] == 0
        assert _run_cli(["ablation", "--config", c, "--manifest", man,
                         "--checkpoint", str(ckpt),
                         "--out", str(root / "ablation.csv")])[0] == 0
        stdout = ""
        for argv in (["eval", "--config", c, "--manifest", man,
                      "--method", "drd", "--checkpoint", str(ckpt)],
                     ["eval", "--config", c, "--manifest", man,
                      "--method", "classic2"],
                     ["gradcheck", "--config", c]):
            rc, out = _run_cli(argv)
            assert rc == 0
            stdout += out
        # bench runs too, but its output is wall-clock timing, so only the
        # exit code participates in the comparison
        assert _run_cli(["bench", "--config", c, "--frames", "4"])[0] == 0
        files = {str(p.relative_to(root)): p.read_bytes()
                 for p in sorted(root.rglob("*")) if p.is_file()}
        files["<stdout>"] = stdout.encode()
        return files

    first = chain(tmp_path / "run1")
    second = chain(tmp_path / "run2")
    assert sorted(first) == sorted(second)
    diffs = [name for name in first if first[name] != second[name]]
    assert not diffs, f"artifacts differ between identical reruns: {diffs}"
    dt = time.perf_counter() - t0
    _report(9, "rerun-determinism", dt < 300.0,
            f"{len(first) - 1} artifacts + command stdout byte-identical "
            f"across two full runs, {dt:.0f}s")
