"""Training loop behavior on a miniature dataset."""

import numpy as np
import pytest

from drd.core import AngleGrid, default_params
from drd.model import AngNetConfig, DRDModel, RDNetConfig
from drd.sim import SimConfig, generate_calibration_dataset
from drd.train import (
    TrainSchedule,
    drd_gradient_check,
    finetune_noise,
    train_drd,
    train_separate_angnet,
)

import dataclasses


def tiny_params():
    p = default_params()
    return dataclasses.replace(
        p,
        n_samples=16,
        n_chirps=16,
        n_antennas=2,
        sample_rate=16 / p.chirp_duration,
        array_geometry=((0.0, 0.0), (0.5, 0.0)),
    )


GRID = AngleGrid(n_az=6, n_el=4)


def tiny_model(seed=0):
    return DRDModel(
        tiny_params(),
        GRID,
        rd_config=RDNetConfig(n_channels=4, encoder_widths=(4, 8)),
        ang_config=AngNetConfig(
            n_channels=4, conv_channels=8, fc_widths=(16, 12, 10), n_az=6, n_el=4
        ),
        seed=seed,
    )


@pytest.fixture(scope="module")
def tiny_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("tinyset")
    cfg = SimConfig(n_radars=10, frames_per_radar=4, range_bin=5, noise_snr_db=30.0)
    return generate_calibration_dataset(out, cfg, tiny_params(), GRID, seed=0)


def sched(**kw):
    base = dict(batch_size=8, rd_only_epochs=1, total_epochs=2,
                decay_steps=(10**9,), lr0=1e-3)
    base.update(kw)
    return TrainSchedule(**base)


def test_lr_schedule_piecewise_decay():
    s = TrainSchedule()
    assert s.lr_at(0) == pytest.approx(1e-3)
    assert s.lr_at(4999) == pytest.approx(1e-3)
    assert s.lr_at(5000) == pytest.approx(1e-4)
    assert s.lr_at(60000) == pytest.approx(1e-5)
    assert s.lr_at(100000) == pytest.approx(1e-6, rel=1e-9)


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(lr0=0.0)
    with pytest.raises(ValueError):
        TrainSchedule(decay_steps=(100, 100))
    with pytest.raises(ValueError):
        TrainSchedule(decay_steps=(200, 100))
    with pytest.raises(ValueError):
        TrainSchedule(lambda1=-1.0)


def test_rd_only_phase_never_touches_angle_net(tiny_manifest):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.angnet.parameters().items()}
    rd_before = {k: v.copy() for k, v in model.rdnet.parameters().items()}
    train_drd(model, tiny_manifest, sched(total_epochs=1, rd_only_epochs=1), seed=1)
    after = model.angnet.parameters()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    rd_after = model.rdnet.parameters()
    assert any(not np.array_equal(rd_before[k], rd_after[k]) for k in rd_before)


def test_joint_phase_updates_both_networks(tiny_manifest):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.angnet.parameters().items()}
    train_drd(model, tiny_manifest, sched(total_epochs=2, rd_only_epochs=1), seed=1)
    after = model.angnet.parameters()
    assert any(not np.array_equal(before[k], after[k]) for k in before)


def test_losses_decrease_and_are_logged(tiny_manifest):
    model = tiny_model()
    res = train_drd(model, tiny_manifest, sched(total_epochs=4, rd_only_epochs=1),
                    seed=2, augment=False)
    assert len(res.logs) == 4
    assert res.logs[-1].l_rd < res.logs[0].l_rd
    # angle losses only exist in the joint phase
    assert res.logs[0].l_azi == 0.0
    assert res.logs[1].l_azi > 0.0
    assert res.logs[-1].l_azi < res.logs[1].l_azi


def test_training_is_deterministic(tiny_manifest):
    def run():
        m = tiny_model(seed=5)
        train_drd(m, tiny_manifest, sched(), seed=3)
        return m.parameters()

    pa, pb = run(), run()
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_resume_bookkeeping(tiny_manifest):
    model = tiny_model()
    first = train_drd(model, tiny_manifest, sched(total_epochs=2), seed=4)
    assert first.state.epoch == 2
    steps_per_epoch = first.state.step // 2
    resumed = train_drd(model, tiny_manifest, sched(total_epochs=4), seed=4,
                        state=first.state)
    assert [log.epoch for log in resumed.logs] == [3, 4]
    assert resumed.state.step == 4 * steps_per_epoch
    assert resumed.state.adam_rd["t"] == resumed.state.step


def test_resume_past_end_is_noop(tiny_manifest):
    model = tiny_model()
    first = train_drd(model, tiny_manifest, sched(total_epochs=2), seed=4)
    before = {k: v.copy() for k, v in model.parameters().items()}
    again = train_drd(model, tiny_manifest, sched(total_epochs=2), seed=4,
                      state=first.state)
    assert again.logs == []
    after = model.parameters()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_divergence_raises_floating_point_error(tiny_manifest):
    model = tiny_model()
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(FloatingPointError):
            train_drd(model, tiny_manifest,
                      sched(lr0=1e12, total_epochs=3, rd_only_epochs=0), seed=0)


def test_finetune_zero_epochs_is_noop(tiny_manifest):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.parameters().items()}
    res = finetune_noise(model, tiny_manifest, sched(), epochs=0)
    assert res.logs == []
    after = model.parameters()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_finetune_uses_noise_and_joint_from_start(tiny_manifest):
    model = tiny_model()
    ang_before = {k: v.copy() for k, v in model.angnet.parameters().items()}
    res = finetune_noise(model, tiny_manifest, sched(), epochs=1, noise_range=(10.0, 20.0))
    assert len(res.logs) == 1
    assert res.logs[0].l_azi > 0.0  # joint immediately, no rd-only phase
    ang_after = model.angnet.parameters()
    assert any(not np.array_equal(ang_before[k], ang_after[k]) for k in ang_before)


def test_training_log_file_written(tiny_manifest, tmp_path):
    model = tiny_model()
    path = tmp_path / "log.csv"
    train_drd(model, tiny_manifest, sched(total_epochs=1), seed=0, log_path=path)
    text = path.read_text()
    assert "epoch,step,lr,l_rd,l_azi,l_ele,val_rd_acc,val_az_acc,val_el_acc" in text
    assert len(text.strip().splitlines()) >= 2


def test_separate_angnet_trains_and_predicts(tiny_manifest):
    model = tiny_model()
    net = train_separate_angnet(tiny_manifest, model, seed=0, epochs=3)
    outs = net.forward({"crop": np.zeros((2, 4, 3, 3), dtype=np.float32)})
    assert outs["az"].shape == (2, 6)
    assert outs["el"].shape == (2, 4)


def test_full_objective_gradients_small():
    report = drd_gradient_check(seed=0, n_per_tensor=2, map_size=8,
                                n_antennas=2, batch=1, encoder_widths=(2,))
    assert report.max_rel_err <= 1e-4, str(report)
    assert report.n_checked > 0
