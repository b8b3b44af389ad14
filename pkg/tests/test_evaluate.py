"""Matching rules and accuracy bookkeeping."""

import math

import numpy as np
import pytest

from drd.classic import ideal_calibration
from drd.core import AngleGrid, Detection4D, GroundTruthLabel, default_params
from drd.evaluate import (
    AccuracyReport,
    accuracy,
    combine,
    match_detections,
    pooled_accuracy,
    snr_sweep,
    train_calibration,
)
from drd.sim import SimConfig, generate_calibration_dataset


def det(r, d, az=0, el=0, score=0.9, cls=1):
    return Detection4D(r_bin=r, d_bin=d, az_bin=az, el_bin=el, class_label=cls, score=score)


def gt(r, d, az=0, el=0):
    return GroundTruthLabel(r_bin=r, d_bin=d, az_bin=az, el_bin=el)


def test_match_within_one_bin_gate():
    m = match_detections([det(10, 10)], [gt(11, 11)])
    assert len(m.pairs) == 1
    m = match_detections([det(10, 10)], [gt(12, 10)])
    assert len(m.pairs) == 0
    assert len(m.unmatched_dets) == 1
    assert len(m.unmatched_gts) == 1


def test_match_one_to_one_greedy_prefers_smaller_error():
    # one det between two GTs: exact match wins over the 1-off
    m = match_detections([det(10, 10)], [gt(10, 11), gt(10, 10)])
    assert len(m.pairs) == 1
    assert m.pairs[0].gt.d_bin == 10
    assert len(m.unmatched_gts) == 1


def test_match_never_reuses_a_gt():
    m = match_detections([det(10, 10), det(10, 11)], [gt(10, 10)])
    assert len(m.pairs) == 1
    assert len(m.unmatched_dets) == 1


def test_match_missing_angles_become_infinite_error():
    d = Detection4D(r_bin=5, d_bin=5, az_bin=None, el_bin=None, class_label=1, score=0.9)
    m = match_detections([d], [gt(5, 5, az=3, el=2)])
    assert m.pairs[0].az_err == float("inf")
    assert m.pairs[0].el_err == float("inf")
    rep = accuracy(m)
    assert rep.rd_accuracy == 100.0
    assert rep.az_accuracy == 0.0


def test_accuracy_denominator_is_detection_count():
    # 1 perfect match + 1 false alarm: all metrics take the 50% hit
    m = match_detections([det(10, 10, az=4, el=4), det(40, 40)], [gt(10, 10, az=4, el=4)])
    rep = accuracy(m)
    assert rep.n_det == 2
    assert rep.n_false_alarm == 1
    assert rep.rd_accuracy == 50.0
    assert rep.az_accuracy == 50.0
    assert rep.el_accuracy == 50.0


def test_accuracy_miss_does_not_dilute():
    m = match_detections([det(10, 10, az=4, el=4)], [gt(10, 10, az=4, el=4), gt(50, 50)])
    rep = accuracy(m)
    assert rep.n_det == 1
    assert rep.n_miss == 1
    assert rep.rd_accuracy == 100.0


def test_accuracy_angle_tolerance_two_bins():
    m = match_detections([det(10, 10, az=6, el=9)], [gt(10, 10, az=4, el=12)])
    rep = accuracy(m)
    assert rep.az_accuracy == 100.0  # |6-4| = 2, inside
    assert rep.el_accuracy == 0.0    # |9-12| = 3, outside


def test_accuracy_empty_detections_is_nan():
    rep = accuracy(match_detections([], [gt(1, 1)]))
    assert math.isnan(rep.rd_accuracy)
    assert rep.n_det == 0
    assert rep.n_miss == 1


def test_combine_pools_across_frames():
    a = match_detections([det(10, 10)], [gt(10, 10)])
    b = match_detections([det(5, 5)], [gt(30, 30)])
    rep = accuracy(combine([a, b]))
    assert rep.n_det == 2
    assert rep.n_matched == 1
    assert rep.n_miss == 1
    assert rep.rd_accuracy == 50.0


def test_pooled_accuracy_runs_detector_per_frame():
    frames = ["f0", "f1"]
    labels = [[gt(1, 1)], [gt(2, 2)]]

    def detect(f):
        return [det(1, 1)] if f == "f0" else []

    rep = pooled_accuracy(detect, frames, labels)
    assert rep.n_det == 1
    assert rep.rd_accuracy == 100.0


def test_report_tuple_order():
    rep = AccuracyReport(1.0, 2.0, 3.0, n_det=1, n_matched=1, n_miss=0, n_false_alarm=0)
    assert rep.as_tuple() == (1.0, 2.0, 3.0)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    import dataclasses

    p = default_params()
    small = dataclasses.replace(
        p, n_samples=32, n_chirps=32, sample_rate=32 / p.chirp_duration
    )
    grid = AngleGrid()
    cfg = SimConfig(n_radars=10, frames_per_radar=3, range_bin=8, noise_snr_db=40.0)
    out = tmp_path_factory.mktemp("evalset")
    manifest = generate_calibration_dataset(out, cfg, small, grid, seed=5)
    return manifest, small, grid


def test_train_calibration_averages_only_train_radars(small_dataset):
    manifest, params, grid = small_dataset
    cal = train_calibration(manifest, grid, params.array_geometry)
    train_ids = set(manifest.radar_ids("train"))
    mats = [
        ideal_calibration(grid, params.array_geometry).matrix
        * manifest.perturbation_of(rid).complex_gains()[:, None]
        for rid in sorted(train_ids)
    ]
    assert np.allclose(cal.matrix, np.mean(mats, axis=0))


def test_snr_sweep_rows_sorted_and_complete(small_dataset):
    manifest, params, grid = small_dataset
    from drd.model import AngNetConfig, DRDModel, RDNetConfig

    model = DRDModel(
        params, grid,
        rd_config=RDNetConfig(n_channels=16, encoder_widths=(4, 8)),
        seed=0,
    )
    rows = snr_sweep(manifest, model, snr_list=[30.0, 10.0], trials=1, seed=0)
    assert len(rows) == 6
    assert [r[0] for r in rows] == [10.0, 10.0, 10.0, 30.0, 30.0, 30.0]
    assert {r[1] for r in rows} == {"drd", "classic1", "classic2"}
    # determinism of the shared noise draw
    rows2 = snr_sweep(manifest, model, snr_list=[30.0, 10.0], trials=1, seed=0)
    assert rows == rows2
