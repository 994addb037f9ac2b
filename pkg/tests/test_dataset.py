import math

import numpy as np
import pytest

from minehaul.config import AugSection, SensorSection
from minehaul.errors import ConfigMismatchError, DatasetParseError, InsufficientDataError, InvalidInputError
from minehaul.schemas.common import LateralCommand, LongitudinalCommand
from minehaul.schemas.driving import DatasetManifest, DemoFrame, FilterThresholds, TrainingSample
from minehaul.schemas.world import GnssFix, RangeScan
from minehaul.services.dataset_service import (
    apply_augmentation,
    augment,
    build_lookahead_labels,
    build_training_set,
    filter_bias,
    fit_thresholds,
    read_dataset,
    read_jsonl,
    threshold_report,
    write_dataset,
    write_jsonl,
)

FULL_CIRCLE = 2.0 * math.pi


def _scan(t=0.0, beams=8):
    return RangeScan(
        beams=beams,
        fov=FULL_CIRCLE,
        ranges=np.linspace(10.0, 10.0 + 0.2 * (beams - 1), beams),
        valid=np.ones(beams, dtype=bool),
        timestamp=t,
    )


def _frame(index, s, steer=0.0, throttle=0.5, episode=0):
    t = 0.1 * index
    return DemoFrame(
        episode=episode,
        index=index,
        t=t,
        s=s,
        scan=_scan(t),
        gnss=GnssFix(x=s, y=0.0, timestamp=t),
        speed=5.0,
        hlc_lat=LateralCommand.STRAIGHT,
        hlc_lon=LongitudinalCommand.MAINTAIN,
        steer=steer,
        throttle=throttle,
        brake_e=0.0,
        brake_m=0.0,
    )


def _sample(steer=0.0, k=3, beams=8):
    labels = np.zeros((4, k))
    labels[0] = steer
    labels[1] = 0.4
    return TrainingSample(
        scan=_scan(beams=beams),
        gnss=GnssFix(x=1.0, y=2.0),
        speed=3.0,
        hlc_lat=LateralCommand.STRAIGHT,
        hlc_lon=LongitudinalCommand.MAINTAIN,
        labels=labels,
    )


def test_uniform_steering_quantiles():
    rng = np.random.default_rng(0)
    frames = [_frame(i, float(i), steer=float(v), throttle=float(a))
              for i, (v, a) in enumerate(zip(rng.uniform(-1.0, 1.0, 20_000), rng.uniform(0.0, 1.0, 20_000)))]
    thresholds = fit_thresholds(frames, 0.99)
    assert thresholds.steer_low == pytest.approx(-0.99, abs=0.01)
    assert thresholds.steer_up == pytest.approx(0.99, abs=0.01)
    assert thresholds.throttle_up == pytest.approx(0.995, abs=0.01)
    report = threshold_report(frames, thresholds, 0.99)
    assert 0.005 <= report.removed_fraction <= 0.02


def test_all_zero_steering_filters_every_turn():
    frames = [_frame(i, float(i)) for i in range(1000)]
    thresholds = fit_thresholds(frames)
    assert (thresholds.steer_low, thresholds.steer_up) == (0.0, 0.0)
    assert filter_bias([_frame(0, 0.0, steer=0.1)], thresholds) == []


def test_saturated_throttle_is_kept():
    # 3% of frames at full throttle: the 99.5% quantile lands on the saturation value.
    frames = [_frame(i, float(i), throttle=1.0 if i % 100 < 3 else 0.4) for i in range(2000)]
    thresholds = fit_thresholds(frames, 0.99)
    assert thresholds.throttle_up > 1.0
    assert len(filter_bias(frames, thresholds)) == len(frames)


def test_threshold_preconditions():
    frames = [_frame(i, float(i)) for i in range(10)]
    with pytest.raises(InsufficientDataError):
        fit_thresholds(frames)
    with pytest.raises(InvalidInputError):
        fit_thresholds(frames, confidence=0.8, min_frames=1)


def test_filter_rules():
    thresholds = FilterThresholds(steer_low=-0.9, steer_up=0.9, throttle_up=0.8)
    assert filter_bias([_frame(0, 0.0, steer=-1.0)], thresholds) == []
    assert filter_bias([_frame(0, 0.0, throttle=0.8)], thresholds) == []
    kept = filter_bias([_frame(0, 0.0, steer=0.9, throttle=0.79)], thresholds)
    assert len(kept) == 1


def test_filter_is_idempotent():
    rng = np.random.default_rng(1)
    frames = [_frame(i, float(i), steer=float(v)) for i, v in enumerate(rng.uniform(-1.0, 1.0, 200))]
    thresholds = FilterThresholds(steer_low=-0.5, steer_up=0.6, throttle_up=0.9)
    once = filter_bias(frames, thresholds)
    assert filter_bias(once, thresholds) == once
    assert all(thresholds.steer_low <= f.steer <= thresholds.steer_up for f in once)


def test_single_lookahead_is_own_command():
    frames = [_frame(i, 0.5 * i, steer=0.1 * (i % 3)) for i in range(10)]
    samples = build_lookahead_labels(frames, k=1, spacing=1.0)
    assert len(samples) == 10
    for frame, sample in zip(frames, samples):
        assert sample.labels[:, 0] == pytest.approx(frame.command.as_array())


def test_linear_commands_interpolate_exactly():
    frames = [_frame(i, 0.7 * i, steer=0.01 * 0.7 * i) for i in range(40)]
    samples = build_lookahead_labels(frames, k=5, spacing=1.0)
    assert samples
    for sample in samples:
        assert sample.labels[0] == pytest.approx(0.01 * (sample.s + np.arange(5)), abs=1e-12)
        assert sample.s + 4.0 <= frames[-1].s


def test_labels_never_cross_gaps():
    frames = [_frame(i, float(i), steer=0.2) for i in range(10)]
    frames += [_frame(i, float(i), steer=-0.2) for i in range(12, 20)]
    for sample in build_lookahead_labels(frames, k=3, spacing=1.0):
        assert np.all(sample.labels[0] == sample.labels[0, 0])


def test_label_arguments_checked():
    with pytest.raises(InvalidInputError):
        build_lookahead_labels([], k=0, spacing=1.0)


def test_identity_augmentation():
    sample = _sample(steer=0.3)
    out = apply_augmentation(sample, 1.0, 0.0, False)
    assert out.augmented
    assert out.model_copy(update={"augmented": False}) == sample


def test_zero_steering_survives_scaling():
    out = apply_augmentation(_sample(steer=0.0), 1.05, 0.0, False)
    assert np.all(out.labels[0] == 0.0)
    assert out.scan.ranges == pytest.approx(np.floor(_scan().ranges * 1.05 / 0.2 + 1e-6) * 0.2)


def test_yaw_shifts_beams_and_corrects_steering():
    sample = _sample(steer=0.0, k=3)
    yaw = math.pi / 4.0
    out = apply_augmentation(sample, 1.0, yaw, False, k_yaw=1.0)
    assert out.scan.ranges == pytest.approx(np.roll(sample.scan.ranges, -1))
    assert out.labels[0] == pytest.approx([-yaw * 1.0, -yaw * 0.5, 0.0])


def test_gnss_dropout():
    out = apply_augmentation(_sample(), 1.0, 0.0, True)
    assert not out.gnss_valid
    assert (out.gnss.x, out.gnss.y) == (0.0, 0.0)


def test_random_augmentation_stays_in_range():
    rng = np.random.default_rng(2)
    aug = AugSection(yaw_deg=30.0, gnss_drop=0.5)
    for steer in np.linspace(-1.0, 1.0, 21):
        out = augment(_sample(steer=float(steer)), rng, aug, sensors=SensorSection(beams=8))
        assert np.all(np.abs(out.labels[0]) <= 1.0)
        assert out.scan.ranges.shape == (8,)


def test_training_set_appends_augmented_copies(rng):
    frames = [_frame(i, float(i), steer=0.1) for i in range(20)]
    samples = build_training_set(frames, 3, 1.0, rng, AugSection(copies=2))
    plain = [s for s in samples if not s.augmented]
    assert len(samples) == 3 * len(plain)


def test_dataset_round_trip(tmp_path):
    frames = [_frame(i, float(i), steer=0.01 * i) for i in range(5)]
    path = tmp_path / "demos.jsonl"
    manifest = DatasetManifest(kind="demonstrations", seed=7, config_hash="abc", count=5, episodes=[0])
    write_dataset(path, frames, manifest)
    loaded, meta = read_dataset(path, DemoFrame)
    assert loaded == frames
    assert meta.seed == 7
    with pytest.raises(ConfigMismatchError):
        read_dataset(path, DemoFrame, expected_hash="def", strict=True)
    assert len(read_dataset(path, DemoFrame, expected_hash="def")[0]) == 5


def test_parse_error_names_the_line(tmp_path):
    path = tmp_path / "demos.jsonl"
    write_jsonl(path, [_frame(0, 0.0), _frame(1, 1.0)])
    with path.open("a") as fh:
        fh.write('{"episode": 0}\n')
    with pytest.raises(DatasetParseError) as info:
        read_jsonl(path, DemoFrame)
    assert info.value.line == 3


def test_same_seed_same_bytes(tmp_path):
    frames = [_frame(i, float(i), steer=0.05) for i in range(30)]
    paths = []
    for name in ("a.jsonl", "b.jsonl"):
        samples = build_training_set(frames, 3, 1.0, np.random.default_rng(9))
        paths.append(tmp_path / name)
        write_jsonl(paths[-1], samples)
    assert paths[0].read_bytes() == paths[1].read_bytes()
