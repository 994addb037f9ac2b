"""Dataset tooling: bias filtering, lookahead labels, augmentation and JSON Lines storage."""

import json
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from minehaul.config import AugSection, SensorSection
from minehaul.errors import (
    ConfigMismatchError,
    DatasetParseError,
    InputMissingError,
    InsufficientDataError,
    InvalidInputError,
)
from minehaul.schemas.common import CHANNEL_HIGH, CHANNEL_LOW
from minehaul.schemas.driving import (
    DatasetManifest,
    DemoFrame,
    FilterThresholds,
    ThresholdReport,
    TrainingSample,
)
from minehaul.schemas.world import GnssFix, RangeScan
from minehaul.services.sensor_service import beam_spacing, quantize

logger = logging.getLogger(__name__)

M = TypeVar("M", bound=BaseModel)


def _quantile_levels(confidence: float) -> Tuple[float, float]:
    tail = (1.0 - confidence) / 2.0
    return tail, 1.0 - tail


def _upper_bound(values: np.ndarray, level: float) -> float:
    bound = float(np.quantile(values, level))
    # A saturation atom at the quantile would flag every saturated frame; step past it.
    if np.mean(values >= bound) > 2.0 * (1.0 - level):
        bound = float(np.nextafter(bound, np.inf))
    return bound


def fit_thresholds(
    frames: Sequence[DemoFrame], confidence: float = 0.99, min_frames: int = 1000
) -> FilterThresholds:
    """Empirical confidence bounds of recorded steering and throttle.

    Steering gets both tails; throttle only the upper one. When more than
    twice the tail mass sits exactly on the throttle quantile (full throttle
    while starting from rest), the bound moves just above that value so the
    saturated frames are kept.

    Raises:
        InsufficientDataError: If fewer than ``min_frames`` frames are given
        InvalidInputError: If ``confidence`` is outside (0.9, 1)
    """
    if not 0.9 < confidence < 1.0:
        raise InvalidInputError(f"confidence must lie in (0.9, 1), got {confidence}")
    if len(frames) < min_frames:
        raise InsufficientDataError(
            f"{len(frames)} frames given, {min_frames} needed to fit thresholds",
            details={"frames": len(frames), "required": min_frames},
        )
    lo, hi = _quantile_levels(confidence)
    steer = np.array([f.steer for f in frames])
    throttle = np.array([f.throttle for f in frames])
    s_low, s_up = np.quantile(steer, [lo, hi])
    return FilterThresholds(
        steer_low=float(s_low), steer_up=float(s_up), throttle_up=_upper_bound(throttle, hi)
    )


def is_biased(frame: DemoFrame, thresholds: FilterThresholds) -> Tuple[bool, bool]:
    """(steering outside the bounds, throttle at or above its bound)."""
    steer_out = frame.steer < thresholds.steer_low or frame.steer > thresholds.steer_up
    return steer_out, frame.throttle >= thresholds.throttle_up


def filter_bias(frames: Sequence[DemoFrame], thresholds: FilterThresholds) -> List[DemoFrame]:
    """Drop biased frames. Kept frames keep their episode and index, so gaps stay visible."""
    return [f for f in frames if not any(is_biased(f, thresholds))]


def threshold_report(
    frames: Sequence[DemoFrame], thresholds: FilterThresholds, confidence: float
) -> ThresholdReport:
    lo, hi = _quantile_levels(confidence)
    flags = [is_biased(f, thresholds) for f in frames]
    return ThresholdReport(
        confidence=confidence,
        thresholds=thresholds,
        quantiles={"steer_low": lo, "steer_up": hi, "throttle_up": hi},
        total_frames=len(frames),
        removed_frames=sum(1 for a, b in flags if a or b),
        removed_by_steer=sum(1 for a, _ in flags if a),
        removed_by_throttle=sum(1 for _, b in flags if b),
    )


def split_segments(frames: Sequence[DemoFrame]) -> List[List[DemoFrame]]:
    """Contiguous runs: a new segment starts at an episode change or an index gap."""
    segments: List[List[DemoFrame]] = []
    for f in frames:
        prev = segments[-1][-1] if segments else None
        if prev is None or f.episode != prev.episode or f.index != prev.index + 1:
            segments.append([f])
        else:
            segments[-1].append(f)
    return segments


def _sample_from(frame: DemoFrame, labels: np.ndarray) -> TrainingSample:
    return TrainingSample(
        episode=frame.episode,
        index=frame.index,
        s=frame.s,
        scan=frame.scan,
        gnss=frame.gnss,
        speed=frame.speed,
        hlc_lat=frame.hlc_lat,
        hlc_lon=frame.hlc_lon,
        labels=labels,
    )


def build_lookahead_labels(frames: Sequence[DemoFrame], k: int, spacing: float) -> List[TrainingSample]:
    """Label every frame with commands interpolated at ``s + j * spacing``, j < k.

    Interpolation only uses frames of the same contiguous segment at or
    beyond the frame's odometer; frames whose horizon runs past the end of
    their segment are dropped. y_0 is the frame's own command.

    Raises:
        InvalidInputError: If ``k < 1`` or ``spacing <= 0``
    """
    if k < 1 or spacing <= 0:
        raise InvalidInputError("lookahead labels need k >= 1 and spacing > 0")
    offsets = spacing * np.arange(k)
    samples: List[TrainingSample] = []
    for segment in split_segments(frames):
        s = np.array([f.s for f in segment])
        cmds = np.stack([f.command.as_array() for f in segment])
        # Stationary frames repeat an odometer reading; the first one anchors the table.
        keep = np.concatenate([[True], np.diff(s) > 0.0])
        s_table, c_table = s[keep], cmds[keep]
        for i, frame in enumerate(segment):
            targets = s[i] + offsets
            if targets[-1] > s_table[-1] + 1e-12:
                continue
            labels = np.empty((4, k))
            for ch in range(4):
                labels[ch] = np.interp(targets, s_table, c_table[:, ch])
            labels[:, 0] = cmds[i]
            samples.append(_sample_from(frame, np.clip(labels, CHANNEL_LOW[:, None], CHANNEL_HIGH[:, None])))
    return samples


def apply_augmentation(
    sample: TrainingSample,
    scale: float,
    yaw: float,
    drop_gnss: bool,
    k_yaw: float = 1.0,
    sensors: Optional[SensorSection] = None,
) -> TrainingSample:
    """Scale ranges by ``scale``, rotate the scan by ``yaw`` radians and optionally drop the fix."""
    sensors = sensors or SensorSection()
    scan = sample.scan
    valid = scan.valid.copy()
    ranges = scan.ranges.copy()
    if scale != 1.0:
        scaled = ranges * scale
        valid &= scaled <= sensors.r_max
        ranges = np.where(valid, np.clip(scaled, sensors.r_min, sensors.r_max), sensors.r_max)
        ranges = quantize(ranges, sensors.quantum)
    shift = int(round(yaw / beam_spacing(scan.beams, scan.fov)))
    if shift:
        ranges, valid = _shift_beams(ranges, valid, shift, scan.fov, sensors.r_max)

    labels = sample.labels.copy()
    labels[0] = labels[0] / scale
    k = sample.k
    decay = np.ones(1) if k == 1 else (k - 1 - np.arange(k)) / (k - 1)
    labels[0] = labels[0] - k_yaw * yaw * decay
    labels = np.clip(labels, CHANNEL_LOW[:, None], CHANNEL_HIGH[:, None])

    gnss = GnssFix.lost(sample.gnss.timestamp) if drop_gnss else sample.gnss
    return sample.model_copy(
        update={
            "scan": RangeScan(beams=scan.beams, fov=scan.fov, ranges=ranges, valid=valid, timestamp=scan.timestamp),
            "gnss": gnss,
            "labels": labels,
            "augmented": True,
        }
    )


def _shift_beams(
    ranges: np.ndarray, valid: np.ndarray, shift: int, fov: float, r_max: float
) -> Tuple[np.ndarray, np.ndarray]:
    # new[i] = old[i + shift]; a partial field of view loses the beams rotated out.
    if fov >= 2.0 * math.pi - 1e-12:
        return np.roll(ranges, -shift), np.roll(valid, -shift)
    n = len(ranges)
    idx = np.arange(n) + shift
    inside = (idx >= 0) & (idx < n)
    new_ranges = np.full(n, r_max)
    new_valid = np.zeros(n, dtype=bool)
    new_ranges[inside] = ranges[idx[inside]]
    new_valid[inside] = valid[idx[inside]]
    return new_ranges, new_valid


def augment(
    sample: TrainingSample,
    rng: np.random.Generator,
    aug: Optional[AugSection] = None,
    k_yaw: float = 1.0,
    sensors: Optional[SensorSection] = None,
) -> TrainingSample:
    """Randomly scaled, rotated and (rarely) GNSS-dropped copy of ``sample``.

    Three draws are consumed per call in a fixed order: scale, yaw, dropout.
    """
    aug = aug or AugSection()
    scale = float(rng.uniform(*aug.scale))
    yaw_bound = math.radians(aug.yaw_deg)
    yaw = float(rng.uniform(-yaw_bound, yaw_bound))
    drop = bool(rng.random() < aug.gnss_drop)
    return apply_augmentation(sample, scale, yaw, drop, k_yaw, sensors)


def build_training_set(
    frames: Sequence[DemoFrame],
    k: int,
    spacing: float,
    rng: np.random.Generator,
    aug: Optional[AugSection] = None,
    k_yaw: float = 1.0,
    sensors: Optional[SensorSection] = None,
) -> List[TrainingSample]:
    """Lookahead samples followed by their augmented copies."""
    aug = aug or AugSection()
    samples = build_lookahead_labels(frames, k, spacing)
    if aug.enabled and aug.copies:
        extra = [augment(s, rng, aug, k_yaw, sensors) for _ in range(aug.copies) for s in samples]
        samples = samples + extra
    return samples


def write_jsonl(path: Path, records: Iterable[BaseModel]) -> int:
    """Write one JSON document per line; returns the record count."""
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.model_dump_json(by_alias=True))
            fh.write("\n")
            count += 1
    return count


def read_jsonl(path: Path, model: Type[M]) -> List[M]:
    """Parse a JSON Lines file.

    Raises:
        InputMissingError: If the file does not exist
        DatasetParseError: On the first malformed line, naming its number
    """
    if not path.exists():
        raise InputMissingError(f"dataset not found: {path}", details={"path": str(path)})
    records: List[M] = []
    with path.open("r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError as e:
                raise DatasetParseError(str(path), number, e.errors()[0]["msg"]) from e
    return records


def manifest_path(path: Path) -> Path:
    return path.with_suffix(".manifest.json")


def write_dataset(path: Path, records: Sequence[BaseModel], manifest: DatasetManifest) -> Path:
    count = write_jsonl(path, records)
    if count != manifest.count:
        manifest = manifest.model_copy(update={"count": count})
    manifest_path(path).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote {count} {manifest.kind} records to {path}")
    return path


def read_manifest(path: Path) -> DatasetManifest:
    target = manifest_path(path)
    if not target.exists():
        raise InputMissingError(f"manifest not found: {target}", details={"path": str(target)})
    try:
        return DatasetManifest.model_validate_json(target.read_text())
    except ValidationError as e:
        raise DatasetParseError(str(target), 1, e.errors()[0]["msg"]) from e


def read_dataset(
    path: Path, model: Type[M], expected_hash: Optional[str] = None, strict: bool = False
) -> Tuple[List[M], DatasetManifest]:
    """Records plus manifest.

    Raises:
        ConfigMismatchError: With ``strict`` when the manifest hash differs from ``expected_hash``
    """
    manifest = read_manifest(path)
    if strict and expected_hash is not None and manifest.config_hash != expected_hash:
        raise ConfigMismatchError(
            f"{path} was built under config {manifest.config_hash[:12]}, current is {expected_hash[:12]}",
            details={"dataset": manifest.config_hash, "current": expected_hash},
        )
    records = read_jsonl(path, model)
    if len(records) != manifest.count:
        logger.warning(f"{path}: manifest lists {manifest.count} records, file has {len(records)}")
    return records, manifest


def thresholds_payload(report: ThresholdReport) -> dict:
    payload = report.model_dump(mode="json")
    payload["removed_fraction"] = report.removed_fraction
    return payload


def write_threshold_report(path: Path, report: ThresholdReport) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(thresholds_payload(report), indent=2, sort_keys=True) + "\n")
    return path
