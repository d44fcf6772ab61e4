"""Per-joint motion embedding and the ADL / non-ADL motion gate.

The motion embedding is the cumulative Euclidean distance each of the 19
joints travels across a sample window. Its joint-average is compared against
calibrated lower/upper thresholds: motion inside the open interval is treated
as activity-of-daily-living motion, anything outside (fidgeting, walking
through the room, wild non-task movement) is gated out before classification.

All functions here are pure; thresholds are calibrated offline from the
distribution of window averages over labeled activity recordings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import FileFormatError, ValidationError
from .skeleton import NUM_JOINTS, SampleWindow

THRESHOLDS_FORMAT = "adlsense-thresholds"
THRESHOLDS_VERSION = 1


class CalibrationError(ValidationError):
    """Threshold calibration got unusable input."""


@dataclass(frozen=True)
class MotionEmbedding:
    """19 nonnegative per-joint cumulative displacements, in meters."""

    per_joint: np.ndarray

    def __post_init__(self):
        per_joint = np.asarray(self.per_joint, dtype=np.float64)
        if per_joint.shape != (NUM_JOINTS,):
            raise ValidationError(
                f"motion embedding must have {NUM_JOINTS} entries, got {per_joint.shape}"
            )
        if not np.all(np.isfinite(per_joint)) or per_joint.min() < 0.0:
            raise ValidationError("motion embedding entries must be finite and >= 0")
        per_joint.flags.writeable = False
        object.__setattr__(self, "per_joint", per_joint)

    def average(self) -> float:
        return float(self.per_joint.mean())


@dataclass(frozen=True)
class GateThresholds:
    """Calibrated bounds on average global body motion, in meters per window."""

    m_min: float
    m_max: float
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.m_min <= self.m_max):
            raise ValidationError(
                f"need 0 <= m_min <= m_max, got ({self.m_min}, {self.m_max})"
            )

    def to_dict(self) -> dict:
        return {
            "m_min": self.m_min,
            "m_max": self.m_max,
            "calibration": dict(self.calibration),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GateThresholds":
        return cls(
            m_min=float(data["m_min"]),
            m_max=float(data["m_max"]),
            calibration=dict(data.get("calibration", {})),
        )


def compute_motion_embedding(window: SampleWindow) -> MotionEmbedding:
    """Sum consecutive inter-frame joint displacements over the window.

    For a 16-frame window this is the sum of the 15 consecutive difference
    norms per joint; a stationary joint contributes exactly zero.
    """
    joints = window.joint_tensor()
    if joints.shape[0] < 2:
        return MotionEmbedding(per_joint=np.zeros(NUM_JOINTS))
    steps = np.linalg.norm(np.diff(joints, axis=0), axis=2)
    return MotionEmbedding(per_joint=steps.sum(axis=0))


def average_motion(m: MotionEmbedding) -> float:
    """Scalar mean of the 19 per-joint displacements."""
    return m.average()


def calibrate_thresholds(
    averages: Sequence[float],
    percentile_lo: float = 1.0,
    percentile_hi: float = 99.0,
    margin_lo: float = 0.9,
    margin_hi: float = 1.1,
) -> GateThresholds:
    """Fit gate bounds to the distribution of window motion averages.

    ``m_min = margin_lo * percentile(averages, percentile_lo)`` and likewise
    for the upper bound. Percentiles resist outliers; margins leave slack for
    users not present in the calibration corpus. A single-sample corpus is
    accepted but flagged degenerate.
    """
    values = np.asarray(list(averages), dtype=np.float64)
    if values.size == 0:
        raise CalibrationError("cannot calibrate thresholds from an empty corpus")
    if not np.all(np.isfinite(values)) or values.min() < 0.0:
        raise CalibrationError("motion averages must be finite and >= 0")
    if not (0.0 <= percentile_lo <= percentile_hi <= 100.0):
        raise CalibrationError("need 0 <= percentile_lo <= percentile_hi <= 100")

    m_min = float(margin_lo * np.percentile(values, percentile_lo))
    m_max = float(margin_hi * np.percentile(values, percentile_hi))
    if m_min > m_max:
        raise CalibrationError(
            f"calibration produced inverted bounds ({m_min}, {m_max}); "
            "check margins and percentiles"
        )
    return GateThresholds(
        m_min=m_min,
        m_max=m_max,
        calibration={
            "sample_count": int(values.size),
            "percentile_lo": percentile_lo,
            "percentile_hi": percentile_hi,
            "margin_lo": margin_lo,
            "margin_hi": margin_hi,
            "degenerate": bool(values.size < 2 or m_min == m_max),
        },
    )


def classify_motion(m: MotionEmbedding, thresholds: GateThresholds) -> bool:
    """True iff the window's average motion falls strictly inside the gate."""
    avg = m.average()
    return thresholds.m_min < avg < thresholds.m_max


def save_thresholds(thresholds: GateThresholds, path) -> None:
    payload = {
        "format": THRESHOLDS_FORMAT,
        "version": THRESHOLDS_VERSION,
        **thresholds.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_thresholds(path) -> GateThresholds:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    if payload.get("format") != THRESHOLDS_FORMAT:
        raise FileFormatError(f"{path}: not a {THRESHOLDS_FORMAT} file")
    if payload.get("version") != THRESHOLDS_VERSION:
        raise FileFormatError(
            f"{path}: unsupported thresholds version {payload.get('version')!r}"
        )
    return GateThresholds.from_dict(payload)
