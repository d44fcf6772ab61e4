"""Skeleton frame ingestion and rolling-window sampling.

Timestamped 19-joint skeleton frames come in one at a time (live or replayed
from a session file); fixed-length sample windows come out at a configured
cadence. Windows are immutable and safe to hand to concurrent consumers; the
sampler itself is single-owner mutable state.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import FileFormatError, ValidationError

# NuiTrack enumeration. The tracker reports the two collar slots as the same
# physical point, so a single collar joint keeps the count at 19.
JOINT_NAMES = (
    "head",
    "neck",
    "torso",
    "waist",
    "collar",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
)
NUM_JOINTS = len(JOINT_NAMES)

SESSION_FORMAT = "adlsense-session"
SESSION_VERSION = 1


class FrameValidationError(ValidationError):
    """A skeleton frame is malformed (wrong joint count, non-finite value)."""


class NonMonotoneTimestampError(ValidationError):
    """Frame timestamps must strictly increase within a session."""

    def __init__(self, previous: float, current: float):
        self.previous = previous
        self.current = current
        super().__init__(
            f"frame timestamp {current!r} is not greater than previous "
            f"timestamp {previous!r}"
        )


class SessionFormatError(FileFormatError):
    """Session file fails to parse or declares an unsupported version."""


def joint_index(name: str) -> int:
    try:
        return JOINT_NAMES.index(name)
    except ValueError:
        raise KeyError(f"unknown joint name {name!r}") from None


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SkeletonFrame:
    """One tracked skeleton: 19 joint positions in meters, camera frame.

    ``confidence`` is optional per-joint tracking confidence in [0, 1].
    ``video_ref``/``still_ref`` are opaque media references carried through
    for downstream providers; they are never decoded here.
    """

    timestamp: float
    joints: np.ndarray
    confidence: np.ndarray | None = None
    video_ref: str | None = None
    still_ref: str | None = None

    def __post_init__(self):
        joints = np.asarray(self.joints, dtype=np.float64)
        if joints.shape != (NUM_JOINTS, 3):
            raise FrameValidationError(
                f"expected {NUM_JOINTS}x3 joint array, got shape {joints.shape}"
            )
        if not np.all(np.isfinite(joints)):
            raise FrameValidationError("joint coordinates must be finite")
        if not np.isfinite(self.timestamp):
            raise FrameValidationError("timestamp must be finite")
        object.__setattr__(self, "joints", _freeze(joints))
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64)
            if conf.shape != (NUM_JOINTS,):
                raise FrameValidationError(
                    f"expected {NUM_JOINTS} confidence values, got shape {conf.shape}"
                )
            if not np.all(np.isfinite(conf)) or conf.min() < 0.0 or conf.max() > 1.0:
                raise FrameValidationError("confidence values must lie in [0, 1]")
            object.__setattr__(self, "confidence", _freeze(conf))


@dataclass(frozen=True)
class SamplerConfig:
    """Rolling-window cadence.

    With 30 FPS input and the default stride of 6, five samples are retained
    per second and a 16-sample window spans ~3 seconds.
    """

    input_rate: float = 30.0
    sample_stride: int = 6
    window_len: int = 16
    emit_every: int = 1

    def __post_init__(self):
        if self.input_rate <= 0:
            raise ValidationError("input_rate must be positive")
        if self.sample_stride < 1 or self.window_len < 1 or self.emit_every < 1:
            raise ValidationError("sample_stride, window_len, emit_every must be >= 1")


@dataclass(frozen=True)
class SampleWindow:
    """A fixed-length run of retained frames; the unit of classification."""

    frames: tuple[SkeletonFrame, ...]
    window_index: int
    video_refs: tuple[str, ...] | None = None
    still_ref: str | None = None

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("a sample window needs at least one frame")
        ts = [f.timestamp for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("window timestamps must strictly increase")
        if self.video_refs is not None and len(self.video_refs) != len(self.frames):
            raise ValidationError("video_refs must match the frame count")

    def __len__(self) -> int:
        return len(self.frames)

    def joint_tensor(self) -> np.ndarray:
        """Stacked (T, 19, 3) joint positions."""
        return np.stack([f.joints for f in self.frames])

    @property
    def start_time(self) -> float:
        return self.frames[0].timestamp

    @property
    def end_time(self) -> float:
        return self.frames[-1].timestamp


class RollingSampler:
    """Retains every ``sample_stride``-th accepted frame and emits windows.

    Once ``window_len`` samples have been retained, a window holding the most
    recent ``window_len`` samples is emitted every ``emit_every`` retained
    samples. Consecutive windows therefore overlap in
    ``window_len - emit_every`` samples.
    """

    def __init__(self, config: SamplerConfig | None = None):
        self.config = config or SamplerConfig()
        self._retained: deque[SkeletonFrame] = deque(maxlen=self.config.window_len)
        self._accepted = 0
        self._retained_count = 0
        self._emitted = 0
        self._last_timestamp: float | None = None

    @property
    def windows_emitted(self) -> int:
        return self._emitted

    def push(self, frame: SkeletonFrame) -> SampleWindow | None:
        """Feed one frame; returns a window when the cadence emits one.

        Raises and leaves the sampler untouched when the frame is malformed
        or its timestamp does not advance.
        """
        if self._last_timestamp is not None and frame.timestamp <= self._last_timestamp:
            raise NonMonotoneTimestampError(self._last_timestamp, frame.timestamp)

        self._last_timestamp = frame.timestamp
        index = self._accepted
        self._accepted += 1
        if index % self.config.sample_stride != 0:
            return None

        self._retained.append(frame)
        self._retained_count += 1
        past_fill = self._retained_count - self.config.window_len
        if past_fill < 0 or past_fill % self.config.emit_every != 0:
            return None

        frames = tuple(self._retained)
        refs = tuple(f.video_ref for f in frames)
        window = SampleWindow(
            frames=frames,
            window_index=self._emitted,
            video_refs=refs if all(r is not None for r in refs) else None,
            still_ref=frames[-1].still_ref,
        )
        self._emitted += 1
        return window


def sample_windows(
    frames: Iterable[SkeletonFrame], config: SamplerConfig | None = None
) -> Iterator[SampleWindow]:
    """Run a whole frame sequence through a fresh sampler."""
    sampler = RollingSampler(config)
    for frame in frames:
        window = sampler.push(frame)
        if window is not None:
            yield window


def _frame_from_record(record: dict, frame_index: int) -> SkeletonFrame:
    if "t" not in record or "joints" not in record:
        raise SessionFormatError(
            f"frame {frame_index}: record needs 't' and 'joints' fields"
        )
    try:
        return SkeletonFrame(
            timestamp=float(record["t"]),
            joints=np.asarray(record["joints"], dtype=np.float64),
            confidence=record.get("conf"),
            video_ref=record.get("video_ref"),
            still_ref=record.get("image_ref"),
        )
    except (FrameValidationError, ValueError) as exc:
        raise FrameValidationError(f"frame {frame_index}: {exc}") from exc


def load_session(path) -> list[SkeletonFrame]:
    """Read a line-delimited session file: header line, then one frame per line."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise SessionFormatError(f"{path}: empty file, missing session header")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SessionFormatError(f"{path}: line 1: bad header: {exc}") from exc
        if header.get("format") != SESSION_FORMAT:
            raise SessionFormatError(
                f"{path}: not a {SESSION_FORMAT} file (format={header.get('format')!r})"
            )
        if header.get("version") != SESSION_VERSION:
            raise SessionFormatError(
                f"{path}: unsupported session version {header.get('version')!r}, "
                f"expected {SESSION_VERSION}"
            )
        frames: list[SkeletonFrame] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SessionFormatError(f"{path}: line {lineno}: {exc}") from exc
            frames.append(_frame_from_record(record, len(frames)))
    return frames


def save_session(frames: Sequence[SkeletonFrame], path, fps: float = 30.0) -> None:
    """Write frames in the session format (used by fixtures and tools)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps(
                {"format": SESSION_FORMAT, "version": SESSION_VERSION, "fps": fps}
            )
            + "\n"
        )
        for frame in frames:
            record: dict = {
                "t": frame.timestamp,
                "joints": [[float(v) for v in row] for row in frame.joints],
            }
            if frame.confidence is not None:
                record["conf"] = [float(v) for v in frame.confidence]
            if frame.video_ref is not None:
                record["video_ref"] = frame.video_ref
            if frame.still_ref is not None:
                record["image_ref"] = frame.still_ref
            fh.write(json.dumps(record) + "\n")
