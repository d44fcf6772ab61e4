"""Backbone feature contract, spatial position encoding, and providers.

The fusion stage consumes a per-window bundle of backbone outputs: a video
feature grid and a pose feature grid (both 16 timesteps x 19 channels x 6x6),
normalized image-plane joint positions, and object detections. Two providers
satisfy that contract: a deterministic synthetic provider for desk-scale
testing, and a file provider reading bundles exported by real models over the
tensor wire format.

The 6x6 absolute-spatial-position encoding lives here because both the object
grid and the fusion spatial reference are built from it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import FileFormatError, ValidationError
from .skeleton import NUM_JOINTS, SampleWindow
from .wire import read_tensor_file, write_tensor_file

GRID_SIZE = 6
NUM_OBJECT_CLASSES = 38
WINDOW_STEPS = 16

FEATURES_FORMAT = "adlsense-features"
FEATURES_VERSION = 1

VIDEO_GRID_SHAPE = (WINDOW_STEPS, NUM_JOINTS, GRID_SIZE, GRID_SIZE)
POSE_GRID_SHAPE = (WINDOW_STEPS, NUM_JOINTS, GRID_SIZE, GRID_SIZE)
POSE_XY_SHAPE = (WINDOW_STEPS, NUM_JOINTS, 2)
OBJECT_GRID_SHAPE = (1, NUM_OBJECT_CLASSES, GRID_SIZE, GRID_SIZE)

# 3x3 binomial kernel used by the synthetic provider to derive the video grid
# from the pose grid (zero padding at the borders).
BLUR_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 16.0

# Household object classes drawn from the COCO vocabulary; index = class_id.
DEFAULT_OBJECT_VOCABULARY = (
    "cup", "fork", "knife", "spoon", "bowl", "bottle", "wine_glass",
    "chair", "couch", "bed", "dining_table", "toilet", "tv", "laptop",
    "mouse", "remote", "keyboard", "cell_phone", "microwave", "oven",
    "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy_bear", "hair_drier", "toothbrush", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "banana", "apple", "sandwich",
)
assert len(DEFAULT_OBJECT_VOCABULARY) == NUM_OBJECT_CLASSES


class FeatureShapeError(ValidationError):
    """A feature tensor violates the bundle contract."""


@dataclass(frozen=True)
class ObjectDetection:
    """One detected object instance with a normalized image-plane centroid."""

    class_id: int
    centroid: tuple[float, float]
    confidence: float

    def __post_init__(self):
        if not 0 <= self.class_id < NUM_OBJECT_CLASSES:
            raise ValidationError(
                f"class_id must be in [0, {NUM_OBJECT_CLASSES}), got {self.class_id}"
            )
        x, y = self.centroid
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValidationError("detection centroid must be finite")
        object.__setattr__(
            self, "centroid", (min(max(float(x), 0.0), 1.0), min(max(float(y), 0.0), 1.0))
        )
        if not (math.isfinite(self.confidence) and 0.0 <= self.confidence <= 1.0):
            raise ValidationError("detection confidence must lie in [0, 1]")


@dataclass(frozen=True)
class ProjectionConfig:
    """Orthographic camera model mapping world x/y (meters) to the unit square.

    ``u = 0.5 + (x - center_x) / extent_x`` and ``v = 0.5 - (y - center_y) /
    extent_y`` (image rows grow downward), clamped to [0, 1].
    """

    center_x: float = 0.0
    center_y: float = 1.0
    extent_x: float = 4.0
    extent_y: float = 4.0

    def __post_init__(self):
        if self.extent_x <= 0 or self.extent_y <= 0:
            raise ValidationError("projection extents must be positive")

    def project(self, joints: np.ndarray) -> np.ndarray:
        """Project (..., 3) world joints to (..., 2) normalized image points."""
        u = 0.5 + (joints[..., 0] - self.center_x) / self.extent_x
        v = 0.5 - (joints[..., 1] - self.center_y) / self.extent_y
        return np.clip(np.stack([u, v], axis=-1), 0.0, 1.0)


@dataclass(frozen=True)
class FeatureBundle:
    """Per-window backbone outputs in the shapes the fusion stage expects.

    Tensors are float32 so in-memory bundles and wire round-trips are
    bit-identical.
    """

    video: np.ndarray
    pose: np.ndarray
    pose_joint_xy: np.ndarray
    objects: tuple[ObjectDetection, ...]
    window_index: int

    def __post_init__(self):
        for name, arr, shape in (
            ("video", self.video, VIDEO_GRID_SHAPE),
            ("pose", self.pose, POSE_GRID_SHAPE),
            ("pose_joint_xy", self.pose_joint_xy, POSE_XY_SHAPE),
        ):
            arr = np.asarray(arr, dtype=np.float32)
            if arr.shape != shape:
                raise FeatureShapeError(
                    f"bundle tensor {name!r}: expected shape {shape}, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise FeatureShapeError(f"bundle tensor {name!r} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "objects", tuple(self.objects))


def spatial_position_matrix(
    point: Sequence[float], mode: str = "bilinear"
) -> np.ndarray:
    """Encode a unit-square point as a 6x6 absolute-spatial-position matrix.

    Rows index the vertical (y) axis, columns the horizontal (x) axis, with
    cell centers at (i + 0.5) / 6. The default bilinear splat spreads unit
    mass over the up-to-four cells around the point, preserving sub-cell
    location; points beyond the outer centers clamp to the edge cells.
    ``mode="onehot"`` instead puts all mass on the nearest cell.
    """
    x, y = float(point[0]), float(point[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"spatial point must be finite, got ({x}, {y})")
    x = min(max(x, 0.0), 1.0)
    y = min(max(y, 0.0), 1.0)

    matrix = np.zeros((GRID_SIZE, GRID_SIZE), dtype=np.float64)
    gx = min(max(x * GRID_SIZE - 0.5, 0.0), GRID_SIZE - 1.0)
    gy = min(max(y * GRID_SIZE - 0.5, 0.0), GRID_SIZE - 1.0)

    if mode == "onehot":
        matrix[round(gy), round(gx)] = 1.0
        return matrix
    if mode != "bilinear":
        raise ValidationError(f"unknown position-encoding mode {mode!r}")

    c0 = int(gx)
    r0 = int(gy)
    c1 = min(c0 + 1, GRID_SIZE - 1)
    r1 = min(r0 + 1, GRID_SIZE - 1)
    fx = gx - c0
    fy = gy - r0
    matrix[r0, c0] += (1.0 - fy) * (1.0 - fx)
    matrix[r0, c1] += (1.0 - fy) * fx
    matrix[r1, c0] += fy * (1.0 - fx)
    matrix[r1, c1] += fy * fx
    return matrix


def position_matrices(points: np.ndarray) -> np.ndarray:
    """Vectorized bilinear splat: (..., 2) points -> (..., 6, 6) matrices.

    Same arithmetic as :func:`spatial_position_matrix`, batched.
    """
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValidationError("spatial points must be finite")
    lead = pts.shape[:-1]
    pts = np.clip(pts.reshape(-1, 2), 0.0, 1.0)
    g = np.clip(pts * GRID_SIZE - 0.5, 0.0, GRID_SIZE - 1.0)
    gx, gy = g[:, 0], g[:, 1]
    c0 = gx.astype(np.int64)
    r0 = gy.astype(np.int64)
    c1 = np.minimum(c0 + 1, GRID_SIZE - 1)
    r1 = np.minimum(r0 + 1, GRID_SIZE - 1)
    fx = gx - c0
    fy = gy - r0
    out = np.zeros((pts.shape[0], GRID_SIZE, GRID_SIZE), dtype=np.float64)
    idx = np.arange(pts.shape[0])
    np.add.at(out, (idx, r0, c0), (1.0 - fy) * (1.0 - fx))
    np.add.at(out, (idx, r0, c1), (1.0 - fy) * fx)
    np.add.at(out, (idx, r1, c0), fy * (1.0 - fx))
    np.add.at(out, (idx, r1, c1), fy * fx)
    return out.reshape(*lead, GRID_SIZE, GRID_SIZE)


def objects_to_grid(
    detections: Iterable[ObjectDetection], mode: str = "bilinear"
) -> np.ndarray:
    """Accumulate confidence-weighted position matrices per object class.

    Detections are accumulated in a canonical order so the result is exactly
    permutation-invariant; classes with no detections stay all-zero.
    """
    grid = np.zeros(OBJECT_GRID_SHAPE, dtype=np.float64)
    ordered = sorted(
        detections, key=lambda d: (d.class_id, d.centroid, d.confidence)
    )
    for det in ordered:
        grid[0, det.class_id] += det.confidence * spatial_position_matrix(
            det.centroid, mode=mode
        )
    return grid


def _blur_grid(grid: np.ndarray) -> np.ndarray:
    """3x3 blur over the two trailing axes, zero padding at the borders."""
    h, w = grid.shape[-2:]
    pad = [(0, 0)] * (grid.ndim - 2) + [(1, 1), (1, 1)]
    padded = np.pad(grid, pad)
    out = np.zeros_like(grid)
    for dr in range(3):
        for dc in range(3):
            out += BLUR_KERNEL[dr, dc] * padded[..., dr : dr + h, dc : dc + w]
    return out


def synthetic_features(
    window: SampleWindow, camera: ProjectionConfig | None = None
) -> FeatureBundle:
    """Deterministic stand-in for trained backbones.

    Each pose channel is the joint's spatial position matrix scaled by its
    inter-frame displacement (backward differences; the first step mirrors
    the second so steadily moving joints are active at every timestep). The
    video grid is the pose grid blurred with the fixed 3x3 kernel. No object
    detections are synthesized.
    """
    camera = camera or ProjectionConfig()
    if len(window) != WINDOW_STEPS:
        raise FeatureShapeError(
            f"synthetic provider needs a {WINDOW_STEPS}-frame window, got {len(window)}"
        )
    joints = window.joint_tensor()
    xy = camera.project(joints)

    steps = np.linalg.norm(np.diff(joints, axis=0), axis=2)
    displacement = np.concatenate([steps[:1], steps], axis=0)

    pose = displacement[:, :, None, None] * position_matrices(xy)
    video = _blur_grid(pose)

    return FeatureBundle(
        video=video.astype(np.float32),
        pose=pose.astype(np.float32),
        pose_joint_xy=xy.astype(np.float32),
        objects=(),
        window_index=window.window_index,
    )


def store_feature_bundle(bundle: FeatureBundle, path) -> None:
    """Write a bundle in the feature wire format (canonical, bit-exact)."""
    detections = sorted(
        bundle.objects, key=lambda d: (d.class_id, d.centroid, d.confidence)
    )
    write_tensor_file(
        path,
        FEATURES_FORMAT,
        tensors={
            "video": bundle.video,
            "pose": bundle.pose,
            "pose_joint_xy": bundle.pose_joint_xy,
        },
        extra_header={"window_index": bundle.window_index},
        trailer={
            "objects": [
                {
                    "class_id": d.class_id,
                    "centroid": [d.centroid[0], d.centroid[1]],
                    "confidence": d.confidence,
                }
                for d in detections
            ]
        },
        version=FEATURES_VERSION,
    )


def load_feature_bundle(path) -> FeatureBundle:
    """Read and validate a feature bundle; payload round-trips bit-exactly."""
    header, tensors, trailer = read_tensor_file(
        path,
        FEATURES_FORMAT,
        version=FEATURES_VERSION,
        trailer_expected=True,
        expected_shapes={
            "video": VIDEO_GRID_SHAPE,
            "pose": POSE_GRID_SHAPE,
            "pose_joint_xy": POSE_XY_SHAPE,
        },
    )

    objects = []
    for i, record in enumerate(trailer.get("objects", [])):
        try:
            objects.append(
                ObjectDetection(
                    class_id=int(record["class_id"]),
                    centroid=(float(record["centroid"][0]), float(record["centroid"][1])),
                    confidence=float(record["confidence"]),
                )
            )
        except (KeyError, IndexError, TypeError, ValueError, ValidationError) as exc:
            raise FileFormatError(f"{path}: bad detection record {i}: {exc}") from exc

    return FeatureBundle(
        video=tensors["video"],
        pose=tensors["pose"],
        pose_joint_xy=tensors["pose_joint_xy"],
        objects=tuple(objects),
        window_index=int(header.get("window_index", -1)),
    )


def load_object_vocabulary(path) -> tuple[str, ...]:
    """Read the class_id -> name registry; must cover all 38 ids exactly."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            mapping = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    names = {}
    for key, name in mapping.items():
        class_id = int(key)
        if not 0 <= class_id < NUM_OBJECT_CLASSES:
            raise FileFormatError(f"{path}: class_id {class_id} out of range")
        names[class_id] = str(name)
    missing = sorted(set(range(NUM_OBJECT_CLASSES)) - set(names))
    if missing:
        raise FileFormatError(f"{path}: vocabulary missing class ids {missing}")
    return tuple(names[i] for i in range(NUM_OBJECT_CLASSES))


def save_object_vocabulary(names: Sequence[str], path) -> None:
    if len(names) != NUM_OBJECT_CLASSES:
        raise ValidationError(f"vocabulary needs {NUM_OBJECT_CLASSES} names")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({str(i): n for i, n in enumerate(names)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
