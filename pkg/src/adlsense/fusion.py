"""Spatial mid-fusion: reference the pose grid, concatenate modalities, and
run the 2D-spatial + 1D-temporal convolution stack to a 128-d embedding.

The numeric core is architecture-parametric: layer hyperparameters
(kernel sizes, channel widths, strides, paddings, activations, class count)
are declared entirely by the weights file, so a loaded model and the shipped
default configuration run through the same code path. All forwards are pure
and deterministic; weights are immutable after load.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError
from .features import (
    GRID_SIZE,
    NUM_JOINTS,
    NUM_OBJECT_CLASSES,
    OBJECT_GRID_SHAPE,
    POSE_GRID_SHAPE,
    VIDEO_GRID_SHAPE,
    WINDOW_STEPS,
    FeatureBundle,
    objects_to_grid,
    position_matrices,
)
from .wire import read_tensor_file, write_tensor_file

EMBED_DIM = 128
FUSED_STEPS = WINDOW_STEPS + 1
FUSED_CHANNELS = NUM_OBJECT_CLASSES
FUSED_SHAPE = (FUSED_STEPS, FUSED_CHANNELS, GRID_SIZE, GRID_SIZE)

WEIGHTS_FORMAT = "adlsense-weights"
WEIGHTS_VERSION = 1

DEFAULT_NUM_CLASSES = 11


class FusionShapeError(ValidationError):
    """Shape inconsistency inside the fusion pipeline, labeled by stage."""


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "linear": lambda x: x,
    "relu": _relu,
    "tanh": np.tanh,
}


def _activation(name: str) -> Callable[[np.ndarray], np.ndarray]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValidationError(
            f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}"
        ) from None


@dataclass(frozen=True)
class PipelineConfig:
    """Layer hyperparameters declared by the weights file."""

    conv2d_stride: int = 1
    conv2d_padding: int = 1
    conv2d_activation: str = "relu"
    conv1d_stride: int = 1
    conv1d_padding: int = 1
    conv1d_activation: str = "relu"
    embed_activation: str = "linear"
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        if min(self.conv2d_stride, self.conv1d_stride) < 1:
            raise ValidationError("strides must be >= 1")
        if min(self.conv2d_padding, self.conv1d_padding) < 0:
            raise ValidationError("paddings must be >= 0")
        if self.num_classes < 2:
            raise ValidationError("need at least 2 task classes")
        for name in (self.conv2d_activation, self.conv1d_activation, self.embed_activation):
            _activation(name)

    def to_dict(self) -> dict:
        return {
            "conv2d": {
                "stride": self.conv2d_stride,
                "padding": self.conv2d_padding,
                "activation": self.conv2d_activation,
            },
            "conv1d": {
                "stride": self.conv1d_stride,
                "padding": self.conv1d_padding,
                "activation": self.conv1d_activation,
            },
            "embed_activation": self.embed_activation,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        c2 = data.get("conv2d", {})
        c1 = data.get("conv1d", {})
        return cls(
            conv2d_stride=int(c2.get("stride", 1)),
            conv2d_padding=int(c2.get("padding", 1)),
            conv2d_activation=str(c2.get("activation", "relu")),
            conv1d_stride=int(c1.get("stride", 1)),
            conv1d_padding=int(c1.get("padding", 1)),
            conv1d_activation=str(c1.get("activation", "relu")),
            embed_activation=str(data.get("embed_activation", "linear")),
            num_classes=int(data.get("num_classes", DEFAULT_NUM_CLASSES)),
        )


@dataclass(frozen=True)
class FusionWeights:
    """All learned parameters of the fusion stack plus the declared config."""

    conv2d_kernel: np.ndarray  # (C2, 38, kh, kw)
    conv2d_bias: np.ndarray  # (C2,)
    conv1d_kernel: np.ndarray  # (C1, C2 * H' * W', kt)
    conv1d_bias: np.ndarray  # (C1,)
    dense_embed_w: np.ndarray  # (128, C1)
    dense_embed_b: np.ndarray  # (128,)
    dense_head_w: np.ndarray  # (K, 128)
    dense_head_b: np.ndarray  # (K,)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        for name in (
            "conv2d_kernel", "conv2d_bias", "conv1d_kernel", "conv1d_bias",
            "dense_embed_w", "dense_embed_b", "dense_head_w", "dense_head_b",
        ):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"weights tensor {name!r} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        self._check_consistency()

    def _check_consistency(self):
        cfg = self.pipeline
        c2_out, c2_in, kh, kw = self.conv2d_kernel.shape
        if c2_in != FUSED_CHANNELS:
            raise ValidationError(
                f"conv2d expects {FUSED_CHANNELS} input channels, kernel has {c2_in}"
            )
        if self.conv2d_bias.shape != (c2_out,):
            raise ValidationError("conv2d bias length must match output channels")
        h_out = conv_output_size(GRID_SIZE, kh, cfg.conv2d_stride, cfg.conv2d_padding)
        w_out = conv_output_size(GRID_SIZE, kw, cfg.conv2d_stride, cfg.conv2d_padding)
        flat = c2_out * h_out * w_out
        c1_out, c1_in, _ = self.conv1d_kernel.shape
        if c1_in != flat:
            raise ValidationError(
                f"conv1d expects {flat} input channels "
                f"({c2_out}x{h_out}x{w_out} flattened), kernel has {c1_in}"
            )
        if self.conv1d_bias.shape != (c1_out,):
            raise ValidationError("conv1d bias length must match output channels")
        if self.dense_embed_w.shape != (EMBED_DIM, c1_out):
            raise ValidationError(
                f"dense_embed must map {c1_out} -> {EMBED_DIM}, "
                f"got {self.dense_embed_w.shape}"
            )
        if self.dense_embed_b.shape != (EMBED_DIM,):
            raise ValidationError("dense_embed bias must have length 128")
        if self.dense_head_w.shape != (cfg.num_classes, EMBED_DIM):
            raise ValidationError(
                f"dense_head must map {EMBED_DIM} -> {cfg.num_classes}, "
                f"got {self.dense_head_w.shape}"
            )
        if self.dense_head_b.shape != (cfg.num_classes,):
            raise ValidationError("dense_head bias length must match num_classes")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if out < 1:
        raise FusionShapeError(
            f"kernel {kernel} with stride {stride}, padding {padding} "
            f"does not fit input size {size}"
        )
    return out


def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    activation: str = "linear",
) -> np.ndarray:
    """Cross-correlate (C_in, H, W) with (C_out, C_in, kh, kw) kernels.

    An optional leading batch axis is accepted: (B, C_in, H, W) ->
    (B, C_out, H', W'). Vectorized over kernel offsets; the brute-force
    per-output-element sum is kept in the test suite as an independent oracle.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise FusionShapeError("conv2d needs (C_in, H, W) input and 4-d kernel")
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    b, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kc != c_in:
        raise FusionShapeError(
            f"conv2d kernel expects {kc} input channels, input has {c_in}"
        )
    if np.shape(bias) != (c_out,):
        raise FusionShapeError("conv2d bias must have one entry per output channel")
    h_out = conv_output_size(h, kh, stride, padding)
    w_out = conv_output_size(w, kw, stride, padding)

    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.tile(
        np.asarray(bias, dtype=np.float64)[None, :, None, None], (b, 1, h_out, w_out)
    )
    for u in range(kh):
        for v in range(kw):
            window = padded[
                :, :, u : u + h_out * stride : stride, v : v + w_out * stride : stride
            ]
            out += np.einsum("oc,bchw->bohw", kernel[:, :, u, v], window)
    out = _activation(activation)(out)
    return out if batched else out[0]


def conv1d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = 0,
    activation: str = "linear",
) -> np.ndarray:
    """Cross-correlate (C_in, T) with (C_out, C_in, kt) kernels."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 2 or kernel.ndim != 3:
        raise FusionShapeError("conv1d needs (C_in, T) input and 3-d kernel")
    c_in, t = x.shape
    c_out, kc, kt = kernel.shape
    if kc != c_in:
        raise FusionShapeError(
            f"conv1d kernel expects {kc} input channels, input has {c_in}"
        )
    if np.shape(bias) != (c_out,):
        raise FusionShapeError("conv1d bias must have one entry per output channel")
    t_out = conv_output_size(t, kt, stride, padding)

    padded = np.pad(x, ((0, 0), (padding, padding)))
    out = np.tile(np.asarray(bias, dtype=np.float64)[:, None], (1, t_out))
    for u in range(kt):
        window = padded[:, u : u + t_out * stride : stride]
        out += kernel[:, :, u] @ window
    return _activation(activation)(out)


def apply_spatial_reference(pose: np.ndarray, pose_joint_xy: np.ndarray) -> np.ndarray:
    """Right-multiply each pose channel by its joint's position matrix.

    ``out[t][j] = pose[t][j] @ position_matrix(xy[t][j])`` anchors the
    spatially independent pose features to absolute image coordinates.
    """
    pose = np.asarray(pose, dtype=np.float64)
    xy = np.asarray(pose_joint_xy, dtype=np.float64)
    if pose.shape != POSE_GRID_SHAPE:
        raise FusionShapeError(
            f"pose grid must have shape {POSE_GRID_SHAPE}, got {pose.shape}"
        )
    if xy.shape != (pose.shape[0], pose.shape[1], 2):
        raise FusionShapeError(
            f"joint positions must have shape {(pose.shape[0], pose.shape[1], 2)}, "
            f"got {xy.shape}"
        )
    matrices = position_matrices(xy)
    return np.einsum("tjab,tjbc->tjac", pose, matrices)


def concat_modalities(
    video: np.ndarray, pose_ref: np.ndarray, objects: np.ndarray
) -> np.ndarray:
    """Stack modalities into the fused (17, 38, 6, 6) tensor.

    Timesteps 0..15 carry video in channels 0..18 and the referenced pose
    grid in channels 19..37; the object grid occupies timestep 16.
    """
    video = np.asarray(video, dtype=np.float64)
    pose_ref = np.asarray(pose_ref, dtype=np.float64)
    objects = np.asarray(objects, dtype=np.float64)
    if video.shape != VIDEO_GRID_SHAPE:
        raise FusionShapeError(f"video grid: expected {VIDEO_GRID_SHAPE}, got {video.shape}")
    if pose_ref.shape != POSE_GRID_SHAPE:
        raise FusionShapeError(f"pose grid: expected {POSE_GRID_SHAPE}, got {pose_ref.shape}")
    if objects.shape != OBJECT_GRID_SHAPE:
        raise FusionShapeError(f"object grid: expected {OBJECT_GRID_SHAPE}, got {objects.shape}")

    fused = np.zeros(FUSED_SHAPE, dtype=np.float64)
    fused[:WINDOW_STEPS, :NUM_JOINTS] = video
    fused[:WINDOW_STEPS, NUM_JOINTS:] = pose_ref
    fused[WINDOW_STEPS] = objects[0]
    return fused


def fuse(fused: np.ndarray, weights: FusionWeights) -> np.ndarray:
    """Run the fused tensor through the convolution stack to a 128-d embedding.

    Per timestep: spatial conv2d over the 38x6x6 slab; flatten spatial dims;
    temporal conv1d across the 17 steps; global average over remaining time;
    dense projection to 128.
    """
    fused = np.asarray(fused, dtype=np.float64)
    if fused.shape != FUSED_SHAPE:
        raise FusionShapeError(
            f"stage=input: fused tensor must have shape {FUSED_SHAPE}, got {fused.shape}"
        )
    cfg = weights.pipeline

    spatial = conv2d_forward(
        fused,  # timesteps ride the batch axis
        weights.conv2d_kernel,
        weights.conv2d_bias,
        stride=cfg.conv2d_stride,
        padding=cfg.conv2d_padding,
        activation=cfg.conv2d_activation,
    )  # (T, C2, H', W')

    t_steps = spatial.shape[0]
    flat = spatial.reshape(t_steps, -1).T  # (C2 * H' * W', T)
    if flat.shape[0] != weights.conv1d_kernel.shape[1]:
        raise FusionShapeError(
            f"stage=conv1d: expected {weights.conv1d_kernel.shape[1]} channels "
            f"after flattening, got {flat.shape[0]}"
        )
    temporal = conv1d_forward(
        flat,
        weights.conv1d_kernel,
        weights.conv1d_bias,
        stride=cfg.conv1d_stride,
        padding=cfg.conv1d_padding,
        activation=cfg.conv1d_activation,
    )  # (C1, T')

    pooled = temporal.mean(axis=1)  # (C1,)
    embed = np.asarray(weights.dense_embed_w, dtype=np.float64) @ pooled
    embed = embed + np.asarray(weights.dense_embed_b, dtype=np.float64)
    return _activation(cfg.embed_activation)(embed)


def classify_head(embedding: np.ndarray, weights: FusionWeights) -> np.ndarray:
    """Softmax task-class distribution from the 128-d embedding."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (EMBED_DIM,):
        raise FusionShapeError(
            f"stage=head: embedding must have shape ({EMBED_DIM},), got {embedding.shape}"
        )
    logits = np.asarray(weights.dense_head_w, dtype=np.float64) @ embedding
    logits = logits + np.asarray(weights.dense_head_b, dtype=np.float64)
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def embed_bundle(bundle: FeatureBundle, weights: FusionWeights) -> np.ndarray:
    """Feature bundle -> 128-d embedding (spatial reference, concat, fuse)."""
    pose_ref = apply_spatial_reference(bundle.pose, bundle.pose_joint_xy)
    objects = objects_to_grid(bundle.objects)
    fused = concat_modalities(bundle.video, pose_ref, objects)
    return fuse(fused, weights)


def random_weights(
    seed: int,
    conv2d_channels: int = 64,
    conv2d_kernel: int = 3,
    conv1d_channels: int = 128,
    conv1d_kernel: int = 3,
    pipeline: PipelineConfig | None = None,
) -> FusionWeights:
    """Reproducible random initialization (scaled by fan-in)."""
    cfg = pipeline or PipelineConfig()
    rng = np.random.default_rng(seed)

    def init(*shape):
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(np.float32)

    h_out = conv_output_size(GRID_SIZE, conv2d_kernel, cfg.conv2d_stride, cfg.conv2d_padding)
    w_out = h_out
    flat = conv2d_channels * h_out * w_out
    return FusionWeights(
        conv2d_kernel=init(conv2d_channels, FUSED_CHANNELS, conv2d_kernel, conv2d_kernel),
        conv2d_bias=np.zeros(conv2d_channels, dtype=np.float32),
        conv1d_kernel=init(conv1d_channels, flat, conv1d_kernel),
        conv1d_bias=np.zeros(conv1d_channels, dtype=np.float32),
        dense_embed_w=init(EMBED_DIM, conv1d_channels),
        dense_embed_b=np.zeros(EMBED_DIM, dtype=np.float32),
        dense_head_w=init(cfg.num_classes, EMBED_DIM),
        dense_head_b=np.zeros(cfg.num_classes, dtype=np.float32),
        pipeline=cfg,
    )


def store_weights(weights: FusionWeights, path) -> None:
    write_tensor_file(
        path,
        WEIGHTS_FORMAT,
        tensors={
            "conv2d_kernel": weights.conv2d_kernel,
            "conv2d_bias": weights.conv2d_bias,
            "conv1d_kernel": weights.conv1d_kernel,
            "conv1d_bias": weights.conv1d_bias,
            "dense_embed_w": weights.dense_embed_w,
            "dense_embed_b": weights.dense_embed_b,
            "dense_head_w": weights.dense_head_w,
            "dense_head_b": weights.dense_head_b,
        },
        extra_header={"pipeline": weights.pipeline.to_dict()},
        version=WEIGHTS_VERSION,
    )


def load_weights(path) -> FusionWeights:
    header, tensors, _ = read_tensor_file(path, WEIGHTS_FORMAT, version=WEIGHTS_VERSION)
    cfg = PipelineConfig.from_dict(header.get("pipeline", {}))
    names = (
        "conv2d_kernel", "conv2d_bias", "conv1d_kernel", "conv1d_bias",
        "dense_embed_w", "dense_embed_b", "dense_head_w", "dense_head_b",
    )
    missing = [n for n in names if n not in tensors]
    if missing:
        raise ValidationError(f"{path}: weights file missing tensors {missing}")
    try:
        return FusionWeights(**{n: tensors[n] for n in names}, pipeline=cfg)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
