/** Shared shapes and configuration types for the feature exporter. */

export const NUM_JOINTS = 19;
export const GRID_SIZE = 6;
export const WINDOW_STEPS = 16;
export const NUM_OBJECT_CLASSES = 38;

export interface SkeletonFrame {
  /** seconds, strictly increasing within a session */
  timestamp: number;
  /** 19 x 3 joint positions in meters */
  joints: number[][];
}

export interface SamplerOptions {
  sampleStride: number;
  windowLen: number;
  emitEvery: number;
}

export const DEFAULT_SAMPLER: SamplerOptions = {
  sampleStride: 6,
  windowLen: 16,
  emitEvery: 1,
};

export interface SampleWindow {
  frames: SkeletonFrame[];
  windowIndex: number;
}

export interface Detection {
  class_id: number;
  centroid: [number, number];
  confidence: number;
}

export interface CameraConfig {
  center_x: number;
  center_y: number;
  extent_x: number;
  extent_y: number;
}

export const DEFAULT_CAMERA: CameraConfig = {
  center_x: 0.0,
  center_y: 1.0,
  extent_x: 4.0,
  extent_y: 4.0,
};

export interface BackendConfig {
  backend: string;
  /** side length of the backend's native square grid (adapted to 6x6) */
  native_grid?: number;
  adaptation?: "identity" | "avg-pool";
  /** static detection list for the stub object backend */
  detections?: Detection[];
  confidence_threshold?: number;
}

export interface ModelsConfig {
  video: BackendConfig;
  pose: BackendConfig;
  objects: BackendConfig;
  camera?: CameraConfig;
}

/** Per-window feature tensors in the contract shapes. */
export interface WindowFeatures {
  video: Float64Array; // 16 * 19 * 6 * 6
  pose: Float64Array; // 16 * 19 * 6 * 6
  poseJointXY: Float64Array; // 16 * 19 * 2
  objects: Detection[];
}

export interface ManifestWindow {
  index: number;
  file: string;
  sha256: string;
  start_time: number;
  end_time: number;
}

export interface ExportManifest {
  format: string;
  version: number;
  session: string;
  sampler: { sample_stride: number; window_len: number; emit_every: number };
  models: {
    video: { backend: string; adaptation: string };
    pose: { backend: string; adaptation: string };
    objects: { backend: string; confidence_threshold: number };
  };
  windows: ManifestWindow[];
}

export const MANIFEST_FORMAT = "adlsense-export-manifest";
export const MANIFEST_VERSION = 1;

export class ExporterError extends Error {}
export class SessionParseError extends ExporterError {}
export class ModelLoadError extends ExporterError {}
export class AdaptationError extends ExporterError {}
export class ValidationFailure extends ExporterError {}
