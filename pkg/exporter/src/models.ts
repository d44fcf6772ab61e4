/**
 * Feature-extraction backends and the adaptation head that maps native model
 * output onto the 16 x 19 x 6 x 6 contract grids.
 *
 * The built-in backends are deterministic joint-geometry models so exports
 * reproduce bit-for-bit and run without downloaded network weights; real
 * video/pose/object models plug in behind the same BackendConfig surface.
 * Shape adaptation is declared in the config and recorded in the manifest;
 * a native grid that cannot be pooled onto 6x6 is an error, never a silent
 * reshape.
 */

import {
  AdaptationError,
  BackendConfig,
  CameraConfig,
  DEFAULT_CAMERA,
  Detection,
  GRID_SIZE,
  ModelLoadError,
  ModelsConfig,
  NUM_JOINTS,
  NUM_OBJECT_CLASSES,
  SampleWindow,
  WINDOW_STEPS,
  WindowFeatures,
} from "./types";

export const DEFAULT_CONFIDENCE_THRESHOLD = 0.25;

function project(camera: CameraConfig, joint: number[]): [number, number] {
  const u = 0.5 + (joint[0] - camera.center_x) / camera.extent_x;
  const v = 0.5 - (joint[1] - camera.center_y) / camera.extent_y;
  return [Math.min(Math.max(u, 0), 1), Math.min(Math.max(v, 0), 1)];
}

/** Bilinear splat of a unit-square point onto an n x n grid of cell centers. */
export function splat(point: [number, number], n: number): Float64Array {
  const grid = new Float64Array(n * n);
  const gx = Math.min(Math.max(point[0] * n - 0.5, 0), n - 1);
  const gy = Math.min(Math.max(point[1] * n - 0.5, 0), n - 1);
  const c0 = Math.floor(gx);
  const r0 = Math.floor(gy);
  const c1 = Math.min(c0 + 1, n - 1);
  const r1 = Math.min(r0 + 1, n - 1);
  const fx = gx - c0;
  const fy = gy - r0;
  grid[r0 * n + c0] += (1 - fy) * (1 - fx);
  grid[r0 * n + c1] += (1 - fy) * fx;
  grid[r1 * n + c0] += fy * (1 - fx);
  grid[r1 * n + c1] += fy * fx;
  return grid;
}

function displacements(window: SampleWindow): Float64Array {
  const out = new Float64Array(WINDOW_STEPS * NUM_JOINTS);
  for (let t = 0; t < WINDOW_STEPS; t++) {
    const src = t === 0 ? 1 : t;
    for (let j = 0; j < NUM_JOINTS; j++) {
      const a = window.frames[src].joints[j];
      const b = window.frames[src - 1].joints[j];
      out[t * NUM_JOINTS + j] = Math.hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    }
  }
  return out;
}

/** Native (T, J, n, n) grid: per-joint splat scaled by its step distance. */
function motionGrid(window: SampleWindow, camera: CameraConfig, n: number): Float64Array {
  const out = new Float64Array(WINDOW_STEPS * NUM_JOINTS * n * n);
  const disp = displacements(window);
  for (let t = 0; t < WINDOW_STEPS; t++) {
    for (let j = 0; j < NUM_JOINTS; j++) {
      const d = disp[t * NUM_JOINTS + j];
      if (d === 0) continue;
      const cell = splat(project(camera, window.frames[t].joints[j]), n);
      const base = (t * NUM_JOINTS + j) * n * n;
      for (let k = 0; k < n * n; k++) out[base + k] = d * cell[k];
    }
  }
  return out;
}

/** 3x3 binomial blur per channel (zero padding), used by the video backend. */
function blurGrid(grid: Float64Array, n: number): Float64Array {
  const kernel = [1, 2, 1, 2, 4, 2, 1, 2, 1].map((v) => v / 16);
  const out = new Float64Array(grid.length);
  const channels = grid.length / (n * n);
  for (let c = 0; c < channels; c++) {
    const base = c * n * n;
    for (let r = 0; r < n; r++) {
      for (let col = 0; col < n; col++) {
        let acc = 0;
        for (let dr = -1; dr <= 1; dr++) {
          for (let dc = -1; dc <= 1; dc++) {
            const rr = r + dr;
            const cc = col + dc;
            if (rr < 0 || rr >= n || cc < 0 || cc >= n) continue;
            acc += kernel[(dr + 1) * 3 + (dc + 1)] * grid[base + rr * n + cc];
          }
        }
        out[base + r * n + col] = acc;
      }
    }
  }
  return out;
}

/** Average-pool a (T, J, native, native) grid down to (T, J, 6, 6). */
export function adaptGrid(
  grid: Float64Array,
  native: number,
  adaptation: string,
  what: string
): Float64Array {
  if (native === GRID_SIZE && (adaptation === "identity" || adaptation === undefined)) {
    return grid;
  }
  if (adaptation === "identity" && native !== GRID_SIZE) {
    throw new AdaptationError(
      `${what}: identity adaptation needs a native ${GRID_SIZE}x${GRID_SIZE} grid, got ${native}`
    );
  }
  if (adaptation !== "avg-pool") {
    throw new AdaptationError(`${what}: unknown adaptation ${JSON.stringify(adaptation)}`);
  }
  if (native % GRID_SIZE !== 0) {
    throw new AdaptationError(
      `${what}: cannot pool native ${native}x${native} onto ${GRID_SIZE}x${GRID_SIZE} ` +
        `(not an integer multiple); refusing to reshape`
    );
  }
  const factor = native / GRID_SIZE;
  const channels = grid.length / (native * native);
  const out = new Float64Array(channels * GRID_SIZE * GRID_SIZE);
  for (let c = 0; c < channels; c++) {
    for (let r = 0; r < GRID_SIZE; r++) {
      for (let col = 0; col < GRID_SIZE; col++) {
        let acc = 0;
        for (let dr = 0; dr < factor; dr++) {
          for (let dc = 0; dc < factor; dc++) {
            acc += grid[c * native * native + (r * factor + dr) * native + (col * factor + dc)];
          }
        }
        out[c * GRID_SIZE * GRID_SIZE + r * GRID_SIZE + col] = acc / (factor * factor);
      }
    }
  }
  return out;
}

function poseXY(window: SampleWindow, camera: CameraConfig): Float64Array {
  const out = new Float64Array(WINDOW_STEPS * NUM_JOINTS * 2);
  for (let t = 0; t < WINDOW_STEPS; t++) {
    for (let j = 0; j < NUM_JOINTS; j++) {
      const [u, v] = project(camera, window.frames[t].joints[j]);
      out[(t * NUM_JOINTS + j) * 2] = u;
      out[(t * NUM_JOINTS + j) * 2 + 1] = v;
    }
  }
  return out;
}

function runGridBackend(
  config: BackendConfig,
  window: SampleWindow,
  camera: CameraConfig,
  what: string
): Float64Array {
  const native = config.native_grid ?? GRID_SIZE;
  const adaptation = config.adaptation ?? (native === GRID_SIZE ? "identity" : "avg-pool");
  let grid: Float64Array;
  switch (config.backend) {
    case "joint-grid-v1":
      grid = motionGrid(window, camera, native);
      break;
    case "motion-blur-grid-v1":
      grid = blurGrid(motionGrid(window, camera, native), native);
      break;
    default:
      throw new ModelLoadError(
        `${what}: unknown backend ${JSON.stringify(config.backend)}; ` +
          `available: joint-grid-v1, motion-blur-grid-v1`
      );
  }
  return adaptGrid(grid, native, adaptation, what);
}

function runObjectBackend(config: BackendConfig, threshold: number): Detection[] {
  switch (config.backend) {
    case "none":
      return [];
    case "static":
      return (config.detections ?? []).filter((d) => d.confidence >= threshold);
    default:
      throw new ModelLoadError(
        `objects: unknown backend ${JSON.stringify(config.backend)}; available: none, static`
      );
  }
}

export function validateDetection(det: Detection, where: string): string[] {
  const problems: string[] = [];
  if (!Number.isInteger(det.class_id) || det.class_id < 0 || det.class_id >= NUM_OBJECT_CLASSES) {
    problems.push(`${where}: class_id ${det.class_id} outside [0, ${NUM_OBJECT_CLASSES})`);
  }
  const [x, y] = det.centroid;
  if (!(x >= 0 && x <= 1 && y >= 0 && y <= 1)) {
    problems.push(`${where}: centroid (${x}, ${y}) outside the unit square`);
  }
  if (!(det.confidence >= 0 && det.confidence <= 1)) {
    problems.push(`${where}: confidence ${det.confidence} outside [0, 1]`);
  }
  return problems;
}

export function extractWindowFeatures(
  models: ModelsConfig,
  window: SampleWindow
): WindowFeatures {
  if (window.frames.length !== WINDOW_STEPS) {
    throw new AdaptationError(
      `window ${window.windowIndex}: feature contract needs ${WINDOW_STEPS}-frame ` +
        `windows, got ${window.frames.length}; refusing to reshape`
    );
  }
  const camera = models.camera ?? DEFAULT_CAMERA;
  const threshold = models.objects.confidence_threshold ?? DEFAULT_CONFIDENCE_THRESHOLD;
  const video = runGridBackend(models.video, window, camera, "video");
  const pose = runGridBackend(models.pose, window, camera, "pose");
  const objects = runObjectBackend(models.objects, threshold);
  for (const det of objects) {
    const problems = validateDetection(det, "objects");
    if (problems.length > 0) {
      throw new ModelLoadError(problems.join("; "));
    }
  }
  return { video, pose, poseJointXY: poseXY(window, camera), objects };
}
