/**
 * Batch export: run the configured backends over every sample window of a
 * recorded session and write one feature file per window plus a manifest
 * with model identifiers, sampler settings, and per-file checksums.
 */

import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as path from "node:path";

import { extractWindowFeatures, DEFAULT_CONFIDENCE_THRESHOLD, validateDetection } from "./models";
import { sampleWindows } from "./sampler";
import { loadSession } from "./session";
import {
  DEFAULT_SAMPLER,
  ExportManifest,
  ExporterError,
  GRID_SIZE,
  MANIFEST_FORMAT,
  MANIFEST_VERSION,
  ModelsConfig,
  NUM_JOINTS,
  SamplerOptions,
  ValidationFailure,
  WINDOW_STEPS,
} from "./types";
import { decodeFeatureFile, encodeFeatureFile } from "./wire";

const GRID_SHAPE = [WINDOW_STEPS, NUM_JOINTS, GRID_SIZE, GRID_SIZE];
const XY_SHAPE = [WINDOW_STEPS, NUM_JOINTS, 2];

export function windowFileName(index: number): string {
  return `window_${String(index).padStart(5, "0")}.features`;
}

function sha256(blob: Buffer): string {
  return crypto.createHash("sha256").update(blob).digest("hex");
}

function writeAtomic(filePath: string, blob: Buffer): void {
  const tmp = `${filePath}.tmp-${process.pid}`;
  fs.writeFileSync(tmp, blob);
  fs.renameSync(tmp, filePath);
}

export function loadModelsConfig(configPath: string): ModelsConfig {
  let parsed: any;
  try {
    parsed = JSON.parse(fs.readFileSync(configPath, "utf-8"));
  } catch (err) {
    throw new ExporterError(`${configPath}: ${err}`);
  }
  for (const key of ["video", "pose", "objects"]) {
    if (!parsed[key] || typeof parsed[key].backend !== "string") {
      throw new ExporterError(`${configPath}: missing ${key}.backend declaration`);
    }
  }
  return parsed as ModelsConfig;
}

export function exportSession(
  sessionPath: string,
  models: ModelsConfig,
  outDir: string,
  sampler: SamplerOptions = DEFAULT_SAMPLER
): ExportManifest {
  const frames = loadSession(sessionPath);
  const windows = sampleWindows(frames, sampler);
  fs.mkdirSync(outDir, { recursive: true });

  const manifest: ExportManifest = {
    format: MANIFEST_FORMAT,
    version: MANIFEST_VERSION,
    session: sessionPath,
    sampler: {
      sample_stride: sampler.sampleStride,
      window_len: sampler.windowLen,
      emit_every: sampler.emitEvery,
    },
    models: {
      video: {
        backend: models.video.backend,
        adaptation: describeAdaptation(models.video.native_grid, models.video.adaptation),
      },
      pose: {
        backend: models.pose.backend,
        adaptation: describeAdaptation(models.pose.native_grid, models.pose.adaptation),
      },
      objects: {
        backend: models.objects.backend,
        confidence_threshold:
          models.objects.confidence_threshold ?? DEFAULT_CONFIDENCE_THRESHOLD,
      },
    },
    windows: [],
  };

  for (const window of windows) {
    const features = extractWindowFeatures(models, window);
    const blob = encodeFeatureFile(
      window.windowIndex,
      [
        { name: "video", shape: GRID_SHAPE, data: features.video },
        { name: "pose", shape: GRID_SHAPE, data: features.pose },
        { name: "pose_joint_xy", shape: XY_SHAPE, data: features.poseJointXY },
      ],
      features.objects
    );
    const fileName = windowFileName(window.windowIndex);
    writeAtomic(path.join(outDir, fileName), blob);
    manifest.windows.push({
      index: window.windowIndex,
      file: fileName,
      sha256: sha256(blob),
      start_time: window.frames[0].timestamp,
      end_time: window.frames[window.frames.length - 1].timestamp,
    });
  }

  const manifestBlob = Buffer.from(JSON.stringify(manifest, null, 2) + "\n", "utf-8");
  writeAtomic(path.join(outDir, "manifest.json"), manifestBlob);
  return manifest;
}

export interface ValidationReport {
  checked: number;
  problems: string[];
}

export function loadManifest(manifestPath: string): ExportManifest {
  let manifest: any;
  try {
    manifest = JSON.parse(fs.readFileSync(manifestPath, "utf-8"));
  } catch (err) {
    throw new ExporterError(`${manifestPath}: ${err}`);
  }
  if (manifest.format !== MANIFEST_FORMAT || manifest.version !== MANIFEST_VERSION) {
    throw new ExporterError(`${manifestPath}: not a ${MANIFEST_FORMAT} v${MANIFEST_VERSION} file`);
  }
  return manifest as ExportManifest;
}

/** Re-read every exported file; verify checksums, shapes, detection ranges. */
export function validateExport(manifestPath: string): ValidationReport {
  const manifest = loadManifest(manifestPath);
  const baseDir = path.dirname(manifestPath);
  const problems: string[] = [];
  let checked = 0;

  for (const entry of manifest.windows) {
    const filePath = path.join(baseDir, entry.file);
    checked += 1;
    if (!fs.existsSync(filePath)) {
      problems.push(`${entry.file}: listed in manifest but missing on disk`);
      continue;
    }
    const blob = fs.readFileSync(filePath);
    const digest = sha256(blob);
    if (digest !== entry.sha256) {
      problems.push(
        `${entry.file}: checksum mismatch (manifest ${entry.sha256}, actual ${digest})`
      );
      continue;
    }
    let decoded;
    try {
      decoded = decodeFeatureFile(blob, entry.file);
    } catch (err) {
      problems.push(String(err instanceof Error ? err.message : err));
      continue;
    }
    if (decoded.header.window_index !== entry.index) {
      problems.push(
        `${entry.file}: declares window ${decoded.header.window_index}, manifest says ${entry.index}`
      );
    }
    for (const [name, shape] of [
      ["video", GRID_SHAPE],
      ["pose", GRID_SHAPE],
      ["pose_joint_xy", XY_SHAPE],
    ] as const) {
      const tensor = decoded.tensors.get(name);
      if (!tensor) {
        problems.push(`${entry.file}: missing tensor ${name}`);
        continue;
      }
      if (JSON.stringify(tensor.shape) !== JSON.stringify(shape)) {
        problems.push(
          `${entry.file}: tensor ${name} has shape ${JSON.stringify(tensor.shape)}, ` +
            `expected ${JSON.stringify(shape)}`
        );
      }
    }
    decoded.objects.forEach((det, i) => {
      problems.push(...validateDetection(det, `${entry.file}: detection ${i}`));
    });
  }
  return { checked, problems };
}

export function assertValidExport(manifestPath: string): ValidationReport {
  const report = validateExport(manifestPath);
  if (report.problems.length > 0) {
    throw new ValidationFailure(report.problems.join("\n"));
  }
  return report;
}

function describeAdaptation(nativeGrid?: number, adaptation?: string): string {
  const native = nativeGrid ?? GRID_SIZE;
  const kind = adaptation ?? (native === GRID_SIZE ? "identity" : "avg-pool");
  return native === GRID_SIZE && kind === "identity"
    ? "identity"
    : `${kind}:${native}->${GRID_SIZE}`;
}
