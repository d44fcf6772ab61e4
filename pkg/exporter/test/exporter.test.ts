import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { exportSession, loadManifest, validateExport, windowFileName } from "../src/exporter";
import { decodeFeatureFile } from "../src/wire";
import { DEFAULT_SAMPLER, ModelsConfig, NUM_JOINTS } from "../src/types";

let tmpDir: string;

beforeEach(() => {
  tmpDir = fs.mkdtempSync(path.join(os.tmpdir(), "adlsense-exporter-"));
});

afterEach(() => {
  fs.rmSync(tmpDir, { recursive: true, force: true });
});

function writeSession(name: string, nFrames: number): string {
  const lines = [JSON.stringify({ format: "adlsense-session", version: 1, fps: 30 })];
  for (let i = 0; i < nFrames; i++) {
    const joints = Array.from({ length: NUM_JOINTS }, (_, j) => [
      0.05 * j + 0.02 * Math.sin(i / 5 + j),
      1.0 + 0.03 * Math.cos(i / 7 + j),
      2.0,
    ]);
    lines.push(JSON.stringify({ t: i / 30.0, joints }));
  }
  const sessionPath = path.join(tmpDir, name);
  fs.writeFileSync(sessionPath, lines.join("\n") + "\n");
  return sessionPath;
}

const MODELS: ModelsConfig = {
  video: { backend: "motion-blur-grid-v1", native_grid: 12, adaptation: "avg-pool" },
  pose: { backend: "joint-grid-v1" },
  objects: {
    backend: "static",
    detections: [
      { class_id: 4, centroid: [0.4, 0.6], confidence: 0.8 },
      { class_id: 9, centroid: [0.2, 0.2], confidence: 0.1 }, // below threshold
    ],
    confidence_threshold: 0.25,
  },
};

describe("exportSession", () => {
  it("writes nothing for an empty session", () => {
    const session = writeSession("empty.jsonl", 0);
    const outDir = path.join(tmpDir, "out-empty");
    const manifest = exportSession(session, MODELS, outDir);
    expect(manifest.windows).toHaveLength(0);
    expect(fs.readdirSync(outDir)).toEqual(["manifest.json"]);
  });

  it("writes exactly one window file for a 91-frame session", () => {
    const session = writeSession("s91.jsonl", 91);
    const outDir = path.join(tmpDir, "out-91");
    const manifest = exportSession(session, MODELS, outDir);
    expect(manifest.windows).toHaveLength(1);
    expect(manifest.windows[0].index).toBe(0);
    expect(manifest.windows[0].file).toBe(windowFileName(0));
    expect(fs.existsSync(path.join(outDir, windowFileName(0)))).toBe(true);
  });

  it("records models, adaptation, and threshold in the manifest", () => {
    const session = writeSession("s100.jsonl", 100);
    const outDir = path.join(tmpDir, "out-manifest");
    exportSession(session, MODELS, outDir);
    const manifest = loadManifest(path.join(outDir, "manifest.json"));
    expect(manifest.models.video.backend).toBe("motion-blur-grid-v1");
    expect(manifest.models.video.adaptation).toBe("avg-pool:12->6");
    expect(manifest.models.pose.adaptation).toBe("identity");
    expect(manifest.models.objects.confidence_threshold).toBe(0.25);
    expect(manifest.sampler.sample_stride).toBe(DEFAULT_SAMPLER.sampleStride);
  });

  it("filters detections below the confidence threshold", () => {
    const session = writeSession("s.jsonl", 91);
    const outDir = path.join(tmpDir, "out-dets");
    exportSession(session, MODELS, outDir);
    const blob = fs.readFileSync(path.join(outDir, windowFileName(0)));
    const decoded = decodeFeatureFile(blob);
    expect(decoded.objects).toHaveLength(1);
    expect(decoded.objects[0].class_id).toBe(4);
  });

  it("fails on unknown backends", () => {
    const session = writeSession("s2.jsonl", 91);
    const bad = { ...MODELS, video: { backend: "x3d-weights-not-here" } };
    expect(() => exportSession(session, bad as ModelsConfig, path.join(tmpDir, "x"))).toThrow(
      /unknown backend/
    );
  });

  it("exports deterministically byte for byte", () => {
    const session = writeSession("s3.jsonl", 140);
    const outA = path.join(tmpDir, "a");
    const outB = path.join(tmpDir, "b");
    exportSession(session, MODELS, outA);
    exportSession(session, MODELS, outB);
    for (const file of fs.readdirSync(outA)) {
      if (file === "manifest.json") continue; // embeds the session path only
      expect(fs.readFileSync(path.join(outA, file)).equals(fs.readFileSync(path.join(outB, file)))).toBe(
        true
      );
    }
  });
});

describe("validateExport", () => {
  it("passes a fresh export", () => {
    const session = writeSession("v1.jsonl", 150);
    const outDir = path.join(tmpDir, "out-valid");
    exportSession(session, MODELS, outDir);
    const report = validateExport(path.join(outDir, "manifest.json"));
    expect(report.problems).toEqual([]);
    expect(report.checked).toBeGreaterThan(1);
  });

  it("flags a corrupted payload byte with the file name", () => {
    const session = writeSession("v2.jsonl", 91);
    const outDir = path.join(tmpDir, "out-corrupt");
    exportSession(session, MODELS, outDir);
    const target = path.join(outDir, windowFileName(0));
    const blob = fs.readFileSync(target);
    blob[blob.length - 200] ^= 0xff;
    fs.writeFileSync(target, blob);
    const report = validateExport(path.join(outDir, "manifest.json"));
    expect(report.problems.some((p) => p.includes(windowFileName(0)) && p.includes("checksum"))).toBe(
      true
    );
  });

  it("flags out-of-range detection centroids", () => {
    const session = writeSession("v3.jsonl", 91);
    const outDir = path.join(tmpDir, "out-range");
    exportSession(session, MODELS, outDir);
    const manifestPath = path.join(outDir, "manifest.json");
    const manifest = loadManifest(manifestPath);
    const target = path.join(outDir, manifest.windows[0].file);

    // Doctor the trailer to carry a (1.2, 0.5) centroid, then re-checksum so
    // only the range check can fire.
    const blob = fs.readFileSync(target);
    const text = blob.toString("latin1");
    const trailerStart = text.lastIndexOf('{"objects":');
    const head = blob.subarray(0, trailerStart);
    const doctored = Buffer.concat([
      head,
      Buffer.from(
        JSON.stringify({
          objects: [{ class_id: 4, centroid: [1.2, 0.5], confidence: 0.8 }],
        }) + "\n",
        "utf-8"
      ),
    ]);
    fs.writeFileSync(target, doctored);
    const crypto = require("node:crypto");
    (manifest.windows[0] as any).sha256 = crypto
      .createHash("sha256")
      .update(doctored)
      .digest("hex");
    fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + "\n");

    const report = validateExport(manifestPath);
    expect(report.problems.some((p) => p.includes("outside the unit square"))).toBe(true);
  });
});
