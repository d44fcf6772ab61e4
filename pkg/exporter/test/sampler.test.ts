import { describe, expect, it } from "vitest";

import { sampleWindows } from "../src/sampler";
import { parseSession } from "../src/session";
import { DEFAULT_SAMPLER, NUM_JOINTS, SkeletonFrame } from "../src/types";

function frames(n: number): SkeletonFrame[] {
  const out: SkeletonFrame[] = [];
  for (let i = 0; i < n; i++) {
    const joints = Array.from({ length: NUM_JOINTS }, (_, j) => [j * 0.05, 1.0, 2.0]);
    joints[0] = [i, 0, 2]; // encode the input index
    out.push({ timestamp: i / 30.0, joints });
  }
  return out;
}

describe("rolling sampler", () => {
  it("emits nothing before the window fills", () => {
    expect(sampleWindows(frames(30), DEFAULT_SAMPLER)).toEqual([]);
  });

  it("emits the first window at input frame 90 holding {0, 6, ..., 90}", () => {
    const windows = sampleWindows(frames(91), DEFAULT_SAMPLER);
    expect(windows).toHaveLength(1);
    expect(windows[0].windowIndex).toBe(0);
    const ids = windows[0].frames.map((f) => f.joints[0][0]);
    expect(ids).toEqual(Array.from({ length: 16 }, (_, k) => 6 * k));
  });

  it("emits the second window after frame 96", () => {
    const windows = sampleWindows(frames(97), DEFAULT_SAMPLER);
    expect(windows).toHaveLength(2);
    expect(windows[1].frames.map((f) => f.joints[0][0])).toEqual(
      Array.from({ length: 16 }, (_, k) => 6 + 6 * k)
    );
  });

  it("matches direct enumeration for other cadences", () => {
    const options = { sampleStride: 4, windowLen: 5, emitEvery: 2 };
    for (const n of [0, 1, 19, 20, 57, 200]) {
      const got = sampleWindows(frames(n), options).map((w) =>
        w.frames.map((f) => f.joints[0][0])
      );
      const retained: number[] = [];
      for (let i = 0; i < n; i += options.sampleStride) retained.push(i);
      const expected: number[][] = [];
      for (let k = 0; k < retained.length; k++) {
        const past = k + 1 - options.windowLen;
        if (past >= 0 && past % options.emitEvery === 0) {
          expected.push(retained.slice(k + 1 - options.windowLen, k + 1));
        }
      }
      expect(got).toEqual(expected);
    }
  });
});

describe("session parsing", () => {
  const header = JSON.stringify({ format: "adlsense-session", version: 1, fps: 30 });

  it("round-trips frames", () => {
    const lines = frames(3).map((f) => JSON.stringify({ t: f.timestamp, joints: f.joints }));
    const parsed = parseSession([header, ...lines].join("\n"));
    expect(parsed).toHaveLength(3);
    expect(parsed[2].joints[0][0]).toBe(2);
  });

  it("rejects wrong joint counts with the frame index", () => {
    const bad = JSON.stringify({ t: 0, joints: [[0, 0, 0]] });
    expect(() => parseSession([header, bad].join("\n"))).toThrow(/frame 0/);
  });

  it("rejects non-monotone timestamps", () => {
    const fs = frames(2).map((f) => JSON.stringify({ t: 0, joints: f.joints }));
    expect(() => parseSession([header, ...fs].join("\n"))).toThrow(/does not advance/);
  });

  it("rejects version skew", () => {
    const v2 = JSON.stringify({ format: "adlsense-session", version: 2 });
    expect(() => parseSession(v2)).toThrow(/version/);
  });
});
