/** Reader for adlsense session files: a JSON header line, one frame per line. */

import * as fs from "node:fs";

import { NUM_JOINTS, SessionParseError, SkeletonFrame } from "./types";

const SESSION_FORMAT = "adlsense-session";
const SESSION_VERSION = 1;

export function parseSession(text: string, source = "<session>"): SkeletonFrame[] {
  const lines = text.split("\n");
  if (lines.length === 0 || lines[0].trim() === "") {
    throw new SessionParseError(`${source}: empty file, missing session header`);
  }
  let header: any;
  try {
    header = JSON.parse(lines[0]);
  } catch (err) {
    throw new SessionParseError(`${source}: line 1: bad header: ${err}`);
  }
  if (header.format !== SESSION_FORMAT) {
    throw new SessionParseError(
      `${source}: not a ${SESSION_FORMAT} file (format=${JSON.stringify(header.format)})`
    );
  }
  if (header.version !== SESSION_VERSION) {
    throw new SessionParseError(
      `${source}: unsupported session version ${header.version}, expected ${SESSION_VERSION}`
    );
  }

  const frames: SkeletonFrame[] = [];
  let previous = -Infinity;
  for (let i = 1; i < lines.length; i++) {
    const lineno = i + 1;
    const line = lines[i];
    if (line.trim() === "") continue;
    let record: any;
    try {
      record = JSON.parse(line);
    } catch (err) {
      throw new SessionParseError(`${source}: line ${lineno}: ${err}`);
    }
    const index = frames.length;
    if (typeof record.t !== "number" || !Array.isArray(record.joints)) {
      throw new SessionParseError(
        `${source}: frame ${index}: record needs 't' and 'joints' fields`
      );
    }
    if (record.joints.length !== NUM_JOINTS) {
      throw new SessionParseError(
        `${source}: frame ${index}: expected ${NUM_JOINTS} joints, got ${record.joints.length}`
      );
    }
    for (const row of record.joints) {
      if (!Array.isArray(row) || row.length !== 3 || row.some((v: any) => !Number.isFinite(v))) {
        throw new SessionParseError(
          `${source}: frame ${index}: joints must be finite [x, y, z] triples`
        );
      }
    }
    if (!Number.isFinite(record.t) || record.t <= previous) {
      throw new SessionParseError(
        `${source}: frame ${index}: timestamp ${record.t} does not advance past ${previous}`
      );
    }
    previous = record.t;
    frames.push({ timestamp: record.t, joints: record.joints });
  }
  return frames;
}

export function loadSession(path: string): SkeletonFrame[] {
  return parseSession(fs.readFileSync(path, "utf-8"), path);
}
