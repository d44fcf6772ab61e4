/**
 * Feature wire format writer/reader: one canonical JSON header line declaring
 * named f32 tensors, raw little-endian row-major payloads in header order,
 * and a JSON trailer line carrying object detections.
 */

import { Detection, ExporterError } from "./types";

export const FEATURES_FORMAT = "adlsense-features";
export const FEATURES_VERSION = 1;

export interface TensorSpec {
  name: string;
  shape: number[];
  data: Float64Array | Float32Array | number[];
}

function canonicalJson(value: unknown): string {
  if (value === null || typeof value !== "object") return JSON.stringify(value);
  if (Array.isArray(value)) return `[${value.map(canonicalJson).join(",")}]`;
  const entries = Object.entries(value as Record<string, unknown>)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
  return `{${entries.join(",")}}`;
}

function payloadBytes(values: Float64Array | Float32Array | number[]): Buffer {
  const buffer = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buffer.writeFloatLE(values[i], i * 4);
  }
  return buffer;
}

export function encodeFeatureFile(
  windowIndex: number,
  tensors: TensorSpec[],
  objects: Detection[]
): Buffer {
  const header = {
    format: FEATURES_FORMAT,
    version: FEATURES_VERSION,
    window_index: windowIndex,
    tensors: tensors.map((t) => ({ name: t.name, dtype: "f32", shape: t.shape })),
  };
  const sorted = [...objects].sort(
    (a, b) =>
      a.class_id - b.class_id ||
      a.centroid[0] - b.centroid[0] ||
      a.centroid[1] - b.centroid[1] ||
      a.confidence - b.confidence
  );
  const trailer = { objects: sorted };
  const parts: Buffer[] = [Buffer.from(canonicalJson(header) + "\n", "utf-8")];
  for (const tensor of tensors) {
    const expected = tensor.shape.reduce((a, b) => a * b, 1);
    if (tensor.data.length !== expected) {
      throw new ExporterError(
        `tensor ${tensor.name}: payload holds ${tensor.data.length} values, shape needs ${expected}`
      );
    }
    parts.push(payloadBytes(tensor.data));
  }
  parts.push(Buffer.from(canonicalJson(trailer) + "\n", "utf-8"));
  return Buffer.concat(parts);
}

export interface DecodedFeatureFile {
  header: any;
  tensors: Map<string, { shape: number[]; data: Float32Array }>;
  objects: Detection[];
}

export function decodeFeatureFile(blob: Buffer, source = "<features>"): DecodedFeatureFile {
  const newline = blob.indexOf(0x0a);
  if (newline < 0) throw new ExporterError(`${source}: missing header line`);
  let header: any;
  try {
    header = JSON.parse(blob.subarray(0, newline).toString("utf-8"));
  } catch (err) {
    throw new ExporterError(`${source}: bad header: ${err}`);
  }
  if (header.format !== FEATURES_FORMAT) {
    throw new ExporterError(`${source}: unexpected format ${header.format}`);
  }
  if (header.version !== FEATURES_VERSION) {
    throw new ExporterError(`${source}: unsupported version ${header.version}`);
  }
  let offset = newline + 1;
  const tensors = new Map<string, { shape: number[]; data: Float32Array }>();
  for (const entry of header.tensors ?? []) {
    const count = (entry.shape as number[]).reduce((a: number, b: number) => a * b, 1);
    const end = offset + count * 4;
    if (end > blob.length) {
      throw new ExporterError(
        `${source}: tensor ${entry.name}: need bytes [${offset}, ${end}) but file holds ${blob.length}`
      );
    }
    const data = new Float32Array(count);
    for (let i = 0; i < count; i++) data[i] = blob.readFloatLE(offset + i * 4);
    tensors.set(entry.name, { shape: entry.shape, data });
    offset = end;
  }
  const rest = blob.subarray(offset).toString("utf-8").trim();
  let objects: Detection[] = [];
  if (rest !== "") {
    try {
      objects = JSON.parse(rest).objects ?? [];
    } catch (err) {
      throw new ExporterError(`${source}: bad trailer at byte offset ${offset}: ${err}`);
    }
  }
  return { header, tensors, objects };
}
