#!/usr/bin/env node
/**
 * Exporter CLI.
 *
 *   export   --session <file> --models <config.json> --out <dir>
 *            [--stride 6] [--window-len 16] [--emit-every 1]
 *   validate --manifest <dir>/manifest.json
 *
 * Sampler flags mirror the consumer engine so window indices line up.
 */

import { exportSession, loadModelsConfig, validateExport } from "./exporter";
import { DEFAULT_SAMPLER, ExporterError } from "./types";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      throw new ExporterError(`unexpected argument ${JSON.stringify(arg)}`);
    }
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new ExporterError(`flag ${arg} needs a value`);
    }
    flags.set(arg.slice(2), value);
    i += 1;
  }
  return flags;
}

function requireFlag(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) throw new ExporterError(`missing required --${name}`);
  return value;
}

function intFlag(flags: Map<string, string>, name: string, fallback: number): number {
  const raw = flags.get(name);
  if (raw === undefined) return fallback;
  const value = Number.parseInt(raw, 10);
  if (!Number.isInteger(value) || value < 1) {
    throw new ExporterError(`--${name} must be a positive integer, got ${raw}`);
  }
  return value;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "export") {
      const flags = parseFlags(rest);
      const manifest = exportSession(
        requireFlag(flags, "session"),
        loadModelsConfig(requireFlag(flags, "models")),
        requireFlag(flags, "out"),
        {
          sampleStride: intFlag(flags, "stride", DEFAULT_SAMPLER.sampleStride),
          windowLen: intFlag(flags, "window-len", DEFAULT_SAMPLER.windowLen),
          emitEvery: intFlag(flags, "emit-every", DEFAULT_SAMPLER.emitEvery),
        }
      );
      process.stderr.write(`exported ${manifest.windows.length} window(s)\n`);
      return 0;
    }
    if (command === "validate") {
      const flags = parseFlags(rest);
      const report = validateExport(requireFlag(flags, "manifest"));
      if (report.problems.length > 0) {
        for (const problem of report.problems) process.stderr.write(problem + "\n");
        return 1;
      }
      process.stderr.write(`validated ${report.checked} window file(s), no problems\n`);
      return 0;
    }
    process.stderr.write("usage: cli.js <export|validate> [flags]\n");
    return 2;
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
