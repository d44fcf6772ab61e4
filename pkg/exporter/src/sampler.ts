/**
 * Rolling-window cadence identical to the consumer engine: retain every
 * sampleStride-th frame, emit a window of the most recent windowLen samples
 * every emitEvery retained samples once filled. Window indices count
 * emissions from zero, so exported files line up one-to-one with the
 * consumer's windows on the same session and settings.
 */

import { SamplerOptions, SampleWindow, SkeletonFrame } from "./types";

export function sampleWindows(
  frames: SkeletonFrame[],
  options: SamplerOptions
): SampleWindow[] {
  const { sampleStride, windowLen, emitEvery } = options;
  if (sampleStride < 1 || windowLen < 1 || emitEvery < 1) {
    throw new Error("sampler options must all be >= 1");
  }
  const retained: SkeletonFrame[] = [];
  const windows: SampleWindow[] = [];
  let emitted = 0;
  frames.forEach((frame, index) => {
    if (index % sampleStride !== 0) return;
    retained.push(frame);
    if (retained.length > windowLen) retained.shift();
    const retainedCount = Math.floor(index / sampleStride) + 1;
    if (retainedCount < windowLen) return;
    if ((retainedCount - windowLen) % emitEvery !== 0) return;
    windows.push({ frames: [...retained], windowIndex: emitted });
    emitted += 1;
  });
  return windows;
}
