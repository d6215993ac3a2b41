/**
 * Spawns the native posefields CLI. The binding layer talks to the native
 * implementation only through this entry point and the documented file
 * formats, so every result is byte-identical to a manual CLI run.
 */

import { execFile } from "node:child_process";
import { mkdtemp, rm } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";

const PYTHON = process.env.POSEFIELDS_PYTHON ?? "python3";
const MAX_BUFFER = 256 * 1024 * 1024;

export interface CliResult {
  stdout: Buffer;
  stderr: string;
}

/** Runs `python -m posefields <args>`; rejects with the native stderr. */
export function runCli(args: string[]): Promise<CliResult> {
  return new Promise((resolve, reject) => {
    execFile(
      PYTHON,
      ["-m", "posefields", ...args],
      { encoding: "buffer", maxBuffer: MAX_BUFFER },
      (error, stdout, stderr) => {
        const err = stderr.toString("utf-8");
        if (error) {
          reject(new Error(err.trim() || error.message));
          return;
        }
        resolve({ stdout, stderr: err });
      },
    );
  });
}

/** Runs a callback with a fresh temp directory, cleaning up afterwards. */
export async function withTempDir<T>(fn: (dir: string) => Promise<T>): Promise<T> {
  const dir = await mkdtemp(join(tmpdir(), "posefields-"));
  try {
    return await fn(dir);
  } finally {
    await rm(dir, { recursive: true, force: true });
  }
}
