/**
 * posefields bindings: the native toolkit's encode/decode, lane
 * resampling, evaluation, and epoch planning exposed to JS/TS hosts.
 *
 * Structured records cross the boundary as canonical JSON strings and
 * field tensors as zero-copy Float32Array views, so binding outputs are
 * byte-identical to direct CLI runs on the same inputs.
 */

import { readFile, writeFile } from "node:fs/promises";
import { join } from "node:path";

import { runCli, withTempDir } from "./cli";
import { BoundFieldStack, parseFields, serializeFields } from "./fields";

export { BoundFieldStack, FieldsHeader, parseFields, serializeFields } from "./fields";
export { runCli } from "./cli";

/** Must match the native library's version string. */
export const VERSION = "0.1.0";

export type Category = "human" | "animal" | "car" | "bicycle" | "lane";

export interface SchemaOptions {
  /** Lane schema cardinality; ignored by the other categories. */
  laneKeypoints?: number;
}

export interface DecodeOptions extends SchemaOptions {
  seedThreshold?: number;
  keypointThreshold?: number;
  occupancyRadiusCells?: number;
  maxInstances?: number;
}

export interface LaneEvalOptions {
  lineWidth?: number;
  iouThreshold?: number;
  byScenario?: boolean;
  matching?: "greedy" | "hungarian";
}

function schemaArgs(opts: SchemaOptions): string[] {
  return opts.laneKeypoints !== undefined
    ? ["--lane-keypoints", String(opts.laneKeypoints)]
    : [];
}

/** Native library version, from `posefields --version`. */
export async function nativeVersion(): Promise<string> {
  const { stdout } = await runCli(["--version"]);
  return stdout.toString("utf-8").trim();
}

/**
 * Encodes one record (or a records array) into a field stack.
 *
 * `recordJson` is canonical record JSON: a single record object or an
 * array with exactly one record.
 */
export async function encodeFields(
  recordJson: string,
  schemaName: Category,
  stride = 16,
  window = 4,
  opts: SchemaOptions = {},
): Promise<BoundFieldStack> {
  const parsed = JSON.parse(recordJson);
  const records = Array.isArray(parsed) ? parsed : [parsed];
  if (records.length !== 1) {
    throw new Error(`encodeFields wants exactly one record, got ${records.length}`);
  }
  return withTempDir(async (dir) => {
    const annotations = join(dir, "records.json");
    await writeFile(annotations, JSON.stringify(records), "utf-8");
    const out = join(dir, "fields");
    await runCli([
      "encode",
      "--annotations", annotations,
      "--category", schemaName,
      "--stride", String(stride),
      "--window", String(window),
      "--out", out,
      "--quiet",
      ...schemaArgs(opts),
    ]);
    const imageId = String(records[0].image_id).replace(/\//g, "_");
    const data = await readFile(join(out, `${imageId}.fields`));
    return parseFields(data);
  });
}

/**
 * Decodes a field stack into canonical prediction JSON (the records
 * array the CLI's `decode` emits, byte-identical to it).
 */
export async function decodeFields(
  fields: BoundFieldStack,
  schemaName: Category,
  opts: DecodeOptions = {},
): Promise<string> {
  return withTempDir(async (dir) => {
    const fieldsPath = join(dir, "stack.fields");
    await writeFile(fieldsPath, serializeFields(fields));
    const out = join(dir, "preds.json");
    const args = [
      "decode",
      "--fields", fieldsPath,
      "--category", schemaName,
      "--out", out,
      "--quiet",
      ...schemaArgs(opts),
    ];
    if (opts.seedThreshold !== undefined) {
      args.push("--seed-threshold", String(opts.seedThreshold));
    }
    if (opts.keypointThreshold !== undefined) {
      args.push("--keypoint-threshold", String(opts.keypointThreshold));
    }
    if (opts.occupancyRadiusCells !== undefined) {
      args.push("--occupancy-radius", String(opts.occupancyRadiusCells));
    }
    if (opts.maxInstances !== undefined) {
      args.push("--max-instances", String(opts.maxInstances));
    }
    await runCli(args);
    return (await readFile(out)).toString("utf-8");
  });
}

/**
 * Even lane resampling with fixed endpoints (method C): CULane-style
 * lines text in, canonical record JSON out.
 */
export async function resampleEven(
  linesText: string,
  imageSize: [number, number],
  keypoints = 24,
  imageId = "lanes",
): Promise<string> {
  return withTempDir(async (dir) => {
    const lines = join(dir, `${imageId}.lines.txt`);
    await writeFile(lines, linesText, "utf-8");
    const out = join(dir, "records.json");
    await runCli([
      "convert-lanes",
      "--input", lines,
      "--image-size", `${imageSize[0]}x${imageSize[1]}`,
      "--method", "C",
      "--keypoints", String(keypoints),
      "--out", out,
      "--quiet",
    ]);
    return (await readFile(out)).toString("utf-8");
  });
}

/** Lane F1 under the rasterized-IoU protocol; returns the report JSON. */
export async function evaluateLanes(
  predJson: string,
  gtJson: string,
  opts: LaneEvalOptions = {},
): Promise<string> {
  return withTempDir(async (dir) => {
    const pred = join(dir, "pred.json");
    const gt = join(dir, "gt.json");
    await writeFile(pred, predJson, "utf-8");
    await writeFile(gt, gtJson, "utf-8");
    const out = join(dir, "report.json");
    const args = [
      "eval-lane",
      "--pred", pred,
      "--gt", gt,
      "--width", String(opts.lineWidth ?? 30),
      "--iou", String(opts.iouThreshold ?? 0.3),
      "--matching", opts.matching ?? "greedy",
      "--out", out,
      "--quiet",
    ];
    if (opts.byScenario) {
      args.push("--by-scenario");
    }
    await runCli(args);
    return (await readFile(out)).toString("utf-8");
  });
}

/** OKS average precision for one category; returns the report JSON. */
export async function keypointAp(
  predJson: string,
  gtJson: string,
  category: Category,
  opts: SchemaOptions = {},
): Promise<string> {
  return withTempDir(async (dir) => {
    const pred = join(dir, "pred.json");
    const gt = join(dir, "gt.json");
    await writeFile(pred, predJson, "utf-8");
    await writeFile(gt, gtJson, "utf-8");
    const out = join(dir, "report.json");
    await runCli([
      "eval-keypoints",
      "--pred", pred,
      "--gt", gt,
      "--category", category,
      "--out", out,
      "--quiet",
      ...schemaArgs(opts),
    ]);
    return (await readFile(out)).toString("utf-8");
  });
}

/** Multi-task epoch plans; returns the plans-array JSON. */
export async function planEpoch(
  sizes: number[],
  weights: number[],
  batchSize: number,
  seed = 0,
  epochs = 1,
  names?: string[],
): Promise<string> {
  if (sizes.length !== weights.length) {
    throw new Error("sizes and weights must have the same length");
  }
  return withTempDir(async (dir) => {
    const out = join(dir, "plan.json");
    const args = [
      "plan-epochs",
      "--sizes", sizes.join(","),
      "--weights", weights.join(","),
      "--batch", String(batchSize),
      "--seed", String(seed),
      "--epochs", String(epochs),
      "--out", out,
      "--quiet",
    ];
    if (names) {
      args.push("--names", names.join(","));
    }
    await runCli(args);
    return (await readFile(out)).toString("utf-8");
  });
}
