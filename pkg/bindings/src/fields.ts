/**
 * Field stack file codec (`posefields-fields-v1`).
 *
 * One ASCII JSON header line (space-padded so the payload starts on a
 * 4-byte boundary) followed by raw little-endian float32 tensors, cif
 * then caf. The padding lets hosts expose the tensors as Float32Array
 * views over the file buffer without copying; this module assumes a
 * little-endian host (Node on x86/ARM).
 */

export type Shape4 = [number, number, number, number];

export interface FieldsHeader {
  format: string;
  cifShape: Shape4;
  cafShape: Shape4;
  channelNames: { cif: string[]; caf: string[] };
  imageSize: [number, number];
  stride: number;
  window: number;
  sigmaFloor: number;
  schemaHash: string;
}

export interface BoundFieldStack {
  header: FieldsHeader;
  /** Exact header line bytes (padding and newline included). */
  headerRaw: Buffer;
  /** Zero-copy read-only views over `payload`. Do not mutate. */
  cif: Float32Array;
  caf: Float32Array;
  payload: Buffer;
}

function shape4(value: unknown, name: string): Shape4 {
  if (!Array.isArray(value) || value.length !== 4 || !value.every((n) => Number.isInteger(n))) {
    throw new Error(`fields header: ${name} must be a 4-int array`);
  }
  return value as Shape4;
}

function elementCount(shape: Shape4): number {
  return shape[0] * shape[1] * shape[2] * shape[3];
}

/** Parses a .fields buffer into header metadata plus zero-copy views.
 *
 * The header padding aligns the payload to the file start; if the host
 * handed us a pooled Buffer whose backing offset breaks that alignment,
 * the bytes are moved once into a fresh allocation (views stay copy-free).
 */
export function parseFields(data: Buffer): BoundFieldStack {
  const newline = data.indexOf(0x0a);
  if (newline < 0) {
    throw new Error("fields file has no header line");
  }
  if ((data.byteOffset + newline + 1) % 4 !== 0) {
    const aligned = Buffer.alloc(data.length); // fresh allocation, offset 0
    data.copy(aligned);
    data = aligned;
    if ((newline + 1) % 4 !== 0) {
      throw new Error("payload is not 4-byte aligned; header padding missing");
    }
  }
  const headerRaw = data.subarray(0, newline + 1);
  let doc: Record<string, unknown>;
  try {
    doc = JSON.parse(headerRaw.toString("ascii"));
  } catch (err) {
    throw new Error(`bad fields header: ${String(err)}`);
  }
  const header: FieldsHeader = {
    format: String(doc.format),
    cifShape: shape4(doc.cif_shape, "cif_shape"),
    cafShape: shape4(doc.caf_shape, "caf_shape"),
    channelNames: doc.channel_names as { cif: string[]; caf: string[] },
    imageSize: (doc.image_size as [number, number]) ?? [0, 0],
    stride: Number(doc.stride),
    window: Number(doc.window),
    sigmaFloor: Number(doc.sigma_floor),
    schemaHash: String(doc.schema_hash),
  };

  const payload = data.subarray(newline + 1);
  const cifCount = elementCount(header.cifShape);
  const cafCount = elementCount(header.cafShape);
  if (payload.length !== 4 * (cifCount + cafCount)) {
    throw new Error(
      `fields payload is ${payload.length} bytes, expected ${4 * (cifCount + cafCount)}`,
    );
  }
  const base = payload.byteOffset;
  const cif = new Float32Array(payload.buffer, base, cifCount);
  const caf = new Float32Array(payload.buffer, base + 4 * cifCount, cafCount);
  return { header, headerRaw: Buffer.from(headerRaw), cif, caf, payload };
}

/** Serializes a stack back to the exact bytes it was parsed from. */
export function serializeFields(stack: BoundFieldStack): Buffer {
  return Buffer.concat([stack.headerRaw, stack.payload]);
}
