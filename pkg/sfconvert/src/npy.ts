import { unzipSync } from "fflate";

export type NpyData = Float32Array | Float64Array | Int32Array | Uint8Array;

export type NpyArray = {
  data: NpyData;
  shape: number[];
};

const MAGIC = "\x93NUMPY";

const ITEM_SIZE: Record<string, number> = {
  "<f4": 4,
  "<f8": 8,
  "<i4": 4,
  "|u1": 1,
  "|b1": 1,
};

function parseHeader(raw: string) {
  const descr = /'descr':\s*'([^']+)'/.exec(raw)?.[1] ?? "";
  const shapeText = /'shape':\s*\(([^)]*)\)/.exec(raw)?.[1] ?? "";
  const shape = shapeText
    .split(",")
    .map((value) => Number.parseInt(value.trim(), 10))
    .filter((value) => Number.isFinite(value));
  const fortran = /'fortran_order':\s*(True|False)/.exec(raw)?.[1] === "True";
  return { descr, shape, fortran };
}

/** Parse one .npy buffer (little-endian, C-order; v1 and v2 headers). */
export function parseNpy(bytes: Uint8Array): NpyArray {
  if (String.fromCharCode(...bytes.subarray(0, 6)) !== MAGIC) {
    throw new Error("not an npy array (bad magic)");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const major = view.getUint8(6);
  if (major !== 1 && major !== 2) {
    throw new Error(`unsupported npy version ${major}.${view.getUint8(7)}`);
  }
  const headerLength = major === 1 ? view.getUint16(8, true) : view.getUint32(8, true);
  const headerOffset = major === 1 ? 10 : 12;
  const headerRaw = new TextDecoder().decode(
    bytes.subarray(headerOffset, headerOffset + headerLength),
  );
  const { descr, shape, fortran } = parseHeader(headerRaw);
  if (fortran) {
    throw new Error("fortran-ordered arrays are not supported");
  }
  const length = shape.reduce((acc, value) => acc * value, 1);
  // Slice so the typed view starts at offset 0 regardless of zip alignment.
  const start = headerOffset + headerLength;
  const itemSize = ITEM_SIZE[descr];
  if (itemSize === undefined) {
    throw new Error(`unsupported dtype ${descr || "unknown"}`);
  }
  if (start + length * itemSize > bytes.byteLength) {
    throw new Error(`npy data truncated (${bytes.byteLength - start} bytes for ${length} items)`);
  }
  const raw = bytes.slice(start, start + length * itemSize);
  switch (descr) {
    case "<f4":
      return { data: new Float32Array(raw.buffer, 0, length), shape };
    case "<f8":
      return { data: new Float64Array(raw.buffer, 0, length), shape };
    case "<i4":
      return { data: new Int32Array(raw.buffer, 0, length), shape };
    default:
      return { data: raw, shape };
  }
}

/** Parse an .npz archive into name -> array, names without the .npy suffix. */
export function parseNpz(bytes: Uint8Array): Record<string, NpyArray> {
  let files: Record<string, Uint8Array>;
  try {
    files = unzipSync(bytes);
  } catch (err) {
    throw new Error(`not an npz archive: ${err instanceof Error ? err.message : err}`);
  }
  const out: Record<string, NpyArray> = {};
  for (const [name, data] of Object.entries(files)) {
    out[name.replace(/\.npy$/i, "")] = parseNpy(data);
  }
  return out;
}
