export const MAGIC_CLOUD = "SFPC";
export const MAGIC_FLOW = "SFFL";
export const VERSION = 1;

function assertFinite(values: Float32Array, what: string): void {
  for (let i = 0; i < values.length; i += 1) {
    if (!Number.isFinite(values[i])) {
      throw new Error(`refusing to write non-finite ${what} at index ${i}`);
    }
  }
}

function header(magic: string, n: number, extra: number): DataView {
  const view = new DataView(new ArrayBuffer(12 + n * 12 + extra));
  for (let i = 0; i < 4; i += 1) {
    view.setUint8(i, magic.charCodeAt(i));
  }
  view.setUint32(4, VERSION, true);
  view.setUint32(8, n, true);
  return view;
}

/** Encode an N x 3 position array as an SFPC cloud without features. */
export function encodeSfpc(positions: Float32Array): Uint8Array {
  if (positions.length % 3 !== 0) {
    throw new Error(`positions length ${positions.length} is not a multiple of 3`);
  }
  assertFinite(positions, "position");
  const n = positions.length / 3;
  const view = header(MAGIC_CLOUD, n, 4);
  for (let i = 0; i < positions.length; i += 1) {
    view.setFloat32(12 + 4 * i, positions[i], true);
  }
  view.setUint32(12 + n * 12, 0, true);
  return new Uint8Array(view.buffer);
}

/** Encode an N x 3 flow array as an SFFL flow field. */
export function encodeSffl(vectors: Float32Array): Uint8Array {
  if (vectors.length % 3 !== 0) {
    throw new Error(`vectors length ${vectors.length} is not a multiple of 3`);
  }
  assertFinite(vectors, "flow vector");
  const view = header(MAGIC_FLOW, vectors.length / 3, 0);
  for (let i = 0; i < vectors.length; i += 1) {
    view.setFloat32(12 + 4 * i, vectors[i], true);
  }
  return new Uint8Array(view.buffer);
}
