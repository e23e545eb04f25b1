import fs from "node:fs";
import path from "node:path";

import { zipSync } from "fflate";

export type TestData = Float32Array | Float64Array | Int32Array | Uint8Array;

/** Build a v1 .npy buffer (little-endian platform assumed, as in the parser). */
export function buildNpy(data: TestData, shape: number[]): Uint8Array {
  const descr =
    data instanceof Float32Array
      ? "<f4"
      : data instanceof Float64Array
        ? "<f8"
        : data instanceof Int32Array
          ? "<i4"
          : "|u1";
  let header = `{'descr': '${descr}', 'fortran_order': False, 'shape': (${shape.join(", ")}${
    shape.length === 1 ? "," : ""
  }), }`;
  const pad = (64 - ((10 + header.length + 1) % 64)) % 64;
  header = header + " ".repeat(pad) + "\n";
  const out = new Uint8Array(10 + header.length + data.byteLength);
  out.set([0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59, 1, 0]);
  out[8] = header.length & 0xff;
  out[9] = header.length >> 8;
  for (let i = 0; i < header.length; i += 1) {
    out[10 + i] = header.charCodeAt(i);
  }
  out.set(new Uint8Array(data.buffer, data.byteOffset, data.byteLength), 10 + header.length);
  return out;
}

/** Zip named arrays into an .npz buffer. */
export function buildNpz(entries: Record<string, { data: TestData; shape: number[] }>): Uint8Array {
  const files: Record<string, Uint8Array> = {};
  for (const [name, { data, shape }] of Object.entries(entries)) {
    files[`${name}.npy`] = buildNpy(data, shape);
  }
  return zipSync(files);
}

/** Row i of the fabricated source cloud for a scene. */
export function sourceRow(scene: number, i: number): [number, number, number] {
  return [i, 2 * i + scene, 0.5 * scene];
}

/** Flow attached to source row i of a scene (recoverable from the row id). */
export function flowRow(scene: number, i: number): [number, number, number] {
  return [0.05 + 0.001 * i, 0.1 * scene, -0.02];
}

/**
 * Fabricate one scene archive with m points; row i of the source encodes i
 * in its first coordinate so sampled rows can be traced back.
 */
export function makePair(scene: number, m: number): Record<string, { data: TestData; shape: number[] }> {
  const source = new Float32Array(m * 3);
  const target = new Float32Array(m * 3);
  const flow = new Float32Array(m * 3);
  for (let i = 0; i < m; i += 1) {
    const p = sourceRow(scene, i);
    const f = flowRow(scene, i);
    for (let c = 0; c < 3; c += 1) {
      source[i * 3 + c] = p[c];
      flow[i * 3 + c] = f[c];
      target[i * 3 + c] = p[c] + f[c];
    }
  }
  return {
    pos1: { data: source, shape: [m, 3] },
    pos2: { data: target, shape: [m, 3] },
    flow: { data: flow, shape: [m, 3] },
  };
}

/** Write archives into dir as {name}.npz. */
export function writeArchives(
  dir: string,
  archives: Record<string, Record<string, { data: TestData; shape: number[] }>>,
): void {
  fs.mkdirSync(dir, { recursive: true });
  for (const [name, entries] of Object.entries(archives)) {
    fs.writeFileSync(path.join(dir, `${name}.npz`), buildNpz(entries));
  }
}
