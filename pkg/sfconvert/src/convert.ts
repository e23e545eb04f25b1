import fs from "node:fs";
import path from "node:path";

import { encodeSfpc, encodeSffl } from "./formats.js";
import { parseNpz, NpyArray } from "./npy.js";
import { gatherRows, makeRng, sampleIndices } from "./sample.js";

const SOURCE_KEYS = ["pos1", "points1", "pc1"];
const TARGET_KEYS = ["pos2", "points2", "pc2"];
const FLOW_KEYS = ["flow", "gt", "gt_flow"];
const VALID_KEYS = ["valid_mask1", "valid_mask", "mask"];
const OCCLUDED_KEYS = ["occ_mask1", "occ_mask", "occluded"];

export type PairRecord = {
  scene: string;
  source: Float32Array;
  target: Float32Array;
  flow: Float32Array;
};

export type ConvertOptions = {
  nPoints: number;
  seed: number;
  keepOccluded?: boolean;
  replace?: boolean;
  limit?: number;
};

export type ConvertResult = {
  written: number;
  skipped: string[];
};

function pick(arrays: Record<string, NpyArray>, keys: string[]): [string, NpyArray] | null {
  for (const key of keys) {
    if (key in arrays) {
      return [key, arrays[key]];
    }
  }
  return null;
}

function pointArray(arrays: Record<string, NpyArray>, keys: string[]): Float32Array {
  const found = pick(arrays, keys);
  if (found === null) {
    throw new Error(`missing array, expected one of ${keys.join("/")}`);
  }
  const [key, arr] = found;
  if (arr.shape.length !== 2 || arr.shape[1] !== 3) {
    throw new Error(`${key} has shape (${arr.shape.join(", ")}), expected (M, 3)`);
  }
  if (!(arr.data instanceof Float32Array) && !(arr.data instanceof Float64Array)) {
    throw new Error(`${key} is not a float array`);
  }
  const data = arr.data instanceof Float32Array ? arr.data : Float32Array.from(arr.data);
  for (let i = 0; i < data.length; i += 1) {
    if (!Number.isFinite(data[i])) {
      throw new Error(`${key} has a non-finite value at flat index ${i}`);
    }
  }
  return data;
}

function keepRows(arrays: Record<string, NpyArray>, m: number): Uint32Array | null {
  const valid = pick(arrays, VALID_KEYS);
  const occluded = valid === null ? pick(arrays, OCCLUDED_KEYS) : null;
  const found = valid ?? occluded;
  if (found === null) {
    return null;
  }
  const [key, arr] = found;
  const flat = arr.data;
  if (flat.length !== m) {
    throw new Error(`${key} has ${flat.length} entries for ${m} points`);
  }
  const keep: number[] = [];
  for (let i = 0; i < m; i += 1) {
    if (valid !== null ? flat[i] !== 0 : flat[i] === 0) {
      keep.push(i);
    }
  }
  return Uint32Array.from(keep);
}

/**
 * Read one npz archive into a PairRecord.
 *
 * Source, target, and flow must share M; an occlusion mask, when present
 * and not disabled, drops masked source/flow rows before sampling. Throws
 * on any malformed content (the directory walk turns that into a skip).
 */
export function readPair(filePath: string, keepOccluded = false): PairRecord {
  const arrays = parseNpz(new Uint8Array(fs.readFileSync(filePath)));
  let source = pointArray(arrays, SOURCE_KEYS);
  const target = pointArray(arrays, TARGET_KEYS);
  let flow = pointArray(arrays, FLOW_KEYS);
  const m = source.length / 3;
  if (target.length !== source.length || flow.length !== source.length) {
    throw new Error(
      `row mismatch: source ${m}, target ${target.length / 3}, flow ${flow.length / 3}`,
    );
  }
  if (!keepOccluded) {
    const keep = keepRows(arrays, m);
    if (keep !== null && keep.length < m) {
      source = gatherRows(source, keep, 3);
      flow = gatherRows(flow, keep, 3);
    }
  }
  if (source.length === 0) {
    throw new Error("no rows left after occlusion filtering");
  }
  const scene = path.basename(filePath).replace(/\.npz$/i, "");
  return { scene, source, target, flow };
}

/**
 * Subsample a pair to nPoints rows.
 *
 * Source and flow share one seeded index set so their rows stay paired;
 * the target draws its own set from the same stream. The stream is seeded
 * per scene, so results do not depend on directory order.
 */
export function convertPair(
  record: PairRecord,
  nPoints: number,
  seed: number,
  replace = false,
): { source: Float32Array; target: Float32Array; flow: Float32Array } {
  const rng = makeRng(`${seed}:${record.scene}`);
  const sourceIdx = sampleIndices(record.source.length / 3, nPoints, rng, replace);
  const targetIdx = sampleIndices(record.target.length / 3, nPoints, rng, replace);
  return {
    source: gatherRows(record.source, sourceIdx, 3),
    target: gatherRows(record.target, targetIdx, 3),
    flow: gatherRows(record.flow, sourceIdx, 3),
  };
}

/**
 * Convert every readable .npz archive under inDir into SFPC/SFFL files.
 *
 * Writes {scene}_s.sfpc, {scene}_t.sfpc, {scene}_gt.sffl per pair.
 * Malformed archives are skipped with a warning. With limit set, a seeded
 * random subset of the archives is converted.
 */
export function convertDir(
  inDir: string,
  outDir: string,
  opts: ConvertOptions,
  warn: (msg: string) => void = (msg) => console.error(msg),
): ConvertResult {
  let names = fs
    .readdirSync(inDir)
    .filter((name) => name.toLowerCase().endsWith(".npz"))
    .sort();
  if (opts.limit !== undefined && opts.limit < names.length) {
    const chosen = sampleIndices(names.length, opts.limit, makeRng(`${opts.seed}:select`));
    names = Array.from(chosen)
      .sort((a, b) => a - b)
      .map((i) => names[i]);
  }
  fs.mkdirSync(outDir, { recursive: true });
  const result: ConvertResult = { written: 0, skipped: [] };
  for (const name of names) {
    try {
      const record = readPair(path.join(inDir, name), opts.keepOccluded);
      const pair = convertPair(record, opts.nPoints, opts.seed, opts.replace);
      const stem = path.join(outDir, record.scene);
      fs.writeFileSync(`${stem}_s.sfpc`, encodeSfpc(pair.source));
      fs.writeFileSync(`${stem}_t.sfpc`, encodeSfpc(pair.target));
      fs.writeFileSync(`${stem}_gt.sffl`, encodeSffl(pair.flow));
      result.written += 1;
    } catch (err) {
      result.skipped.push(name);
      warn(`skip ${name}: ${err instanceof Error ? err.message : err}`);
    }
  }
  return result;
}
