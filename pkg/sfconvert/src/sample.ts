import seedrandom from "seedrandom";

export type Rng = () => number;

/** Deterministic RNG over [0, 1) from an arbitrary seed string. */
export function makeRng(seed: string): Rng {
  return seedrandom(seed);
}

/**
 * Draw n row indices out of m.
 *
 * n === m returns the identity order (lossless pass-through); without
 * replacement a partial Fisher-Yates shuffle is used, so n > m requires
 * replace = true.
 */
export function sampleIndices(m: number, n: number, rng: Rng, replace = false): Uint32Array {
  if (n === m) {
    return Uint32Array.from({ length: m }, (_, i) => i);
  }
  if (replace) {
    return Uint32Array.from({ length: n }, () => Math.floor(rng() * m));
  }
  if (n > m) {
    throw new Error(`cannot sample ${n} of ${m} rows without replacement`);
  }
  const pool = Uint32Array.from({ length: m }, (_, i) => i);
  for (let i = 0; i < n; i += 1) {
    const j = i + Math.floor(rng() * (m - i));
    const tmp = pool[i];
    pool[i] = pool[j];
    pool[j] = tmp;
  }
  return pool.slice(0, n);
}

/** Gather rows of an N x width array into a new Float32Array. */
export function gatherRows(values: Float32Array, indices: Uint32Array, width: number): Float32Array {
  const out = new Float32Array(indices.length * width);
  for (let i = 0; i < indices.length; i += 1) {
    const src = indices[i] * width;
    for (let c = 0; c < width; c += 1) {
      out[i * width + c] = values[src + c];
    }
  }
  return out;
}
