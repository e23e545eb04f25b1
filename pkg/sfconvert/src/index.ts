export { convertDir, convertPair, readPair } from "./convert.js";
export type { ConvertOptions, ConvertResult, PairRecord } from "./convert.js";
export { encodeSfpc, encodeSffl, MAGIC_CLOUD, MAGIC_FLOW, VERSION } from "./formats.js";
export { parseNpy, parseNpz } from "./npy.js";
export type { NpyArray, NpyData } from "./npy.js";
export { gatherRows, makeRng, sampleIndices } from "./sample.js";
export type { Rng } from "./sample.js";
