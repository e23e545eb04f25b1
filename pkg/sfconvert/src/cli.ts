#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { convertDir } from "./convert.js";

yargs(hideBin(process.argv))
  .command(
    "convert",
    "convert npz scene-flow archives to SFPC/SFFL pairs",
    (cmd) =>
      cmd
        .option("in", { type: "string", demandOption: true, describe: "input archive directory" })
        .option("out", { type: "string", demandOption: true, describe: "output directory" })
        .option("n", { type: "number", default: 2048, describe: "points per cloud" })
        .option("seed", { type: "number", default: 42, describe: "sampling seed" })
        .option("keep-occluded", {
          type: "boolean",
          default: false,
          describe: "do not filter masked points",
        })
        .option("replace", {
          type: "boolean",
          default: false,
          describe: "sample with replacement (allows n above the archive size)",
        })
        .option("limit", { type: "number", describe: "convert a seeded random subset this large" }),
    (argv) => {
      const result = convertDir(argv.in, argv.out, {
        nPoints: argv.n,
        seed: argv.seed,
        keepOccluded: argv["keep-occluded"],
        replace: argv.replace,
        limit: argv.limit,
      });
      console.log(`wrote ${result.written} pairs, skipped ${result.skipped.length}`);
      process.exitCode = result.written > 0 ? 0 : 1;
    },
  )
  .demandCommand(1)
  .strict()
  .parse();
