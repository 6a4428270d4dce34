#!/usr/bin/env node
import { KINDS, Kind, render } from "./figures.js";

const USAGE =
  "usage: render --kind paths|trajectories|cost-fan|metrics-table " +
  "--in a.csv [b.csv ...] --out fig.svg";

export function parseArgs(argv: string[]): { kind: Kind; inputs: string[]; out: string } {
  let kind: string | undefined;
  const inputs: string[] = [];
  let out: string | undefined;
  let i = 0;
  while (i < argv.length) {
    const arg = argv[i];
    if (arg === "--kind") {
      kind = argv[++i];
    } else if (arg === "--in") {
      while (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
        inputs.push(argv[++i]);
      }
    } else if (arg === "--out") {
      out = argv[++i];
    } else {
      throw new Error(`unknown argument: ${arg}\n${USAGE}`);
    }
    i += 1;
  }
  if (!kind || !KINDS.includes(kind as Kind)) {
    throw new Error(`--kind must be one of ${KINDS.join(", ")}\n${USAGE}`);
  }
  if (inputs.length === 0 || !out) {
    throw new Error(`--in and --out are required\n${USAGE}`);
  }
  return { kind: kind as Kind, inputs, out };
}

export function main(argv: string[]): number {
  try {
    const spec = parseArgs(argv);
    render(spec);
    return 0;
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
