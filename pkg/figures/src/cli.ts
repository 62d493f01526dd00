/**
 * CLI: resgrad-figures <frontier|delta_bars|seedwise_paired>
 *        --input runs.csv --output figure.svg [--style arm=color[:marker],...]
 *        [--baseline arm]
 *
 * Reads a harness schema-v1 runs CSV and writes a deterministic SVG.  On a
 * schema error nothing is written and the process exits non-zero.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { parseCsv } from "./csv.js";
import { FigureKind, render } from "./figures.js";
import { parseStyleMap } from "./style.js";

function parseArgs(argv: string[]) {
  const [kind, ...rest] = argv;
  const opts: Record<string, string> = {};
  for (let i = 0; i < rest.length; i += 2) {
    const flag = rest[i];
    const value = rest[i + 1];
    if (!flag?.startsWith("--") || value === undefined) {
      throw new Error(`bad argument pair: ${flag} ${value ?? ""}`);
    }
    opts[flag.slice(2)] = value;
  }
  return { kind, opts };
}

export function main(argv: string[]): number {
  const kinds: FigureKind[] = ["frontier", "delta_bars", "seedwise_paired"];
  let parsed;
  try {
    parsed = parseArgs(argv);
  } catch (err) {
    console.error(String(err));
    return 2;
  }
  const { kind, opts } = parsed;
  if (!kinds.includes(kind as FigureKind)) {
    console.error(`usage: resgrad-figures <${kinds.join("|")}> --input runs.csv --output out.svg`);
    return 2;
  }
  if (!opts.input || !opts.output) {
    console.error("--input and --output are required");
    return 2;
  }
  try {
    const rows = parseCsv(readFileSync(opts.input, "utf8"));
    const svg = render({
      kind: kind as FigureKind,
      rows,
      styles: opts.style ? parseStyleMap(opts.style) : undefined,
      baselineArm: opts.baseline,
    });
    writeFileSync(opts.output, svg);
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  console.log(opts.output);
  return 0;
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
