#!/usr/bin/env node
/**
 * Figure renderer for cesched-bench CSV output.
 *
 * Usage:
 *   cesched-plots --in bench.csv --kind throughput --out throughput.svg
 *
 * Kinds: throughput | speedup-heatmap | rw-throughput | delay-hist.
 * Exits 0 on success, 2 on usage errors, 1 when the input is unreadable or
 * missing required columns (the failing column is named).
 */

import { readFileSync, writeFileSync } from "fs";
import { MissingColumnError, parseCsv } from "./csv.js";
import { KINDS, Kind, render } from "./plots.js";

interface Args {
  input: string;
  kind: Kind;
  out: string;
}

function usage(message?: string): never {
  if (message) console.error(`error: ${message}`);
  console.error(
    "usage: cesched-plots --in <csv> --kind <" + KINDS.join("|") + "> --out <svg>"
  );
  process.exit(2);
}

export function parseArgs(argv: string[]): Args {
  let input: string | undefined;
  let kind: string | undefined;
  let out: string | undefined;
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    const next = () => {
      i += 1;
      if (i >= argv.length) usage(`${a} requires a value`);
      return argv[i];
    };
    if (a === "--in") input = next();
    else if (a === "--kind") kind = next();
    else if (a === "--out") out = next();
    else usage(`unknown argument ${a}`);
  }
  if (!input || !kind || !out) usage("--in, --kind and --out are all required");
  if (!(KINDS as readonly string[]).includes(kind)) {
    usage(`unknown kind "${kind}"`);
  }
  return { input, kind: kind as Kind, out };
}

export function main(argv: string[]): number {
  const args = parseArgs(argv);
  let text: string;
  try {
    text = readFileSync(args.input, "utf-8");
  } catch (e) {
    console.error(`error: cannot read ${args.input}: ${(e as Error).message}`);
    return 1;
  }
  let svg: string;
  try {
    svg = render(args.kind, parseCsv(text), args.input);
  } catch (e) {
    if (e instanceof MissingColumnError) {
      console.error(`error: ${e.message}`);
      return 1;
    }
    console.error(`error: ${(e as Error).message}`);
    return 1;
  }
  try {
    writeFileSync(args.out, svg);
  } catch (e) {
    console.error(`error: cannot write ${args.out}: ${(e as Error).message}`);
    return 1;
  }
  console.log(`wrote ${args.out}`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
