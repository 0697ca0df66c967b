#!/usr/bin/env node
/**
 * spssl-plots render --kind <sampler-validation|curves|attention> --in <file> --out <svg>
 *
 * Reads one emitted report/metrics file and writes a deterministic SVG.
 * Malformed or truncated input exits nonzero before any output is written.
 */

import { readFileSync, renameSync, writeFileSync } from "node:fs";
import { FormatError, parseAttentionMaps, parseMetricsCsv, parseValidationReport } from "./formats.js";
import { renderAttention, renderCurves, renderSamplerValidation } from "./render.js";

const KINDS = ["sampler-validation", "curves", "attention"] as const;
type Kind = (typeof KINDS)[number];

interface Job {
  kind: Kind;
  input: string;
  output: string;
}

export function parseArgs(argv: string[]): Job {
  if (argv[0] !== "render") throw new Error(`unknown command ${JSON.stringify(argv[0] ?? "")}; expected "render"`);
  const opts = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (!flag.startsWith("--") || value === undefined) throw new Error(`malformed option ${flag}`);
    opts.set(flag.slice(2), value);
  }
  const kind = opts.get("kind");
  const input = opts.get("in");
  const output = opts.get("out");
  if (!kind || !input || !output) throw new Error("render needs --kind, --in, and --out");
  if (!(KINDS as readonly string[]).includes(kind)) {
    throw new Error(`unknown kind ${JSON.stringify(kind)}; expected one of ${KINDS.join(", ")}`);
  }
  return { kind: kind as Kind, input, output };
}

export function renderToString(kind: Kind, text: string): string {
  switch (kind) {
    case "sampler-validation":
      return renderSamplerValidation(parseValidationReport(text));
    case "curves":
      return renderCurves(parseMetricsCsv(text));
    case "attention":
      return renderAttention(parseAttentionMaps(text));
  }
}

export function main(argv: string[]): number {
  let job: Job;
  try {
    job = parseArgs(argv);
  } catch (err) {
    process.stderr.write(`usage error: ${(err as Error).message}\n`);
    return 2;
  }
  let text: string;
  try {
    text = readFileSync(job.input, "utf8");
  } catch {
    process.stderr.write(`error: cannot read ${job.input}\n`);
    return 1;
  }
  let figure: string;
  try {
    figure = renderToString(job.kind, text);
  } catch (err) {
    if (err instanceof FormatError) {
      process.stderr.write(`invalid input: ${err.message}\n`);
      return 1;
    }
    throw err;
  }
  // write-then-rename so a failed render never leaves a partial figure
  const tmp = `${job.output}.tmp`;
  writeFileSync(tmp, figure);
  renameSync(tmp, job.output);
  return 0;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("cli.ts")) {
  process.exit(main(process.argv.slice(2)));
}
