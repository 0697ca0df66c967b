/**
 * Parsers for the structured text files the training CLI emits.
 *
 * Every parser validates the full document before returning; malformed or
 * truncated input throws FormatError and nothing is ever rendered from it.
 */

export class FormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "FormatError";
  }
}

function fail(msg: string): never {
  throw new FormatError(msg);
}

function num(text: string, what: string): number {
  const v = Number(text);
  if (text.trim() === "" || Number.isNaN(v)) fail(`${what}: not a number: ${JSON.stringify(text)}`);
  return v;
}

function numList(text: string, what: string): number[] {
  return text.trim().split(/\s+/).map((t) => num(t, what));
}

/** key = value lines into a map; returns undefined for missing keys. */
function kv(lines: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (const line of lines) {
    const i = line.indexOf("=");
    if (i < 0) continue;
    out.set(line.slice(0, i).trim(), line.slice(i + 1).trim());
  }
  return out;
}

// ---------------------------------------------------------------------------
// sampler validation report

export interface Histogram {
  edges: number[];
  counts: number[];
}

export interface ValidationReport {
  n: number;
  seed: number;
  acceptanceRate: number;
  ks: Map<string, number>;
  offsetHeatmap: { xEdges: number[]; yEdges: number[]; counts: number[][] };
  scatter: Array<[number, number]>;
  marginals: Map<string, Histogram>;
  diceHistogram: Histogram;
}

const MARGINALS = ["log_s_x", "log_s_y", "p_x", "p_y"];

export function parseValidationReport(text: string): ValidationReport {
  const lines = text.split("\n");
  if (lines[0] !== "spssl-validation-report v1") fail("not a spssl validation report");
  if (!lines.includes("[end]")) fail("truncated report: missing [end] marker");

  // split into the preamble and named sections
  const sections = new Map<string, string[]>();
  let current = "";
  sections.set(current, []);
  for (const line of lines.slice(1)) {
    const m = line.match(/^\[(.+)\]$/);
    if (m) {
      current = m[1];
      sections.set(current, []);
    } else if (line.trim() !== "") {
      sections.get(current)!.push(line);
    }
  }

  const head = kv(sections.get("")!);
  const need = (key: string): string => head.get(key) ?? fail(`missing header field ${key}`);
  const n = num(need("n"), "n");
  const seed = num(need("seed"), "seed");
  const acceptanceRate = num(need("acceptance_rate"), "acceptance_rate");

  const ksLines = sections.get("ks") ?? fail("missing [ks] section");
  const ks = new Map<string, number>();
  for (const [key, value] of kv(ksLines)) ks.set(key, num(value, `ks ${key}`));
  for (const name of MARGINALS) {
    if (!ks.has(name)) fail(`missing KS entry ${name}`);
  }

  const heat = sections.get("offset_heatmap") ?? fail("missing [offset_heatmap] section");
  const heatKv = kv(heat);
  const xEdges = numList(heatKv.get("x_edges") ?? fail("missing x_edges"), "x_edges");
  const yEdges = numList(heatKv.get("y_edges") ?? fail("missing y_edges"), "y_edges");
  const counts = heat
    .filter((l) => l.startsWith("row ="))
    .map((l) => numList(l.slice("row =".length), "heatmap row"));
  if (counts.length !== xEdges.length - 1) fail("offset heatmap: row count does not match edges");
  for (const row of counts) {
    if (row.length !== yEdges.length - 1) fail("offset heatmap: ragged row");
  }

  const scatterLines = sections.get("pixel_offset_scatter") ?? fail("missing scatter section");
  const scatter: Array<[number, number]> = scatterLines.map((l) => {
    const vals = numList(l.replace(/^point =/, ""), "scatter point");
    if (vals.length !== 2) fail("scatter point needs two values");
    return [vals[0], vals[1]];
  });
  if (scatter.length === 0) fail("scatter section is empty");

  const parseHist = (name: string): Histogram => {
    const sec = sections.get(name) ?? fail(`missing [${name}] section`);
    const m = kv(sec);
    const edges = numList(m.get("edges") ?? fail(`${name}: missing edges`), `${name} edges`);
    const histCounts = numList(m.get("counts") ?? fail(`${name}: missing counts`), `${name} counts`);
    if (histCounts.length !== edges.length - 1) fail(`${name}: counts do not match edges`);
    return { edges, counts: histCounts };
  };

  const marginals = new Map<string, Histogram>();
  for (const name of MARGINALS) marginals.set(name, parseHist(`marginal ${name}`));

  return {
    n, seed, acceptanceRate, ks, scatter, marginals,
    offsetHeatmap: { xEdges, yEdges, counts },
    diceHistogram: parseHist("dice_histogram"),
  };
}

// ---------------------------------------------------------------------------
// training metrics

export interface TrainingCurves {
  step: number[];
  lr: number[];
  lossBase: number[];
  lossSp: number[];
  lossTotal: number[];
}

const METRIC_COLUMNS = ["step", "lr", "loss_base", "loss_sp", "loss_total", "grad_norm"];

export function parseMetricsCsv(text: string): TrainingCurves {
  const lines = text.trim().split("\n");
  if (lines[0] !== METRIC_COLUMNS.join(",")) {
    fail(`unexpected metrics header: ${JSON.stringify(lines[0] ?? "")}`);
  }
  if (lines.length < 2) fail("metrics file has no rows");
  const out: TrainingCurves = { step: [], lr: [], lossBase: [], lossSp: [], lossTotal: [] };
  for (const [i, line] of lines.slice(1).entries()) {
    const cells = line.split(",");
    if (cells.length !== METRIC_COLUMNS.length) fail(`metrics row ${i + 1}: expected 6 columns`);
    const row = cells.map((c) => num(c, `metrics row ${i + 1}`));
    out.step.push(row[0]);
    out.lr.push(row[1]);
    out.lossBase.push(row[2]);
    out.lossSp.push(row[3]);
    out.lossTotal.push(row[4]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention maps

export interface AttentionMaps {
  images: number;
  heads: number;
  grid: number;
  /** maps[image][head] is a grid x grid matrix of values in [0, 1]. */
  maps: number[][][][];
}

export function parseAttentionMaps(text: string): AttentionMaps {
  const lines = text.split("\n");
  if (lines[0] !== "spssl-attention-maps v1") fail("not a spssl attention export");
  const head = kv(lines.slice(1, 4));
  const images = num(head.get("images") ?? fail("missing images count"), "images");
  const heads = num(head.get("heads") ?? fail("missing heads count"), "heads");
  const grid = num(head.get("grid") ?? fail("missing grid size"), "grid");

  const maps: number[][][][] = [];
  let cursor = 4;
  for (let i = 0; i < images; i++) {
    maps.push([]);
    for (let h = 0; h < heads; h++) {
      if (lines[cursor] !== `[map image=${i} head=${h}]`) {
        fail(`truncated or out-of-order export at image ${i} head ${h}`);
      }
      cursor += 1;
      const matrix: number[][] = [];
      for (let r = 0; r < grid; r++) {
        const line = lines[cursor] ?? fail(`truncated map rows at image ${i} head ${h}`);
        if (!line.startsWith("row =")) fail(`expected a row line at image ${i} head ${h}`);
        const row = numList(line.slice("row =".length), "attention row");
        if (row.length !== grid) fail(`attention row has ${row.length} values, expected ${grid}`);
        for (const v of row) {
          if (v < 0 || v > 1) fail(`attention value ${v} outside [0, 1]`);
        }
        matrix.push(row);
        cursor += 1;
      }
      maps[i].push(matrix);
    }
  }
  return { images, heads, grid, maps };
}
