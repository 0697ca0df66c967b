import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";
import { parseAttentionMaps, parseMetricsCsv, parseValidationReport } from "../src/formats.js";
import { renderAttention, renderCurves, renderSamplerValidation } from "../src/render.js";
import { heatColor, linearScale, ticks } from "../src/svg.js";

const FIXTURES = join(__dirname, "..", "fixtures");
const read = (name: string) => readFileSync(join(FIXTURES, name), "utf8");

describe("svg primitives", () => {
  it("linear scale maps domain endpoints onto range endpoints", () => {
    const s = linearScale([2, 4], [0, 100]);
    expect(s(2)).toBe(0);
    expect(s(4)).toBe(100);
    expect(s(3)).toBe(50);
  });

  it("ticks stay inside the domain", () => {
    for (const t of ticks([-1.5, 1.5])) {
      expect(t).toBeGreaterThanOrEqual(-1.5);
      expect(t).toBeLessThanOrEqual(1.5);
    }
  });

  it("heat colors clamp and stay valid rgb", () => {
    for (const t of [-1, 0, 0.5, 1, 2]) {
      expect(heatColor(t)).toMatch(/^rgb\(\d+,\d+,\d+\)$/);
    }
  });
});

describe("sampler validation figure", () => {
  const report = parseValidationReport(read("validation-report.txt"));

  it("contains all seven labeled panels and a colorbar", () => {
    const out = renderSamplerValidation(report);
    expect(out.startsWith("<svg")).toBe(true);
    for (const label of ["(a)", "(b)", "(c)", "(d)", "(e)", "(f)", "(g)"]) {
      expect(out).toContain(label);
    }
    expect(out).toContain("KS = ");
    expect(out).toContain("Dice");
  });

  it("is deterministic and does not mutate its input", () => {
    const before = JSON.stringify(report.offsetHeatmap.counts);
    const a = renderSamplerValidation(report);
    const b = renderSamplerValidation(report);
    expect(a).toBe(b);
    expect(JSON.stringify(report.offsetHeatmap.counts)).toBe(before);
  });
});

describe("curves figure", () => {
  const curves = parseMetricsCsv(read("metrics.csv"));

  it("draws the three losses plus the dashed decomposition overlay", () => {
    const out = renderCurves(curves);
    expect(out.match(/<polyline/g)).toHaveLength(5); // 3 losses + overlay + lr
    expect(out).toContain('stroke-dasharray="4 3"');
    expect(out).toContain("base + spatial");
  });

  it("overlay points coincide with the total-loss polyline", () => {
    const out = renderCurves(curves);
    const polylines = [...out.matchAll(/<polyline points="([^"]+)"[^>]*stroke="([^"]+)"/g)];
    const total = polylines.find((m) => m[2] === "#d62728")!;
    const overlay = polylines.find((m) => m[2] === "#111111")!;
    expect(overlay[1]).toBe(total[1]);
  });
});

describe("attention figure", () => {
  const data = parseAttentionMaps(read("attention-maps.txt"));

  it("renders one labeled heatmap per (image, head) and a [0,1] colorbar", () => {
    const out = renderAttention(data);
    for (let i = 0; i < data.images; i++) {
      for (let h = 0; h < data.heads; h++) {
        expect(out).toContain(`image ${i}, head ${h}`);
      }
    }
    expect(out).toContain(">1<"); // colorbar top label
    expect(out).toContain(">0<"); // colorbar bottom label
  });
});
