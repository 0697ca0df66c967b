/**
 * Minimal deterministic SVG construction: every element is a template string
 * with fixed-precision coordinates, so identical inputs yield identical bytes.
 */

export function fmt(v: number): string {
  return Number(v.toFixed(3)).toString();
}

export function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export interface Scale {
  (v: number): number;
  domain: [number, number];
}

/** Linear map from a data domain onto a pixel range. */
export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 || 1;
  const scale = ((v: number) => r0 + ((v - d0) / span) * (r1 - r0)) as Scale;
  scale.domain = domain;
  return scale;
}

export function ticks(domain: [number, number], count = 5): number[] {
  const [lo, hi] = domain;
  const span = hi - lo || 1;
  const rawStep = span / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => span / s <= count + 0.5) ?? mag * 10;
  const out: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) {
    out.push(Math.abs(v) < step * 1e-9 ? 0 : v);
  }
  return out;
}

/** Blue-to-yellow-to-red ramp for heatmap cells, t in [0, 1]. */
export function heatColor(t: number): string {
  const c = Math.max(0, Math.min(1, t));
  const stops: Array<[number, [number, number, number]]> = [
    [0.0, [13, 8, 135]],
    [0.35, [126, 3, 168]],
    [0.65, [225, 100, 98]],
    [1.0, [240, 249, 33]],
  ];
  for (let i = 1; i < stops.length; i++) {
    if (c <= stops[i][0]) {
      const [t0, a] = stops[i - 1];
      const [t1, b] = stops[i];
      const u = (c - t0) / (t1 - t0);
      const mix = a.map((av, j) => Math.round(av + u * (b[j] - av)));
      return `rgb(${mix[0]},${mix[1]},${mix[2]})`;
    }
  }
  return "rgb(240,249,33)";
}

export interface Panel {
  x: number;
  y: number;
  width: number;
  height: number;
  title: string;
  xLabel: string;
  yLabel: string;
}

/** Axes, tick marks, tick labels, and titles around a plot area. */
export function frame(p: Panel, xScale: Scale, yScale: Scale): string {
  const parts: string[] = [];
  const bottom = p.y + p.height;
  parts.push(`<rect x="${fmt(p.x)}" y="${fmt(p.y)}" width="${fmt(p.width)}" height="${fmt(p.height)}" fill="none" stroke="#333" stroke-width="1"/>`);
  for (const t of ticks(xScale.domain)) {
    const px = xScale(t);
    parts.push(`<line x1="${fmt(px)}" y1="${fmt(bottom)}" x2="${fmt(px)}" y2="${fmt(bottom + 4)}" stroke="#333"/>`);
    parts.push(`<text x="${fmt(px)}" y="${fmt(bottom + 15)}" font-size="9" text-anchor="middle" fill="#333">${fmt(t)}</text>`);
  }
  for (const t of ticks(yScale.domain)) {
    const py = yScale(t);
    parts.push(`<line x1="${fmt(p.x - 4)}" y1="${fmt(py)}" x2="${fmt(p.x)}" y2="${fmt(py)}" stroke="#333"/>`);
    parts.push(`<text x="${fmt(p.x - 6)}" y="${fmt(py + 3)}" font-size="9" text-anchor="end" fill="#333">${fmt(t)}</text>`);
  }
  parts.push(`<text x="${fmt(p.x + p.width / 2)}" y="${fmt(p.y - 6)}" font-size="11" font-weight="bold" text-anchor="middle" fill="#111">${esc(p.title)}</text>`);
  parts.push(`<text x="${fmt(p.x + p.width / 2)}" y="${fmt(bottom + 28)}" font-size="10" text-anchor="middle" fill="#333">${esc(p.xLabel)}</text>`);
  parts.push(`<text x="${fmt(p.x - 34)}" y="${fmt(p.y + p.height / 2)}" font-size="10" text-anchor="middle" fill="#333" transform="rotate(-90 ${fmt(p.x - 34)} ${fmt(p.y + p.height / 2)})">${esc(p.yLabel)}</text>`);
  return parts.join("\n");
}

export function polyline(xs: number[], ys: number[], xScale: Scale, yScale: Scale,
                         color: string, dash = ""): string {
  const points = xs.map((x, i) => `${fmt(xScale(x))},${fmt(yScale(ys[i]))}`).join(" ");
  const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
  return `<polyline points="${points}" fill="none" stroke="${color}" stroke-width="1.5"${dashAttr}/>`;
}

export function histogramBars(hist: { edges: number[]; counts: number[] }, panel: Panel,
                              xScale: Scale, yScale: Scale, color: string): string {
  const bottom = panel.y + panel.height;
  return hist.counts.map((c, i) => {
    const x0 = xScale(hist.edges[i]);
    const x1 = xScale(hist.edges[i + 1]);
    const top = yScale(c);
    return `<rect x="${fmt(x0)}" y="${fmt(top)}" width="${fmt(Math.max(x1 - x0 - 0.5, 0.5))}" height="${fmt(Math.max(bottom - top, 0))}" fill="${color}"/>`;
  }).join("\n");
}

/** Cell matrix as colored rects; values are normalized by maxValue. */
export function heatmapCells(matrix: number[][], panel: Panel, maxValue: number): string {
  const rows = matrix.length;
  const cols = matrix[0].length;
  const cw = panel.width / cols;
  const ch = panel.height / rows;
  const parts: string[] = [];
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const t = maxValue > 0 ? matrix[r][c] / maxValue : 0;
      parts.push(`<rect x="${fmt(panel.x + c * cw)}" y="${fmt(panel.y + r * ch)}" width="${fmt(cw + 0.1)}" height="${fmt(ch + 0.1)}" fill="${heatColor(t)}"/>`);
    }
  }
  return parts.join("\n");
}

/** Vertical colorbar with value labels from lo (bottom) to hi (top). */
export function colorbar(x: number, y: number, height: number, lo: number, hi: number): string {
  const parts: string[] = [];
  const steps = 32;
  const sh = height / steps;
  for (let i = 0; i < steps; i++) {
    const t = 1 - i / (steps - 1);
    parts.push(`<rect x="${fmt(x)}" y="${fmt(y + i * sh)}" width="10" height="${fmt(sh + 0.1)}" fill="${heatColor(t)}"/>`);
  }
  parts.push(`<rect x="${fmt(x)}" y="${fmt(y)}" width="10" height="${fmt(height)}" fill="none" stroke="#333"/>`);
  parts.push(`<text x="${fmt(x + 14)}" y="${fmt(y + 4)}" font-size="9" fill="#333">${fmt(hi)}</text>`);
  parts.push(`<text x="${fmt(x + 14)}" y="${fmt(y + height)}" font-size="9" fill="#333">${fmt(lo)}</text>`);
  return parts.join("\n");
}

export function document(width: number, height: number, body: string): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">\n` +
    `<rect width="${width}" height="${height}" fill="#ffffff"/>\n${body}\n</svg>\n`;
}
