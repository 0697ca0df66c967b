/**
 * The three figure kinds: the seven-panel sampler-validation sheet, training
 * curves with the base + spatial decomposition overlay, and attention
 * heatmap grids with a shared [0, 1] colorbar.
 */

import type { AttentionMaps, Histogram, TrainingCurves, ValidationReport } from "./formats.js";
import * as svg from "./svg.js";

const PANEL_W = 190;
const PANEL_H = 150;
const MARGIN_X = 62;
const MARGIN_Y = 46;
const PITCH_X = PANEL_W + MARGIN_X;
const PITCH_Y = PANEL_H + MARGIN_Y + 26;

function panelAt(col: number, row: number, title: string, xLabel: string, yLabel: string): svg.Panel {
  return {
    x: MARGIN_X + col * PITCH_X,
    y: MARGIN_Y + row * PITCH_Y,
    width: PANEL_W,
    height: PANEL_H,
    title, xLabel, yLabel,
  };
}

function histPanel(hist: Histogram, panel: svg.Panel, color: string): string {
  const xScale = svg.linearScale([hist.edges[0], hist.edges[hist.edges.length - 1]],
                                 [panel.x, panel.x + panel.width]);
  const yMax = Math.max(...hist.counts, 1);
  const yScale = svg.linearScale([0, yMax], [panel.y + panel.height, panel.y]);
  return svg.histogramBars(hist, panel, xScale, yScale, color) + "\n" + svg.frame(panel, xScale, yScale);
}

export function renderSamplerValidation(report: ValidationReport): string {
  const parts: string[] = [];
  const heat = report.offsetHeatmap;

  // (a) joint offset heatmap with colorbar
  const pa = panelAt(0, 0, "(a) offset heatmap", "p_x", "p_y");
  const heatMax = Math.max(...heat.counts.flat(), 1);
  parts.push(svg.heatmapCells(heat.counts, pa, heatMax));
  const aScaleX = svg.linearScale([heat.xEdges[0], heat.xEdges[heat.xEdges.length - 1]],
                                  [pa.x, pa.x + pa.width]);
  const aScaleY = svg.linearScale([heat.yEdges[0], heat.yEdges[heat.yEdges.length - 1]],
                                  [pa.y + pa.height, pa.y]);
  parts.push(svg.frame(pa, aScaleX, aScaleY));
  parts.push(svg.colorbar(pa.x + pa.width + 8, pa.y, pa.height, 0, heatMax));

  // (b) raw pixel-offset scatter
  const pb = panelAt(1, 0, "(b) pixel offsets", "dx (px)", "dy (px)");
  const xs = report.scatter.map((p) => p[0]);
  const ys = report.scatter.map((p) => p[1]);
  const bx = svg.linearScale([Math.min(...xs), Math.max(...xs)], [pb.x, pb.x + pb.width]);
  const by = svg.linearScale([Math.min(...ys), Math.max(...ys)], [pb.y + pb.height, pb.y]);
  for (const [dx, dy] of report.scatter) {
    parts.push(`<circle cx="${svg.fmt(bx(dx))}" cy="${svg.fmt(by(dy))}" r="1" fill="#1f77b4" fill-opacity="0.35"/>`);
  }
  parts.push(svg.frame(pb, bx, by));

  // (c)-(f) the four marginals
  const order: Array<[string, string]> = [
    ["p_x", "(c) p_x marginal"], ["p_y", "(d) p_y marginal"],
    ["log_s_x", "(e) log s_x marginal"], ["log_s_y", "(f) log s_y marginal"],
  ];
  order.forEach(([name, title], i) => {
    const panel = panelAt((i + 2) % 4, Math.floor((i + 2) / 4), title, name, "count");
    const ks = report.ks.get(name)!;
    parts.push(histPanel(report.marginals.get(name)!, panel, "#1f77b4"));
    parts.push(`<text x="${svg.fmt(panel.x + 5)}" y="${svg.fmt(panel.y + 12)}" font-size="9" fill="#555">KS = ${ks.toFixed(4)}</text>`);
  });

  // (g) dice overlap histogram
  const pg = panelAt(2, 1, "(g) Dice overlap", "Dice", "count");
  parts.push(histPanel(report.diceHistogram, pg, "#d62728"));

  const caption = `sampler validation: n = ${report.n}, seed = ${report.seed}, acceptance rate = ${report.acceptanceRate.toFixed(3)}`;
  parts.push(`<text x="${MARGIN_X}" y="${svg.fmt(MARGIN_Y + 2 * PITCH_Y - 10)}" font-size="11" fill="#111">${svg.esc(caption)}</text>`);
  return svg.document(4 * PITCH_X + 40, 2 * PITCH_Y + 10, parts.join("\n"));
}

export function renderCurves(curves: TrainingCurves): string {
  const parts: string[] = [];
  const stepDomain: [number, number] = [curves.step[0], curves.step[curves.step.length - 1] || 1];

  const pLoss: svg.Panel = { x: 70, y: 40, width: 460, height: 220,
                             title: "training losses", xLabel: "step", yLabel: "loss" };
  const allLoss = [...curves.lossBase, ...curves.lossSp, ...curves.lossTotal];
  const xScale = svg.linearScale(stepDomain, [pLoss.x, pLoss.x + pLoss.width]);
  const yScale = svg.linearScale([0, Math.max(...allLoss, 1e-9)],
                                 [pLoss.y + pLoss.height, pLoss.y]);
  const sum = curves.lossBase.map((b, i) => b + curves.lossSp[i]);
  parts.push(svg.polyline(curves.step, curves.lossBase, xScale, yScale, "#1f77b4"));
  parts.push(svg.polyline(curves.step, curves.lossSp, xScale, yScale, "#2ca02c"));
  parts.push(svg.polyline(curves.step, curves.lossTotal, xScale, yScale, "#d62728"));
  // the decomposition identity: base + spatial drawn dashed over the total
  parts.push(svg.polyline(curves.step, sum, xScale, yScale, "#111111", "4 3"));
  parts.push(svg.frame(pLoss, xScale, yScale));
  const legend: Array<[string, string, string]> = [
    ["base", "#1f77b4", ""], ["spatial", "#2ca02c", ""],
    ["total", "#d62728", ""], ["base + spatial", "#111111", "4 3"],
  ];
  legend.forEach(([label, color, dash], i) => {
    const y = pLoss.y + 14 + i * 14;
    const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
    parts.push(`<line x1="${svg.fmt(pLoss.x + pLoss.width - 110)}" y1="${y}" x2="${svg.fmt(pLoss.x + pLoss.width - 90)}" y2="${y}" stroke="${color}" stroke-width="1.5"${dashAttr}/>`);
    parts.push(`<text x="${svg.fmt(pLoss.x + pLoss.width - 84)}" y="${y + 3}" font-size="9" fill="#333">${label}</text>`);
  });

  const pLr: svg.Panel = { x: 70, y: 340, width: 460, height: 110,
                           title: "learning rate", xLabel: "step", yLabel: "lr" };
  const lrScaleX = svg.linearScale(stepDomain, [pLr.x, pLr.x + pLr.width]);
  const lrScaleY = svg.linearScale([0, Math.max(...curves.lr)], [pLr.y + pLr.height, pLr.y]);
  parts.push(svg.polyline(curves.step, curves.lr, lrScaleX, lrScaleY, "#9467bd"));
  parts.push(svg.frame(pLr, lrScaleX, lrScaleY));

  return svg.document(600, 500, parts.join("\n"));
}

export function renderAttention(data: AttentionMaps): string {
  const parts: string[] = [];
  const cell = 120;
  const gap = 34;
  for (let i = 0; i < data.images; i++) {
    for (let h = 0; h < data.heads; h++) {
      const panel: svg.Panel = {
        x: 50 + h * (cell + gap), y: 40 + i * (cell + gap),
        width: cell, height: cell,
        title: "", xLabel: "", yLabel: "",
      };
      parts.push(svg.heatmapCells(data.maps[i][h], panel, 1.0));
      parts.push(`<rect x="${svg.fmt(panel.x)}" y="${svg.fmt(panel.y)}" width="${cell}" height="${cell}" fill="none" stroke="#333"/>`);
      parts.push(`<text x="${svg.fmt(panel.x + cell / 2)}" y="${svg.fmt(panel.y - 6)}" font-size="10" text-anchor="middle" fill="#111">image ${i}, head ${h}</text>`);
    }
  }
  const totalH = 40 + data.images * (cell + gap);
  const barX = 50 + data.heads * (cell + gap) + 6;
  parts.push(svg.colorbar(barX, 40, cell, 0, 1));
  return svg.document(barX + 60, Math.max(totalH, 40 + cell + gap), parts.join("\n"));
}
