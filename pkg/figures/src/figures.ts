/**
 * Deterministic SVG renderers for the three figure kinds:
 *
 *  - frontier:        per-arm mean field error (x) vs residual RMSE (y)
 *  - delta_bars:      mean error reductions of each arm relative to the
 *                     baseline arm, positive bars = lower error
 *  - seedwise_paired: per-seed paired comparison of the two wall-facing
 *                     metrics, seeds as discrete categories
 *
 * Output is a plain SVG string assembled with fixed number formatting, so a
 * given spec always produces byte-identical files.
 */

import { armMean, byArm, requireColumns, Row, SchemaError } from "./csv.js";
import { styleFor, StyleMap } from "./style.js";

export type FigureKind = "frontier" | "delta_bars" | "seedwise_paired";

export interface FigureSpec {
  kind: FigureKind;
  rows: Row[];
  styles?: StyleMap;
  baselineArm?: string; // delta_bars reference, default "off"
}

const W = 640;
const H = 420;
const MARGIN = { left: 70, right: 170, top: 40, bottom: 55 };

const fmt = (v: number): string => v.toFixed(2);

function linScale(lo: number, hi: number, out0: number, out1: number) {
  const span = hi - lo || 1;
  return (v: number) => out0 + ((v - lo) / span) * (out1 - out0);
}

function marker(x: number, y: number, style: { color: string; marker: string }, size = 6): string {
  if (style.marker === "square") {
    return `<rect x="${fmt(x - size)}" y="${fmt(y - size)}" width="${fmt(2 * size)}" height="${fmt(2 * size)}" fill="${style.color}" class="marker-square"/>`;
  }
  return `<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${fmt(size)}" fill="${style.color}" class="marker-circle"/>`;
}

function svgDoc(body: string[], title: string): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}" font-family="sans-serif" font-size="12">`,
    `<title>${title}</title>`,
    `<rect x="0" y="0" width="${W}" height="${H}" fill="white"/>`,
    ...body,
    "</svg>",
    "",
  ].join("\n");
}

function axes(xLabel: string, yLabel: string): string[] {
  const x0 = MARGIN.left;
  const x1 = W - MARGIN.right;
  const y0 = H - MARGIN.bottom;
  const y1 = MARGIN.top;
  return [
    `<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`,
    `<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`,
    `<text x="${fmt((x0 + x1) / 2)}" y="${H - 12}" text-anchor="middle">${xLabel}</text>`,
    `<text x="16" y="${fmt((y0 + y1) / 2)}" text-anchor="middle" transform="rotate(-90 16 ${fmt((y0 + y1) / 2)})">${yLabel}</text>`,
  ];
}

function legend(arms: string[], styles?: StyleMap): string[] {
  const out: string[] = [];
  arms.forEach((arm, i) => {
    const y = MARGIN.top + 16 + i * 22;
    const x = W - MARGIN.right + 18;
    out.push(marker(x, y - 4, styleFor(arm, styles), 5));
    out.push(`<text x="${fmt(x + 12)}" y="${fmt(y)}" class="legend">${arm}</text>`);
  });
  return out;
}

function ticks(
  scale: (v: number) => number, lo: number, hi: number, axis: "x" | "y", n = 5,
): string[] {
  const out: string[] = [];
  for (let i = 0; i <= n; i++) {
    const v = lo + ((hi - lo) * i) / n;
    const p = scale(v);
    const label = v.toPrecision(3);
    if (axis === "x") {
      const y0 = H - MARGIN.bottom;
      out.push(`<line x1="${fmt(p)}" y1="${y0}" x2="${fmt(p)}" y2="${y0 + 5}" stroke="black"/>`);
      out.push(`<text x="${fmt(p)}" y="${y0 + 20}" text-anchor="middle">${label}</text>`);
    } else {
      const x0 = MARGIN.left;
      out.push(`<line x1="${x0 - 5}" y1="${fmt(p)}" x2="${x0}" y2="${fmt(p)}" stroke="black"/>`);
      out.push(`<text x="${x0 - 8}" y="${fmt(p + 4)}" text-anchor="end">${label}</text>`);
    }
  }
  return out;
}

export function renderFrontier(spec: FigureSpec): string {
  requireColumns(spec.rows, ["arm", "rel_l2_u", "residual_rmse"]);
  const groups = byArm(spec.rows);
  if (groups.size === 0) {
    throw new SchemaError("no completed arms to plot");
  }
  const xs = armMean(groups, "rel_l2_u");
  const ys = armMean(groups, "residual_rmse");
  const xv = [...xs.values()];
  const yv = [...ys.values()];
  const pad = (lo: number, hi: number): [number, number] => {
    const d = (hi - lo || Math.abs(hi) || 1) * 0.15;
    return [lo - d, hi + d];
  };
  const [xlo, xhi] = pad(Math.min(...xv), Math.max(...xv));
  const [ylo, yhi] = pad(Math.min(...yv), Math.max(...yv));
  const sx = linScale(xlo, xhi, MARGIN.left, W - MARGIN.right);
  const sy = linScale(ylo, yhi, H - MARGIN.bottom, MARGIN.top);
  const body = [
    ...axes("mean fresh-audit field error (rel L2)", "mean residual RMSE"),
    ...ticks(sx, xlo, xhi, "x"),
    ...ticks(sy, ylo, yhi, "y"),
  ];
  for (const arm of groups.keys()) {
    body.push(marker(sx(xs.get(arm)!), sy(ys.get(arm)!), styleFor(arm, spec.styles)));
  }
  body.push(...legend([...groups.keys()], spec.styles));
  return svgDoc(body, "field-residual frontier");
}

const DELTA_METRICS = ["rel_l2_u", "rel_l2_grad_u", "residual_rmse", "grad_r_rmse"];

export function renderDeltaBars(spec: FigureSpec): string {
  requireColumns(spec.rows, ["arm", ...DELTA_METRICS]);
  const groups = byArm(spec.rows);
  const baseline = spec.baselineArm ?? "off";
  if (!groups.has(baseline)) {
    throw new SchemaError(`baseline arm ${baseline} not present`);
  }
  const arms = [...groups.keys()].filter((a) => a !== baseline);
  if (arms.length === 0) {
    throw new SchemaError("no non-baseline arms to plot");
  }
  const deltas = new Map<string, number[]>();
  for (const arm of arms) {
    deltas.set(
      arm,
      DELTA_METRICS.map((m) => {
        const base = armMean(groups, m).get(baseline)!;
        const val = armMean(groups, m).get(arm)!;
        return (100 * (base - val)) / base; // positive = lower error than baseline
      }),
    );
  }
  const all = [...deltas.values()].flat();
  const lo = Math.min(0, ...all);
  const hi = Math.max(0, ...all);
  const sy = linScale(lo, hi * 1.15 || 1, H - MARGIN.bottom, MARGIN.top);
  const body = axes("fresh-audit metric", "reduction vs baseline (%)");
  const plotW = W - MARGIN.left - MARGIN.right;
  const groupW = plotW / DELTA_METRICS.length;
  const barW = Math.min(18, (groupW - 10) / arms.length);
  DELTA_METRICS.forEach((metric, mi) => {
    const cx = MARGIN.left + groupW * (mi + 0.5);
    body.push(
      `<text x="${fmt(cx)}" y="${H - MARGIN.bottom + 20}" text-anchor="middle">${metric}</text>`,
    );
    arms.forEach((arm, ai) => {
      const v = deltas.get(arm)![mi];
      const x = cx + (ai - (arms.length - 1) / 2) * (barW + 4) - barW / 2;
      const y0 = sy(0);
      const y1 = sy(v);
      const top = Math.min(y0, y1);
      const height = Math.abs(y0 - y1);
      body.push(
        `<rect x="${fmt(x)}" y="${fmt(top)}" width="${fmt(barW)}" height="${fmt(height)}" fill="${styleFor(arm, spec.styles).color}" class="bar-${arm}"/>`,
      );
    });
  });
  body.push(`<line x1="${MARGIN.left}" y1="${fmt(sy(0))}" x2="${W - MARGIN.right}" y2="${fmt(sy(0))}" stroke="black"/>`);
  body.push(...ticks(sy, lo, hi * 1.15 || 1, "y"));
  body.push(...legend(arms, spec.styles));
  return svgDoc(body, "mean error reductions relative to baseline");
}

const SEEDWISE_METRICS: [string, string][] = [
  ["wall_bc_rmse", "wall BC RMSE"],
  ["dtdn_wall_rmse", "wall-flux RMSE"],
];

export function renderSeedwisePaired(spec: FigureSpec): string {
  requireColumns(spec.rows, ["arm", "seed_init", "wall_bc_rmse", "dtdn_wall_rmse"]);
  const groups = byArm(spec.rows);
  if (groups.size === 0) {
    throw new SchemaError("no completed arms to plot");
  }
  const seeds = [...new Set(spec.rows.map((r) => Number(r.seed_init)))].sort((a, b) => a - b);
  const body: string[] = [];
  const panelW = (W - MARGIN.left - MARGIN.right - 30) / SEEDWISE_METRICS.length;
  SEEDWISE_METRICS.forEach(([metric, label], pi) => {
    const x0 = MARGIN.left + pi * (panelW + 30);
    const x1 = x0 + panelW;
    const y0 = H - MARGIN.bottom;
    const y1 = MARGIN.top;
    const values = spec.rows
      .filter((r) => Number(r.failed ?? 0) === 0)
      .map((r) => Math.log10(Number(r[metric])));
    const lo = Math.min(...values) - 0.2;
    const hi = Math.max(...values) + 0.2;
    const sy = linScale(lo, hi, y0, y1);
    const sx = (seed: number) =>
      x0 + ((seeds.indexOf(seed) + 0.5) / seeds.length) * panelW;
    body.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="black"/>`);
    body.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="black"/>`);
    body.push(`<text x="${fmt((x0 + x1) / 2)}" y="${H - 12}" text-anchor="middle">seed</text>`);
    body.push(`<text x="${fmt((x0 + x1) / 2)}" y="${y1 - 8}" text-anchor="middle">${label} (log10)</text>`);
    for (const seed of seeds) {
      body.push(
        `<text x="${fmt(sx(seed))}" y="${y0 + 18}" text-anchor="middle">${seed}</text>`,
      );
    }
    for (const [arm, rows] of groups) {
      for (const row of rows) {
        const x = sx(Number(row.seed_init));
        const y = sy(Math.log10(Number(row[metric])));
        body.push(marker(x, y, styleFor(arm, spec.styles), 5));
      }
    }
  });
  body.push(...legend([...groups.keys()], spec.styles));
  return svgDoc(body, "seedwise paired wall metrics");
}

export function render(spec: FigureSpec): string {
  switch (spec.kind) {
    case "frontier":
      return renderFrontier(spec);
    case "delta_bars":
      return renderDeltaBars(spec);
    case "seedwise_paired":
      return renderSeedwisePaired(spec);
    default:
      throw new SchemaError(`unknown figure kind ${(spec as FigureSpec).kind}`);
  }
}
