// Pure geometry for the canvas views; the drawing calls stay trivial so the
// mapping logic is testable without a DOM.

import { Branch, DiagramPoint, FliBranch, LayoutPoint } from "./api.js";
import { Bounds } from "./state.js";

export interface Pixel {
  px: number;
  py: number;
}

export function toPixels(
  x: number, y: number, b: Bounds, width: number, height: number,
): Pixel {
  const px = ((x - b.xMin) / (b.xMax - b.xMin)) * width;
  const py = height - ((y - b.yMin) / (b.yMax - b.yMin)) * height;
  return { px, py };
}

export function fromPixels(
  px: number, py: number, b: Bounds, width: number, height: number,
): { x: number; y: number } {
  const x = b.xMin + (px / width) * (b.xMax - b.xMin);
  const y = b.yMin + ((height - py) / height) * (b.yMax - b.yMin);
  return { x, y };
}

export const CLUSTER_COLORS = [
  "#b2182b", "#ef8a62", "#67a9cf", "#2166ac", "#7b3294", "#008837",
];

export function clusterColor(cluster: number): string {
  return CLUSTER_COLORS[cluster % CLUSTER_COLORS.length];
}

export interface DiagramView {
  points: Array<Pixel & { persistence: number }>;
  diagonal: [Pixel, Pixel];
  bounds: Bounds;
}

// birth/death scatter: square bounds covering all points plus the diagonal
export function diagramView(
  points: DiagramPoint[], width: number, height: number,
): DiagramView {
  let lo = 0, hi = 1;
  if (points.length > 0) {
    lo = Math.min(...points.map((p) => p.birth));
    hi = Math.max(...points.map((p) => p.death));
    if (hi - lo < 1e-9) hi = lo + 1;
  }
  const pad = 0.05 * (hi - lo);
  const b: Bounds = { xMin: lo - pad, xMax: hi + pad, yMin: lo - pad, yMax: hi + pad };
  return {
    points: points.map((p) => ({
      ...toPixels(p.birth, p.death, b, width, height),
      persistence: p.death - p.birth,
    })),
    diagonal: [
      toPixels(b.xMin, b.xMin, b, width, height),
      toPixels(b.xMax, b.xMax, b, width, height),
    ],
    bounds: b,
  };
}

export interface Bar {
  branch: number;
  x0: number;
  x1: number;
  y: number;
  birth: number;
  death: number;
  persistence: number;
  fli: number;
  highlighted: boolean;
}

// hit test for hover tooltips: the bar whose row contains the cursor
export function barAt(bars: Bar[], px: number, py: number, rowHeight: number): Bar | null {
  for (const bar of bars) {
    if (Math.abs(py - bar.y) <= rowHeight / 2 && px >= bar.x0 - 2 && px <= bar.x1 + 12) {
      return bar;
    }
  }
  return null;
}

// one horizontal bar per branch, most persistent first; high-FLI bars are
// flagged for the red-circle treatment
export function bdtBars(
  branches: Branch[], fli: FliBranch[] | null, width: number,
  rowHeight: number, fliThreshold = 0.9,
): Bar[] {
  let lo = Infinity, hi = -Infinity;
  for (const br of branches) {
    lo = Math.min(lo, br.birth);
    hi = Math.max(hi, br.death);
  }
  if (!(hi > lo)) {
    lo = 0;
    hi = 1;
  }
  const fliOf = new Map<number, number>();
  if (fli) for (const f of fli) fliOf.set(f.branch, f.fli);
  const order = branches
    .map((br, i) => ({ br, i }))
    .sort((a, b) => (b.br.death - b.br.birth) - (a.br.death - a.br.birth));
  return order.map(({ br, i }, row) => {
    const f = fliOf.get(i) ?? 0;
    return {
      branch: i,
      x0: ((br.birth - lo) / (hi - lo)) * width,
      x1: ((br.death - lo) / (hi - lo)) * width,
      y: (row + 0.5) * rowHeight,
      birth: br.birth,
      death: br.death,
      persistence: br.death - br.birth,
      fli: f,
      highlighted: f >= fliThreshold,
    };
  });
}

export function scatterGlyphs(
  points: LayoutPoint[], bounds: Bounds, width: number, height: number,
  selected: number[],
): Array<Pixel & { id: number; color: string; selected: boolean }> {
  return points.map((p) => ({
    ...toPixels(p.x, p.y, bounds, width, height),
    id: p.id,
    color: clusterColor(p.cluster),
    selected: selected.includes(p.id),
  }));
}
