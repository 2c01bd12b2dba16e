// View state derived exclusively from API responses: a full reload of the
// page reproduces the same view from the same model.

import { LayoutPoint } from "./api.js";

export interface Bounds {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export function paddedBounds(points: LayoutPoint[], pad = 0.1): Bounds {
  if (points.length === 0) return { xMin: -1, xMax: 1, yMin: -1, yMax: 1 };
  let xMin = Infinity, xMax = -Infinity, yMin = Infinity, yMax = -Infinity;
  for (const p of points) {
    xMin = Math.min(xMin, p.x);
    xMax = Math.max(xMax, p.x);
    yMin = Math.min(yMin, p.y);
    yMax = Math.max(yMax, p.y);
  }
  const dx = Math.max(xMax - xMin, 1e-9);
  const dy = Math.max(yMax - yMin, 1e-9);
  return {
    xMin: xMin - pad * dx,
    xMax: xMax + pad * dx,
    yMin: yMin - pad * dy,
    yMax: yMax + pad * dy,
  };
}

export class ViewState {
  probe: { x: number; y: number };
  selected: number[] = [];
  pathEndpoints: [number, number] | null = null;
  activePanel: "diagram" | "bdt" | "pcv" = "diagram";
  readonly bounds: Bounds;

  constructor(readonly points: LayoutPoint[]) {
    this.bounds = paddedBounds(points);
    const cx = (this.bounds.xMin + this.bounds.xMax) / 2;
    const cy = (this.bounds.yMin + this.bounds.yMax) / 2;
    this.probe = { x: cx, y: cy };
  }

  // the probe never leaves the padded bounding box of the layout
  moveProbe(x: number, y: number): { x: number; y: number } {
    const b = this.bounds;
    this.probe = {
      x: Math.min(Math.max(x, b.xMin), b.xMax),
      y: Math.min(Math.max(y, b.yMin), b.yMax),
    };
    return this.probe;
  }

  toggleSelect(id: number): void {
    const at = this.selected.indexOf(id);
    if (at >= 0) {
      this.selected.splice(at, 1);
    } else {
      this.selected.push(id);
      if (this.selected.length > 2) this.selected.shift();
    }
    this.pathEndpoints =
      this.selected.length === 2
        ? [this.selected[0], this.selected[1]]
        : null;
  }

  nearestPoint(x: number, y: number, maxDist: number): LayoutPoint | null {
    let best: LayoutPoint | null = null;
    let bestD = maxDist * maxDist;
    for (const p of this.points) {
      const d = (p.x - x) ** 2 + (p.y - y) ** 2;
      if (d < bestD) {
        bestD = d;
        best = p;
      }
    }
    return best;
  }
}
