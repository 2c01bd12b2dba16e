import { describe, expect, it } from "vitest";
import { LayoutPoint } from "../src/api.js";
import { ViewState, paddedBounds } from "../src/state.js";

const points: LayoutPoint[] = [
  { id: 0, name: "a", x: 0, y: 0, cluster: 0 },
  { id: 1, name: "b", x: 1, y: 0, cluster: 1 },
  { id: 2, name: "c", x: 1, y: 1, cluster: 2 },
  { id: 3, name: "d", x: 0, y: 1, cluster: 3 },
];

describe("paddedBounds", () => {
  it("pads the data box on every side", () => {
    const b = paddedBounds(points, 0.1);
    expect(b.xMin).toBeCloseTo(-0.1);
    expect(b.xMax).toBeCloseTo(1.1);
    expect(b.yMin).toBeCloseTo(-0.1);
    expect(b.yMax).toBeCloseTo(1.1);
  });

  it("handles empty layouts", () => {
    const b = paddedBounds([]);
    expect(b.xMax).toBeGreaterThan(b.xMin);
  });

  it("handles degenerate (single point) layouts", () => {
    const b = paddedBounds([{ id: 0, name: "a", x: 2, y: 2, cluster: 0 }]);
    expect(b.xMax).toBeGreaterThan(b.xMin);
    expect(b.yMax).toBeGreaterThan(b.yMin);
  });
});

describe("ViewState", () => {
  it("starts the probe inside the bounds", () => {
    const s = new ViewState(points);
    expect(s.probe.x).toBeGreaterThanOrEqual(s.bounds.xMin);
    expect(s.probe.x).toBeLessThanOrEqual(s.bounds.xMax);
  });

  it("clamps probe moves to the padded box", () => {
    const s = new ViewState(points);
    const p = s.moveProbe(99, -99);
    expect(p.x).toBeCloseTo(s.bounds.xMax);
    expect(p.y).toBeCloseTo(s.bounds.yMin);
  });

  it("keeps at most two selected members as path endpoints", () => {
    const s = new ViewState(points);
    s.toggleSelect(0);
    expect(s.pathEndpoints).toBeNull();
    s.toggleSelect(2);
    expect(s.pathEndpoints).toEqual([0, 2]);
    s.toggleSelect(3); // oldest selection is dropped
    expect(s.selected).toEqual([2, 3]);
    expect(s.pathEndpoints).toEqual([2, 3]);
  });

  it("toggles a selected member off", () => {
    const s = new ViewState(points);
    s.toggleSelect(1);
    s.toggleSelect(1);
    expect(s.selected).toEqual([]);
  });

  it("finds the nearest point within a radius", () => {
    const s = new ViewState(points);
    expect(s.nearestPoint(0.05, 0.02, 0.2)?.id).toBe(0);
    expect(s.nearestPoint(0.5, 0.5, 0.1)).toBeNull();
  });
});
