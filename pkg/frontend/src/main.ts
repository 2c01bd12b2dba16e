// Wiring: scatter of members with a draggable probe, live reconstruction
// panels, PCV and FLI views, and path animation between two selected members.

import { ApiClient, FliBranch, Reconstruction } from "./api.js";
import { PathAnimator } from "./path.js";
import {
  Bar, barAt, bdtBars, clusterColor, diagramView, fromPixels, scatterGlyphs,
} from "./render.js";
import { ViewState } from "./state.js";
import { RequestSequencer, Throttle } from "./throttle.js";

const BASE_URL =
  new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8008";

function canvas(id: string): CanvasRenderingContext2D {
  const el = document.getElementById(id) as HTMLCanvasElement;
  const ctx = el.getContext("2d");
  if (!ctx) throw new Error(`no 2d context for #${id}`);
  return ctx;
}

async function start(): Promise<void> {
  const api = new ApiClient(BASE_URL);
  const layout = await api.layout();
  const state = new ViewState(layout.points);
  const fliData: FliBranch[] = (await api.fli()).branches;
  const pcvData = (await api.pcv()).points;

  const scatterCtx = canvas("scatter");
  const diagramCtx = canvas("diagram");
  const bdtCtx = canvas("bdt");
  const pcvCtx = canvas("pcv");
  const status = document.getElementById("status") as HTMLElement;

  const W = scatterCtx.canvas.width;
  const H = scatterCtx.canvas.height;
  let currentBars: Bar[] = [];
  let currentRowH = 24;

  function drawScatter(): void {
    scatterCtx.clearRect(0, 0, W, H);
    for (const g of scatterGlyphs(state.points, state.bounds, W, H, state.selected)) {
      scatterCtx.beginPath();
      scatterCtx.arc(g.px, g.py, g.selected ? 8 : 5, 0, 2 * Math.PI);
      scatterCtx.fillStyle = g.color;
      scatterCtx.fill();
      if (g.selected) {
        scatterCtx.strokeStyle = "#000";
        scatterCtx.stroke();
      }
    }
    const probe = state.probe;
    const p = scatterGlyphs(
      [{ id: -1, name: "probe", x: probe.x, y: probe.y, cluster: 0 }],
      state.bounds, W, H, [],
    )[0];
    scatterCtx.beginPath();
    scatterCtx.arc(p.px, p.py, 6, 0, 2 * Math.PI);
    scatterCtx.strokeStyle = "#333";
    scatterCtx.setLineDash([3, 3]);
    scatterCtx.stroke();
    scatterCtx.setLineDash([]);
  }

  function drawReconstruction(rec: Reconstruction, withFli: boolean): void {
    const dw = diagramCtx.canvas.width;
    const dh = diagramCtx.canvas.height;
    diagramCtx.clearRect(0, 0, dw, dh);
    const view = diagramView(rec.diagram.points, dw, dh);
    diagramCtx.beginPath();
    diagramCtx.moveTo(view.diagonal[0].px, view.diagonal[0].py);
    diagramCtx.lineTo(view.diagonal[1].px, view.diagonal[1].py);
    diagramCtx.strokeStyle = "#888";
    diagramCtx.stroke();
    for (const pt of view.points) {
      diagramCtx.beginPath();
      diagramCtx.arc(pt.px, pt.py, 4, 0, 2 * Math.PI);
      diagramCtx.fillStyle = "#2166ac";
      diagramCtx.fill();
    }

    const bw = bdtCtx.canvas.width;
    const rows = Math.max(rec.bdt.branches.length, 1);
    const rowH = Math.min(24, bdtCtx.canvas.height / rows);
    bdtCtx.clearRect(0, 0, bw, bdtCtx.canvas.height);
    currentBars = bdtBars(rec.bdt.branches, withFli ? fliData : null, bw, rowH);
    currentRowH = rowH;
    for (const bar of currentBars) {
      bdtCtx.fillStyle = "#67a9cf";
      bdtCtx.fillRect(bar.x0, bar.y - rowH * 0.3, Math.max(bar.x1 - bar.x0, 1), rowH * 0.6);
      if (bar.highlighted) {
        bdtCtx.beginPath();
        bdtCtx.arc(bar.x1 + 8, bar.y, 5, 0, 2 * Math.PI);
        bdtCtx.strokeStyle = "#b2182b";
        bdtCtx.lineWidth = 2;
        bdtCtx.stroke();
        bdtCtx.lineWidth = 1;
      }
    }
  }

  function drawPcv(): void {
    const w = pcvCtx.canvas.width;
    const h = pcvCtx.canvas.height;
    pcvCtx.clearRect(0, 0, w, h);
    pcvCtx.strokeStyle = "#ccc";
    pcvCtx.strokeRect(0, 0, w, h);
    pcvCtx.beginPath();
    pcvCtx.moveTo(w / 2, 0);
    pcvCtx.lineTo(w / 2, h);
    pcvCtx.moveTo(0, h / 2);
    pcvCtx.lineTo(w, h / 2);
    pcvCtx.stroke();
    for (const p of pcvData) {
      const px = ((p.rho1 + 1) / 2) * w;
      const py = h - ((p.rho2 + 1) / 2) * h;
      pcvCtx.beginPath();
      pcvCtx.arc(px, py, 5, 0, 2 * Math.PI);
      pcvCtx.fillStyle = p.degenerate ? "#bbb" : clusterColor(p.branch);
      pcvCtx.fill();
    }
  }

  const sequencer = new RequestSequencer();
  async function reconstructAt(x: number, y: number): Promise<void> {
    const token = sequencer.next();
    const rec = await api.reconstruct([x, y]);
    if (!sequencer.tryApply(token)) return; // superseded while in flight
    drawReconstruction(rec, true);
    status.textContent = `probe (${x.toFixed(3)}, ${y.toFixed(3)})`;
  }

  const throttled = new Throttle<[number, number]>(
    (x, y) => void reconstructAt(x, y), 100,
  );

  let dragging = false;
  scatterCtx.canvas.addEventListener("mousedown", (ev) => {
    const rect = scatterCtx.canvas.getBoundingClientRect();
    const { x, y } = fromPixels(
      ev.clientX - rect.left, ev.clientY - rect.top, state.bounds, W, H);
    const hit = state.nearestPoint(
      x, y, 0.03 * (state.bounds.xMax - state.bounds.xMin));
    if (hit) {
      state.toggleSelect(hit.id);
      void api.member(hit.id).then((m) => drawReconstruction(m, false));
      drawScatter();
      return;
    }
    dragging = true;
    state.moveProbe(x, y);
    drawScatter();
    throttled.fire(state.probe.x, state.probe.y);
  });
  scatterCtx.canvas.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    const rect = scatterCtx.canvas.getBoundingClientRect();
    const { x, y } = fromPixels(
      ev.clientX - rect.left, ev.clientY - rect.top, state.bounds, W, H);
    state.moveProbe(x, y);
    drawScatter();
    throttled.fire(state.probe.x, state.probe.y);
  });
  window.addEventListener("mouseup", () => {
    dragging = false;
  });

  bdtCtx.canvas.addEventListener("mousemove", (ev) => {
    const rect = bdtCtx.canvas.getBoundingClientRect();
    const bar = barAt(currentBars, ev.clientX - rect.left,
      ev.clientY - rect.top, currentRowH);
    if (bar) {
      status.textContent =
        `branch ${bar.branch}: birth ${bar.birth.toFixed(3)}, ` +
        `death ${bar.death.toFixed(3)}, FLI ${bar.fli.toFixed(2)}`;
    }
  });

  const animator = new PathAnimator(api, (frame, i) => {
    drawReconstruction(frame, false);
    status.textContent = `path frame ${i + 1}/${animator.frames.length}`;
  });
  (document.getElementById("animate") as HTMLButtonElement).addEventListener(
    "click", async () => {
      if (!state.pathEndpoints) {
        status.textContent = "select two members first";
        return;
      }
      const [a, b] = state.pathEndpoints;
      const pa = state.points.find((p) => p.id === a)!;
      const pb = state.points.find((p) => p.id === b)!;
      await animator.load([pa.x, pa.y], [pb.x, pb.y], 12);
      animator.play();
    });
  (document.getElementById("pause") as HTMLButtonElement).addEventListener(
    "click", () => {
      if (animator.playing) {
        animator.pause();
      } else {
        animator.play();
      }
    });

  drawScatter();
  drawPcv();
  void reconstructAt(state.probe.x, state.probe.y);
}

start().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = `failed to load: ${err}`;
});
