/** Pure DOM builders for the session UI. Every render reflects server state. */

import type {
  DesignOut,
  PosteriorResponse,
  SessionView,
} from "./api.js";

export const CES_EPS = Math.pow(2, -22);

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(x: number): string {
  return Number.isInteger(x) ? String(x) : x.toPrecision(5);
}

/** Human-readable design string, rendered per model family. */
export function designLabel(model: string, design: DesignOut): string {
  const v = design.values;
  if (design.kind === "index") return `initial population N0 = ${v[0]}`;
  if (model === "source") return `measure at (${fmt(v[0])}, ${fmt(v[1])})`;
  if (model === "ces")
    return (
      `basket A = [${v.slice(0, 3).map(fmt).join(", ")}], ` +
      `basket B = [${v.slice(3, 6).map(fmt).join(", ")}]`
    );
  return `design d = ${v.map(fmt).join(", ")}`;
}

/** Card showing the currently proposed design. */
export function renderDesignCard(view: SessionView): HTMLElement {
  const card = el("section", "design-card");
  card.append(el("h2", undefined, `Experiment ${view.step + 1} of ${view.horizon}`));
  if (view.pending_design) {
    const label = el("p", "design-label", designLabel(view.model, view.pending_design));
    label.dataset.testid = "pending-design";
    card.append(label);
  }
  return card;
}

export interface OutcomeFormHandlers {
  onSubmit: (y: number) => void;
  onSimulate?: () => void;
}

/** Outcome entry form with model-appropriate input and inline error slot. */
export function renderOutcomeForm(
  view: SessionView,
  handlers: OutcomeFormHandlers,
): HTMLFormElement {
  const form = el("form", "outcome-form");
  const input = el("input");
  input.name = "outcome";
  input.dataset.testid = "outcome-input";
  if (view.model === "prey") {
    const n0 = view.pending_design?.values[0] ?? 0;
    input.type = "number";
    input.step = "1";
    input.min = "0";
    input.max = String(n0);
  } else if (view.model === "ces") {
    input.type = "range";
    input.min = String(CES_EPS);
    input.max = String(1 - CES_EPS);
    input.step = "any";
    input.value = "0.5";
  } else {
    input.type = "number";
    input.step = "any";
  }
  const hint = el("p", "outcome-hint", view.outcome_hint);
  const error = el("p", "outcome-error");
  error.dataset.testid = "outcome-error";
  error.hidden = true;
  const submit = el("button", undefined, "Record outcome");
  submit.type = "submit";
  form.append(input, hint, error, submit);
  if (view.mode === "simulated" && handlers.onSimulate) {
    const sim = el("button", undefined, "Simulate outcome");
    sim.type = "button";
    sim.dataset.testid = "simulate-button";
    sim.addEventListener("click", () => handlers.onSimulate?.());
    form.append(sim);
  }
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    handlers.onSubmit(Number(input.value));
  });
  if (view.done) {
    input.disabled = true;
    submit.disabled = true;
  }
  return form;
}

/** Show a server-side validation failure inline at the input field. */
export function showInlineError(form: HTMLElement, message: string): void {
  const slot = form.querySelector<HTMLElement>('[data-testid="outcome-error"]');
  if (slot) {
    slot.textContent = message;
    slot.hidden = false;
  }
}

export function renderHistory(view: SessionView): HTMLElement {
  const table = el("table", "history");
  const head = el("tr");
  ["t", "design", "outcome"].forEach((h) => head.append(el("th", undefined, h)));
  table.append(head);
  for (const row of view.history) {
    const tr = el("tr");
    tr.dataset.testid = "history-row";
    tr.append(el("td", undefined, String(row.step)));
    tr.append(el("td", undefined, designLabel(view.model, row.design)));
    tr.append(el("td", undefined, fmt(row.outcome)));
    table.append(tr);
  }
  return table;
}

/** Per-model projection of a posterior particle to 2-D scatter coordinates. */
export function scatterProjection(model: string, theta: number[]): [number, number] {
  if (model === "ces") return [theta[0], Math.log(theta[4])]; // (rho, log u)
  if (model === "source") return [theta[0], theta[1]]; // first source
  if (theta.length >= 2) return [theta[0], theta[1]];
  return [theta[0], 0];
}

function svgEl(tag: string): SVGElement {
  return document.createElementNS("http://www.w3.org/2000/svg", tag) as SVGElement;
}

/** Weighted SNIS posterior scatter; point area tracks weight. */
export function renderPosteriorScatter(
  model: string,
  posterior: PosteriorResponse,
): SVGElement {
  const width = 360;
  const height = 280;
  const svg = svgEl("svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("data-testid", "posterior-scatter");
  const pts = posterior.points.map((p) => scatterProjection(model, p.theta));
  const xs = pts.map((p) => p[0]);
  const ys = pts.map((p) => p[1]);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys);
  const sx = (x: number) =>
    xMax > xMin ? ((x - xMin) / (xMax - xMin)) * (width - 20) + 10 : width / 2;
  const sy = (y: number) =>
    yMax > yMin ? height - (((y - yMin) / (yMax - yMin)) * (height - 20) + 10) : height / 2;
  const maxW = Math.max(...posterior.points.map((p) => p.weight));
  posterior.points.forEach((p, i) => {
    const c = svgEl("circle");
    c.setAttribute("cx", String(sx(pts[i][0])));
    c.setAttribute("cy", String(sy(pts[i][1])));
    c.setAttribute("r", String(1 + 4 * Math.sqrt(p.weight / (maxW || 1))));
    c.setAttribute("class", "posterior-point");
    svg.append(c);
  });
  const caption = svgEl("text");
  caption.setAttribute("x", "10");
  caption.setAttribute("y", "14");
  caption.textContent = `n = ${posterior.n}, ESS = ${posterior.ess.toFixed(1)}`;
  svg.append(caption);
  if (model === "ces") svg.append(renderTernaryInset(posterior));
  return svg;
}

/** Small barycentric inset of the CES share parameters alpha. */
function renderTernaryInset(posterior: PosteriorResponse): SVGElement {
  const g = svgEl("g");
  g.setAttribute("data-testid", "ternary-inset");
  const ox = 270;
  const oy = 200;
  const s = 70;
  const corners: [number, number][] = [
    [ox, oy + s],
    [ox + s, oy + s],
    [ox + s / 2, oy + s - s * Math.sin(Math.PI / 3)],
  ];
  const tri = svgEl("polygon");
  tri.setAttribute("points", corners.map((c) => c.join(",")).join(" "));
  tri.setAttribute("class", "ternary-frame");
  g.append(tri);
  for (const p of posterior.points) {
    const [a1, a2, a3] = p.theta.slice(1, 4);
    const x = a1 * corners[0][0] + a2 * corners[1][0] + a3 * corners[2][0];
    const y = a1 * corners[0][1] + a2 * corners[1][1] + a3 * corners[2][1];
    const c = svgEl("circle");
    c.setAttribute("cx", String(x));
    c.setAttribute("cy", String(y));
    c.setAttribute("r", "1.2");
    g.append(c);
  }
  return g;
}

/** Cumulative information-gain trace (simulated mode only). */
export function renderGainTrace(trace: number[]): SVGElement {
  const width = 360;
  const height = 120;
  const svg = svgEl("svg");
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("data-testid", "gain-trace");
  const top = Math.max(...trace, 1e-12);
  const path = trace
    .map((g, i) => {
      const x = trace.length > 1 ? (i / (trace.length - 1)) * (width - 20) + 10 : width / 2;
      const y = height - 10 - (g / top) * (height - 30);
      return `${x},${y}`;
    })
    .join(" ");
  const line = svgEl("polyline");
  line.setAttribute("points", path);
  line.setAttribute("class", "gain-line");
  line.setAttribute("fill", "none");
  svg.append(line);
  const label = svgEl("text");
  label.setAttribute("x", "10");
  label.setAttribute("y", "14");
  label.textContent = `cumulative gain: ${trace[trace.length - 1]?.toFixed(3) ?? "-"}`;
  svg.append(label);
  return svg;
}

export function renderCompletion(view: SessionView): HTMLElement {
  const box = el("section", "completion");
  box.dataset.testid = "completion-summary";
  box.append(el("h2", undefined, "Session complete"));
  box.append(
    el(
      "p",
      undefined,
      `${view.history.length} experiments recorded for model ${view.model}.`,
    ),
  );
  if (view.gain_trace && view.gain_trace.length) {
    box.append(
      el(
        "p",
        undefined,
        `final information gain ${view.gain_trace[view.gain_trace.length - 1].toFixed(4)} nats`,
      ),
    );
  }
  return box;
}

export function renderErrorBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "error-banner");
  banner.dataset.testid = "error-banner";
  banner.append(el("p", undefined, message));
  const retry = el("button", undefined, "Retry");
  retry.addEventListener("click", onRetry);
  banner.append(retry);
  return banner;
}
