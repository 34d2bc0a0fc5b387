// Panel wiring: build the forms from the served vocabulary, submit
// requests, and render responses. Each panel keeps a request token so a
// late response from a superseded request is dropped.

import { Client, type PredictPayload, type SchemaPayload } from "./api.js";
import {
  argmax,
  formatDays,
  prepareBeforeAfter,
  preparePmiPlot,
  prepareScanSeries,
  tauToDays,
} from "./transforms.js";
import {
  drawAxes,
  drawBand,
  drawCurve,
  drawMarker,
  drawPointsWithErrors,
  makeFrame,
  svgRoot,
} from "./svg.js";
import {
  caseFormValid,
  decodeState,
  defaultState,
  encodeState,
  observationsToRequest,
  type TriState,
  type WorkbenchState,
} from "./urlstate.js";

const SERIES_COLORS = ["#1965b0", "#dc680d", "#2c8c4b", "#7b5ab8"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export class Workbench {
  state: WorkbenchState = defaultState();
  private caseToken = 0;
  private designToken = 0;
  private beforeAfterToken = 0;

  constructor(
    readonly client: Client,
    readonly schema: SchemaPayload,
    readonly root: HTMLElement,
  ) {}

  syncUrl(): void {
    history.replaceState(null, "", encodeState(this.state));
  }

  restoreFromUrl(): void {
    const decoded = decodeState(location.hash);
    if (decoded) this.state = decoded;
  }

  build(): void {
    this.restoreFromUrl();
    this.root.replaceChildren();
    this.root.appendChild(this.buildCasePanel());
    this.root.appendChild(this.buildDesignPanel());
  }

  // -- case panel ---------------------------------------------------------

  private buildCasePanel(): HTMLElement {
    const panel = el("section", { class: "panel" });
    panel.appendChild(el("h2", {}, "Case: elapsed-time posterior"));
    const form = el("div", { class: "grid" });

    for (const cov of this.schema.covariates) {
      const field = el("label", {}, cov.name + " ");
      const select = el("select");
      select.appendChild(el("option", { value: "" }, "(unanswered)"));
      for (const level of cov.levels) {
        const option = el("option", { value: level }, level);
        if (this.state.case.covariates[cov.name] === level) option.selected = true;
        select.appendChild(option);
      }
      select.addEventListener("change", () => {
        if (select.value) this.state.case.covariates[cov.name] = select.value;
        else delete this.state.case.covariates[cov.name];
        this.syncUrl();
      });
      field.appendChild(select);
      form.appendChild(field);
    }

    const obsBox = el("div", { class: "grid" });
    for (const name of this.schema.characteristics) {
      const field = el("label", {}, name + " ");
      const select = el("select");
      for (const tri of ["unobserved", "present", "absent"] as TriState[]) {
        const option = el("option", { value: tri }, tri);
        if ((this.state.case.observations[name] ?? "unobserved") === tri) option.selected = true;
        select.appendChild(option);
      }
      select.addEventListener("change", () => {
        this.state.case.observations[name] = select.value as TriState;
        this.syncUrl();
      });
      field.appendChild(select);
      obsBox.appendChild(field);
    }

    const massToggle = el("select");
    for (const mass of ["90", "50"]) {
      const option = el("option", { value: mass }, mass + "% interval");
      if (this.state.case.intervalMass === mass) option.selected = true;
      massToggle.appendChild(option);
    }

    const submit = el("button", {}, "Estimate elapsed time");
    const status = el("p", { class: "status" });
    const chart = el("div", { class: "chart" });

    submit.addEventListener("click", async () => {
      if (!caseFormValid(this.state.case, this.schema.covariates, this.schema.characteristics)) {
        status.textContent = "form has values outside the served vocabulary";
        return;
      }
      this.state.case.intervalMass = massToggle.value as "50" | "90";
      this.syncUrl();
      const token = ++this.caseToken;
      status.textContent = "computing...";
      try {
        const payload = await this.client.predict({
          covariates: this.state.case.covariates,
          observations: observationsToRequest(this.state.case.observations),
          interval_masses: [0.5, 0.9],
        });
        if (token !== this.caseToken) return; // superseded
        this.renderPmi(chart, status, payload);
      } catch (error) {
        if (token !== this.caseToken) return;
        status.textContent = String(error);
      }
    });

    panel.append(form, el("h3", {}, "Observed characteristics"), obsBox, massToggle, submit, status, chart);
    return panel;
  }

  private renderPmi(chart: HTMLElement, status: HTMLElement, payload: PredictPayload): void {
    const masses = this.state.case.intervalMass === "50" ? ["50"] : ["50", "90"];
    const plot = preparePmiPlot(payload, masses);
    const frame = makeFrame(plot.tau, plot.density);
    const root = svgRoot(frame);
    for (const band of plot.bands) {
      drawBand(root, frame, band.tauLow, band.tauHigh, "#1965b0", band.mass === "90" ? 0.10 : 0.18);
    }
    drawCurve(root, frame, plot.tau, plot.density, "#1965b0");
    drawMarker(root, frame, plot.meanTau, "#b33", `mean ${formatDays(plot.meanDays)} d`);
    const ticks = [0, 1, 2, 3, 4, 5, 6, 7]
      .filter((t) => t <= frame.xMax)
      .map((t) => ({ value: t, label: t.toFixed(0) }));
    const secondary = ticks.map((t) => ({ value: t.value, label: formatDays(tauToDays(t.value)) + "d" }));
    drawAxes(root, frame, ticks, "log(1 + days)   /   days", secondary);
    chart.replaceChildren(root);
    const lines = plot.bands
      .map((b) => `${b.mass}%: ${formatDays(b.daysLow)} - ${formatDays(b.daysHigh)} days`)
      .join("; ");
    status.textContent = `mean ${formatDays(plot.meanDays)} days; ${lines}`;
  }

  // -- design panel ---------------------------------------------------------

  private buildDesignPanel(): HTMLElement {
    const panel = el("section", { class: "panel" });
    panel.appendChild(el("h2", {}, "Experiment planner: expected information gain"));

    const targetSelect = el("select");
    for (const name of this.schema.effect_names) {
      const option = el("option", { value: name }, name);
      if (this.state.design.target === name) option.selected = true;
      targetSelect.appendChild(option);
    }
    if (!this.state.design.target && this.schema.effect_names.length > 0) {
      this.state.design.target = this.schema.effect_names[0]!;
    }
    targetSelect.addEventListener("change", () => {
      this.state.design.target = targetSelect.value;
      this.syncUrl();
    });

    const cadavers = el("input", { type: "number", min: "0", value: String(this.state.design.numCadavers) });
    const maxDay = el("input", { type: "range", min: "5", max: "50", step: "5", value: "50" });
    const maxDayLabel = el("span", {}, "days 0..50");
    maxDay.addEventListener("input", () => {
      const upper = Number(maxDay.value);
      this.state.design.days = [0, 5, 10, 20, 35, 50].filter((d) => d <= upper);
      if (!this.state.design.days.includes(upper)) this.state.design.days.push(upper);
      maxDayLabel.textContent = `days 0..${upper}`;
      this.syncUrl();
    });

    const conditionBox = el("div", { class: "grid" });
    for (const cov of this.schema.covariates) {
      const field = el("label", {}, cov.name + " ");
      const select = el("select");
      select.appendChild(el("option", { value: "" }, "(reference)"));
      for (const level of cov.levels) {
        const option = el("option", { value: level }, level);
        if (this.state.design.covariateLevels[cov.name] === level) option.selected = true;
        select.appendChild(option);
      }
      select.addEventListener("change", () => {
        if (select.value) this.state.design.covariateLevels[cov.name] = select.value;
        else delete this.state.design.covariateLevels[cov.name];
        this.syncUrl();
      });
      field.appendChild(select);
      conditionBox.appendChild(field);
    }

    const estimator = el("select");
    for (const kind of ["naive", "low_variance"]) {
      const option = el("option", { value: kind }, kind);
      if (this.state.design.estimator === kind) option.selected = true;
      estimator.appendChild(option);
    }
    const seed = el("input", { type: "number", value: String(this.state.design.seed) });

    const scanButton = el("button", {}, "Scan designs");
    const baButton = el("button", {}, "Before / after at best design");
    const status = el("p", { class: "status" });
    const chart = el("div", { class: "chart" });
    const baChart = el("div", { class: "chart" });
    const baStatus = el("p", { class: "status" });
    let lastBestDay: number | null = null;

    scanButton.addEventListener("click", async () => {
      this.state.design.numCadavers = Math.max(Number(cadavers.value) || 0, 0);
      this.state.design.estimator = estimator.value as "naive" | "low_variance";
      this.state.design.seed = Number(seed.value) || 0;
      this.syncUrl();
      const budgets = { n_outer: 2000, m_conditional: 1000, m_marginal: 1000 };
      if (budgets.n_outer > this.schema.eig_caps.n_outer) {
        status.textContent = "budget exceeds the server cap";
        return;
      }
      const token = ++this.designToken;
      status.textContent = "scanning...";
      try {
        const payload = await this.client.eig({
          target: this.state.design.target,
          designs: this.state.design.days.map((day) => ({
            num_cadavers: this.state.design.numCadavers,
            observation_day: day,
            covariate_levels: this.state.design.covariateLevels,
          })),
          estimator: this.state.design.estimator,
          ...budgets,
          seed: this.state.design.seed,
        });
        if (token !== this.designToken) return;
        const series = prepareScanSeries(payload);
        const frame = makeFrame(
          series.flatMap((s) => s.days),
          series.flatMap((s) => s.eigPerCadaver.map((v, i) => v + (s.errorBars[i] ?? 0))),
        );
        const root = svgRoot(frame);
        series.forEach((s, k) => {
          drawPointsWithErrors(
            root, frame, s.days, s.eigPerCadaver, s.errorBars,
            SERIES_COLORS[k % SERIES_COLORS.length]!, s.bestIndex,
          );
        });
        drawAxes(root, frame,
          this.state.design.days.map((d) => ({ value: d, label: String(d) })),
          "observation day");
        chart.replaceChildren(root);
        const best = payload.rows[payload.best_index];
        lastBestDay = best ? best.observation_day : null;
        status.textContent = best
          ? `best: day ${best.observation_day} at ${best.eig_per_cadaver.toExponential(2)} nats/cadaver`
          : "no designs";
      } catch (error) {
        if (token !== this.designToken) return;
        status.textContent = String(error);
      }
    });

    baButton.addEventListener("click", async () => {
      const day = lastBestDay ?? this.state.design.days[this.state.design.days.length - 1] ?? 0;
      const token = ++this.beforeAfterToken;
      baStatus.textContent = "refitting...";
      try {
        const payload = await this.client.beforeAfter({
          target: this.state.design.target,
          design: {
            num_cadavers: this.state.design.numCadavers,
            observation_day: day,
            covariate_levels: this.state.design.covariateLevels,
          },
          refit: { seed: this.state.design.seed },
        });
        if (token !== this.beforeAfterToken) return;
        const views = prepareBeforeAfter(payload);
        const view = views[0];
        if (!view) return;
        const frame = makeFrame(view.grid, [...view.before, ...view.after]);
        const root = svgRoot(frame);
        drawCurve(root, frame, view.grid, view.before, "#888");
        drawCurve(root, frame, view.grid, view.after, "#1965b0", view.identical);
        drawAxes(root, frame,
          [frame.xMin, (frame.xMin + frame.xMax) / 2, frame.xMax].map((v) => ({
            value: v, label: v.toFixed(1),
          })),
          view.name);
        baChart.replaceChildren(root);
        baStatus.textContent = `variance ratio after/before: ${view.varianceRatio.toFixed(3)}` +
          (payload.refit_passed ? "" : " (refit diagnostics failed)");
      } catch (error) {
        if (token !== this.beforeAfterToken) return;
        baStatus.textContent = String(error);
      }
    });

    panel.append(
      el("h3", {}, "Target effect"), targetSelect,
      el("h3", {}, "Cadavers / days"), cadavers, maxDay, maxDayLabel,
      el("h3", {}, "Covariate condition"), conditionBox,
      el("h3", {}, "Estimator / seed"), estimator, seed,
      scanButton, status, chart, baButton, baStatus, baChart,
    );
    return panel;
  }
}
