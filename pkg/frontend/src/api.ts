// Typed client for the model service. All statistics arrive precomputed;
// the workbench only transforms units and plots.

export interface CovariateInfo {
  name: string;
  levels: string[];
  reference_level_index: number;
}

export interface SchemaPayload {
  version: string;
  variant: string;
  covariates: CovariateInfo[];
  characteristics: string[];
  effect_names: string[];
  eig_caps: { n_outer: number; m_conditional: number; m_marginal: number };
  prior: { mean: number; sd: number };
}

export interface IntervalPayload {
  tau: [number, number];
  days: [number, number];
}

export interface PredictPayload {
  version: string;
  tau_grid: number[];
  density: number[];
  mean_tau: number;
  mean_days: number;
  median_days: number;
  intervals: Record<string, IntervalPayload>;
}

export interface DesignRow {
  num_cadavers: number;
  observation_day: number;
  covariate_levels: Record<string, string>;
  eig: number;
  eig_per_cadaver: number;
  mc_standard_error: number;
  estimator: string;
}

export interface EigPayload {
  version: string;
  target: string[];
  seed: number;
  rows: DesignRow[];
  best_index: number;
}

export interface BeforeAfterPayload {
  version: string;
  target_names: string[];
  grid: number[];
  before_density: number[][];
  after_density: number[][];
  variance_ratio: number[];
  refit_passed: boolean;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

function assertShape(condition: boolean, what: string): asserts condition {
  if (!condition) throw new ApiError(0, `malformed payload: ${what}`);
}

export function validatePredict(raw: unknown): PredictPayload {
  const p = raw as PredictPayload;
  assertShape(Array.isArray(p.tau_grid) && Array.isArray(p.density), "grid arrays");
  assertShape(p.tau_grid.length === p.density.length, "grid/density lengths");
  assertShape(typeof p.mean_days === "number", "mean_days");
  assertShape(p.intervals !== undefined, "intervals");
  return p;
}

export function validateEig(raw: unknown): EigPayload {
  const p = raw as EigPayload;
  assertShape(Array.isArray(p.rows), "rows");
  assertShape(typeof p.best_index === "number", "best_index");
  for (const row of p.rows) {
    assertShape(typeof row.eig_per_cadaver === "number", "eig_per_cadaver");
    assertShape(typeof row.mc_standard_error === "number", "mc_standard_error");
  }
  return p;
}

export function validateBeforeAfter(raw: unknown): BeforeAfterPayload {
  const p = raw as BeforeAfterPayload;
  assertShape(Array.isArray(p.grid), "grid");
  assertShape(Array.isArray(p.before_density) && Array.isArray(p.after_density), "densities");
  assertShape(p.before_density.length === p.after_density.length, "density pairs");
  assertShape(Array.isArray(p.variance_ratio), "variance_ratio");
  return p;
}

async function post<T>(base: string, path: string, body: unknown): Promise<T> {
  const response = await fetch(base + path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!response.ok) {
    const text = await response.text();
    throw new ApiError(response.status, text);
  }
  return (await response.json()) as T;
}

export class Client {
  constructor(readonly base: string = "") {}

  async schema(): Promise<SchemaPayload> {
    const response = await fetch(this.base + "/v1/schema");
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return (await response.json()) as SchemaPayload;
  }

  predict(body: unknown): Promise<PredictPayload> {
    return post<unknown>(this.base, "/v1/predict-pmi", body).then(validatePredict);
  }

  eig(body: unknown): Promise<EigPayload> {
    return post<unknown>(this.base, "/v1/eig", body).then(validateEig);
  }

  beforeAfter(body: unknown): Promise<BeforeAfterPayload> {
    return post<unknown>(this.base, "/v1/before-after", body).then(validateBeforeAfter);
  }
}
