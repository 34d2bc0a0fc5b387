// Sharable URL encoding of the two panel states. The hash carries a
// compact JSON document; round-tripping is exact for every valid state.

export type TriState = "present" | "absent" | "unobserved";

export interface CaseFormState {
  covariates: Record<string, string>;
  observations: Record<string, TriState>;
  intervalMass: "50" | "90";
}

export interface DesignPanelState {
  target: string;
  numCadavers: number;
  days: number[];
  covariateLevels: Record<string, string>;
  estimator: "naive" | "low_variance";
  seed: number;
}

export interface WorkbenchState {
  case: CaseFormState;
  design: DesignPanelState;
}

export function defaultState(): WorkbenchState {
  return {
    case: { covariates: {}, observations: {}, intervalMass: "90" },
    design: {
      target: "",
      numCadavers: 30,
      days: [0, 5, 10, 20, 35, 50],
      covariateLevels: {},
      estimator: "naive",
      seed: 0,
    },
  };
}

export function encodeState(state: WorkbenchState): string {
  return "#s=" + encodeURIComponent(JSON.stringify(state));
}

export function decodeState(hash: string): WorkbenchState | null {
  if (!hash.startsWith("#s=")) return null;
  try {
    const raw = JSON.parse(decodeURIComponent(hash.slice(3))) as WorkbenchState;
    if (!raw || typeof raw !== "object" || !raw.case || !raw.design) return null;
    const base = defaultState();
    return {
      case: { ...base.case, ...raw.case },
      design: { ...base.design, ...raw.design },
    };
  } catch {
    return null;
  }
}

/** A case form is submittable only when every chosen value exists in the
 * vocabulary the service reported. */
export function caseFormValid(
  state: CaseFormState,
  covariates: { name: string; levels: string[] }[],
  characteristics: string[],
): boolean {
  const byName = new Map(covariates.map((c) => [c.name, new Set(c.levels)]));
  for (const [name, level] of Object.entries(state.covariates)) {
    const levels = byName.get(name);
    if (!levels || !levels.has(level)) return false;
  }
  const known = new Set(characteristics);
  for (const name of Object.keys(state.observations)) {
    if (!known.has(name)) return false;
  }
  return true;
}

export function designWithinCaps(
  state: DesignPanelState,
  caps: { n_outer: number },
  budgets: { nOuter: number },
): boolean {
  return (
    state.numCadavers >= 0 &&
    state.days.every((d) => d >= 0) &&
    budgets.nOuter <= caps.n_outer
  );
}

export function observationsToRequest(
  observations: Record<string, TriState>,
): Record<string, boolean> {
  const out: Record<string, boolean> = {};
  for (const [name, tri] of Object.entries(observations)) {
    if (tri === "present") out[name] = true;
    else if (tri === "absent") out[name] = false;
  }
  return out;
}
