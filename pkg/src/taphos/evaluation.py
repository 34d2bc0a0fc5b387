"""Cross-validated evaluation: per-characteristic ROC AUC at the true
elapsed time, log-space R-squared of the inverted time posterior, interval
calibration, and fold-averaged ROC curves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as student_t

from . import pmi as pmi_mod
from .model import ModelStructure, encode_dataset, posterior_mean_char_probs
from .sampler import SamplerConfig, sample_posterior
from .schema import CaseRecord, CovariateSchema, DecompositionSchema, encode_case


@dataclass(frozen=True)
class FoldPlan:
    """Seeded partition of case ids into k folds with sizes differing by
    at most one."""

    k: int
    seed: int
    assignments: dict[str, int]

    @classmethod
    def build(cls, case_ids: list[str], k: int = 5, seed: int = 0) -> "FoldPlan":
        if k < 2:
            raise ValueError("need k >= 2")
        if len(set(case_ids)) != len(case_ids):
            raise ValueError("case ids must be unique")
        if len(case_ids) < k:
            raise ValueError("fewer cases than folds")
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(case_ids))
        assignments = {case_ids[j]: int(i % k) for i, j in enumerate(order)}
        return cls(k=k, seed=seed, assignments=assignments)

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignments.values():
            sizes[f] += 1
        return sizes


def roc_auc(scores, labels) -> float | None:
    """Probability that a random positive outscores a random negative,
    ties counted half (midrank form). Returns None when only one class is
    present; such entries are excluded from macro averages."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=float)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[labels].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def r_squared_log(predicted_t, true_t) -> float:
    """1 - SSE/SST computed on log(1 + t)."""
    pred = np.log1p(np.asarray(predicted_t, dtype=float))
    true = np.log1p(np.asarray(true_t, dtype=float))
    if pred.shape != true.shape or pred.ndim != 1 or pred.size < 2:
        raise ValueError("need two equal-length vectors of at least 2 points")
    if np.any(np.asarray(predicted_t) < 0) or np.any(np.asarray(true_t) < 0):
        raise ValueError("times must be nonnegative")
    sst = float(np.sum((true - true.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("zero variance in the true values")
    sse = float(np.sum((pred - true) ** 2))
    return 1.0 - sse / sst


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """ROC polyline (fpr, tpr) anchored at (0,0) and (1,1)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(-scores, kind="mergesort")
    lab = labels[order]
    tps = np.cumsum(lab)
    fps = np.cumsum(~lab)
    # collapse runs of equal scores to their last point
    distinct = np.nonzero(np.diff(scores[order]))[0]
    idx = np.concatenate([distinct, [lab.size - 1]])
    tpr = tps[idx] / max(tps[-1], 1)
    fpr = fps[idx] / max(fps[-1], 1)
    return np.concatenate([[0.0], fpr]), np.concatenate([[0.0], tpr])


def _interp_roc(fpr: np.ndarray, tpr: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Evaluate the ROC polyline at the grid points. Queries landing on a
    vertical riser take its top; queries between operating points
    interpolate linearly along the connecting segment."""
    last = np.clip(np.searchsorted(fpr, grid, side="right") - 1, 0, fpr.size - 1)
    out = tpr[last].astype(float)
    nxt = np.minimum(last + 1, fpr.size - 1)
    between = (grid > fpr[last]) & (nxt > last)
    run = fpr[nxt] - fpr[last]
    frac = np.divide(grid - fpr[last], run, out=np.zeros_like(out), where=run > 0)
    interp = tpr[last] + frac * (tpr[nxt] - tpr[last])
    return np.where(between, interp, out)


@dataclass(frozen=True)
class RocCurveSummary:
    fpr_grid: np.ndarray
    mean_tpr: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray

    def to_dict(self) -> dict:
        return {
            "fpr_grid": self.fpr_grid.tolist(),
            "mean_tpr": self.mean_tpr.tolist(),
            "band_low": self.band_low.tolist(),
            "band_high": self.band_high.tolist(),
        }


def mean_roc_curve(
    fold_curves: list[dict[str, tuple[np.ndarray, np.ndarray]]],
    grid_points: int = 101,
) -> RocCurveSummary:
    """Average per-fold ROC curves on a common false-positive grid: each
    fold's curves are averaged across characteristics, then folds are
    combined into a mean curve with a 95% t-interval band."""
    if len(fold_curves) < 2:
        raise ValueError("need at least 2 folds")
    grid = np.linspace(0.0, 1.0, grid_points)
    per_fold = []
    for curves in fold_curves:
        if not curves:
            continue
        interp = [_interp_roc(fpr, tpr, grid) for fpr, tpr in curves.values()]
        per_fold.append(np.mean(interp, axis=0))
    stacked = np.asarray(per_fold)
    mean = stacked.mean(axis=0)
    k = stacked.shape[0]
    half = (
        student_t.ppf(0.975, k - 1) * stacked.std(axis=0, ddof=1) / np.sqrt(k)
        if k > 1
        else np.zeros_like(mean)
    )
    return RocCurveSummary(grid, mean, np.clip(mean - half, 0, 1), np.clip(mean + half, 0, 1))


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    k = values.size
    mean = float(values.mean())
    if k < 2:
        return mean, float("nan")
    half = float(student_t.ppf(0.975, k - 1) * values.std(ddof=1) / np.sqrt(k))
    return mean, half


@dataclass
class EvalReport:
    variant: str
    fold_sizes: list[int]
    per_char_auc: dict[str, list[float | None]]
    macro_auc_per_fold: list[float]
    macro_auc: float
    macro_auc_ci: float
    r2_per_fold: list[float]
    r2: float
    r2_ci: float
    calibration_levels: list[float]
    calibration_coverage: list[float]
    roc: RocCurveSummary
    predictions: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "fold_sizes": self.fold_sizes,
            "per_characteristic_auc": self.per_char_auc,
            "macro_auc_per_fold": self.macro_auc_per_fold,
            "macro_auc": self.macro_auc,
            "macro_auc_ci95": self.macro_auc_ci,
            "r2_per_fold": self.r2_per_fold,
            "r2_log_space": self.r2,
            "r2_ci95": self.r2_ci,
            "calibration": {
                "levels": self.calibration_levels,
                "coverage": self.calibration_coverage,
            },
            "mean_roc_curve": self.roc.to_dict(),
        }


def run_cv(
    cases: list[CaseRecord],
    covariates: CovariateSchema,
    characteristics: DecompositionSchema,
    structure: ModelStructure,
    sampler_config: SamplerConfig,
    fold_plan: FoldPlan,
    prior: pmi_mod.PmiPrior = pmi_mod.PmiPrior(),
    grid: pmi_mod.GridConfig = pmi_mod.GridConfig(),
    calibration_levels: tuple[float, ...] = tuple(np.arange(0.1, 0.91, 0.1)),
    pmi_draw_limit: int = 500,
    keep_predictions: bool = False,
    auc_time_source: str = "true",
) -> EvalReport:
    """Fit on k-1 folds and score the held-out fold, k times.

    Decomposition AUC scores each characteristic's posterior-predictive
    probability evaluated at the case's true elapsed time by default
    (``auc_time_source="predicted"`` scores at the inverted posterior mean
    instead). The time posterior supplies the R-squared predictions
    (posterior mean on the log scale) and the interval-calibration counts.
    """
    if auc_time_source not in ("true", "predicted"):
        raise ValueError("auc_time_source must be 'true' or 'predicted'")
    for case in cases:
        if case.pmi_days is None:
            raise ValueError(f"case {case.case_id!r} has no PMI")
    missing = [c.case_id for c in cases if c.case_id not in fold_plan.assignments]
    if missing:
        raise ValueError(f"fold plan missing assignments for {missing[:3]}")

    encoded = {c.case_id: encode_case(c, covariates, characteristics) for c in cases}
    D = len(characteristics)
    per_char_auc: dict[str, list[float | None]] = {
        name: [] for name in characteristics.characteristics
    }
    macro_per_fold: list[float] = []
    r2_per_fold: list[float] = []
    fold_curves: list[dict[str, tuple[np.ndarray, np.ndarray]]] = []
    levels = [float(q) for q in calibration_levels]
    inside = np.zeros(len(levels))
    total_cases = 0
    predictions: list[dict] = []

    # canonical case order inside each fold makes the whole run independent
    # of the input ordering (bit-identical fits for a fixed FoldPlan)
    ordered = sorted(cases, key=lambda c: c.case_id)
    for fold in range(fold_plan.k):
        train = [encoded[c.case_id] for c in ordered if fold_plan.assignments[c.case_id] != fold]
        test = [c for c in ordered if fold_plan.assignments[c.case_id] == fold]
        data = encode_dataset(structure, train)
        fold_seed = int(np.random.SeedSequence([sampler_config.seed, fold]).generate_state(1)[0] % 2**31)
        config = SamplerConfig(**{**sampler_config.__dict__, "seed": fold_seed})
        samples = sample_posterior(structure, data, config)

        test_data = encode_dataset(structure, [encoded[c.case_id] for c in test])
        step = max(1, samples.draws.shape[0] // pmi_draw_limit)
        thin = samples.draws[::step]

        true_t = np.array([c.pmi_days for c in test])
        pred_tau = np.empty(len(test))
        for i, case in enumerate(test):
            enc = encoded[case.case_id]
            blind = type(enc)(enc.case_id, enc.level_index, None, enc.observed, enc.values)
            post = pmi_mod.pmi_posterior(blind, thin, structure, prior, grid, require_pass=False)
            pred_tau[i] = post.mean_tau()
            tau_true = np.log1p(case.pmi_days)
            for j, q in enumerate(levels):
                lo, hi = post.interval(q)
                inside[j] += float(lo <= tau_true <= hi)
            if keep_predictions:
                predictions.append(
                    {
                        "case_id": case.case_id,
                        "fold": fold,
                        "true_days": float(case.pmi_days),
                        "mean_days": post.mean_days(),
                        "mean_tau": post.mean_tau(),
                        "interval90_days": [float(np.expm1(v)) for v in post.interval(0.9)],
                    }
                )
        total_cases += len(test)
        r2_per_fold.append(r_squared_log(np.expm1(pred_tau), true_t))

        score_tau = test_data.tau if auc_time_source == "true" else pred_tau
        probs = posterior_mean_char_probs(structure, thin, test_data.design, score_tau)
        curves: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        fold_aucs = []
        for d, name in enumerate(characteristics.characteristics):
            observed = test_data.observed[:, d] > 0
            if observed.sum() < 2:
                per_char_auc[name].append(None)
                continue
            labels = test_data.values[observed, d] > 0.5
            auc = roc_auc(probs[observed, d], labels)
            per_char_auc[name].append(auc)
            if auc is not None:
                fold_aucs.append(auc)
                curves[name] = roc_curve(probs[observed, d], labels)
        macro_per_fold.append(float(np.mean(fold_aucs)))
        fold_curves.append(curves)

    macro_auc, macro_ci = _mean_ci(np.array(macro_per_fold))
    r2, r2_ci = _mean_ci(np.array(r2_per_fold))
    return EvalReport(
        variant=structure.mask.variant_name,
        fold_sizes=fold_plan.fold_sizes(),
        per_char_auc=per_char_auc,
        macro_auc_per_fold=macro_per_fold,
        macro_auc=macro_auc,
        macro_auc_ci=macro_ci,
        r2_per_fold=r2_per_fold,
        r2=r2,
        r2_ci=r2_ci,
        calibration_levels=levels,
        calibration_coverage=(inside / max(total_cases, 1)).tolist(),
        roc=mean_roc_curve(fold_curves),
        predictions=predictions,
    )
