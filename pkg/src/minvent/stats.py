"""Agreement and comparison statistics for minute-ventilation estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInputError, InputError

ALPHA = 0.05
EXACT_MAX_N = 25
MIN_PAIRS = 6


def _pair(pred, ref):
    p = np.asarray(pred, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if p.size != r.size:
        raise InputError(f"length mismatch: {p.size} predictions vs {r.size} references")
    if p.size == 0:
        raise InputError("need at least one pair")
    return p, r


def rmse(pred, ref) -> float:
    p, r = _pair(pred, ref)
    return float(np.sqrt(np.mean((p - r) ** 2)))


def mae(pred, ref) -> float:
    p, r = _pair(pred, ref)
    return float(np.mean(np.abs(p - r)))


def pearson_r(pred, ref) -> float:
    p, r = _pair(pred, ref)
    dp, dr = p - p.mean(), r - r.mean()
    sp, sr = np.sqrt(np.sum(dp * dp)), np.sqrt(np.sum(dr * dr))
    if sp == 0 or sr == 0:
        raise DegenerateInputError("Pearson correlation undefined: zero variance")
    return float(np.clip(np.sum(dp * dr) / (sp * sr), -1.0, 1.0))


def bland_altman(pred, ref, coverage: float = 1.96):
    """``(mean_diff, lower_loa, upper_loa)`` of ``pred - ref`` (sample sd)."""
    p, r = _pair(pred, ref)
    if p.size < 2:
        raise InputError("Bland-Altman limits need at least two pairs")
    d = p - r
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    return mean, mean - coverage * sd, mean + coverage * sd


# -- Wilcoxon signed-rank --------------------------------------------------------

@dataclass(frozen=True)
class SignificanceResult:
    statistic: float  # W+ (sum of ranks of positive differences)
    p_value: float
    annotation: str  # "NS" or "significant"
    alpha: float = ALPHA
    n: int = 0  # pairs left after dropping zero differences
    method: str = "exact"


def signed_rank_null(doubled_ranks) -> np.ndarray:
    """Counts of every attainable doubled W+ under random sign flips.

    Index ``k`` holds how many of the ``2**n`` sign patterns give a doubled
    positive-rank sum of ``k``; doubling keeps midranks integral.
    """
    r = np.asarray(doubled_ranks, dtype=np.int64)
    counts = np.zeros(int(r.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    top = 0
    for ri in r:
        counts[ri:top + ri + 1] += counts[:top + 1].copy()
        top += ri
    return counts


def _signed_ranks(d: np.ndarray):
    ranks = rankdata(np.abs(d))
    return ranks, float(ranks[d > 0].sum())


def wilcoxon_exact_p(d) -> tuple:
    """Two-sided exact p-value for nonzero differences ``d``; returns ``(W+, p)``."""
    d = np.asarray(d, dtype=np.float64)
    ranks, w_plus = _signed_ranks(d)
    doubled = np.rint(2 * ranks).astype(np.int64)
    counts = signed_rank_null(doubled)
    total = counts.sum()
    w2 = int(round(2 * w_plus))
    lower = counts[:w2 + 1].sum() / total
    upper = counts[w2:].sum() / total
    return w_plus, float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_normal_p(d) -> tuple:
    """Two-sided normal approximation with tie and continuity corrections."""
    d = np.asarray(d, dtype=np.float64)
    n = d.size
    ranks, w_plus = _signed_ranks(d)
    mean = n * (n + 1) / 4.0
    _, ties = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(ties ** 3 - ties) / 48.0
    if var <= 0:
        return w_plus, 1.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return w_plus, float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def paired_significance(errors_a, errors_b, alpha: float = ALPHA) -> SignificanceResult:
    """Wilcoxon signed-rank test on paired errors.

    Zero differences are dropped; the exact null is used for up to 25
    remaining pairs, the normal approximation above that.
    """
    a, b = _pair(errors_a, errors_b)
    if a.size < MIN_PAIRS:
        raise InputError(f"need at least {MIN_PAIRS} pairs, got {a.size}")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    if d.size <= EXACT_MAX_N:
        w, p = wilcoxon_exact_p(d)
        method = "exact"
    else:
        w, p = wilcoxon_normal_p(d)
        method = "normal"
    return SignificanceResult(w, p, "NS" if p >= alpha else "significant", alpha, int(d.size), method)


# -- stratification and spread -------------------------------------------------------

def stratified_error(pred, ref, levels) -> dict:
    """RMSE within each artifact level present; absent levels are omitted."""
    p, r = _pair(pred, ref)
    lv = np.asarray(levels).ravel()
    if lv.size != p.size:
        raise InputError("one artifact level per window is required")
    return {int(k): rmse(p[lv == k], r[lv == k]) for k in np.unique(lv)}


def subject_rmse_range(pred, ref, subject_ids) -> dict:
    """Spread of per-subject RMSE: min, max, quartiles and IQR."""
    p, r = _pair(pred, ref)
    sid = np.asarray(subject_ids).ravel()
    per = np.array([rmse(p[sid == s], r[sid == s]) for s in np.unique(sid)])
    q1, q3 = np.percentile(per, [25, 75])
    return {"min": float(per.min()), "max": float(per.max()), "q1": float(q1), "q3": float(q3),
            "iqr": float(q3 - q1), "n_subjects": int(per.size)}


# -- reports ----------------------------------------------------------------------------

@dataclass
class EvalReport:
    model_name: str
    rmse: float
    mae: float
    pearson_r: float
    bland_altman: tuple
    per_level_rmse: dict
    n: int
    subject_range: dict = field(default_factory=dict)
    window_keys: tuple = ()
    params: int | None = None
    connectivity: float | None = None
    split: str = "test"
    per_level: dict = field(default_factory=dict)  # level -> metrics dict
    abs_errors: np.ndarray | None = None


def _level_metrics(p, r):
    out = {"n": int(p.size), "rmse": rmse(p, r), "mae": mae(p, r)}
    try:
        out["pearson_r"] = pearson_r(p, r)
    except DegenerateInputError:
        out["pearson_r"] = float("nan")
    if p.size >= 2:
        out["ba_mean"], out["ba_lower"], out["ba_upper"] = bland_altman(p, r)
    else:
        out["ba_mean"] = out["ba_lower"] = out["ba_upper"] = float("nan")
    return out


def evaluate(model_name: str, pred, ref, levels, subject_ids=None, window_keys=(),
             params: int | None = None, connectivity: float | None = None,
             split: str = "test") -> EvalReport:
    p, r = _pair(pred, ref)
    lv = np.asarray(levels).ravel()
    try:
        r_val = pearson_r(p, r)
    except DegenerateInputError:
        r_val = float("nan")
    per_level = {int(k): _level_metrics(p[lv == k], r[lv == k]) for k in np.unique(lv)}
    return EvalReport(
        model_name=model_name, rmse=rmse(p, r), mae=mae(p, r), pearson_r=r_val,
        bland_altman=bland_altman(p, r) if p.size >= 2 else (0.0, 0.0, 0.0),
        per_level_rmse=stratified_error(p, r, lv), n=int(p.size),
        subject_range=subject_rmse_range(p, r, subject_ids) if subject_ids is not None else {},
        window_keys=tuple(window_keys), params=params, connectivity=connectivity, split=split,
        per_level=per_level, abs_errors=np.abs(p - r))


@dataclass
class ComparisonSummary:
    model_a: str
    model_b: str
    delta_rmse: float
    delta_rmse_rel: float
    delta_r: float
    delta_params: float | None
    delta_params_rel: float | None
    delta_connectivity: float | None
    significance: SignificanceResult | None
    rows: list  # one dict per (model, artifact level)


METRIC_COLUMNS = ("model", "split", "artifact_level", "n", "rmse", "mae", "pearson_r",
                  "ba_mean", "ba_lower", "ba_upper")


def _delta(b, a):
    if a is None or b is None:
        return None
    return b - a


def compare_models(report_a: EvalReport, report_b: EvalReport,
                   significance: SignificanceResult | None = None) -> ComparisonSummary:
    """Deltas are ``b - a``; both reports must cover the same windows."""
    if report_a.n != report_b.n or report_a.window_keys != report_b.window_keys:
        raise InputError("reports were computed on different test sets")
    if significance is None and report_a.abs_errors is not None and report_b.abs_errors is not None:
        try:
            significance = paired_significance(report_a.abs_errors, report_b.abs_errors)
        except DegenerateInputError:
            significance = SignificanceResult(0.0, 1.0, "NS", ALPHA, 0, "degenerate")
    rows = []
    for rep in (report_a, report_b):
        for level, m in sorted(rep.per_level.items()):
            rows.append({"model": rep.model_name, "split": rep.split, "artifact_level": level,
                         **{k: m[k] for k in METRIC_COLUMNS[3:]}})
    d_params = _delta(report_b.params, report_a.params)
    return ComparisonSummary(
        model_a=report_a.model_name, model_b=report_b.model_name,
        delta_rmse=report_b.rmse - report_a.rmse,
        delta_rmse_rel=(report_b.rmse - report_a.rmse) / report_a.rmse if report_a.rmse else 0.0,
        delta_r=report_b.pearson_r - report_a.pearson_r,
        delta_params=d_params,
        delta_params_rel=None if d_params is None or not report_a.params else d_params / report_a.params,
        delta_connectivity=_delta(report_b.connectivity, report_a.connectivity),
        significance=significance, rows=rows)


def metrics_csv(rows) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for row in rows:
        vals = []
        for c in METRIC_COLUMNS:
            v = row[c]
            vals.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def report_rows(report: EvalReport) -> list:
    return [{"model": report.model_name, "split": report.split, "artifact_level": level,
             **{k: m[k] for k in METRIC_COLUMNS[3:]}} for level, m in sorted(report.per_level.items())]
