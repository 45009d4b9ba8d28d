"""Competing-risks evaluation: censoring-weighted Brier score, integrated
Brier score, time-dependent concordance, and the shared evaluation grid.

The Brier score at horizon t for event delta averages three squared-error
terms over all n subjects: subjects with the event of interest by t
contribute (1 - F)^2, subjects with a competing event by t contribute F^2,
and subjects still under observation past t contribute F^2. The first two
terms are weighted by 1 / S_censor(Y_i^-) (left limit, so the last censored
subject keeps a positive weight) and the third by 1 / S_censor(t); subjects
whose required weight evaluates to zero are excluded and counted.

The concordance index follows the at-the-event-time convention: a pair is
comparable when subject i has the event of interest strictly before subject
j's observed time, and credited when F(Y_i | X_i) > F(Y_i | X_j), with ties
in predicted values worth half. Other event types act as censoring.
"""

from dataclasses import dataclass

import numpy as np

from .core import Cohort, StepCurve
from .errors import DegenerateGrid, NoComparablePairs, NoEvents, ShapeMismatch


@dataclass(frozen=True)
class EvalGrid:
    """Evaluation times: evenly spaced quantiles of observed event times,
    truncated at a percentile to avoid the unstable tail."""

    times: np.ndarray
    quantile_count: int
    truncate_pct: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size == 0:
            raise ShapeMismatch("evaluation grid must be nonempty")
        if times.size > 1 and (np.diff(times) <= 0).any():
            raise ValueError("evaluation times must be strictly increasing")
        object.__setattr__(self, "times", times)

    def __len__(self):
        return self.times.size


def build_eval_grid(event_times, k: int = 100, truncate_pct: float = 90) -> EvalGrid:
    """k evenly spaced quantiles of the uncensored times, from the minimum up
    to the truncation percentile, deduplicated."""
    times = np.asarray(event_times, dtype=np.float64)
    if times.size == 0:
        raise NoEvents("no uncensored times to build an evaluation grid from")
    if k < 1:
        raise ValueError("k must be >= 1")
    top = truncate_pct / 100.0
    levels = np.array([top]) if k == 1 else np.linspace(0.0, top, k)
    grid = np.unique(np.quantile(times, levels))
    return EvalGrid(grid, quantile_count=k, truncate_pct=float(truncate_pct))


def censoring_survival(cohort: Cohort) -> StepCurve:
    """Kaplan-Meier estimate of the censoring distribution.

    The event indicator is flipped: censoring counts as the event and any
    critical event acts as censoring. Computed on raw observed times.
    """
    censored = cohort.event == 0
    if not censored.any():
        return StepCurve(np.empty(0), np.empty(0), initial_value=1.0)
    knots, d = np.unique(cohort.time[censored], return_counts=True)
    sorted_times = np.sort(cohort.time)
    n = cohort.n - np.searchsorted(sorted_times, knots, side="left")
    surv = np.cumprod(1.0 - d.astype(np.float64) / n)
    return StepCurve(knots, surv, initial_value=1.0)


@dataclass(frozen=True)
class BrierResult:
    value: float
    n_excluded: int


def brier_score(cif_values, cohort: Cohort, delta: int, t: float,
                censor_curve: StepCurve) -> BrierResult:
    """Censoring-weighted Brier score for event ``delta`` at horizon ``t``.

    ``cif_values[i]`` is the predicted F_delta(t | X_i). Subjects whose
    required censoring-survival weight is zero are dropped from the sum (but
    not from the denominator n) and reported in ``n_excluded``.
    """
    F = np.asarray(cif_values, dtype=np.float64)
    n = cohort.n
    if F.shape != (n,):
        raise ShapeMismatch(f"expected {n} predictions, got shape {F.shape}")
    y, ev = cohort.time, cohort.event

    had_event = (ev == delta) & (y <= t)
    had_competing = (ev != delta) & (ev != 0) & (y <= t)
    at_risk = y > t

    w_past = censor_curve.eval_left(y)
    w_now = censor_curve(t)

    total = 0.0
    excluded = 0
    for mask, sq, w in (
        (had_event, (1.0 - F) ** 2, w_past),
        (had_competing, F ** 2, w_past),
        (at_risk, F ** 2, np.full(n, w_now)),
    ):
        w = np.broadcast_to(np.asarray(w, dtype=np.float64), (n,))
        usable = mask & (w > 0)
        excluded += int((mask & (w <= 0)).sum())
        total += (sq[usable] / w[usable]).sum()
    return BrierResult(value=float(total / n), n_excluded=excluded)


def integrated_brier(bs_values, grid: EvalGrid) -> float:
    """Trapezoidal integral of a Brier-score curve, normalized by the span."""
    bs = np.asarray(bs_values, dtype=np.float64)
    if len(grid) < 2:
        raise DegenerateGrid("need at least 2 evaluation times to integrate")
    if bs.shape != grid.times.shape:
        raise ShapeMismatch("Brier values must align with the evaluation grid")
    span = grid.times[-1] - grid.times[0]
    return float(np.trapezoid(bs, grid.times) / span)


def concordance_td(risk_matrix, cohort: Cohort, delta: int) -> float:
    """Concordant fraction over comparable pairs.

    ``risk_matrix[i, j]`` holds F_delta(Y_i | X_j). Pairs (i, j) with
    ``event[i] == delta`` and ``Y_i < Y_j`` are comparable; concordance means
    the subject with the earlier event carries the higher predicted risk at
    that time. Ties in predictions count one half.
    """
    R = np.asarray(risk_matrix, dtype=np.float64)
    n = cohort.n
    if R.shape != (n, n):
        raise ShapeMismatch(f"risk matrix must be ({n}, {n}), got {R.shape}")
    concordant = 0
    ties = 0
    comparable = 0
    for i in np.flatnonzero(cohort.event == delta):
        later = cohort.time > cohort.time[i]
        if not later.any():
            continue
        r_i = R[i, i]
        r_j = R[i, later]
        concordant += int((r_i > r_j).sum())
        ties += int((r_i == r_j).sum())
        comparable += int(later.sum())
    if comparable == 0:
        raise NoComparablePairs(f"no comparable pairs for event {delta}")
    return (concordant + 0.5 * ties) / comparable


def interpolate_curves(curve_values, knot_times, eval_times) -> np.ndarray:
    """Linear interpolation of per-subject CIF values onto new times.

    ``curve_values`` is (n, L) at the model's grid times; curves are anchored
    at (0, 0) and held flat beyond the last knot. Preserves monotonicity and
    [0, 1] bounds.
    """
    V = np.atleast_2d(np.asarray(curve_values, dtype=np.float64))
    knots = np.concatenate(([0.0], np.asarray(knot_times, dtype=np.float64)))
    eval_times = np.asarray(eval_times, dtype=np.float64)
    out = np.empty((V.shape[0], eval_times.size), dtype=np.float64)
    for i in range(V.shape[0]):
        out[i] = np.interp(eval_times, knots, np.concatenate(([0.0], V[i])))
    return out


def risk_matrix_from_curves(curve_values, knot_times, eval_at_times) -> np.ndarray:
    """R[i, j] = linear-interpolated curve of subject j at subject i's time."""
    cols = interpolate_curves(curve_values, knot_times, eval_at_times)
    return cols.T


def concordance_td_from_curves(curve_values, knot_times, cohort: Cohort,
                               delta: int) -> float:
    """Concordance where risks come from linearly interpolated CIF curves."""
    R = risk_matrix_from_curves(curve_values, knot_times, cohort.time)
    return concordance_td(R, cohort, delta)


def evaluate_cif_predictions(curves_per_event, knot_times, cohort: Cohort,
                             eval_grid: EvalGrid, censor_curve=None) -> dict:
    """Per-event concordance and integrated Brier score for a prediction set.

    ``curves_per_event`` is (m, n, L): CIF values at the model grid for each
    subject. Returns {"ctd": [...], "ibs": [...]} indexed by event type - 1.
    """
    curves = np.asarray(curves_per_event, dtype=np.float64)
    m = curves.shape[0]
    if censor_curve is None:
        censor_curve = censoring_survival(cohort)
    out = {"ctd": [], "ibs": []}
    for d in range(1, m + 1):
        out["ctd"].append(concordance_td_from_curves(curves[d - 1], knot_times, cohort, d))
        pred = interpolate_curves(curves[d - 1], knot_times, eval_grid.times)
        bs = [
            brier_score(pred[:, j], cohort, d, t, censor_curve).value
            for j, t in enumerate(eval_grid.times)
        ]
        out["ibs"].append(integrated_brier(np.array(bs), eval_grid))
    return out
