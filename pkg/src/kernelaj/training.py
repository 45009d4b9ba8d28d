"""Time discretization, kernel-weighted leave-one-out hazards, the training
losses, and the minibatch gradient-descent loop for the embedding network.

Loss layout
-----------
For a minibatch with embeddings e_1..e_n, kernel weights K_ij, time-bin
indices kappa_i in {0..L} (0 = censored before the first bin) and event
indicators delta_i in {0..m}:

    psi[i, d, l] = sum_{j != i} 1{delta_j = d, kappa_j = l} K_ij
                   / sum_{j != i} 1{kappa_j >= l} K_ij

The negative log likelihood averages, over the batch,

    - [ 1{delta_i = d} log psi[i, d, kappa_i] - sum_{l <= kappa_i} psi[i, d, l] ]

summed over event types d. The ranking loss compares, for every ordered pair
with delta_i = d and kappa_i < kappa_j, the within-batch CIF estimates at
subject i's bin via exp((F_d(kappa_i | x_j) - F_d(kappa_i | x_i)) / sigma),
normalized by n^2. The total loss is alpha * NLL + (1 - alpha) * ranking.

Leave-one-out sums run over the current minibatch only, so batch composition
affects the loss; shuffling is seeded and the loop is deterministic. All
gradients are exact hand-derived reverse-mode; finite differences are used
only as a test oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import Cohort, EventTimeGrid
from .embedding import (
    EmbeddingConfig,
    MlpParams,
    backward,
    flatten_grads,
    flatten_params,
    forward_cached,
    init_mlp,
    kernel_matrix,
    pairwise_sq_dists,
    unflatten_params,
)
from .errors import NoEvents, ShapeMismatch

PSI_CLAMP = 1e-12
MAX_TIME_STEPS = 512

_CRITERIA = ("objective", "ibs", "ctd")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for embedding training and early stopping."""

    learning_rate: float = 0.01
    batch_size: int = 1024
    max_epochs: int = 1000
    patience: int = 10
    alpha: float = 1.0
    sigma: float = 1.0
    momentum: float = 0.0
    num_time_steps: int = 0
    early_stop_criterion: str = "objective"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_epochs < 1 or self.patience < 1:
            raise ValueError("max_epochs and patience must be >= 1")
        if self.num_time_steps < 0:
            raise ValueError("num_time_steps must be >= 0")
        if self.early_stop_criterion not in _CRITERIA:
            raise ValueError(f"early_stop_criterion must be one of {_CRITERIA}")


@dataclass(frozen=True)
class DiscreteTimeMap:
    """Mapping from raw observed times to representative time bins.

    ``grid`` holds the representative times r_1 < ... < r_k. An uncensored
    time maps to the largest representative <= it (clamped up to the first
    bin when it falls below r_1, so every event occupies a bin); a censored
    time maps to the number of representatives <= it, which re-applies the
    censoring preprocessing on the coarse grid and is idempotent.
    """

    grid: EventTimeGrid
    source_grid_size: int

    def bin_index(self, times, censored) -> np.ndarray:
        """1-based bin index kappa in {0..k}; 0 only for censored records."""
        times = np.asarray(times, dtype=np.float64)
        censored = np.asarray(censored, dtype=bool)
        kappa = np.searchsorted(self.grid.times, times, side="right").astype(np.int64)
        kappa[~censored] = np.maximum(kappa[~censored], 1)
        return kappa

    def apply(self, cohort: Cohort):
        """Snap a cohort's times onto the representative grid.

        Returns the preprocessed cohort (censored times become grid values or
        0) and the kappa array.
        """
        kappa = self.bin_index(cohort.time, cohort.event == 0)
        padded = self.grid.with_leading_zero()
        return cohort.replace_times(padded[kappa]), kappa


def discretize_times(grid: EventTimeGrid, k: int) -> DiscreteTimeMap:
    """Coarsen an event grid to at most k bins by evenly spaced quantiles.

    k = 0 keeps all observed event times, still capped at 512 bins by
    quantile coarsening. Representative times are actual grid values
    (lower-quantile rule), deduplicated, so coincident event times can yield
    fewer bins than requested.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    L = len(grid)
    k_eff = L if k == 0 else min(k, MAX_TIME_STEPS)
    k_eff = min(k_eff, MAX_TIME_STEPS)
    if k_eff >= L:
        return DiscreteTimeMap(grid, L)
    levels = np.arange(1, k_eff + 1, dtype=np.float64) / k_eff
    reps = np.quantile(grid.times, levels, method="lower")
    reps = np.unique(reps)
    return DiscreteTimeMap(EventTimeGrid(reps), L)


def _label_matrices(kappa, delta, m, L):
    """Event one-hots (m, n, L) and the at-risk mask (n, L).

    at_risk[i, l] = 1{kappa_i >= l + 1}, which is also the indicator of bins
    whose hazards enter subject i's likelihood term.
    """
    kappa = np.asarray(kappa, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    n = kappa.size
    evt = np.zeros((m, n, L), dtype=np.float64)
    unc = delta != 0
    if unc.any():
        idx = np.flatnonzero(unc)
        evt[delta[idx] - 1, idx, kappa[idx] - 1] = 1.0
    at_risk = (np.arange(1, L + 1)[None, :] <= kappa[:, None]).astype(np.float64)
    return evt, at_risk


def _psi_from_weights(weights, evt, at_risk):
    """Hazard ratios from a (q, n_ref) weight matrix against reference labels.

    Returns psi (m, q, L), the numerators and denominators, and the mask of
    bins with positive denominator (zero-denominator entries yield psi = 0).
    """
    m = evt.shape[0]
    den = weights @ at_risk
    pos = den > 0
    inv_den = np.where(pos, 1.0 / np.where(pos, den, 1.0), 0.0)
    num = np.stack([weights @ evt[d] for d in range(m)])
    psi = num * inv_den[None, :, :]
    return psi, num, den, pos, inv_den


def _cif_from_psi(psi):
    """Within-batch survival and CIF values at the grid bins.

    S[i, l] = prod_{a <= l} (1 - sum_d psi[d, i, a]); F[d, i, l] equals the
    cumulative sum of psi * S at the previous bin.
    """
    h_all = psi.sum(axis=0)
    u = 1.0 - h_all
    S = np.cumprod(u, axis=1)
    S_prev = np.concatenate((np.ones((S.shape[0], 1)), S[:, :-1]), axis=1)
    F = np.cumsum(psi * S_prev[None, :, :], axis=2)
    return F, S, S_prev, u


def loo_hazards(embeddings, kappa, delta, num_event_types, num_bins):
    """Leave-one-out kernel hazard tensor for a minibatch.

    Returns psi with shape (batch, m, L) and a boolean mask of (batch, L)
    entries whose at-risk denominator was zero (those psi entries are 0 and
    are clamped downstream before logs).
    """
    E = np.asarray(embeddings, dtype=np.float64)
    if E.shape[0] < 2:
        raise ShapeMismatch("leave-one-out hazards need a batch of size >= 2")
    K = kernel_matrix(E)
    W = K.copy()
    np.fill_diagonal(W, 0.0)
    evt, at_risk = _label_matrices(kappa, delta, num_event_types, num_bins)
    psi, _, _, pos, _ = _psi_from_weights(W, evt, at_risk)
    return np.transpose(psi, (1, 0, 2)), ~pos


def loss_nll(psi, kappa, delta):
    """Negative mean leave-one-out log likelihood of a batch.

    ``psi`` has shape (batch, m, L); hazards are clamped to [1e-12, 1]
    before the log so zero-hazard event bins stay finite.
    """
    psi_t = np.transpose(np.asarray(psi, dtype=np.float64), (1, 0, 2))
    kappa = np.asarray(kappa, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    m, n, L = psi_t.shape
    _, at_risk = _label_matrices(kappa, delta, m, L)
    log_total = 0.0
    unc = np.flatnonzero(delta != 0)
    if unc.size:
        own = psi_t[delta[unc] - 1, unc, kappa[unc] - 1]
        log_total = np.log(np.clip(own, PSI_CLAMP, 1.0)).sum()
    hazard_total = (psi_t * at_risk[None, :, :]).sum()
    return float(-(log_total - hazard_total) / n)


def cif_pair_matrix(cif_curves, kappa):
    """Pairwise CIF lookups C[d, i, j] = F_d(kappa_i | x_j).

    ``cif_curves`` has shape (m, n, L) of within-batch CIF values at the grid
    bins; rows with kappa_i = 0 evaluate to 0 (before the first bin).
    """
    F = np.asarray(cif_curves, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.int64)
    m, n, L = F.shape
    kid = np.clip(kappa - 1, 0, L - 1)
    out = np.empty((m, n, n), dtype=np.float64)
    for d in range(m):
        cols = F[d][:, kid]          # (j, i): curve of j at subject i's bin
        out[d] = cols.T
    out[:, kappa == 0, :] = 0.0
    return out


def loss_ranking(cif_pairs, kappa, delta, sigma):
    """Pairwise exponential ranking penalty, normalized by batch size squared.

    ``cif_pairs[d, i, j]`` is the predicted CIF of event d+1 for subject j's
    features at subject i's (discretized) observed time. Pairs count when
    subject i has event d+1 strictly before subject j's time bin.
    """
    C = np.asarray(cif_pairs, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    m, n, _ = C.shape
    total = 0.0
    earlier = kappa[:, None] < kappa[None, :]
    for d in range(m):
        comparable = earlier & (delta == d + 1)[:, None]
        if not comparable.any():
            continue
        own = np.diagonal(C[d])
        diffs = (C[d] - own[:, None]) / sigma
        total += np.exp(diffs[comparable]).sum()
    return float(total / (n * n))


def total_loss(nll_value, ranking_value, alpha):
    """Convex combination alpha * NLL + (1 - alpha) * ranking."""
    return alpha * nll_value + (1.0 - alpha) * ranking_value


def _reverse_cumsum(x, axis=1):
    return np.flip(np.cumsum(np.flip(x, axis=axis), axis=axis), axis=axis)


def _cumprod_backward(u, P, dP):
    """Exact gradient of a row-wise cumulative product.

    Given P = cumprod(u, axis=1) and upstream dLoss/dP, returns dLoss/du,
    handling rows that contain zero factors (at most the first zero position
    receives a nonzero gradient beyond the standard formula).
    """
    rc = _reverse_cumsum(dP * P, axis=1)
    safe_u = np.where(u != 0.0, u, 1.0)
    du = rc / safe_u
    zero_rows = np.flatnonzero((u == 0.0).any(axis=1))
    for r in zero_rows:
        z = int(np.argmax(u[r] == 0.0))
        du[r, z + 1:] = 0.0
        prefix = P[r, z - 1] if z > 0 else 1.0
        tail = np.concatenate(([1.0], np.cumprod(u[r, z + 1:])))
        du[r, z] = float((dP[r, z:] * prefix * tail).sum())
    return du


def ranking_value_and_dpsi(psi, kappa, delta, sigma, scale):
    """Ranking loss of a batch plus its gradient w.r.t. the hazard tensor.

    ``psi`` has shape (m, n, L). Returns (value, dpsi) where dpsi already
    carries the factor ``scale`` (the loss value does not). The backward pass
    runs through the CIF cumulative sums and the survival cumulative product.
    """
    m, n, L = psi.shape
    kappa = np.asarray(kappa, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    F, S, S_prev, u = _cif_from_psi(psi)
    kid = np.clip(kappa - 1, 0, L - 1)
    onehot = np.zeros((n, L), dtype=np.float64)
    rows = np.flatnonzero(kappa >= 1)
    onehot[rows, kid[rows]] = 1.0
    earlier = kappa[:, None] < kappa[None, :]
    dF = np.zeros_like(F)
    rank = 0.0
    any_pairs = False
    for d in range(m):
        comparable = (earlier & (delta == d + 1)[:, None]).astype(np.float64)
        if not comparable.any():
            continue
        any_pairs = True
        Fat = F[d][:, kid].T                     # (i, j): F_d(kappa_i | x_j)
        own_f = np.diagonal(Fat)
        expd = np.exp((Fat - own_f[:, None]) / sigma) * comparable
        rank += expd.sum() / (n * n)
        Gp = (scale / (n * n * sigma)) * expd
        dF[d] += Gp.T @ onehot
        dF[d] -= onehot * Gp.sum(axis=1)[:, None]
    if not any_pairs:
        return 0.0, np.zeros_like(psi)
    dA = _reverse_cumsum(dF, axis=2)
    dpsi = dA * S_prev[None, :, :]
    dS_prev = (dA * psi).sum(axis=0)
    dS = np.concatenate((dS_prev[:, 1:], np.zeros((n, 1))), axis=1)
    du = _cumprod_backward(u, S, dS)
    dpsi += (-du)[None, :, :]
    return float(rank), dpsi


def batch_loss_from_params(params, X, kappa, delta, m, L, alpha, sigma):
    """Forward-only total loss of a minibatch (used by finite differences)."""
    E, _ = forward_cached(params, X)
    K = kernel_matrix(E)
    W = K.copy()
    np.fill_diagonal(W, 0.0)
    evt, at_risk = _label_matrices(kappa, delta, m, L)
    psi, _, _, _, _ = _psi_from_weights(W, evt, at_risk)
    nll = loss_nll(np.transpose(psi, (1, 0, 2)), kappa, delta)
    rank = 0.0
    if alpha < 1.0:
        F, _, _, _ = _cif_from_psi(psi)
        rank = loss_ranking(cif_pair_matrix(F, kappa), kappa, delta, sigma)
    return total_loss(nll, rank, alpha)


def total_loss_and_grad(params, X, kappa, delta, m, L, alpha, sigma):
    """Total loss of a minibatch and exact gradients for every parameter.

    Returns (loss, weight_grads, bias_grads). The backward pass runs through
    the leave-one-out hazard ratios, the survival cumulative product, the
    pairwise ranking comparisons, the kernel matrix, and the network.
    """
    X = np.asarray(X, dtype=np.float64)
    kappa = np.asarray(kappa, dtype=np.int64)
    delta = np.asarray(delta, dtype=np.int64)
    n = X.shape[0]
    if n < 2:
        raise ShapeMismatch("batch must contain at least 2 subjects")

    E, cache = forward_cached(params, X)
    K = kernel_matrix(E)
    W = K.copy()
    np.fill_diagonal(W, 0.0)
    evt, at_risk = _label_matrices(kappa, delta, m, L)
    psi, num, den, pos, inv_den = _psi_from_weights(W, evt, at_risk)

    unc = np.flatnonzero(delta != 0)
    own = psi[delta[unc] - 1, unc, kappa[unc] - 1] if unc.size else np.empty(0)
    log_total = np.log(np.clip(own, PSI_CLAMP, 1.0)).sum() if unc.size else 0.0
    hazard_total = (psi * at_risk[None, :, :]).sum()
    nll = float(-(log_total - hazard_total) / n)

    # dNLL / dpsi
    dpsi = np.tile((at_risk / n)[None, :, :], (m, 1, 1))
    if unc.size:
        live = own > PSI_CLAMP
        idx = unc[live]
        dpsi[delta[idx] - 1, idx, kappa[idx] - 1] -= 1.0 / (n * own[live])
    dpsi *= alpha

    rank = 0.0
    if alpha < 1.0:
        rank, dpsi_rank = ranking_value_and_dpsi(psi, kappa, delta, sigma,
                                                 scale=1.0 - alpha)
        dpsi += dpsi_rank

    # psi = num / den  (zero where den == 0, locally constant there)
    dnum = dpsi * inv_den[None, :, :]
    dden = -(dnum * psi).sum(axis=0)
    dW = dden @ at_risk.T
    for d in range(m):
        dW += dnum[d] @ evt[d].T
    np.fill_diagonal(dW, 0.0)

    M = (dW + dW.T) * K
    np.fill_diagonal(M, 0.0)
    dE = -2.0 * (M.sum(axis=1)[:, None] * E - M @ E)
    dw, db = backward(params, cache, dE)
    loss = total_loss(nll, rank, alpha)
    return loss, dw, db


def kernel_hazard_curves(E_query, E_ref, kappa_ref, delta_ref, m, L):
    """Kernel-weighted hazards and CIF curves of query points vs a reference
    set (no leave-one-out; queries are assumed disjoint from the reference).

    Returns (psi (m, q, L), F (m, q, L), S (q, L)).
    """
    Kq = kernel_matrix(np.asarray(E_query, np.float64), np.asarray(E_ref, np.float64))
    evt, at_risk = _label_matrices(kappa_ref, delta_ref, m, L)
    psi, _, _, _, _ = _psi_from_weights(Kq, evt, at_risk)
    F, S, _, _ = _cif_from_psi(psi)
    return psi, F, S


@dataclass
class TrainingLog:
    """Per-epoch record of the loss and the early-stopping criterion."""

    criterion: str
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_value: float = np.nan

    def add(self, epoch, train_loss, valid_criterion, is_best):
        self.rows.append((epoch, float(train_loss), float(valid_criterion), bool(is_best)))

    def criterion_history(self):
        return [r[2] for r in self.rows]

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,valid_criterion,is_best"]
        for epoch, tl, vc, best in self.rows:
            lines.append(f"{epoch},{tl!r},{vc!r},{int(best)}")
        return "\n".join(lines) + "\n"


def _criterion_is_improvement(criterion, value, best):
    if np.isnan(best):
        return True
    if criterion == "ctd":
        return value > best
    return value < best


def _evaluate_criterion(criterion, params, train, valid, dtm, tcfg, eval_ctx):
    """Validation criterion with hazards against the full training set."""
    from . import metrics as _metrics
    from .embedding import embed_batch

    m, L = train.m, len(dtm.grid)
    E_train = embed_batch(params, train.features)
    E_valid = embed_batch(params, valid.features)
    _, kappa_tr = dtm.apply(train)
    _, kappa_va = dtm.apply(valid)
    psi, F, _ = kernel_hazard_curves(E_valid, E_train, kappa_tr, train.event, m, L)

    if criterion == "objective":
        nll = loss_nll(np.transpose(psi, (1, 0, 2)), kappa_va, valid.event)
        rank = 0.0
        if tcfg.alpha < 1.0:
            rank = loss_ranking(cif_pair_matrix(F, kappa_va), kappa_va, valid.event,
                                tcfg.sigma)
        return total_loss(nll, rank, tcfg.alpha)

    eval_grid, censor = eval_ctx
    values = []
    for d in range(1, m + 1):
        pred = _metrics.interpolate_curves(F[d - 1], dtm.grid.times, eval_grid.times)
        if criterion == "ibs":
            bs = [
                _metrics.brier_score(pred[:, j], valid, d, t, censor).value
                for j, t in enumerate(eval_grid.times)
            ]
            values.append(_metrics.integrated_brier(np.array(bs), eval_grid))
        else:
            values.append(
                _metrics.concordance_td_from_curves(F[d - 1], dtm.grid.times, valid, d)
            )
    return float(np.mean(values))


def train_embedding(train: Cohort, valid: Cohort, ecfg: EmbeddingConfig,
                    tcfg: TrainConfig, dtm: DiscreteTimeMap):
    """Minibatch gradient descent with patience-based early stopping.

    Both cohorts must already be preprocessed on the shared time map. After
    every epoch the configured validation criterion is evaluated against the
    full training set embeddings; the best checkpoint is kept and training
    stops when no improvement is seen for ``patience`` epochs.

    Returns (best_params, TrainingLog).
    """
    if (train.event != 0).sum() == 0:
        raise NoEvents("training cohort has no uncensored records")
    m, L = train.m, len(dtm.grid)
    _, kappa = dtm.apply(train)

    eval_ctx = None
    if tcfg.early_stop_criterion in ("ibs", "ctd"):
        from . import metrics as _metrics

        pooled = np.concatenate(
            (train.time[train.event != 0], valid.time[valid.event != 0]))
        eval_grid = _metrics.build_eval_grid(pooled)
        censor = _metrics.censoring_survival(valid)
        eval_ctx = (eval_grid, censor)

    params = init_mlp(ecfg)
    flat = flatten_params(params)
    velocity = np.zeros_like(flat)
    rng = np.random.default_rng(tcfg.seed)
    log = TrainingLog(criterion=tcfg.early_stop_criterion)
    best_params = params.copy()
    best_value = np.nan
    stall = 0

    for epoch in range(1, tcfg.max_epochs + 1):
        perm = rng.permutation(train.n)
        epoch_loss = 0.0
        seen = 0
        for start in range(0, train.n, tcfg.batch_size):
            batch = perm[start:start + tcfg.batch_size]
            if batch.size < 2:
                continue
            loss, dw, db = total_loss_and_grad(
                params, train.features[batch], kappa[batch], train.event[batch],
                m, L, tcfg.alpha, tcfg.sigma)
            grad = flatten_grads(dw, db)
            velocity = tcfg.momentum * velocity - tcfg.learning_rate * grad
            flat = flat + velocity
            params = unflatten_params(params, flat)
            epoch_loss += loss * batch.size
            seen += batch.size
        epoch_loss = epoch_loss / max(seen, 1)

        value = _evaluate_criterion(
            tcfg.early_stop_criterion, params, train, valid, dtm, tcfg, eval_ctx)
        improved = _criterion_is_improvement(tcfg.early_stop_criterion, value, best_value)
        if improved:
            best_value = value
            best_params = params.copy()
            log.best_epoch = epoch
            log.best_value = float(value)
            stall = 0
        else:
            stall += 1
        log.add(epoch, epoch_loss, value, improved)
        if stall >= tcfg.patience:
            break

    return best_params, log
