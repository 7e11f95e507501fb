"""Tuning-parameter selection over a (lambda1, lambda2) grid.

K-fold cross-validation or a held-out validation set, scored by mean check
loss at the target quantile. Fits sweep the grid in decreasing-penalty order
so each cell warm-starts its neighbor; folds are independent tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._pool import run_tasks
from .admm import AdmmConfig, FitResult, admm_fit
from .core import PenaltyConfig, RegressionData, Shape, as_quantile, check_loss, linear_predictor
from .prox import ProxConvergenceError
from .unimodal import DescentConfig, fit_unimodal

ESTIMATORS = ("uni", "concave")


@dataclass(frozen=True)
class TuningGrid:
    """Sorted, deduplicated grids for the shape and smoothness weights."""

    lambda1_values: tuple
    lambda2_values: tuple

    def __post_init__(self):
        l1 = tuple(sorted({float(v) for v in self.lambda1_values}))
        l2 = tuple(sorted({float(v) for v in self.lambda2_values}))
        if not l1 or not l2:
            raise ValueError("both grids must be nonempty")
        if any(v < 0 for v in l1):
            raise ValueError("lambda1 values must be >= 0")
        if any(v <= 0 for v in l2):
            raise ValueError("lambda2 values must be > 0")
        object.__setattr__(self, "lambda1_values", l1)
        object.__setattr__(self, "lambda2_values", l2)


@dataclass
class SelectionResult:
    """Winning cell, per-cell validation scores, and the refit at the winner.

    `score_table[i, j]` is the score at (lambda1_values[i], lambda2_values[j]);
    `valid[i, j]` is False when no fold converged in that cell.
    """

    best: tuple
    score_table: np.ndarray
    refit: FitResult
    lambda1_values: tuple
    lambda2_values: tuple
    valid: np.ndarray
    estimator: str


def validation_score(fit: FitResult, holdout: RegressionData, tau) -> float:
    """Mean check loss of the fitted coefficients on held-out data."""
    tau = as_quantile(tau)
    if holdout.n == 0:
        raise ValueError("holdout set is empty")
    resid = holdout.response - linear_predictor(holdout, fit.beta, fit.gamma)
    return float(check_loss(resid, tau).mean())


def _fit_cell(data, tau, l1, l2, estimator, admm, descent, init):
    if estimator == "uni":
        cfg = descent or DescentConfig(admm=admm or AdmmConfig())
        return fit_unimodal(data, tau, l1, l2, config=cfg, init=init)
    pcfg = PenaltyConfig(l1, l2, Shape.CONCAVE if l1 > 0 else Shape.NONE)
    return admm_fit(data, tau, pcfg, config=admm or AdmmConfig(), init=init)


def _sweep_grid(train, score_data, tau, grid, estimator, admm, descent):
    """Fit every grid cell on `train` (warm-started in decreasing-penalty
    order) and score each on `score_data`. Returns (scores, converged, fits)
    keyed by (i, j) grid position."""
    L1, L2 = grid.lambda1_values, grid.lambda2_values
    scores = np.full((len(L1), len(L2)), np.nan)
    ok = np.zeros((len(L1), len(L2)), dtype=bool)
    fits = {}
    state = None
    for j in reversed(range(len(L2))):
        for i in reversed(range(len(L1))):
            try:
                fit = _fit_cell(train, tau, L1[i], L2[j], estimator, admm, descent, state)
            except ProxConvergenceError:
                state = None
                continue
            state = fit.state
            scores[i, j] = validation_score(fit, score_data, tau)
            ok[i, j] = fit.converged
            fits[(i, j)] = fit
    return scores, ok, fits


def _argmin_cell(mean_scores, valid, L1, L2):
    best = None
    best_score = np.inf
    for i in range(len(L1)):
        for j in range(len(L2)):
            if not valid[i, j]:
                continue
            s = mean_scores[i, j]
            # ties resolve toward stronger regularization: larger lambda1,
            # then larger lambda2 (cells are scanned in increasing order)
            if s < best_score or (s == best_score and best is not None):
                best = (i, j)
                best_score = s
    if best is None:
        raise RuntimeError("no grid cell produced a converged fit")
    return best


def select_cv(
    data: RegressionData,
    tau,
    grid: TuningGrid,
    folds: int = 5,
    estimator: str = "concave",
    seed: int = 0,
    admm: AdmmConfig = None,
    descent: DescentConfig = None,
    threads: int = 1,
) -> SelectionResult:
    """K-fold cross-validated selection; refits on the full data at the winner.

    The fold partition is a seeded permutation split into `folds` contiguous
    chunks; every index lands in exactly one fold.
    """
    tau = as_quantile(tau)
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    if data.n < folds:
        raise ValueError(f"cannot split n={data.n} observations into {folds} folds")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    chunks = np.array_split(perm, folds)

    def fold_task(f):
        hold = chunks[f]
        train_idx = np.concatenate([chunks[g] for g in range(folds) if g != f])
        train = data.subset(train_idx)
        hold_data = data.subset(hold)
        return _sweep_grid(train, hold_data, tau, grid, estimator, admm, descent)

    results = run_tasks(fold_task, range(folds), threads)
    L1, L2 = grid.lambda1_values, grid.lambda2_values
    score_sum = np.zeros((len(L1), len(L2)))
    any_ok = np.zeros((len(L1), len(L2)), dtype=bool)
    all_scored = np.ones((len(L1), len(L2)), dtype=bool)
    for scores, ok, _ in results:
        scored = np.isfinite(scores)
        all_scored &= scored
        score_sum += np.where(scored, scores, 0.0)
        any_ok |= ok
    mean_scores = np.where(all_scored, score_sum / folds, np.nan)
    valid = any_ok & all_scored
    i, j = _argmin_cell(mean_scores, valid, L1, L2)
    refit = _fit_cell(data, tau, L1[i], L2[j], estimator, admm, descent, None)
    return SelectionResult(
        best=(L1[i], L2[j]),
        score_table=mean_scores,
        refit=refit,
        lambda1_values=L1,
        lambda2_values=L2,
        valid=valid,
        estimator=estimator,
    )


def select_holdout(
    train: RegressionData,
    validation: RegressionData,
    tau,
    grid: TuningGrid,
    estimator: str = "concave",
    admm: AdmmConfig = None,
    descent: DescentConfig = None,
) -> SelectionResult:
    """Pick the cell with the best score on a separate validation set.

    One fit per cell on the training data only; the winning fit itself is
    returned as the refit, matching the simulation protocol.
    """
    tau = as_quantile(tau)
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    if validation.K != train.K or validation.T != train.T or validation.p != train.p:
        raise ValueError(
            f"validation dimensions (K={validation.K}, T={validation.T}, "
            f"p={validation.p}) do not match train "
            f"(K={train.K}, T={train.T}, p={train.p})"
        )
    scores, ok, fits = _sweep_grid(train, validation, tau, grid, estimator, admm, descent)
    L1, L2 = grid.lambda1_values, grid.lambda2_values
    valid = ok & np.isfinite(scores)
    i, j = _argmin_cell(scores, valid, L1, L2)
    return SelectionResult(
        best=(L1[i], L2[j]),
        score_table=scores,
        refit=fits[(i, j)],
        lambda1_values=L1,
        lambda2_values=L2,
        valid=valid,
        estimator=estimator,
    )
