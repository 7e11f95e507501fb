"""Wild-bootstrap inference: replicate fits, percentile bands, critical windows.

Residuals are multiplied by two-point weights calibrated to the quantile
level; each replicate refits the estimator, by default at the tuning pair
already selected on the original data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._pool import run_tasks
from .admm import AdmmConfig
from .core import RegressionData, as_quantile, linear_predictor
from .selection import SelectionResult, _fit_cell, select_cv, TuningGrid
from .unimodal import DescentConfig


@dataclass(frozen=True)
class BootstrapConfig:
    """Replicate count, band level, master seed, and the tuning-reuse switch."""

    replicates: int = 200
    level: float = 0.95
    seed: int = 0
    reuse_tuning: bool = True

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError(f"need at least 2 replicates, got {self.replicates}")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"level must lie in (0, 1), got {self.level}")


@dataclass
class BootstrapDistribution:
    """Stacked replicate estimates plus the base fit they perturb."""

    beta_reps: np.ndarray
    gamma_reps: np.ndarray
    base_fit: object
    converged: np.ndarray
    reliable: bool


@dataclass
class ConfidenceBand:
    """Elementwise percentile bands for the lag matrix and covariates."""

    beta_lower: np.ndarray
    beta_upper: np.ndarray
    gamma_lower: np.ndarray
    gamma_upper: np.ndarray
    level: float


@dataclass
class CriticalWindowReport:
    """Per-(exposure, time) zero-exclusion flags and shading intensities.

    intensity is the signed value of the interval endpoint nearer zero when
    the interval excludes zero, else 0.
    """

    excludes_zero: np.ndarray
    intensity: np.ndarray


def draw_weights(n: int, tau, rng) -> np.ndarray:
    """i.i.d. two-point wild weights: 2(1-tau) w.p. (1-tau), -2*tau w.p. tau."""
    tau = as_quantile(tau).tau
    u = rng.random(n)
    return np.where(u < 1.0 - tau, 2.0 * (1.0 - tau), -2.0 * tau)


def bootstrap(
    data: RegressionData,
    tau,
    base: SelectionResult,
    config: BootstrapConfig = None,
    admm: AdmmConfig = None,
    descent: DescentConfig = None,
    threads: int = 1,
    cv_folds: int = 5,
) -> BootstrapDistribution:
    """Fit B wild-bootstrap replicates of the selected estimator.

    Replicate seeds are spawned from the master seed by counter, so the
    result is independent of how replicates are scheduled. With
    `reuse_tuning` (the default) every replicate refits at `base.best`;
    otherwise each replicate reruns the full cross-validation.
    """
    tau = as_quantile(tau)
    config = config or BootstrapConfig()
    fit = base.refit
    if not fit.converged:
        raise ValueError("base fit did not converge; bootstrap would be meaningless")
    fitted = linear_predictor(data, fit.beta, fit.gamma)
    resid = data.response - fitted
    l1, l2 = base.best
    seeds = np.random.SeedSequence(config.seed).spawn(config.replicates)

    def replicate(b):
        rng = np.random.default_rng(seeds[b])
        w = draw_weights(data.n, tau, rng)
        boot = data.with_response(fitted + w * resid)
        if config.reuse_tuning:
            # replicates share the design, so the base state is a good start
            return _fit_cell(boot, tau, l1, l2, base.estimator, admm, descent, fit.state)
        grid = TuningGrid(base.lambda1_values, base.lambda2_values)
        sel = select_cv(
            boot, tau, grid, folds=cv_folds, estimator=base.estimator,
            seed=int(rng.integers(2**31)), admm=admm, descent=descent,
        )
        return sel.refit

    fits = run_tasks(replicate, range(config.replicates), threads)
    beta_reps = np.stack([f.beta for f in fits])
    gamma_reps = np.stack([f.gamma for f in fits])
    flags = np.array([f.converged for f in fits], dtype=bool)
    reliable = (~flags).mean() <= 0.20
    return BootstrapDistribution(beta_reps, gamma_reps, fit, flags, reliable)


def intervals(dist: BootstrapDistribution, level: float = None) -> ConfidenceBand:
    """Percentile bands: elementwise empirical quantiles of the replicates,
    with linear interpolation of order statistics."""
    level = float(level if level is not None else 0.95)
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    lo = (1.0 - level) / 2.0
    hi = 1.0 - lo
    bl = np.quantile(dist.beta_reps, lo, axis=0)
    bu = np.quantile(dist.beta_reps, hi, axis=0)
    if dist.gamma_reps.shape[1]:
        gl = np.quantile(dist.gamma_reps, lo, axis=0)
        gu = np.quantile(dist.gamma_reps, hi, axis=0)
    else:
        gl = gu = np.zeros(0)
    return ConfidenceBand(bl, bu, gl, gu, level)


def critical_windows(band: ConfidenceBand) -> CriticalWindowReport:
    """Flag (exposure, time) cells whose interval excludes zero.

    Zero on an endpoint counts as included, so boundary cells are not
    flagged (conservative windows).
    """
    lower, upper = band.beta_lower, band.beta_upper
    excludes = (lower > 0) | (upper < 0)
    intensity = np.where(lower > 0, lower, np.where(upper < 0, upper, 0.0))
    return CriticalWindowReport(excludes, intensity)
