"""Synthetic data generation for desk-scale validation.

Three coefficient models (rise/fall with random steps, its thresholded
sparse variant, and calibrated parabolic arcs), AR(1)-correlated exposures,
normal or t(4) errors, and signal-to-noise calibration.

SNR here means Var(signal) / (sigma^2 * Var(eps)) computed on the realized
sample, with Var(eps) = 1 for normal errors and 2 for t(4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import (
    CovariateCoefficients,
    LagCoefficients,
    ModeVector,
    RegressionData,
    as_quantile,
)

DEFAULT_MODES = (12, 15, 18, 17, 15, 13)
MODELS = ("A", "B", "C")
ERRORS = ("normal", "t4")
AR_COEF = 0.8


@dataclass(frozen=True)
class SimConfig:
    """Scenario description; `seed` drives the data draws while `coef_seed`
    freezes the coefficient construction across replications."""

    n: int = 500
    K: int = 6
    T: int = 30
    p: int = 5
    model: str = "A"
    error: str = "normal"
    snr: float = 0.5
    tau: float = 0.25
    seed: int = 0
    coef_seed: int = 0
    modes: tuple = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.error not in ERRORS:
            raise ValueError(f"error must be one of {ERRORS}, got {self.error!r}")
        if not self.snr > 0:
            raise ValueError(f"snr must be > 0, got {self.snr}")
        as_quantile(self.tau)
        if self.n < 1 or self.K < 1 or self.T < 3 or self.p < 0:
            raise ValueError("invalid dimensions")
        object.__setattr__(self, "modes", resolve_modes(self.modes, self.K, self.T))


def resolve_modes(modes, K: int, T: int) -> tuple:
    """Default mode positions: the reference six-exposure layout when it
    fits, else evenly spread around mid-window."""
    if modes is not None:
        modes = tuple(int(m) for m in modes)
        if len(modes) != K:
            raise ValueError(f"need {K} modes, got {len(modes)}")
        if any(not 2 <= m <= T - 1 for m in modes):
            raise ValueError("modes must lie in 2..T-1 for coefficient generation")
        return modes
    if K == len(DEFAULT_MODES) and T >= max(DEFAULT_MODES) + 1:
        return DEFAULT_MODES
    if K == 1:
        return (max(2, min(T - 1, round(T / 2))),)
    frac = 0.4 + 0.2 * np.arange(K) / (K - 1)
    return tuple(int(max(2, min(T - 1, round(f * T)))) for f in frac)


@dataclass(frozen=True)
class SimTruth:
    """Generating coefficients plus the noise scale and quantile shift.

    The tau-quantile of y differs from the mean by `quantile_shift`
    = sigma * F_eps^{-1}(tau); fitting with an intercept absorbs it, keeping
    beta_star and gamma_star the estimands.
    """

    beta_star: LagCoefficients
    gamma_star: CovariateCoefficients
    sigma: float
    modes: ModeVector
    quantile_shift: float


@dataclass(frozen=True)
class SimDataset:
    data: RegressionData
    truth: SimTruth


def _model_a_row(T, mode, rng):
    up = np.cumsum(rng.random(mode - 1))
    down = np.cumsum(rng.random(T - mode))
    # ratio first: up[-1]/up[-1] is exactly 1, pinning the peak at exactly 5
    rise = 10.0 * (up / up[-1])
    fall = 10.0 * (down / down[-1])
    return np.concatenate([[-5.0], -5.0 + rise, 5.0 - fall])


def _model_c_row(T, mode):
    x1 = np.linspace(-1.0, 0.0, mode)
    x2 = np.linspace(0.0, 1.0, T - mode + 1)
    seg1 = 5.0 - 10.0 * x1 * x1
    seg2 = 5.0 - 10.0 * x2 * x2
    return np.concatenate([seg1, seg2[1:]])


def gen_beta(model: str, K: int, T: int, modes, seed: int = 0) -> LagCoefficients:
    """Coefficient matrix for one scenario; bitwise-reproducible from `seed`.

    Model "A": per row, random positive steps rescaled so the rise from -5
    to the peak 5 and the fall back to -5 each total exactly 10.
    Model "B": model A hard-thresholded at absolute value 2.5.
    Model "C": two parabolic arcs calibrated to -5 at the endpoints and +5
    at the mode (each arc has constant-sign second differences).
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    modes = resolve_modes(tuple(modes), K, T)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(K):
        if model in ("A", "B"):
            row = _model_a_row(T, modes[k], rng)
        else:
            row = _model_c_row(T, modes[k])
        rows.append(row)
    beta = np.vstack(rows)
    if model == "B":
        beta = beta * (np.abs(beta) > 2.5)
    return LagCoefficients(beta)


def gen_exposures(n: int, K: int, T: int, seed=0) -> np.ndarray:
    """AR(1) exposure draws: each row of each matrix is N(0, Sigma) with
    Sigma[j, m] = 0.8^|j-m| (unit marginal variances)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, K, T))
    x = np.empty_like(z)
    x[..., 0] = z[..., 0]
    innov = np.sqrt(1.0 - AR_COEF * AR_COEF)
    for m in range(1, T):
        x[..., m] = AR_COEF * x[..., m - 1] + innov * z[..., m]
    return x


def gen_dataset(cfg: SimConfig) -> SimDataset:
    """Draw one dataset. Same seed with a different snr changes only sigma:
    coefficients, exposures, covariates and raw errors are identical."""
    coef_seq = np.random.SeedSequence(cfg.coef_seed).spawn(2)
    beta = gen_beta(cfg.model, cfg.K, cfg.T, cfg.modes, coef_seq[0])
    gamma = np.random.default_rng(coef_seq[1]).standard_normal(cfg.p)
    data_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    x = gen_exposures(cfg.n, cfg.K, cfg.T, data_seq[0])
    z = np.random.default_rng(data_seq[1]).standard_normal((cfg.n, cfg.p))
    err_rng = np.random.default_rng(data_seq[2])
    if cfg.error == "normal":
        eps = err_rng.standard_normal(cfg.n)
        var_eps = 1.0
        qshift = stats.norm.ppf(cfg.tau)
    else:
        eps = err_rng.standard_t(4, cfg.n)
        var_eps = 2.0  # Var of t(4) = 4 / (4 - 2)
        qshift = stats.t.ppf(cfg.tau, df=4)
    signal = x.reshape(cfg.n, -1) @ np.asarray(beta).reshape(-1) + z @ gamma
    sigma = float(np.sqrt(signal.var() / (cfg.snr * var_eps))) if np.isfinite(cfg.snr) else 0.0
    y = signal + sigma * eps
    truth = SimTruth(
        beta_star=beta,
        gamma_star=CovariateCoefficients(gamma),
        sigma=sigma,
        modes=ModeVector(np.asarray(cfg.modes), cfg.T),
        quantile_shift=sigma * float(qshift),
    )
    return SimDataset(RegressionData(x, z, y), truth)


def estimation_error(beta_hat, beta_star) -> float:
    """Frobenius norm of the coefficient-matrix estimation error."""
    a = np.asarray(beta_hat, dtype=float)
    b = np.asarray(beta_star, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
