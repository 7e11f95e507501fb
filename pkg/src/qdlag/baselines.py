"""Elastic-net and ridge penalized quantile regression baselines.

Same prox-linear ADMM skeleton as the shape-penalized estimators: the ridge
part is folded into the quadratic block as identity-scaled augmentation rows
and the l1 part is handled by elementwise soft-thresholding; the covariate
coefficients stay unpenalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admm import (
    AdmmConfig,
    AugmentedProblem,
    FitResult,
    _admm_loop,
)
from .core import RegressionData, as_quantile, check_loss


@dataclass(frozen=True)
class EnConfig:
    """Elastic-net weight and mixing: penalty
    lam * sum_k ((1 - alpha)/2 ||beta_k||^2 + alpha ||beta_k||_1)."""

    lam: float
    alpha: float = 0.5
    admm: AdmmConfig = field(default_factory=AdmmConfig)

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def en_objective(data: RegressionData, beta, gamma, tau, lam: float, alpha: float) -> float:
    """Elastic-net penalized check-loss objective."""
    from .core import linear_predictor

    beta = np.asarray(beta, dtype=float)
    resid = data.response - linear_predictor(data, beta, gamma)
    loss = float(check_loss(resid, tau).mean())
    ridge = 0.5 * (1.0 - alpha) * float((beta * beta).sum())
    l1 = alpha * float(np.abs(beta).sum())
    return loss + lam * (ridge + l1)


def fit_en(data: RegressionData, tau, cfg: EnConfig, init=None) -> FitResult:
    """Elastic-net penalized quantile regression fit."""
    tau = as_quantile(tau)
    ridge_weight = 0.5 * cfg.lam * (1.0 - cfg.alpha)
    problem = AugmentedProblem(data, ridge_weight, cfg.admm.rho, "identity")
    l1_weight = cfg.lam * cfg.alpha
    y = data.response

    def obj(B, gamma, fitted):
        loss = float(check_loss(y - fitted, tau).mean())
        return loss + cfg.lam * (
            0.5 * (1.0 - cfg.alpha) * float(B @ B)
            + cfg.alpha * float(np.abs(B).sum())
        )

    state, trace, converged = _admm_loop(
        problem, tau, l1_weight, "l1", None, cfg.admm, init, obj
    )
    return FitResult(
        beta=state.beta,
        gamma=state.gamma,
        modes=None,
        objective=en_objective(data, state.beta, state.gamma, tau, cfg.lam, cfg.alpha),
        converged=converged,
        iterations=state.iter,
        trace=trace,
        state=state,
        kind="en",
    )


def fit_ridge(data: RegressionData, tau, lam: float, admm: AdmmConfig = None) -> FitResult:
    """Ridge penalized quantile regression: the alpha = 0 elastic net."""
    result = fit_en(data, tau, EnConfig(lam, 0.0, admm or AdmmConfig()))
    result.kind = "ridge"
    return result
