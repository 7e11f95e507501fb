"""Blockwise coordinate descent for the nearly-unimodal estimator.

Alternates an exhaustive per-exposure mode search with ADMM fits at fixed
modes until the objective stalls or the modes stabilize. The joint problem is
nonconvex in (coefficients, modes); the output is a blockwise-stationary
point, not a certified global optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .admm import AdmmConfig, FitResult, admm_fit
from .core import PenaltyConfig, RegressionData, Shape, as_quantile, objective, unimodal_penalty


@dataclass(frozen=True)
class DescentConfig:
    """Outer-loop controls; `tie_seed` drives the mode tie-break draws."""

    max_outer_iter: int = 50
    objective_tol: float = 1e-6
    tie_seed: int = 0
    admm: AdmmConfig = field(default_factory=AdmmConfig)

    def __post_init__(self):
        if self.max_outer_iter < 1 or self.objective_tol <= 0:
            raise ValueError("max_outer_iter and objective_tol must be positive")


def best_mode(beta_k, rng=None) -> int:
    """1-based mode minimizing the rise-then-fall penalty, by full enumeration.

    Ties are broken by a uniform draw from the minimizer set using `rng`
    (an integer seed or Generator; defaults to seed 0).
    """
    beta_k = np.asarray(beta_k, dtype=float).ravel()
    T = len(beta_k)
    vals = np.array([unimodal_penalty(beta_k, m) for m in range(1, T + 1)])
    winners = np.flatnonzero(vals <= vals.min())
    if len(winners) == 1:
        return int(winners[0]) + 1
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(0 if rng is None else int(rng))
    return int(winners[rng.integers(len(winners))]) + 1


def _all_modes(beta, rng):
    return np.array([best_mode(beta[k], rng) for k in range(beta.shape[0])], dtype=int)


def fit_unimodal(
    data: RegressionData,
    tau,
    lambda1: float,
    lambda2: float,
    config: DescentConfig = None,
    init=None,
) -> FitResult:
    """Nearly-unimodal fit: alternate mode search and fixed-mode ADMM fits.

    Each ADMM call is warm-started from the previous outer iterate. Objective
    moves within objective_tol (either direction) count as a stall and stop
    the loop; a genuine increase triggers one retry with a doubled iteration
    cap and then returns the best iterate seen, flagged non-converged. The
    outer trace records accepted (non-increasing) objective values only.
    """
    tau = as_quantile(tau)
    config = config or DescentConfig()
    rng = np.random.default_rng(config.tie_seed)
    if lambda1 == 0:
        # Mode choice cannot affect the objective; one plain fit suffices.
        cfg0 = PenaltyConfig(0.0, lambda2, Shape.NONE)
        result = admm_fit(data, tau, cfg0, config=config.admm, init=init)
        modes = _all_modes(result.beta, rng) if data.K else np.zeros(0, dtype=int)
        result.modes = modes
        result.kind = "uni"
        result.outer_trace = np.array([result.objective])
        result.tie_seed = config.tie_seed
        return result

    cfg = PenaltyConfig(lambda1, lambda2, Shape.UNIMODAL)
    state = init
    if state is not None:
        beta = np.asarray(state.beta, dtype=float)
        gamma = np.asarray(state.gamma, dtype=float)
    else:
        beta = np.zeros((data.K, data.T))
        gamma = np.zeros(data.p)
    modes = _all_modes(beta, rng)
    obj_prev = objective(data, beta, gamma, cfg, tau, modes)
    best_result = None
    outer_objs = []
    converged = False
    for _ in range(config.max_outer_iter):
        result = admm_fit(data, tau, cfg, modes=modes, config=config.admm, init=state)
        rel_drop = (obj_prev - result.objective) / max(1.0, abs(obj_prev))
        if rel_drop < -config.objective_tol and not result.converged:
            retry_cfg = AdmmConfig(
                rho=config.admm.rho, eps1=config.admm.eps1, eps2=config.admm.eps2,
                max_iter=2 * config.admm.max_iter,
                prox_settings=config.admm.prox_settings, dual_dims=config.admm.dual_dims,
            )
            result = admm_fit(data, tau, cfg, modes=modes, config=retry_cfg, init=state)
            rel_drop = (obj_prev - result.objective) / max(1.0, abs(obj_prev))
        if rel_drop < -config.objective_tol:
            # genuine ascent even after the retry: stop at the best iterate,
            # flagged as unfinished
            break
        if result.objective <= obj_prev:
            outer_objs.append(result.objective)
            state = result.state
            if best_result is None or result.objective <= best_result.objective:
                best_result = result
            obj_prev = result.objective
        if rel_drop < config.objective_tol:
            # stalled within tolerance (tiny moves either way count as done)
            converged = True
            break
        prev_modes = modes
        modes = _all_modes(result.beta, rng)
        if np.array_equal(modes, prev_modes):
            converged = True
            break
    result = best_result if best_result is not None else result
    result.modes = np.asarray(result.modes, dtype=int)
    result.kind = "uni"
    result.converged = bool(result.converged and converged)
    result.outer_trace = np.asarray(outer_objs)
    result.tie_seed = config.tie_seed
    return result
