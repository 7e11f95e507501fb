"""Prox-linear ADMM for penalized quantile regression with shape penalties.

Splits the fitting problem into residual, coefficient and dual blocks; the
coefficient block is linearized so it reduces to one proximal-operator call
per exposure row. The same skeleton serves the shape-penalized estimators and
the elastic-net baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve, qr

from .core import (
    RegressionData,
    Shape,
    as_modes,
    as_quantile,
    check_loss,
    make_diff_operator,
    objective,
    smoothness_penalty,
)
from .prox import (
    DEFAULT_PROX_SETTINGS,
    ProxSettings,
    _hinge_prox_rows,
    prox_check,
    prox_unimodal,
)


class RankDeficientError(ValueError):
    """Covariate matrix does not have full column rank."""

    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            f"covariate matrix is rank deficient; offending columns {self.columns}"
        )


@dataclass(frozen=True)
class AdmmConfig:
    """Step size, stopping thresholds and iteration cap for the outer ADMM.

    `dual_dims` selects the dimension factor in the dual stopping threshold:
    "lag" uses sqrt(T + p) (lag count plus covariates), "full" uses
    sqrt(K*T + p) (every coefficient).
    """

    rho: float = 1.0
    eps1: float = 1e-4
    eps2: float = 1e-4
    max_iter: int = 20_000
    prox_settings: ProxSettings = field(default_factory=ProxSettings)
    dual_dims: str = "lag"

    def __post_init__(self):
        if self.rho <= 0 or self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("rho, eps1 and eps2 must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.dual_dims not in ("lag", "full"):
            raise ValueError("dual_dims must be 'lag' or 'full'")


DEFAULT_ADMM_CONFIG = AdmmConfig()


@dataclass
class AdmmState:
    """Primal blocks (beta, gamma, r), dual u, and iteration diagnostics."""

    beta: np.ndarray
    gamma: np.ndarray
    r: np.ndarray
    u: np.ndarray
    iter: int = 0
    primal_resid: float = np.inf
    dual_resid: float = np.inf
    prox_input: np.ndarray = None


@dataclass
class Trace:
    """Per-iteration objective, residuals, and majorization merit pair."""

    objective: np.ndarray
    primal: np.ndarray
    dual: np.ndarray
    merit_before: np.ndarray
    merit_after: np.ndarray


@dataclass
class FitResult:
    """Fitted coefficients plus convergence diagnostics.

    `state` carries the final ADMM variables and can seed a warm start;
    `outer_trace` is populated by the blockwise-descent driver only.
    """

    beta: np.ndarray
    gamma: np.ndarray
    modes: np.ndarray
    objective: float
    converged: bool
    iterations: int
    trace: Trace
    state: AdmmState
    kind: str = "none"
    outer_trace: np.ndarray = None
    tie_seed: int = None


class AugmentedProblem:
    """Precomputed pieces of the penalty-augmented least-squares system.

    Stacks the flattened exposure design over scaled penalty rows, projects
    out the covariate block, and bounds the spectral norm of the projected
    design (via power iteration, inflated by 1%) for the majorized update.
    """

    def __init__(self, data: RegressionData, weight: float, rho: float, operator: str = "d2"):
        if rho <= 0:
            raise ValueError(f"rho must be > 0, got {rho}")
        if weight < 0:
            raise ValueError(f"penalty weight must be >= 0, got {weight}")
        n, K, T, p = data.n, data.K, data.T, data.p
        self.data = data
        self.rho = float(rho)
        self.weight = float(weight)
        self.operator = operator
        x = data.design()
        c = np.sqrt(2.0 * weight / rho)
        if K == 0:
            pen = np.zeros((0, 0))
        elif operator == "d2":
            if weight <= 0:
                raise ValueError("second-difference augmentation requires weight > 0")
            d2 = make_diff_operator(2, T).toarray().astype(float)
            pen = c * block_diag(*([d2] * K))
        elif operator == "identity":
            pen = c * np.eye(K * T) if weight > 0 else np.zeros((0, K * T))
        else:
            raise ValueError(f"unknown operator {operator!r}")
        self.x = x
        self.x_tilde = np.vstack([x, pen]) if K else np.zeros((n, 0))
        self.pen_rows = self.x_tilde.shape[0] - n
        z = data.covariates
        if p:
            _, R, piv = qr(z, mode="economic", pivoting=True)
            diag = np.abs(np.diagonal(R))
            tol = max(n, p) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
            bad = piv[diag <= tol] if diag.size else piv
            if len(bad):
                raise RankDeficientError(sorted(int(j) for j in bad))
            self._zgram = cho_factor(z.T @ z)
        else:
            self._zgram = None
        self.x_proj = self.x_tilde.copy()
        if p and K:
            self.x_proj[:n] -= z @ self.solve_gram(z.T @ x)
        self.eta = _power_eta(self.x_proj)
        if self.eta <= 0:
            self.eta = 1.0

    def solve_gram(self, rhs):
        """Solve (Z'Z) a = rhs."""
        if self._zgram is None:
            return np.zeros_like(rhs)
        return cho_solve(self._zgram, rhs)

    def complement(self, v):
        """Apply I - P to a padded vector, P the projector onto the padded Z."""
        v = np.asarray(v, dtype=float)
        if self._zgram is None:
            return v.copy()
        n = self.data.n
        out = v.copy()
        z = self.data.covariates
        out[:n] -= z @ self.solve_gram(z.T @ v[:n])
        return out

    @property
    def z_tilde(self):
        return np.vstack([self.data.covariates, np.zeros((self.pen_rows, self.data.p))])

    @property
    def y_tilde(self):
        return np.concatenate([self.data.response, np.zeros(self.pen_rows)])


def _power_eta(xp, tol: float = 1e-6, max_iter: int = 20_000) -> float:
    # Largest eigenvalue of xp'xp by power iteration (relative tol), then
    # inflated by 1.01 so the majorization bound survives estimation error.
    m = xp.shape[1]
    if m == 0 or xp.shape[0] == 0:
        return 0.0
    v = 1.0 + 1e-4 * np.arange(m)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        gv = xp.T @ (xp @ v)
        lam_new = float(v @ gv)
        nv = np.linalg.norm(gv)
        if nv == 0.0:
            return 0.0
        v = gv / nv
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return 1.01 * lam


def build_augmented(data: RegressionData, lambda2: float, rho: float) -> AugmentedProblem:
    """Augmented system for the second-difference smoothness penalty."""
    if lambda2 <= 0:
        raise ValueError(f"lambda2 must be > 0, got {lambda2}")
    return AugmentedProblem(data, lambda2, rho, "d2")


def _g_value(B, kind, modes, K, T):
    # Unweighted nonsmooth penalty evaluated at a flattened coefficient vector.
    if kind == "none" or K == 0:
        return 0.0
    beta = B.reshape(K, T)
    if kind == "l1":
        return float(np.abs(beta).sum())
    if kind == "concave":
        d2 = beta[:, :-2] - 2.0 * beta[:, 1:-1] + beta[:, 2:]
        return float(np.maximum(d2, 0.0).sum())
    from .core import unimodal_penalty

    return float(sum(unimodal_penalty(beta[k], modes[k]) for k in range(K)))


def _prox_dispatch(s, lam_prox, kind, modes, K, T, settings, state):
    # Returns (B_new, new_prox_state); `state` is the warm split for the
    # concave inner ADMM and is ignored by the closed-form proxes.
    if kind == "none" or lam_prox == 0.0:
        return s.copy(), state
    if kind == "l1":
        return np.sign(s) * np.maximum(np.abs(s) - lam_prox, 0.0), state
    S = s.reshape(K, T)
    if kind == "concave":
        out, state = _hinge_prox_rows(S, lam_prox, 2, settings, state)
        return out.reshape(-1), state
    rows = [prox_unimodal(S[k], modes[k], lam_prox) for k in range(K)]
    return np.concatenate(rows), state


def _beta_step(B, xpb, tbar_head, problem, g_weight, kind, modes, settings, prox_state):
    """One majorized coefficient update; returns new B, prox input and merits."""
    n = problem.data.n
    eta = problem.eta
    resid_head = tbar_head - xpb[:n]
    resid_tail = -xpb[n:]
    K, T = problem.data.K, problem.data.T
    merit_quad = resid_head @ resid_head + resid_tail @ resid_tail
    merit_before = g_weight * _g_value(B, kind, modes, K, T) + 0.5 * problem.rho * merit_quad
    grad = problem.x_proj[:n].T @ resid_head + problem.x_proj[n:].T @ resid_tail
    s = B + grad / eta
    lam_prox = g_weight / (problem.rho * eta)
    B_new, prox_state = _prox_dispatch(s, lam_prox, kind, modes, K, T, settings, prox_state)
    xpb_new = problem.x_proj @ B_new
    rh = tbar_head - xpb_new[:n]
    rt = -xpb_new[n:]
    merit_after = (
        g_weight * _g_value(B_new, kind, modes, K, T)
        + 0.5 * problem.rho * (rh @ rh + rt @ rt)
    )
    return B_new, xpb_new, s, merit_before, merit_after, prox_state


def _tbar_head(problem, r, u):
    # First n coordinates of (I - P)(y~ - r~ + u~/rho); the padded tail is 0.
    w_head = problem.data.response - r + u / problem.rho
    if problem._zgram is None:
        return w_head
    z = problem.data.covariates
    return w_head - z @ problem.solve_gram(z.T @ w_head)


def update_beta(
    state: AdmmState,
    problem: AugmentedProblem,
    lambda1: float,
    shape,
    modes=None,
    settings: ProxSettings = DEFAULT_PROX_SETTINGS,
) -> np.ndarray:
    """Coefficient-block update: prox of the scaled shape penalty at the
    gradient-stepped point."""
    shape = Shape(shape)
    kind = {Shape.NONE: "none", Shape.UNIMODAL: "unimodal", Shape.CONCAVE: "concave"}[shape]
    K, T = problem.data.K, problem.data.T
    if K == 0:
        return state.beta.copy()
    m = as_modes(modes, T).modes if kind == "unimodal" else None
    B = np.asarray(state.beta, dtype=float).reshape(-1)
    xpb = problem.x_proj @ B
    head = _tbar_head(problem, state.r, state.u)
    B_new, _, _, _, _, _ = _beta_step(
        B, xpb, head, problem, lambda1, kind, m, settings, None
    )
    return B_new.reshape(K, T)


def update_gamma(state: AdmmState, problem: AugmentedProblem) -> np.ndarray:
    """Exact covariate-block minimizer given the current coefficients."""
    p = problem.data.p
    if p == 0:
        return np.zeros(0)
    data = problem.data
    xb = problem.x @ np.asarray(state.beta, dtype=float).reshape(-1)
    rhs = data.response - state.r + state.u / problem.rho - xb
    return problem.solve_gram(data.covariates.T @ rhs)


def update_r(state: AdmmState, data: RegressionData, tau, rho: float, fitted=None) -> np.ndarray:
    """Residual-block update: elementwise check-loss prox with weight n*rho."""
    from .core import linear_predictor

    if fitted is None:
        fitted = linear_predictor(data, state.beta, state.gamma)
    xi = data.response - fitted + state.u / rho
    return prox_check(xi, tau, data.n * rho)


def update_u(state: AdmmState, data: RegressionData, rho: float, fitted=None) -> np.ndarray:
    """Dual ascent step on the residual constraint."""
    from .core import linear_predictor

    if fitted is None:
        fitted = linear_predictor(data, state.beta, state.gamma)
    return state.u - rho * (fitted + state.r - data.response)


def _w_t_norm(data, v):
    # || W' v || with W = (X, Z) stacked horizontally.
    total = 0.0
    if data.K:
        xv = data.design().T @ v
        total += float(xv @ xv)
    if data.p:
        zv = data.covariates.T @ v
        total += float(zv @ zv)
    return np.sqrt(total)


def _scaled(eps, value):
    # eps * value with the inf * 0 corner pinned to 0
    return eps * value if value > 0.0 else 0.0


def check_convergence(state: AdmmState, prev_r, data: RegressionData, config: AdmmConfig):
    """Relative primal/dual stopping rule; returns (converged, primal, dual)."""
    from .core import linear_predictor

    fitted = linear_predictor(data, state.beta, state.gamma)
    resid = fitted + state.r - data.response
    primal = float(np.linalg.norm(resid))
    dual = config.rho * _w_t_norm(data, state.r - np.asarray(prev_r, dtype=float))
    dim = data.T + data.p if config.dual_dims == "lag" else data.K * data.T + data.p
    thr_p = np.sqrt(data.n) * config.eps1 + _scaled(config.eps2, max(
        float(np.linalg.norm(fitted)),
        float(np.linalg.norm(state.r)),
        float(np.linalg.norm(data.response)),
    ))
    thr_d = np.sqrt(dim) * config.eps1 + _scaled(
        config.eps2, config.rho * _w_t_norm(data, state.u)
    )
    return (primal <= thr_p and dual <= thr_d), primal, dual


def _admm_loop(problem, tau, g_weight, kind, modes, config, init, objective_fn):
    """Shared iteration engine; `kind` selects the coefficient prox."""
    data = problem.data
    n, K, T, p = data.n, data.K, data.T, data.p
    KT = K * T
    rho = problem.rho
    x, z, y = problem.x, data.covariates, data.response
    if init is None:
        B = np.zeros(KT)
        gamma = np.zeros(p)
        r = y.copy()
        u = np.zeros(n)
    else:
        B = np.asarray(init.beta, dtype=float).reshape(-1).copy()
        gamma = np.asarray(init.gamma, dtype=float).copy()
        r = np.asarray(init.r, dtype=float).copy()
        u = np.asarray(init.u, dtype=float).copy()
        if B.size != KT or gamma.size != p or r.size != n or u.size != n:
            raise ValueError("warm start dimensions do not match the data")
    xpb = problem.x_proj @ B
    prox_state = None
    s = B
    sqrt_n = np.sqrt(n)
    dim = T + p if config.dual_dims == "lag" else KT + p
    sqrt_dim = np.sqrt(dim)
    norm_y = float(np.linalg.norm(y))
    tr_obj, tr_prim, tr_dual, tr_mb, tr_ma = [], [], [], [], []
    converged = False
    it = 0
    primal = dual = np.inf
    for it in range(1, config.max_iter + 1):
        w_head = y - r + u / rho
        if problem._zgram is None:
            head = w_head
        else:
            head = w_head - z @ problem.solve_gram(z.T @ w_head)
        if KT:
            B, xpb, s, mb, ma, prox_state = _beta_step(
                B, xpb, head, problem, g_weight, kind, modes,
                config.prox_settings, prox_state,
            )
            xb = x @ B
        else:
            mb = ma = 0.0
            xb = np.zeros(n)
        if p:
            gamma = problem.solve_gram(z.T @ (w_head - xb))
        fitted = xb + (z @ gamma if p else 0.0)
        r_new = prox_check(y - fitted + u / rho, tau, n * rho)
        resid = fitted + r_new - y
        u = u - rho * resid
        primal = float(np.linalg.norm(resid))
        dual = rho * _w_t_norm(data, r_new - r)
        r = r_new
        obj = objective_fn(B, gamma, fitted)
        tr_obj.append(obj)
        tr_prim.append(primal)
        tr_dual.append(dual)
        tr_mb.append(mb)
        tr_ma.append(ma)
        thr_p = sqrt_n * config.eps1 + _scaled(config.eps2, max(
            float(np.linalg.norm(fitted)), float(np.linalg.norm(r)), norm_y
        ))
        thr_d = sqrt_dim * config.eps1 + _scaled(config.eps2, rho * _w_t_norm(data, u))
        if primal <= thr_p and dual <= thr_d:
            converged = True
            break
    state = AdmmState(
        beta=B.reshape(K, T), gamma=gamma, r=r, u=u,
        iter=it, primal_resid=primal, dual_resid=dual, prox_input=s,
    )
    trace = Trace(
        objective=np.asarray(tr_obj),
        primal=np.asarray(tr_prim),
        dual=np.asarray(tr_dual),
        merit_before=np.asarray(tr_mb),
        merit_after=np.asarray(tr_ma),
    )
    return state, trace, converged


def admm_fit(
    data: RegressionData,
    tau,
    cfg,
    modes=None,
    config: AdmmConfig = None,
    init: AdmmState = None,
) -> FitResult:
    """Solve the shape-penalized quantile regression at fixed penalties.

    For the unimodal shape the mode vector is held fixed; use the
    blockwise-descent driver to optimize modes as well. Hitting the
    iteration cap flags the result as non-converged rather than raising.
    """
    tau = as_quantile(tau)
    config = config or DEFAULT_ADMM_CONFIG
    if cfg.shape is Shape.UNIMODAL:
        if modes is None:
            raise ValueError("shape 'unimodal' requires modes")
        modes_arr = as_modes(modes, data.T).modes
    else:
        modes_arr = None
    kind = {Shape.NONE: "none", Shape.UNIMODAL: "unimodal", Shape.CONCAVE: "concave"}[cfg.shape]
    problem = AugmentedProblem(data, cfg.lambda2, config.rho, "d2")
    y = data.response
    lam1, lam2 = cfg.lambda1, cfg.lambda2
    K, T = data.K, data.T

    def obj(B, gamma, fitted):
        loss = float(check_loss(y - fitted, tau).mean())
        if K == 0:
            return loss
        beta = B.reshape(K, T)
        return (
            loss
            + lam1 * _g_value(B, kind, modes_arr, K, T)
            + lam2 * smoothness_penalty(beta)
        )

    state, trace, converged = _admm_loop(
        problem, tau, lam1, kind, modes_arr, config, init, obj
    )
    final_obj = objective(data, state.beta, state.gamma, cfg, tau, modes_arr)
    return FitResult(
        beta=state.beta,
        gamma=state.gamma,
        modes=None if modes_arr is None else modes_arr.copy(),
        objective=final_obj,
        converged=converged,
        iterations=state.iter,
        trace=trace,
        state=state,
        kind="concave" if cfg.shape is Shape.CONCAVE else
             ("uni" if cfg.shape is Shape.UNIMODAL else "none"),
    )
