"""Core data types, discrete difference operators, loss and penalty evaluation.

Conventions: a lag-coefficient matrix has one row per exposure and one column
per time point; mode indices are 1-based (a mode of ``m`` means the rising
segment covers the first ``m`` time points). All types are immutable after
construction and every function here is pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Shape(str, enum.Enum):
    """Shape constraint attached to the nonsmooth penalty."""

    UNIMODAL = "unimodal"
    CONCAVE = "concave"
    NONE = "none"


def _readonly(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class QuantileLevel:
    """Quantile level, strictly inside (0, 1)."""

    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not 0.0 < tau < 1.0:
            raise ValueError(f"quantile level must lie strictly in (0, 1), got {tau}")
        object.__setattr__(self, "tau", tau)


def as_quantile(tau) -> QuantileLevel:
    """Coerce a float or QuantileLevel to a validated QuantileLevel."""
    if isinstance(tau, QuantileLevel):
        return tau
    return QuantileLevel(float(tau))


@dataclass(frozen=True)
class RegressionData:
    """Observed triplets: per-subject exposure matrices, covariates, response.

    Parameters
    ----------
    exposures : array, shape (n, K, T)
        Stacked exposure matrices, one K-by-T matrix per subject.
    covariates : array, shape (n, p)
        Time-invariant covariates (p may be 0).
    response : array, shape (n,)
    time_points : array, shape (T,), optional
        Informational measurement times; defaults to 1..T.
    """

    exposures: np.ndarray
    covariates: np.ndarray
    response: np.ndarray
    time_points: np.ndarray = None

    def __post_init__(self):
        x = np.asarray(self.exposures, dtype=float)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, 0, 0)
        if x.ndim != 3:
            raise ValueError("exposures must be a (n, K, T) array")
        n, K, T = x.shape
        y = np.asarray(self.response, dtype=float).ravel()
        z = np.asarray(self.covariates, dtype=float)
        if z.ndim == 1:
            z = z.reshape(len(y), -1) if z.size else z.reshape(len(y), 0)
        if z.ndim != 2:
            raise ValueError("covariates must be a (n, p) matrix")
        if n == 0:
            n = len(y)
            x = x.reshape(n, K, T)
        if len(y) != n or z.shape[0] != n:
            raise ValueError(
                f"inconsistent sample sizes: exposures n={n}, "
                f"covariates n={z.shape[0]}, response n={len(y)}"
            )
        if n < 1:
            raise ValueError("need at least one observation")
        # K = 0 (no exposures) is allowed so intercept-only fits are expressible.
        if K >= 1 and T < 3:
            raise ValueError(f"need at least 3 time points, got T={T}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValueError("data contain non-finite values")
        t = self.time_points
        t = np.arange(1.0, T + 1.0) if t is None else np.asarray(t, dtype=float).ravel()
        if len(t) != T:
            raise ValueError(f"time_points has length {len(t)}, expected T={T}")
        object.__setattr__(self, "exposures", _readonly(x))
        object.__setattr__(self, "covariates", _readonly(z))
        object.__setattr__(self, "response", _readonly(y))
        object.__setattr__(self, "time_points", _readonly(t))

    @property
    def n(self) -> int:
        return self.exposures.shape[0]

    @property
    def K(self) -> int:
        return self.exposures.shape[1]

    @property
    def T(self) -> int:
        return self.exposures.shape[2]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    def design(self) -> np.ndarray:
        """Exposures flattened row-major to the (n, K*T) regression design."""
        return self.exposures.reshape(self.n, self.K * self.T)

    def subset(self, idx) -> "RegressionData":
        idx = np.asarray(idx)
        return RegressionData(
            self.exposures[idx], self.covariates[idx], self.response[idx], self.time_points
        )

    def with_response(self, y) -> "RegressionData":
        return RegressionData(self.exposures, self.covariates, y, self.time_points)


def with_intercept(data: RegressionData) -> RegressionData:
    """Prepend an all-ones column to the covariates."""
    ones = np.ones((data.n, 1))
    return RegressionData(
        data.exposures, np.hstack([ones, data.covariates]), data.response, data.time_points
    )


@dataclass(frozen=True)
class LagCoefficients:
    """K-by-T matrix of time-varying exposure effects (one row per exposure)."""

    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.ndim != 2:
            raise ValueError("beta must be a K x T matrix")
        if not np.all(np.isfinite(b)):
            raise ValueError("beta contains non-finite entries")
        object.__setattr__(self, "beta", _readonly(b))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.beta, dtype=dtype)


@dataclass(frozen=True)
class CovariateCoefficients:
    """Coefficient vector for the time-invariant covariates."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float).ravel()
        if not np.all(np.isfinite(g)):
            raise ValueError("gamma contains non-finite entries")
        object.__setattr__(self, "gamma", _readonly(g))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.gamma, dtype=dtype)


@dataclass(frozen=True)
class ModeVector:
    """Per-exposure mode indices, 1-based, each in 1..T."""

    modes: np.ndarray
    length: int

    def __post_init__(self):
        m = np.asarray(self.modes, dtype=int).ravel()
        T = int(self.length)
        if np.any(m < 1) or np.any(m > T):
            raise ValueError(f"modes must lie in 1..{T}, got {m.tolist()}")
        object.__setattr__(self, "modes", _readonly(m, dtype=int))
        object.__setattr__(self, "length", T)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.modes, dtype=dtype)


def as_modes(modes, T: int) -> ModeVector:
    if isinstance(modes, ModeVector):
        return modes
    return ModeVector(np.asarray(modes, dtype=int), T)


@dataclass(frozen=True)
class DifferenceOperator:
    """Discrete difference operator of a given order on sequences of length T.

    Stored matrix-free; ``apply``/``apply_t`` act on the last axis.  The dense
    form is available through ``toarray`` for assertions and one-time matrix
    assembly, not for inner loops.
    """

    order: int
    length: int

    def __post_init__(self):
        v, T = int(self.order), int(self.length)
        if v < 1:
            raise ValueError("order must be a positive integer")
        if v >= T:
            raise ValueError(f"order must be < length, got order={v}, length={T}")
        object.__setattr__(self, "order", v)
        object.__setattr__(self, "length", T)

    @property
    def rows(self) -> int:
        return self.length - self.order

    def apply(self, vec) -> np.ndarray:
        """Compute D^(v) @ vec along the last axis."""
        w = np.asarray(vec, dtype=float)
        if w.shape[-1] != self.length:
            raise ValueError(
                f"vector length {w.shape[-1]} does not match operator length {self.length}"
            )
        for _ in range(self.order):
            w = w[..., :-1] - w[..., 1:]
        return w

    def apply_t(self, vec) -> np.ndarray:
        """Compute D^(v).T @ vec along the last axis."""
        w = np.asarray(vec, dtype=float)
        if w.shape[-1] != self.rows:
            raise ValueError(
                f"vector length {w.shape[-1]} does not match operator rows {self.rows}"
            )
        for _ in range(self.order):
            out = np.zeros(w.shape[:-1] + (w.shape[-1] + 1,))
            out[..., :-1] += w
            out[..., 1:] -= w
            w = out
        return w

    def toarray(self) -> np.ndarray:
        """Dense integer matrix form."""
        return self.apply(np.eye(self.length)).T.astype(int)


def make_diff_operator(order: int, length: int) -> DifferenceOperator:
    """Difference operator D^(order) acting on length-`length` sequences."""
    return DifferenceOperator(order, length)


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights and kind of the shape/smoothness penalties.

    lambda1 weights the shape penalty (>= 0), lambda2 the squared
    second-difference smoothness penalty (strictly positive).
    """

    lambda1: float
    lambda2: float
    shape: Shape = Shape.NONE

    def __post_init__(self):
        lam1, lam2 = float(self.lambda1), float(self.lambda2)
        shape = Shape(self.shape)
        if lam1 < 0:
            raise ValueError(f"lambda1 must be >= 0, got {lam1}")
        if lam2 <= 0:
            raise ValueError(f"lambda2 must be > 0, got {lam2}")
        if shape is Shape.NONE and lam1 > 0:
            raise ValueError("shape 'none' requires lambda1 == 0")
        object.__setattr__(self, "lambda1", lam1)
        object.__setattr__(self, "lambda2", lam2)
        object.__setattr__(self, "shape", shape)


def check_loss(a, tau) -> np.ndarray:
    """Check loss rho_tau(a) = a * (tau - 1{a < 0}); vectorized over `a`."""
    tau = as_quantile(tau).tau
    a = np.asarray(a, dtype=float)
    return a * (tau - (a < 0))


def pos_part(vec, D: DifferenceOperator) -> float:
    """Sum of positive parts of D @ vec."""
    return float(np.maximum(D.apply(vec), 0.0).sum())


def neg_part(vec, D: DifferenceOperator) -> float:
    """Sum of positive parts of -(D @ vec)."""
    return float(np.maximum(-D.apply(vec), 0.0).sum())


def _hinge_up(seg) -> float:
    # sum of max(seg_i - seg_{i+1}, 0); zero for segments of length <= 1
    if len(seg) <= 1:
        return 0.0
    d = seg[:-1] - seg[1:]
    return float(np.maximum(d, 0.0).sum())


def unimodal_penalty(beta_k, mode: int) -> float:
    """Violation of rise-then-fall shape about a 1-based mode index.

    Increases are penalized after the first `mode` entries, decreases before;
    the difference across the mode itself is unpenalized, so either `mode` or
    `mode + 1` may carry the peak at a zero of this penalty.
    """
    b = np.asarray(beta_k, dtype=float).ravel()
    T = len(b)
    mode = int(mode)
    if not 1 <= mode <= T:
        raise ValueError(f"mode must lie in 1..{T}, got {mode}")
    return _hinge_up(b[:mode]) + _hinge_up(b[mode:][::-1])


def concave_penalty(beta_k) -> float:
    """Sum of positive second differences; zero iff the sequence is concave."""
    b = np.asarray(beta_k, dtype=float).ravel()
    if len(b) < 3:
        raise ValueError(f"need at least 3 points for a second difference, got {len(b)}")
    d2 = b[:-2] - 2.0 * b[1:-1] + b[2:]
    return float(np.maximum(d2, 0.0).sum())


def shape_penalty(beta, cfg: PenaltyConfig, modes=None) -> float:
    """Total shape-penalty value over all exposure rows."""
    beta = np.asarray(beta, dtype=float)
    K, T = beta.shape
    if cfg.shape is Shape.NONE or K == 0:
        return 0.0
    if cfg.shape is Shape.UNIMODAL:
        if modes is None:
            raise ValueError("unimodal penalty requires a mode vector")
        m = as_modes(modes, T).modes
        return float(sum(unimodal_penalty(beta[k], m[k]) for k in range(K)))
    return float(sum(concave_penalty(beta[k]) for k in range(K)))


def smoothness_penalty(beta) -> float:
    """Sum over rows of squared second differences."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape[0] == 0:
        return 0.0
    d2 = beta[:, :-2] - 2.0 * beta[:, 1:-1] + beta[:, 2:]
    return float((d2 * d2).sum())


def linear_predictor(data: RegressionData, beta, gamma) -> np.ndarray:
    """Fitted values tr(X_i' beta) + Z_i' gamma for every observation."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float).ravel()
    out = np.zeros(data.n)
    if data.K:
        out += data.design() @ beta.reshape(-1)
    if data.p:
        out += data.covariates @ gamma
    return out


def objective(data: RegressionData, beta, gamma, cfg: PenaltyConfig, tau, modes=None) -> float:
    """Penalized check-loss objective for a candidate (beta, gamma)."""
    tau = as_quantile(tau)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.K, data.T) and data.K > 0:
        raise ValueError(
            f"beta has shape {beta.shape}, expected ({data.K}, {data.T})"
        )
    if cfg.shape is Shape.UNIMODAL and modes is None:
        raise ValueError("shape 'unimodal' requires modes")
    resid = data.response - linear_predictor(data, beta, gamma)
    loss = float(check_loss(resid, tau).mean())
    return (
        loss
        + cfg.lambda1 * shape_penalty(beta, cfg, modes)
        + cfg.lambda2 * smoothness_penalty(beta)
    )
