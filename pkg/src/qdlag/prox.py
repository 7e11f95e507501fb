"""Exact proximal operators used inside the ADMM solver.

Provides the check-loss prox, nearly-isotonic regression at a fixed penalty,
the nearly-unimodal prox (two isotonic-type fits joined at the mode), and the
nearly-concave prox (an inner ADMM on the second-difference hinge penalty).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import as_quantile, make_diff_operator

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional speedup
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@dataclass(frozen=True)
class ProxSettings:
    """Controls for the iterative nearly-concave sub-ADMM.

    inner_tol is relative to the input scale (1 + ||s||_2).
    """

    inner_max_iter: int = 10_000
    inner_tol: float = 1e-8
    inner_step: float = 1.0

    def __post_init__(self):
        if self.inner_max_iter <= 0 or self.inner_tol <= 0 or self.inner_step <= 0:
            raise ValueError("all ProxSettings fields must be positive")


DEFAULT_PROX_SETTINGS = ProxSettings()


class ProxConvergenceError(RuntimeError):
    """Inner solver ran out of iterations; carries the last iterate."""

    def __init__(self, message, last_iterate, primal_residual, dual_residual):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual


def prox_check(xi, tau, alpha: float):
    """Proximal operator of rho_tau / alpha, elementwise over `xi`."""
    tau = as_quantile(tau).tau
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    xi = np.asarray(xi, dtype=float)
    hi = tau / alpha
    lo = (tau - 1.0) / alpha
    out = np.where(xi > hi, xi - hi, np.where(xi < lo, xi - lo, 0.0))
    return out if out.ndim else float(out)


def pava(y, increasing: bool = True) -> np.ndarray:
    """Pool-adjacent-violators isotonic least-squares fit."""
    y = np.asarray(y, dtype=float).ravel()
    if not increasing:
        return -pava(-y, True)
    sums, wts, means = [], [], []
    for v in y:
        sums.append(v)
        wts.append(1.0)
        means.append(v)
        while len(means) >= 2 and means[-2] > means[-1]:
            s = sums.pop() + sums[-1]
            w = wts.pop() + wts[-1]
            sums[-1], wts[-1] = s, w
            means.pop()
            means[-1] = s / w
    return np.repeat(means, np.asarray(wts, dtype=int))


@njit(cache=True)
def _nearly_iso_merge(y, lam):  # pragma: no cover - exercised via nearly_isotonic
    # Exact minimizer of 0.5*||y-b||^2 + lam*sum max(b_i - b_{i+1}, 0).
    # Pools of equal values move linearly in lam and only ever merge; run the
    # merge events up to the requested lam and read off the pool values.
    m = y.shape[0]
    val = y.copy()
    wt = np.ones(m)
    end = np.empty(m, np.int64)
    nxt = np.empty(m, np.int64)
    prv = np.empty(m, np.int64)
    for i in range(m):
        end[i] = i
        nxt[i] = i + 1
        prv[i] = i - 1
    # collapse exact initial ties so adjacent pool values are strictly ordered
    i = 0
    while i < m:
        j = nxt[i]
        if j < m and val[i] == val[j]:
            tot = wt[i] + wt[j]
            val[i] = (wt[i] * val[i] + wt[j] * val[j]) / tot
            wt[i] = tot
            end[i] = end[j]
            nxt[i] = nxt[j]
            if nxt[j] < m:
                prv[nxt[j]] = i
        else:
            i = j
    cur = 0.0
    slope = np.zeros(m)
    while True:
        i = 0
        while i < m:
            cl = 0.0
            if prv[i] >= 0 and val[prv[i]] > val[i]:
                cl = 1.0
            cr = 0.0
            if nxt[i] < m and val[i] > val[nxt[i]]:
                cr = 1.0
            slope[i] = (cl - cr) / wt[i]
            i = nxt[i]
        best = np.inf
        bi = -1
        i = 0
        while i < m:
            j = nxt[i]
            if j >= m:
                break
            d0 = val[i] - val[j]
            rel = slope[j] - slope[i]
            if (d0 > 0.0 and rel > 0.0) or (d0 < 0.0 and rel < 0.0):
                delta = d0 / rel
                if delta < best:
                    best = delta
                    bi = i
            i = j
        if bi < 0 or cur + best > lam:
            break
        i = 0
        while i < m:
            val[i] += slope[i] * best
            i = nxt[i]
        cur += best
        j = nxt[bi]
        tot = wt[bi] + wt[j]
        val[bi] = (wt[bi] * val[bi] + wt[j] * val[j]) / tot
        wt[bi] = tot
        end[bi] = end[j]
        nxt[bi] = nxt[j]
        if nxt[j] < m:
            prv[nxt[j]] = bi
        # sweep for chained (simultaneous) collisions
        i = 0
        while i < m:
            j = nxt[i]
            if j < m and abs(val[i] - val[j]) <= 1e-12 * (1.0 + abs(val[i])):
                tot = wt[i] + wt[j]
                val[i] = (wt[i] * val[i] + wt[j] * val[j]) / tot
                wt[i] = tot
                end[i] = end[j]
                nxt[i] = nxt[j]
                if nxt[j] < m:
                    prv[nxt[j]] = i
            else:
                i = j
    if lam > cur:
        i = 0
        while i < m:
            val[i] += slope[i] * (lam - cur)
            i = nxt[i]
    out = np.empty(m)
    i = 0
    while i < m:
        for k in range(i, end[i] + 1):
            out[k] = val[i]
        i = nxt[i]
    return out


def nearly_isotonic(y, lam: float, direction: str = "increasing") -> np.ndarray:
    """Exact nearly-isotonic fit at a fixed penalty weight.

    Minimizes 0.5*sum (y_i - b_i)^2 + lam*sum max(+-(b_i - b_{i+1}), 0), the
    sign chosen by `direction`: "increasing" penalizes decreases,
    "decreasing" penalizes increases. lam = 0 returns y; for lam at or above
    the pooling threshold the result equals the isotonic (PAVA) fit.
    """
    y = np.asarray(y, dtype=float).ravel()
    if direction not in ("increasing", "decreasing"):
        raise ValueError(f"direction must be 'increasing' or 'decreasing', got {direction!r}")
    lam = float(lam)
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if direction == "decreasing":
        return -nearly_isotonic(-y, lam, "increasing")
    m = len(y)
    if m <= 1 or lam == 0.0:
        return y.copy()
    d = y[:-1] - y[1:]
    if not np.any(d > 0):
        return y.copy()
    if lam >= (y.max() - y.min()) * m:
        return pava(y)
    return _nearly_iso_merge(y, lam)


def prox_unimodal(s, mode: int, lam: float) -> np.ndarray:
    """Prox of the rise-then-fall hinge penalty at a fixed 1-based mode.

    The first `mode` entries get a nearly-isotonic increasing fit and the
    remainder a nearly-isotonic decreasing fit; the two segments are
    independent, so this is the exact prox.
    """
    s = np.asarray(s, dtype=float).ravel()
    T = len(s)
    mode = int(mode)
    if not 1 <= mode <= T:
        raise ValueError(f"mode must lie in 1..{T}, got {mode}")
    if lam == 0:
        return s.copy()
    head = nearly_isotonic(s[:mode], lam, "increasing")
    tail = nearly_isotonic(s[mode:], lam, "decreasing")
    return np.concatenate([head, tail])


@lru_cache(maxsize=32)
def _dtd_bands(m: int):
    # Main, first and second subdiagonal of D2'D2 for length-m sequences.
    D = make_diff_operator(2, m).toarray().astype(float)
    G = D.T @ D
    return np.diagonal(G).copy(), np.diagonal(G, -1).copy(), np.diagonal(G, -2).copy()


@njit(cache=True)
def _hinge_admm2_kernel(S, lam, sigma0, g0, g1, g2, scales, max_iter, z, w):
    # ADMM on the splitting v = D2 b for prox of lam * sum max((D2 b)_j, 0);
    # the b-step solves (I + sigma D2'D2) b = rhs via an in-place banded
    # Cholesky so residual-balancing updates of sigma refactor cheaply.
    c, m = S.shape
    q = m - 2
    sigma = sigma0
    l0 = np.empty(m)
    l1 = np.empty(m - 1)
    l2 = np.empty(m - 2)
    b = np.empty((c, m))
    db = np.empty((c, q))
    zn = np.empty((c, q))
    rhs = np.empty(m)
    prim = np.full(c, np.inf)
    dual = np.full(c, np.inf)
    refactor = True
    balance_cap = 100
    it_done = 0
    ok = False
    for it in range(1, max_iter + 1):
        it_done = it
        if refactor:
            for i in range(m):
                t = 1.0 + sigma * g0[i]
                if i >= 1:
                    t -= l1[i - 1] * l1[i - 1]
                if i >= 2:
                    t -= l2[i - 2] * l2[i - 2]
                l0[i] = np.sqrt(t)
                if i + 1 < m:
                    t1 = sigma * g1[i]
                    if i >= 1:
                        t1 -= l1[i - 1] * l2[i - 1]
                    l1[i] = t1 / l0[i]
                if i + 2 < m:
                    l2[i] = sigma * g2[i] / l0[i]
            refactor = False
        thr = lam / sigma
        for r in range(c):
            # rhs = S[r] + sigma * D2'(z[r] - w[r])
            for i in range(m):
                acc = 0.0
                if i <= q - 1:
                    acc += z[r, i] - w[r, i]
                if 1 <= i <= q:
                    acc -= 2.0 * (z[r, i - 1] - w[r, i - 1])
                if i >= 2:
                    acc += z[r, i - 2] - w[r, i - 2]
                rhs[i] = S[r, i] + sigma * acc
            # forward substitution L x = rhs
            for i in range(m):
                t = rhs[i]
                if i >= 1:
                    t -= l1[i - 1] * b[r, i - 1]
                if i >= 2:
                    t -= l2[i - 2] * b[r, i - 2]
                b[r, i] = t / l0[i]
            # back substitution L' x = x
            for i in range(m - 1, -1, -1):
                t = b[r, i]
                if i + 1 < m:
                    t -= l1[i] * b[r, i + 1]
                if i + 2 < m:
                    t -= l2[i] * b[r, i + 2]
                b[r, i] = t / l0[i]
            pr = 0.0
            du = 0.0
            for j in range(q):
                db[r, j] = b[r, j] - 2.0 * b[r, j + 1] + b[r, j + 2]
                v = db[r, j] + w[r, j]
                if v > thr:
                    zj = v - thr
                elif v < 0.0:
                    zj = v
                else:
                    zj = 0.0
                zn[r, j] = zj
                d = db[r, j] - zj
                pr += d * d
                w[r, j] = w[r, j] + d
            # dual residual: sigma * ||D2'(zn - z)||
            for i in range(m):
                acc = 0.0
                if i <= q - 1:
                    acc += zn[r, i] - z[r, i]
                if 1 <= i <= q:
                    acc -= 2.0 * (zn[r, i - 1] - z[r, i - 1])
                if i >= 2:
                    acc += zn[r, i - 2] - z[r, i - 2]
                du += acc * acc
            for j in range(q):
                z[r, j] = zn[r, j]
            prim[r] = np.sqrt(pr)
            dual[r] = sigma * np.sqrt(du)
        done = True
        for r in range(c):
            if prim[r] > scales[r] or dual[r] > scales[r]:
                done = False
                break
        if done:
            ok = True
            break
        if it % 10 == 0 and balance_cap > 0:
            pm = prim.max()
            dm = dual.max()
            if pm > 10.0 * dm and sigma < 1e8:
                sigma *= 2.0
                for r in range(c):
                    for j in range(q):
                        w[r, j] *= 0.5
                refactor = True
                balance_cap -= 1
            elif dm > 10.0 * pm and sigma > 1e-8:
                sigma *= 0.5
                for r in range(c):
                    for j in range(q):
                        w[r, j] *= 2.0
                refactor = True
                balance_cap -= 1
    return b, it_done, prim, dual, ok, sigma


def _hinge_prox_rows(S, lam, order, settings, state=None):
    """Inner ADMM for rows of S: prox of lam * sum max((D2 b)_j, 0).

    Rows are independent problems of a common length, solved jointly so the
    banded factorization is shared. Returns the stacked solutions plus the
    (z, w, sigma) splitting state for warm starts.
    """
    if order != 2:
        raise ValueError("hinge prox is implemented for second differences only")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    c, m = S.shape
    g0, g1, g2 = _dtd_bands(m)
    if state is None:
        z = np.zeros((c, m - 2))
        w = np.zeros((c, m - 2))
        sigma = float(settings.inner_step)
    else:
        z, w, sigma = state
    scales = settings.inner_tol * (1.0 + np.linalg.norm(S, axis=1))
    b, _, prim, dual, ok, sigma = _hinge_admm2_kernel(
        S, float(lam), sigma, g0, g1, g2, scales, settings.inner_max_iter, z, w
    )
    if not ok:
        raise ProxConvergenceError(
            f"hinge prox did not converge in {settings.inner_max_iter} iterations "
            f"(primal {prim.max():.3e}, dual {dual.max():.3e})",
            b, prim, dual,
        )
    return b, (z, w, sigma)


def prox_concave(s, lam: float, settings: ProxSettings = DEFAULT_PROX_SETTINGS) -> np.ndarray:
    """Prox of lam * (sum of positive second differences) at s.

    Solves 0.5*||s - b||^2 + lam * |D2 b|+ by an ADMM on the splitting
    z = D2 b; the objective is strongly convex so the minimizer is unique.
    """
    s = np.asarray(s, dtype=float).ravel()
    T = len(s)
    if T < 3:
        raise ValueError(f"need at least 3 points, got {T}")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    d2 = s[:-2] - 2.0 * s[1:-1] + s[2:]
    if lam == 0.0 or not np.any(d2 > 0):
        return s.copy()
    b, _ = _hinge_prox_rows(s, lam, 2, settings)
    return b[0]
