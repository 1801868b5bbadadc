"""Shared-mean estimation for two Gaussian groups with free covariances.

Both the correlated jamming GLRT (two time segments) and the jamming mixture
M-step (two soft components) need

    argmax_m  -sum_a w_a/2 * log det( T_a(m) / w_a ),
    T_a(m) = M_a + w_a (xbar_a - m)(xbar_a - m)^T,

where ``M_a`` is the group scatter about its own mean ``xbar_a = s_a / w_a``.
The precision-weighted closed form

    m = (sum_a w_a M_a^{-1})^{-1} sum_a M_a^{-1} s_a

is a stationary point only to first order in ``(xbar_a - m)``, so the exact
estimate is refined from it by a safeguarded Newton ascent.
"""

from __future__ import annotations

import numpy as np

from locsec.core import batch_cholesky, chol_logdet

ASCENT_TOL = 1e-12
ASCENT_MAX_ITER = 100


def _outer(v: np.ndarray) -> np.ndarray:
    return v[..., :, None] * v[..., None, :]


def closed_form_mean(scat: np.ndarray, s: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Precision-weighted mean; shapes ``(..., 2, N, N)``, ``(..., 2, N)``, ``(..., 2)``."""
    inv = np.linalg.inv(scat)
    a = (w[..., None, None] * inv).sum(axis=-3)
    b = np.einsum("...aij,...aj->...i", inv, s)
    return np.linalg.solve(a, b[..., None])[..., 0]


def group_scatter(scat: np.ndarray, s: np.ndarray, w: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``T_a(m)``, the scatter of each group about the common mean ``m``."""
    d = s / w[..., None] - m[..., None, :]
    return scat + w[..., None, None] * _outer(d)


def profile_objective(scat, s, w, m) -> tuple[np.ndarray, np.ndarray]:
    """Objective value and a PD mask at ``m``."""
    t = group_scatter(scat, s, w, m) / w[..., None, None]
    L, ok = batch_cholesky(t)
    val = -0.5 * (w * chol_logdet(L)).sum(axis=-1)
    ok = ok.all(axis=-1)
    return np.where(ok, val, -np.inf), ok


def _reduced(prec, xbar, w, m):
    """Objective up to an ``m``-independent constant, plus its derivatives.

    With ``P_a = M_a^{-1}`` and ``d_a = xbar_a - m`` the objective reads
    ``-sum_a w_a/2 log(1 + w_a d_a^T P_a d_a)``.
    """
    d = xbar - m[..., None, :]
    pd = (prec @ d[..., None])[..., 0]
    q = w * (d * pd).sum(axis=-1)
    r = 1.0 / (1.0 + q)
    val = -0.5 * (w * np.log1p(q)).sum(axis=-1)
    c1 = w**2 * r
    grad = (c1[..., None] * pd).sum(axis=-2)
    curv = (c1[..., None, None] * prec).sum(axis=-3)
    c2 = 2.0 * w**3 * r**2
    hess = -curv + ((c2[..., None] * pd)[..., :, None] * pd[..., None, :]).sum(axis=-3)
    return val, grad, curv, hess


def ascend(scat, s, w, m, max_iter: int = ASCENT_MAX_ITER, tol: float = ASCENT_TOL) -> np.ndarray:
    """Safeguarded Newton ascent on the shared-mean objective starting at ``m``.

    Each iteration takes the Newton step where the Hessian is negative
    definite and the step improves the objective; otherwise it falls back to
    the generalised-least-squares step (covariances frozen at the current
    ``m``), which never decreases the objective. Converged problems drop out
    of the batch.
    """
    n = scat.shape[-1]
    batch = scat.shape[:-3]
    prec = np.linalg.inv(scat).reshape(-1, 2, n, n)
    w = np.broadcast_to(w, batch + (2,)).reshape(-1, 2)
    xbar = (s / w.reshape(batch + (2,))[..., None]).reshape(-1, 2, n)
    m = np.array(np.broadcast_to(m, batch + (n,)), dtype=float).reshape(-1, n)
    idx = np.arange(m.shape[0])
    for _ in range(max_iter):
        if idx.size == 0:
            break
        p, xb, ww, mm = prec[idx], xbar[idx], w[idx], m[idx]
        val, grad, curv, hess = _reduced(p, xb, ww, mm)
        gls = mm + np.linalg.solve(curv, grad[..., None])[..., 0]
        _, nd = batch_cholesky(-hess)
        safe_hess = np.where(nd[..., None, None], hess, -curv)
        newton = mm - np.linalg.solve(safe_hess, grad[..., None])[..., 0]
        v_newton = _reduced(p, xb, ww, newton)[0]
        take = nd & (v_newton >= val)
        new = np.where(take[..., None], newton, gls)
        step = np.abs(new - mm).max(axis=-1)
        m[idx] = new
        idx = idx[step > tol * (1.0 + np.abs(new).max(axis=-1))]
    return m.reshape(batch + (n,))


def best_mean(scat, s, w, starts: list[np.ndarray], exact: bool = True) -> np.ndarray:
    """Run the ascent from every start and keep the best end point."""
    if not exact:
        return starts[0]
    n_start = len(starts)
    tile = lambda a: np.broadcast_to(a[None], (n_start,) + a.shape)  # noqa: E731
    ends = ascend(tile(scat), tile(s), tile(np.broadcast_to(w, s.shape[:-1])), np.stack(starts))
    vals, _ = profile_objective(tile(scat), tile(s), tile(np.broadcast_to(w, s.shape[:-1])), ends)
    # first start wins ties
    pick = np.argmax(vals, axis=0)
    return np.take_along_axis(ends, pick[None, ..., None], axis=0)[0]
