"""Batched EM plumbing shared by the two mixture detectors."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from locsec.core import MeasurementWindow, batch_cholesky, batch_log_pdf
from locsec.detectors.common import MixtureState, as_batch
from locsec.errors import EmCollapse


def e_step(xt, log_priors, means, L):
    """Log-domain responsibilities.

    ``xt (M, K, N)``, ``means (M, 2, N)``, ``L (M, 2, N, N)``. Returns
    ``(resp (M, 2, K), loglik (M,))``.
    """
    logf = batch_log_pdf(xt[:, None], means, L) + log_priors[..., None]
    lse = logsumexp(logf, axis=1)
    return np.exp(logf - lse[:, None]), lse.sum(axis=-1)


def mixture_loglik_arrays(xt, priors, means, covs):
    """Mixture log-likelihood per window and a PD mask for the covariances."""
    L, ok = batch_cholesky(covs)
    with np.errstate(divide="ignore"):
        _, ll = e_step(xt, np.log(priors), means, L)
    return ll, ok.all(axis=-1)


def run_em(xt, init, step, n_iters: int, tol: float | None, trace: bool = False):
    """Drive a batched EM recursion.

    ``init`` is a tuple of state arrays; ``step(xt, *state)`` returns
    ``(*state, resp, ok)``. Windows freeze once the relative change of the
    log-likelihood drops below ``tol`` (None disables early exit) or once they
    collapse. Returns ``(state, loglik, ok, iterations[, trace])``; the trace
    holds the log-likelihood after each iteration (index 0 = initial state).
    """
    state = tuple(np.array(a) for a in init)
    ll, ok = mixture_loglik_arrays(xt, *_expand(state))
    active = ok.copy()
    iters = np.zeros(xt.shape[0], dtype=int)
    history = [ll.copy()]
    for _ in range(n_iters):
        *new, _, step_ok = step(xt, *state)
        new_ll, ll_ok = mixture_loglik_arrays(xt, *_expand(tuple(new)))
        step_ok = step_ok & ll_ok & np.isfinite(new_ll)
        collapsed = active & ~step_ok
        ok &= ~collapsed
        upd = active & step_ok
        state = tuple(np.where(_mask(upd, a), b, a) for a, b in zip(state, new))
        iters = iters + upd
        if tol is not None:
            change = np.abs(new_ll - ll) / np.maximum(np.abs(new_ll), 1e-300)
            done = upd & (change < tol)
        else:
            done = np.zeros_like(upd)
        ll = np.where(upd, new_ll, ll)
        active = upd & ~done
        history.append(ll.copy())
        if not active.any() and not trace:
            break
    if trace:
        return state, ll, ok, iters, np.stack(history, axis=-1)
    return state, ll, ok, iters


def _mask(mask, arr):
    return mask.reshape(mask.shape + (1,) * (arr.ndim - 1))


def _expand(state):
    """Map (priors, mean, covs) or (priors, means, cov) to per-component arrays."""
    priors, a, b = state
    if a.ndim == 2:  # shared mean
        return priors, np.broadcast_to(a[:, None, :], b.shape[:-1]), b
    return priors, a, np.broadcast_to(b[:, None], a.shape + a.shape[-1:])


def h0_loglik_whitened(n_samples: int, n_dims: int) -> float:
    # whitened data: zero mean, identity covariance, total squared norm K*N
    return -0.5 * n_samples * n_dims * (np.log(2.0 * np.pi) + 1.0)


def mixture_log_likelihood(window: MeasurementWindow, state: MixtureState) -> float:
    """``sum_k log sum_a pi_a f(z_k; m_a, Sigma_a)``."""
    xt = np.swapaxes(as_batch(window), 1, 2)
    ll, ok = mixture_loglik_arrays(xt, state.priors[None], state.means[None], state.covariances[None])
    if not ok[0]:
        raise EmCollapse("mixture covariance is not positive definite")
    return float(ll[0])
