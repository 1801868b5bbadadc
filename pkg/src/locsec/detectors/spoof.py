"""Spoofing (mean-shift) detectors.

* ``sp_um_statistic``: GLRT with a diagonal covariance shared by both
  segments; per dimension the alternative fits one mean per segment and a
  pooled variance.
* ``sp_cm_statistic``: the same test with an unstructured shared covariance.
* ``lvm_sp_statistic``: two-component mixture with two means and one shared
  covariance, fitted by EM.
"""

from __future__ import annotations

import numpy as np

from locsec.core import MeasurementWindow, batch_cholesky, chol_logdet
from locsec.detectors import mixture
from locsec.detectors.common import (
    ChangePointDomain,
    DetectionOutcome,
    MixtureState,
    as_batch,
    first_argmax,
    segment_outer_sums,
    segment_sums,
    standardize,
    whiten,
    whitening_log_jacobian,
)
from locsec.errors import DegenerateWindow, EmCollapse

UM_FLOOR = 2
EM_ITERS = 10
EM_TOL = 1e-8


def um_domain(n_samples: int) -> ChangePointDomain:
    return ChangePointDomain.with_floor(n_samples, UM_FLOOR)


def cm_domain(n_samples: int, n_dims: int) -> ChangePointDomain:
    return ChangePointDomain.with_floor(n_samples, n_dims)


# ---------------------------------------------------------------------------
# SP-D-UM
# ---------------------------------------------------------------------------


def _um_core(x: np.ndarray, k0: np.ndarray) -> np.ndarray:
    """Per-candidate statistics ``(M, J)`` in standardised coordinates."""
    n_samples = x.shape[-1]
    a0, b0, a1, b1 = segment_sums(x, k0)
    kk0 = k0.astype(float)
    kk1 = n_samples - kk0
    split = np.maximum(b0 - a0**2 / kk0, 0.0) + np.maximum(b1 - a1**2 / kk1, 0.0)
    # the pooled residual is K after standardising
    with np.errstate(divide="ignore"):
        terms = np.log(n_samples) - np.log(split)
    return 0.5 * n_samples * terms.sum(axis=1)


def sp_um_batch(z: np.ndarray, domain: ChangePointDomain | None = None):
    z = as_batch(z)
    domain = domain or um_domain(z.shape[-1])
    domain.check(z.shape[-1], UM_FLOOR)
    x, _, _, ok = standardize(z)
    cand = _um_core(x, domain.as_array())
    best = cand.max(axis=-1)
    ok &= np.isfinite(best)
    return np.where(ok, best, 0.0), ~ok


def sp_um_statistic(
    window: MeasurementWindow,
    domain: ChangePointDomain | None = None,
    threshold: float | None = None,
) -> DetectionOutcome:
    """Diagonal-covariance spoofing GLRT on a single window."""
    z = as_batch(window)
    n_samples = z.shape[-1]
    domain = domain or um_domain(n_samples)
    domain.check(n_samples, UM_FLOOR)
    x, _, _, ok = standardize(z)
    if not ok[0]:
        raise DegenerateWindow("per-dimension variance is numerically zero")
    k0 = domain.as_array()
    cand = _um_core(x, k0)[0]
    if not np.all(np.isfinite(cand)):
        raise DegenerateWindow("a split leaves a dimension with zero residual")
    j = int(first_argmax(cand))
    k0_hat = int(k0[j])
    pre = z[0, :, :k0_hat]
    post = z[0, :, k0_hat:]
    m1 = pre.mean(axis=-1)
    m2 = post.mean(axis=-1)
    var = (((pre - m1[:, None]) ** 2).sum(-1) + ((post - m2[:, None]) ** 2).sum(-1)) / n_samples
    return DetectionOutcome(
        statistic=float(cand[j]),
        k0_hat=k0_hat,
        nuisance={"mean_pre": m1, "mean_post": m2, "var": var},
    ).decide(threshold)


# ---------------------------------------------------------------------------
# SP-D-CM
# ---------------------------------------------------------------------------


def _cm_core(x: np.ndarray, k0: np.ndarray) -> np.ndarray:
    """Per-candidate statistics ``(M, J)``; ``-inf`` where the split scatter is singular."""
    n_samples = x.shape[-1]
    s0, S0, s1, S1 = segment_outer_sums(x, k0)
    kk0 = k0.astype(float)[None, :, None, None]
    kk1 = n_samples - kk0
    split = S0 + S1 - s0[..., :, None] * s0[..., None, :] / kk0 - s1[..., :, None] * s1[..., None, :] / kk1
    L, ok = batch_cholesky(split)
    # H0 scatter is K * I after whitening
    n_dims = x.shape[1]
    val = 0.5 * n_samples * (n_dims * np.log(n_samples) - chol_logdet(L))
    return np.where(ok, val, -np.inf)


def sp_cm_batch(z: np.ndarray, domain: ChangePointDomain | None = None):
    z = as_batch(z)
    n_dims, n_samples = z.shape[1:]
    domain = domain or cm_domain(n_samples, n_dims)
    domain.check(n_samples, n_dims)
    x, _, _, ok = whiten(z)
    best = _cm_core(x, domain.as_array()).max(axis=-1)
    return np.where(ok & np.isfinite(best), best, 0.0), ~ok


def sp_cm_statistic(
    window: MeasurementWindow,
    domain: ChangePointDomain | None = None,
    threshold: float | None = None,
) -> DetectionOutcome:
    """Full-covariance spoofing GLRT on a single window."""
    z = as_batch(window)
    n_dims, n_samples = z.shape[1:]
    domain = domain or cm_domain(n_samples, n_dims)
    domain.check(n_samples, n_dims)
    x, _, _, ok = whiten(z)
    if not ok[0]:
        raise DegenerateWindow("sample covariance is not positive definite")
    k0 = domain.as_array()
    cand = _cm_core(x, k0)[0]
    if not np.any(np.isfinite(cand)):
        return DetectionOutcome(statistic=0.0, flags=("split_singular",)).decide(threshold)
    j = int(first_argmax(cand))
    k0_hat = int(k0[j])
    pre = z[0, :, :k0_hat]
    post = z[0, :, k0_hat:]
    m1 = pre.mean(axis=-1)
    m2 = post.mean(axis=-1)
    d = np.concatenate([pre - m1[:, None], post - m2[:, None]], axis=-1)
    return DetectionOutcome(
        statistic=float(cand[j]),
        k0_hat=k0_hat,
        nuisance={"mean_pre": m1, "mean_post": m2, "cov": d @ d.T / n_samples},
    ).decide(threshold)


# ---------------------------------------------------------------------------
# LVM-SP-D
# ---------------------------------------------------------------------------


def sp_initial_arrays(xt):
    """Equal priors, first-half and second-half means, pooled covariance."""
    m_win, n_samples, _ = xt.shape
    half = n_samples // 2
    means = np.stack([xt[:, :half].mean(axis=1), xt[:, half:].mean(axis=1)], axis=1)
    d = xt - xt.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", d, d) / n_samples
    return np.full((m_win, 2), 0.5), means, cov


def sp_em_step_arrays(xt, priors, means, cov):
    """One EM iteration for the two-mean, shared-covariance mixture.

    Returns ``(priors, means, cov, resp, ok)``.
    """
    n_samples = xt.shape[1]
    L, ok = batch_cholesky(cov)
    L2 = np.broadcast_to(L[:, None], means.shape + means.shape[-1:])
    with np.errstate(divide="ignore"):
        resp, _ = mixture.e_step(xt, np.log(priors), means, L2)
    q = resp.sum(axis=-1)
    ok &= np.all(q > 1e-10 * n_samples, axis=-1)
    new_priors = q / n_samples
    q = np.where(q > 0, q, 1.0)
    new_means = np.einsum("mak,mkn->man", resp, xt) / q[..., None]
    d = xt[:, None] - new_means[:, :, None, :]
    new_cov = np.einsum("mak,maki,makj->mij", resp, d, d) / n_samples
    _, cov_ok = batch_cholesky(new_cov)
    ok &= cov_ok
    return new_priors, new_means, new_cov, np.swapaxes(resp, 1, 2), ok


def _state_from_arrays(priors, means, cov, resp, iteration) -> MixtureState:
    return MixtureState(
        priors=priors,
        means=means,
        covariances=np.stack([cov, cov]),
        responsibilities=resp,
        iteration=iteration,
    )


def lvm_sp_initial_state(window: MeasurementWindow) -> MixtureState:
    priors, means, cov = sp_initial_arrays(np.swapaxes(as_batch(window), 1, 2))
    return _state_from_arrays(priors[0], means[0], cov[0], None, 0)


def lvm_sp_em_step(window: MeasurementWindow, state: MixtureState) -> MixtureState:
    """One EM iteration on a single window.

    Raises:
        EmCollapse: a component lost its support or the covariance is not PD.
    """
    xt = np.swapaxes(as_batch(window), 1, 2)
    priors, means, cov, resp, ok = sp_em_step_arrays(
        xt, state.priors[None], state.means[None], state.covariances[0][None]
    )
    if not ok[0]:
        raise EmCollapse("mixture component collapsed")
    return _state_from_arrays(priors[0], means[0], cov[0], resp[0], state.iteration + 1)


def sp_lvm_batch(z: np.ndarray, n_iters: int = EM_ITERS, tol: float | None = EM_TOL):
    """LVM-SP-D statistics; collapsed or degenerate windows score 0."""
    z = as_batch(z)
    n_dims, n_samples = z.shape[1:]
    x, _, _, ok = whiten(z)
    xt = np.swapaxes(x, 1, 2)
    _, ll, em_ok, _ = mixture.run_em(xt, sp_initial_arrays(xt), sp_em_step_arrays, n_iters, tol)
    ok &= em_ok
    stats = np.where(ok, ll - mixture.h0_loglik_whitened(n_samples, n_dims), 0.0)
    return stats, ~ok


def sp_lvm_trace(z: np.ndarray, max_iters: int):
    """Mixture log-likelihood (original units) after each EM iteration."""
    z = as_batch(z)
    x, _, L, ok = whiten(z)
    xt = np.swapaxes(x, 1, 2)
    *_, em_ok, _, hist = mixture.run_em(xt, sp_initial_arrays(xt), sp_em_step_arrays, max_iters, None, trace=True)
    return hist - whitening_log_jacobian(L, z.shape[-1])[:, None], ok & em_ok


def lvm_sp_statistic(
    window: MeasurementWindow,
    n_iters: int = EM_ITERS,
    threshold: float | None = None,
    tol: float | None = EM_TOL,
) -> DetectionOutcome:
    """Mixture log-likelihood ratio against the H0 Gaussian fit."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    z = as_batch(window)
    n_dims, n_samples = z.shape[1:]
    x, mean, L, ok = whiten(z)
    if not ok[0]:
        raise DegenerateWindow("sample covariance is not positive definite")
    xt = np.swapaxes(x, 1, 2)
    (priors, means, cov), ll, em_ok, iters = mixture.run_em(
        xt, sp_initial_arrays(xt), sp_em_step_arrays, n_iters, tol
    )
    if not em_ok[0]:
        return DetectionOutcome(statistic=0.0, flags=("em_collapse",)).decide(threshold)
    L = L[0]
    return DetectionOutcome(
        statistic=float(ll[0] - mixture.h0_loglik_whitened(n_samples, n_dims)),
        nuisance={
            "priors": priors[0],
            "means": mean[0] + means[0] @ L.T,
            "cov": L @ cov[0] @ L.T,
            "iterations": int(iters[0]),
        },
    ).decide(threshold)
