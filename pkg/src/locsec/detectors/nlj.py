"""Noise-like jamming detectors.

Three decision statistics for a covariance increase after an unknown change
point ``K0``:

* ``nlj_um_statistic``: GLRT with diagonal covariances. Separable per
  dimension; the common mean solves a cubic and dimensions whose estimated
  variance does not grow after ``K0`` contribute nothing.
* ``nlj_cm_statistic``: GLRT with unstructured covariances, gated on the
  estimated post-change covariance dominating the pre-change one.
* ``lvm_nlj_statistic``: two-component mixture with a shared mean and two
  covariances, fitted by EM; no explicit change point.

All statistics are computed in standardised (UM) or whitened (CM, LVM)
coordinates, which leaves them unchanged but keeps the arithmetic well
scaled.
"""

from __future__ import annotations

from typing import Literal

import numpy as np

from locsec.core import MeasurementWindow, batch_cholesky, chol_logdet, cubic_real_roots
from locsec.detectors import mixture, profile
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

MeanEstimator = Literal["exact", "closed_form"]

UM_FLOOR = 2
EM_ITERS = 10
EM_TOL = 1e-8


def um_domain(n_samples: int) -> ChangePointDomain:
    return ChangePointDomain.with_floor(n_samples, UM_FLOOR)


def cm_domain(n_samples: int, n_dims: int) -> ChangePointDomain:
    # scatter of a segment about its own mean is singular with only N samples
    return ChangePointDomain.with_floor(n_samples, n_dims + 1)


# ---------------------------------------------------------------------------
# NLJ-D-UM
# ---------------------------------------------------------------------------


def _um_core(x: np.ndarray, k0: np.ndarray):
    """Per-candidate quantities in standardised coordinates.

    Returns ``(cand, mhat, gamma, v1, v2)``; ``cand`` is ``(M, J)``, the rest
    ``(M, N, J)``.
    """
    n_samples = x.shape[-1]
    a0, b0, a1, b1 = segment_sums(x, k0)
    kk0 = k0.astype(float)
    kk1 = n_samples - kk0
    c3 = np.broadcast_to(-(kk0 + kk1), a0.shape)
    c2 = a0 + a1 + 2.0 * kk0 / kk1 * a1 + 2.0 * kk1 / kk0 * a0
    c1 = -kk0 / kk1 * b1 - kk1 / kk0 * b0 - (2.0 / kk1 + 2.0 / kk0) * a0 * a1
    c0 = b1 * a0 / kk1 + b0 * a1 / kk0
    roots = cubic_real_roots(c3, c2, c1, c0)
    # the pooled mean (0 after standardising) is always a candidate
    m = np.concatenate([roots, np.zeros(a0.shape + (1,))], axis=-1)

    # variances about m, written about the segment means to avoid cancellation
    mean0 = (a0 / kk0)[..., None]
    mean1 = (a1 / kk1)[..., None]
    w0 = np.maximum(b0 / kk0 - (a0 / kk0) ** 2, 0.0)[..., None]
    w1 = np.maximum(b1 / kk1 - (a1 / kk1) ** 2, 0.0)[..., None]
    v1 = w0 + (mean0 - m) ** 2
    v2 = w1 + (mean1 - m) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        obj = -0.5 * kk0[:, None] * np.log(v1) - 0.5 * kk1[:, None] * np.log(v2)
    obj = np.where(np.isfinite(obj), obj, -np.inf)
    pick = np.argmax(obj, axis=-1)[..., None]
    best = np.take_along_axis(obj, pick, -1)[..., 0]
    mhat = np.take_along_axis(m, pick, -1)[..., 0]
    v1 = np.take_along_axis(v1, pick, -1)[..., 0]
    v2 = np.take_along_axis(v2, pick, -1)[..., 0]
    gamma = (v2 - v1 > 0) & np.isfinite(best)
    # + K/2 log(1): the H0 variance is one after standardising
    contrib = np.where(gamma, best, 0.0)
    return contrib.sum(axis=1), mhat, gamma, v1, v2


def nlj_um_batch(z: np.ndarray, domain: ChangePointDomain | None = None):
    """NLJ-D-UM statistics for a stack of windows ``(M, N, K)``.

    Returns ``(stats, errors)``; degenerate windows get statistic 0 and
    ``errors`` True.
    """
    z = as_batch(z)
    domain = domain or um_domain(z.shape[-1])
    domain.check(z.shape[-1], UM_FLOOR)
    x, _, _, ok = standardize(z)
    cand, *_ = _um_core(x, domain.as_array())
    stats = np.where(ok, cand.max(axis=-1), 0.0)
    return stats, ~ok


def nlj_um_statistic(
    window: MeasurementWindow,
    domain: ChangePointDomain | None = None,
    threshold: float | None = None,
) -> DetectionOutcome:
    """Diagonal-covariance jamming GLRT on a single window."""
    z = as_batch(window)
    n_samples = z.shape[-1]
    domain = domain or um_domain(n_samples)
    domain.check(n_samples, UM_FLOOR)
    x, mean, std, ok = standardize(z)
    if not ok[0]:
        raise DegenerateWindow("per-dimension variance is numerically zero")
    k0 = domain.as_array()
    cand, mhat, gamma, v1, v2 = _um_core(x, k0)
    j = int(first_argmax(cand[0]))
    active = np.flatnonzero(gamma[0, :, j])
    stat = float(cand[0, j]) if active.size else 0.0

    mean, std = mean[0], std[0]
    var = std**2
    m1 = np.where(gamma[0, :, j], mean + std * mhat[0, :, j], mean)
    sig1 = np.where(gamma[0, :, j], var * v1[0, :, j], var)
    sig2 = np.where(gamma[0, :, j], var * v2[0, :, j], var)
    return DetectionOutcome(
        statistic=stat,
        k0_hat=int(k0[j]),
        active_set=tuple(int(n) + 1 for n in active),
        nuisance={"mean": m1, "var_pre": sig1, "var_post": sig2},
    ).decide(threshold)


# ---------------------------------------------------------------------------
# NLJ-D-CM
# ---------------------------------------------------------------------------


def _cm_core(x: np.ndarray, k0: np.ndarray, mean_estimator: MeanEstimator):
    """Per-candidate log-GLRT values (``-inf`` where the gate fails) and means."""
    n_samples = x.shape[-1]
    s0, S0, s1, S1 = segment_outer_sums(x, k0)
    kk0 = k0.astype(float)[None, :]
    kk1 = n_samples - kk0
    scat0 = S0 - s0[..., :, None] * s0[..., None, :] / kk0[..., None, None]
    scat1 = S1 - s1[..., :, None] * s1[..., None, :] / kk1[..., None, None]
    scat = np.stack([scat0, scat1], axis=-3)
    s = np.stack([s0, s1], axis=-2)
    w = np.broadcast_to(np.stack([kk0, kk1], axis=-1), s.shape[:-1])

    _, scat_ok = batch_cholesky(scat)
    scat_ok = scat_ok.all(axis=-1)
    eye = np.eye(x.shape[1])
    scat = np.where(scat_ok[..., None, None, None], scat, eye)

    start = profile.closed_form_mean(scat, s, w)
    if mean_estimator == "exact":
        starts = [start, s0 / kk0[..., None], s1 / kk1[..., None]]
        m = profile.best_mean(scat, s, w, starts)
    elif mean_estimator == "closed_form":
        m = start
    else:
        raise ValueError(f"unknown mean estimator {mean_estimator!r}")

    t = profile.group_scatter(scat, s, w, m)
    c0 = t[..., 0, :, :] / kk0[..., None, None]
    c1 = t[..., 1, :, :] / kk1[..., None, None]
    L0, ok0 = batch_cholesky(c0)
    L1, ok1 = batch_cholesky(c1)
    _, gate = batch_cholesky(c1 - c0)
    # + K/2 log det(I): the H0 covariance is the identity after whitening
    val = -0.5 * kk0 * chol_logdet(L0) - 0.5 * kk1 * chol_logdet(L1)
    valid = scat_ok & ok0 & ok1 & gate
    return np.where(valid, val, -np.inf), m, c0, c1


def nlj_cm_batch(
    z: np.ndarray,
    domain: ChangePointDomain | None = None,
    mean_estimator: MeanEstimator = "exact",
):
    z = as_batch(z)
    n_dims, n_samples = z.shape[1:]
    domain = domain or cm_domain(n_samples, n_dims)
    domain.check(n_samples, n_dims + 1)
    x, _, _, ok = whiten(z)
    cand, *_ = _cm_core(x, domain.as_array(), mean_estimator)
    best = cand.max(axis=-1)
    stats = np.where(ok & np.isfinite(best), best, 0.0)
    return stats, ~ok


def cm_candidate_means(
    window: MeasurementWindow,
    domain: ChangePointDomain | None = None,
    mean_estimator: MeanEstimator = "exact",
) -> np.ndarray:
    """Shared-mean estimate ``(J, N)`` at every change-point candidate (original units)."""
    z = as_batch(window)
    n_dims, n_samples = z.shape[1:]
    domain = domain or cm_domain(n_samples, n_dims)
    x, mean, L, ok = whiten(z)
    if not ok[0]:
        raise DegenerateWindow("sample covariance is not positive definite")
    _, m, _, _ = _cm_core(x, domain.as_array(), mean_estimator)
    return mean[0] + m[0] @ L[0].T


def nlj_cm_statistic(
    window: MeasurementWindow,
    domain: ChangePointDomain | None = None,
    threshold: float | None = None,
    mean_estimator: MeanEstimator = "exact",
) -> DetectionOutcome:
    """Full-covariance jamming GLRT on a single window.

    Candidates whose estimated covariance increase is not positive definite
    are skipped; when none survives the statistic is 0 and ``k0_hat`` is None.
    """
    z = as_batch(window)
    n_dims, n_samples = z.shape[1:]
    domain = domain or cm_domain(n_samples, n_dims)
    domain.check(n_samples, n_dims + 1)
    x, mean, L, ok = whiten(z)
    if not ok[0]:
        raise DegenerateWindow("sample covariance is not positive definite")
    k0 = domain.as_array()
    cand, m, c0, c1 = _cm_core(x, k0, mean_estimator)
    cand = cand[0]
    if not np.any(np.isfinite(cand)):
        return DetectionOutcome(statistic=0.0, flags=("gate_failed",)).decide(threshold)
    j = int(first_argmax(cand))
    L = L[0]
    return DetectionOutcome(
        statistic=float(cand[j]),
        k0_hat=int(k0[j]),
        nuisance={
            "mean": mean[0] + L @ m[0, j],
            "cov_pre": L @ c0[0, j] @ L.T,
            "cov_post": L @ c1[0, j] @ L.T,
        },
    ).decide(threshold)


# ---------------------------------------------------------------------------
# LVM-NLJ-D
# ---------------------------------------------------------------------------


def nlj_em_step_arrays(xt, priors, mean, covs, mean_estimator: MeanEstimator = "exact"):
    """One EM iteration for the shared-mean, two-covariance mixture.

    Returns ``(priors, mean, covs, resp, ok)``; ``ok`` False flags a
    collapsed component.
    """
    m_win, n_samples, _ = xt.shape
    L, ok = batch_cholesky(covs)
    ok = ok.all(axis=-1)
    means = np.broadcast_to(mean[:, None, :], covs.shape[:-1])
    with np.errstate(divide="ignore"):
        resp, _ = mixture.e_step(xt, np.log(priors), means, L)

    q = resp.sum(axis=-1)
    new_priors = q / n_samples
    ok &= np.all(q > 1e-10 * n_samples, axis=-1)
    q = np.where(q > 0, q, 1.0)
    s = np.einsum("mak,mkn->man", resp, xt)
    Sz = np.einsum("mak,mki,mkj->maij", resp, xt, xt)
    scat = Sz - s[..., :, None] * s[..., None, :] / q[..., None, None]
    _, scat_ok = batch_cholesky(scat)
    ok &= scat_ok.all(axis=-1)
    eye = np.eye(xt.shape[-1])
    scat = np.where(ok[:, None, None, None], scat, eye)

    closed = profile.closed_form_mean(scat, s, q)
    if mean_estimator == "exact":
        # the previous mean is one of the starts, so the step cannot lose likelihood
        xbar = s / q[..., None]
        new_mean = profile.best_mean(scat, s, q, [mean, closed, xbar[:, 0], xbar[:, 1]])
    elif mean_estimator == "closed_form":
        new_mean = closed
    else:
        raise ValueError(f"unknown mean estimator {mean_estimator!r}")

    new_covs = profile.group_scatter(scat, s, q, new_mean) / q[..., None, None]
    _, cov_ok = batch_cholesky(new_covs)
    ok &= cov_ok.all(axis=-1)
    return new_priors, new_mean, new_covs, np.swapaxes(resp, 1, 2), ok


def nlj_initial_arrays(xt):
    """Initial mixture: equal priors, pooled mean, covariances 0.5x and 1.5x."""
    m_win, n_samples, n_dims = xt.shape
    mean = xt.mean(axis=1)
    d = xt - mean[:, None, :]
    cov = np.einsum("mki,mkj->mij", d, d) / n_samples
    priors = np.full((m_win, 2), 0.5)
    covs = np.stack([0.5 * cov, 1.5 * cov], axis=1)
    return priors, mean, covs


def _state_from_arrays(priors, mean, covs, resp, iteration) -> MixtureState:
    return MixtureState(
        priors=priors,
        means=np.stack([mean, mean]),
        covariances=covs,
        responsibilities=resp,
        iteration=iteration,
    )


def lvm_nlj_initial_state(window: MeasurementWindow) -> MixtureState:
    priors, mean, covs = nlj_initial_arrays(np.swapaxes(as_batch(window), 1, 2))
    return _state_from_arrays(priors[0], mean[0], covs[0], None, 0)


def lvm_nlj_em_step(
    window: MeasurementWindow,
    state: MixtureState,
    mean_estimator: MeanEstimator = "exact",
) -> MixtureState:
    """One EM iteration on a single window (original measurement units).

    Raises:
        EmCollapse: a component lost its support or its covariance is not PD.
    """
    xt = np.swapaxes(as_batch(window), 1, 2)
    priors, mean, covs, resp, ok = nlj_em_step_arrays(
        xt, state.priors[None], state.means[0][None], state.covariances[None], mean_estimator
    )
    if not ok[0]:
        raise EmCollapse("mixture component collapsed")
    return _state_from_arrays(priors[0], mean[0], covs[0], resp[0], state.iteration + 1)


def nlj_lvm_batch(
    z: np.ndarray,
    n_iters: int = EM_ITERS,
    mean_estimator: MeanEstimator = "exact",
    tol: float | None = EM_TOL,
):
    """LVM-NLJ-D statistics; collapsed or degenerate windows score 0."""
    z = as_batch(z)
    n_dims, n_samples = z.shape[1:]
    x, _, _, ok = whiten(z)
    xt = np.swapaxes(x, 1, 2)
    step = lambda xt_, *st: nlj_em_step_arrays(xt_, *st, mean_estimator=mean_estimator)  # noqa: E731
    _, ll, em_ok, _ = mixture.run_em(xt, nlj_initial_arrays(xt), step, n_iters, tol)
    ok &= em_ok
    stats = np.where(ok, ll - mixture.h0_loglik_whitened(n_samples, n_dims), 0.0)
    return stats, ~ok


def nlj_lvm_trace(z: np.ndarray, max_iters: int, mean_estimator: MeanEstimator = "exact"):
    """Mixture log-likelihood (original units) after each EM iteration.

    Returns ``(trace (M, max_iters + 1), ok)``.
    """
    z = as_batch(z)
    x, _, L, ok = whiten(z)
    xt = np.swapaxes(x, 1, 2)
    step = lambda xt_, *st: nlj_em_step_arrays(xt_, *st, mean_estimator=mean_estimator)  # noqa: E731
    *_, em_ok, _, hist = mixture.run_em(xt, nlj_initial_arrays(xt), step, max_iters, None, trace=True)
    return hist - whitening_log_jacobian(L, z.shape[-1])[:, None], ok & em_ok


def lvm_nlj_statistic(
    window: MeasurementWindow,
    n_iters: int = EM_ITERS,
    threshold: float | None = None,
    mean_estimator: MeanEstimator = "exact",
    tol: float | None = EM_TOL,
) -> DetectionOutcome:
    """Mixture log-likelihood ratio against the H0 Gaussian fit.

    An EM collapse yields statistic 0 with the ``em_collapse`` flag.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    z = as_batch(window)
    n_dims, n_samples = z.shape[1:]
    x, mean, L, ok = whiten(z)
    if not ok[0]:
        raise DegenerateWindow("sample covariance is not positive definite")
    xt = np.swapaxes(x, 1, 2)
    step = lambda xt_, *st: nlj_em_step_arrays(xt_, *st, mean_estimator=mean_estimator)  # noqa: E731
    (priors, m, covs), ll, em_ok, iters = mixture.run_em(xt, nlj_initial_arrays(xt), step, n_iters, tol)
    if not em_ok[0]:
        return DetectionOutcome(statistic=0.0, flags=("em_collapse",)).decide(threshold)
    L = L[0]
    return DetectionOutcome(
        statistic=float(ll[0] - mixture.h0_loglik_whitened(n_samples, n_dims)),
        nuisance={
            "priors": priors[0],
            "mean": mean[0] + L @ m[0],
            "covariances": np.einsum("ij,ajk,lk->ail", L, covs[0], L),
            "iterations": int(iters[0]),
        },
    ).decide(threshold)
