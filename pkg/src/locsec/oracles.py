"""Slow reference implementations used to cross-check the detectors.

Everything here works on small windows (``K <= 10``, ``N <= 2``) and avoids
the algebra the fast paths rely on: statistics come from direct numerical
maximisation of the raw Gaussian log-likelihoods (coarse grid, then
Nelder-Mead), cubic roots from companion-matrix eigenvalues, and the EM
recursions from scalar loops.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import minimize

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Elementary oracles
# ---------------------------------------------------------------------------


def naive_mean(data: np.ndarray, start: int, stop: int) -> np.ndarray:
    n_dims = data.shape[0]
    out = np.zeros(n_dims)
    for k in range(start - 1, stop):
        for n in range(n_dims):
            out[n] += data[n, k]
    return out / (stop - start + 1)


def naive_scatter(data: np.ndarray, start: int, stop: int, center: np.ndarray) -> np.ndarray:
    n_dims = data.shape[0]
    out = np.zeros((n_dims, n_dims))
    for k in range(start - 1, stop):
        for i in range(n_dims):
            for j in range(n_dims):
                out[i, j] += (data[i, k] - center[i]) * (data[j, k] - center[j])
    return out


def eig_logdet(matrix: np.ndarray) -> float:
    return float(np.sum(np.log(np.linalg.eigvalsh(matrix))))


def explicit_log_pdf(z: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    d = z - mean
    inv = np.linalg.inv(cov)
    return float(-0.5 * len(z) * LOG_2PI - 0.5 * math.log(np.linalg.det(cov)) - 0.5 * d @ inv @ d)


def companion_roots(c3: float, c2: float, c1: float, c0: float, imag_tol: float = 1e-8) -> np.ndarray:
    comp = np.array([[-c2 / c3, -c1 / c3, -c0 / c3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    eig = np.linalg.eigvals(comp)
    return np.sort(eig[np.abs(eig.imag) < imag_tol].real)


def _gauss_ll(x: np.ndarray, mean: float, var: float) -> float:
    return float(np.sum(-0.5 * LOG_2PI - 0.5 * math.log(var) - 0.5 * (x - mean) ** 2 / var))


def _refine(fun, x0: np.ndarray) -> tuple[np.ndarray, float]:
    res = minimize(fun, x0, method="Nelder-Mead",
                   options={"xatol": 1e-11, "fatol": 1e-13, "maxiter": 40000, "maxfev": 40000})
    # a restart from the end point guards against early simplex collapse
    res = minimize(fun, res.x, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 40000, "maxfev": 40000})
    return res.x, float(res.fun)


def _grid(center: float, half: float, n: int = 41) -> np.ndarray:
    return np.linspace(center - half, center + half, n)


# ---------------------------------------------------------------------------
# H0 fits by direct maximisation
# ---------------------------------------------------------------------------


def h0_diag_loglik_direct(x: np.ndarray) -> tuple[float, float, float]:
    """Maximise the scalar Gaussian likelihood over (mean, log variance)."""
    spread = float(np.ptp(x)) or 1.0
    means = _grid(float(np.median(x)), spread)
    lvars = np.linspace(math.log(spread**2 / 100), math.log(spread**2 * 2), 41)
    best = max(((_gauss_ll(x, m, math.exp(lv)), m, lv) for m in means for lv in lvars))
    p, f = _refine(lambda p: -_gauss_ll(x, p[0], math.exp(p[1])), np.array(best[1:]))
    return -f, p[0], math.exp(p[1])


# ---------------------------------------------------------------------------
# NLJ-D-UM
# ---------------------------------------------------------------------------


def nlj_um_dimension_direct(x: np.ndarray, k0: int) -> tuple[float, bool]:
    """Best alternative log-likelihood for one dimension at change point ``k0``.

    The alternative has one mean and two variances. Returns the log-likelihood
    ratio against the null fit and whether the fitted variance increases.
    """
    pre, post = x[:k0], x[k0:]

    def nll(p):
        return -(_gauss_ll(pre, p[0], math.exp(p[1])) + _gauss_ll(post, p[0], math.exp(p[2])))

    spread = float(np.ptp(x)) or 1.0
    means = _grid(float(np.mean(x)), spread, 41)
    lv = np.linspace(math.log(spread**2 / 400), math.log(spread**2 * 2), 41)
    # 41^3 grid evaluated by broadcasting: axes (mean, log var pre, log var post)
    a = lv[None, :, None]
    b = lv[None, None, :]
    sq_pre = ((pre[:, None] - means[None, :]) ** 2).sum(axis=0)[:, None, None]
    sq_post = ((post[:, None] - means[None, :]) ** 2).sum(axis=0)[:, None, None]
    grid_nll = (0.5 * len(pre) * (LOG_2PI + a) + 0.5 * sq_pre / np.exp(a)
                + 0.5 * len(post) * (LOG_2PI + b) + 0.5 * sq_post / np.exp(b))
    i, j, k = np.unravel_index(np.argmin(grid_nll), grid_nll.shape)
    p, f = _refine(nll, np.array([means[i], lv[j], lv[k]]))
    h0, _, _ = h0_diag_loglik_direct(x)
    return -f - h0, bool(p[2] > p[1])


def nlj_um_statistic_direct(data: np.ndarray, domain) -> float:
    best = -math.inf
    for k0 in domain:
        total = 0.0
        for n in range(data.shape[0]):
            llr, increase = nlj_um_dimension_direct(data[n], k0)
            if increase:
                total += llr
        best = max(best, total)
    return best


# ---------------------------------------------------------------------------
# NLJ-D-CM
# ---------------------------------------------------------------------------


def cm_profile_value(data: np.ndarray, k0: int, m: np.ndarray) -> float:
    """``-K0/2 log det T0(m) - K1/2 log det T1(m)`` with explicit scatters."""
    n_samples = data.shape[1]
    t0 = naive_scatter(data, 1, k0, m)
    t1 = naive_scatter(data, k0 + 1, n_samples, m)
    return -0.5 * k0 * math.log(np.linalg.det(t0)) - 0.5 * (n_samples - k0) * math.log(np.linalg.det(t1))


def cm_mean_direct(data: np.ndarray, k0: int) -> np.ndarray:
    """Shared mean maximising the two-segment profile likelihood (N = 2)."""
    center = data.mean(axis=1)
    spread = float(np.ptp(data)) or 1.0
    g0 = _grid(center[0], spread)
    g1 = _grid(center[1], spread)
    best = max(((cm_profile_value(data, k0, np.array([a, b])), a, b) for a in g0 for b in g1))
    p, _ = _refine(lambda p: -cm_profile_value(data, k0, p), np.array(best[1:]))
    return p


def nlj_cm_statistic_direct(data: np.ndarray, domain) -> float:
    """Gated maximum over change points of the directly maximised log-GLRT."""
    n_dims, n_samples = data.shape
    m0 = data.mean(axis=1)
    h0 = -0.5 * n_samples * math.log(np.linalg.det(naive_scatter(data, 1, n_samples, m0) / n_samples))
    best = -math.inf
    for k0 in domain:
        m = cm_mean_direct(data, k0)
        k1 = n_samples - k0
        c0 = naive_scatter(data, 1, k0, m) / k0
        c1 = naive_scatter(data, k0 + 1, n_samples, m) / k1
        if np.linalg.eigvalsh(c1 - c0)[0] <= 0:
            continue
        val = -0.5 * k0 * math.log(np.linalg.det(c0)) - 0.5 * k1 * math.log(np.linalg.det(c1)) - h0
        best = max(best, val)
    return 0.0 if best == -math.inf else best


# ---------------------------------------------------------------------------
# Spoofing GLRTs
# ---------------------------------------------------------------------------


def sp_um_statistic_direct(data: np.ndarray, domain) -> float:
    """Per-dimension direct fits of (pre mean, post mean, shared variance)."""
    best = -math.inf
    for k0 in domain:
        total = 0.0
        for n in range(data.shape[0]):
            x = data[n]
            pre, post = x[:k0], x[k0:]

            def nll(p):
                v = math.exp(p[2])
                return -(_gauss_ll(pre, p[0], v) + _gauss_ll(post, p[1], v))

            spread = float(np.ptp(x)) or 1.0
            gm0 = _grid(float(pre.mean()), spread, 11)
            gm1 = _grid(float(post.mean()), spread, 11)
            lv = np.linspace(math.log(spread**2 / 400), math.log(spread**2 * 2), 11)
            start = min(itertools.product(gm0, gm1, lv), key=nll)
            _, f = _refine(nll, np.array(start))
            h0, _, _ = h0_diag_loglik_direct(x)
            total += -f - h0
        best = max(best, total)
    return best


def sp_cm_statistic_direct(data: np.ndarray, domain) -> float:
    """Direct maximisation over both segment means with the covariance profiled out."""
    n_dims, n_samples = data.shape
    m0 = data.mean(axis=1)
    h0 = -0.5 * n_samples * math.log(np.linalg.det(naive_scatter(data, 1, n_samples, m0) / n_samples))
    best = -math.inf
    for k0 in domain:
        def negll(p):
            s = naive_scatter(data, 1, k0, p[:n_dims]) + naive_scatter(data, k0 + 1, n_samples, p[n_dims:])
            det = np.linalg.det(s / n_samples)
            return math.inf if det <= 0 else 0.5 * n_samples * math.log(det)

        start = np.concatenate([data[:, :k0].mean(axis=1), data[:, k0:].mean(axis=1)])
        # coarse jitter around the start, then simplex refinement
        rng = np.random.default_rng(k0)
        cands = [start] + [start + rng.normal(scale=0.5, size=start.size) for _ in range(20)]
        x0 = min(cands, key=negll)
        _, f = _refine(negll, x0)
        best = max(best, -f - h0)
    return best


# ---------------------------------------------------------------------------
# Scalar EM oracles (N = 1)
# ---------------------------------------------------------------------------


def _npdf_log(x: float, m: float, v: float) -> float:
    return -0.5 * LOG_2PI - 0.5 * math.log(v) - 0.5 * (x - m) ** 2 / v


def _responsibilities(z, priors, means, variances):
    resp = []
    for x in z:
        logs = [math.log(priors[a]) + _npdf_log(x, means[a], variances[a]) for a in range(2)]
        top = max(logs)
        w = [math.exp(v - top) for v in logs]
        tot = sum(w)
        resp.append([wi / tot for wi in w])
    return resp


def scalar_mixture_loglik(z, priors, means, variances) -> float:
    total = 0.0
    for x in z:
        logs = [math.log(priors[a]) + _npdf_log(x, means[a], variances[a]) for a in range(2)]
        top = max(logs)
        total += top + math.log(sum(math.exp(v - top) for v in logs))
    return total


def scalar_nlj_em_step(z, priors, mean, variances):
    """Shared mean, two variances. The M-step mean is the best real root of
    the stationarity cubic ``q1 G1(m) S2(m) + q2 G2(m) S1(m) = 0``."""
    resp = _responsibilities(z, priors, [mean, mean], variances)
    q = [sum(r[a] for r in resp) for a in range(2)]
    new_priors = [qa / len(z) for qa in q]
    # G_a(m) = g1_a - q_a m,  S_a(m) = s2_a - 2 g1_a m + q_a m^2
    g1 = [sum(r[a] * x for r, x in zip(resp, z)) for a in range(2)]
    s2 = [sum(r[a] * x * x for r, x in zip(resp, z)) for a in range(2)]
    poly = np.zeros(4)
    for a, b in ((0, 1), (1, 0)):
        lin = np.array([-q[a], g1[a]])  # -q m + g1
        quad = np.array([q[b], -2.0 * g1[b], s2[b]])
        poly += q[a] * np.polymul(lin, quad)
    roots = companion_roots(*poly)

    def profile(m):
        return sum(-0.5 * q[a] * math.log((s2[a] - 2 * g1[a] * m + q[a] * m * m) / q[a]) for a in range(2))

    m_new = max(roots, key=profile)
    new_vars = [(s2[a] - 2 * g1[a] * m_new + q[a] * m_new**2) / q[a] for a in range(2)]
    return new_priors, float(m_new), new_vars, resp


def scalar_sp_em_step(z, priors, means, variance):
    """Two means, one shared variance."""
    resp = _responsibilities(z, priors, means, [variance, variance])
    q = [sum(r[a] for r in resp) for a in range(2)]
    new_priors = [qa / len(z) for qa in q]
    new_means = [sum(r[a] * x for r, x in zip(resp, z)) / q[a] for a in range(2)]
    new_var = sum(r[a] * (x - new_means[a]) ** 2 for r, x in zip(resp, z) for a in range(2)) / len(z)
    return new_priors, new_means, new_var, resp


def _h0_scalar(z):
    m = sum(z) / len(z)
    v = sum((x - m) ** 2 for x in z) / len(z)
    return m, v, sum(_npdf_log(x, m, v) for x in z)


def scalar_nlj_trace(z, n_iters: int, tol: float | None = 1e-8):
    """Log-likelihoods after each EM iteration (index 0 = initial state)."""
    m, v, _ = _h0_scalar(z)
    priors, mean, variances = [0.5, 0.5], m, [0.5 * v, 1.5 * v]
    lls = [scalar_mixture_loglik(z, priors, [mean, mean], variances)]
    for _ in range(n_iters):
        priors, mean, variances, _ = scalar_nlj_em_step(z, priors, mean, variances)
        lls.append(scalar_mixture_loglik(z, priors, [mean, mean], variances))
        if tol is not None and abs(lls[-1] - lls[-2]) / abs(lls[-1]) < tol:
            break
    return lls


def scalar_sp_trace(z, n_iters: int, tol: float | None = 1e-8):
    _, v, _ = _h0_scalar(z)
    half = len(z) // 2
    priors = [0.5, 0.5]
    means = [sum(z[:half]) / half, sum(z[half:]) / (len(z) - half)]
    variance = v
    lls = [scalar_mixture_loglik(z, priors, means, [variance, variance])]
    for _ in range(n_iters):
        priors, means, variance, _ = scalar_sp_em_step(z, priors, means, variance)
        lls.append(scalar_mixture_loglik(z, priors, means, [variance, variance]))
        if tol is not None and abs(lls[-1] - lls[-2]) / abs(lls[-1]) < tol:
            break
    return lls


def scalar_lvm_statistic(z, kind: str, n_iters: int = 10) -> float:
    trace = scalar_nlj_trace(z, n_iters) if kind == "nlj" else scalar_sp_trace(z, n_iters)
    return trace[-1] - _h0_scalar(z)[2]


def scalar_delta_sequence(z, kind: str, max_iters: int) -> list[float]:
    trace = scalar_nlj_trace(z, max_iters, None) if kind == "nlj" else scalar_sp_trace(z, max_iters, None)
    return [abs((trace[h] - trace[h - 1]) / trace[h]) for h in range(1, len(trace))]
