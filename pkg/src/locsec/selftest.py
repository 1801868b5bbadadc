"""Oracle equivalence suite behind ``locsec selftest``.

Each check compares a fast code path with an independent slow computation
from :mod:`locsec.oracles` on small seeded inputs. The whole suite runs in
well under a minute.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from locsec import oracles
from locsec.core import (
    CovMatrix,
    CubicCoefficients,
    GaussianModel,
    MeasurementWindow,
    cholesky_logdet,
    gaussian_log_pdf,
    h0_mle,
    sample_mean,
    scatter_matrix,
    solve_cubic_real,
)
from locsec.detectors import get_detector, nlj, spoof
from locsec.detectors.common import ChangePointDomain, MixtureState
from locsec.harness import calibrate_threshold, empirical_pfa
from locsec.scenario import VALIDATION, AttackScenario, derive_stream, generate_window, location_preset

logger = logging.getLogger(__name__)

SEED = 20240611


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _rng(offset: int) -> np.random.Generator:
    return np.random.default_rng(SEED + offset)


# ---------------------------------------------------------------------------
# stat-core
# ---------------------------------------------------------------------------


def check_sample_mean() -> tuple[bool, str]:
    z = _rng(1).normal(size=(3, 8)) * 10
    w = MeasurementWindow(z)
    err = max(np.max(np.abs(sample_mean(w, a, b) - oracles.naive_mean(z, a, b)) / (1 + np.abs(oracles.naive_mean(z, a, b))))
              for a in range(1, 9) for b in range(a, 9))
    return err <= 1e-12, f"max rel err {err:.2e}"


def check_scatter() -> tuple[bool, str]:
    rng = _rng(2)
    z = rng.normal(size=(3, 10))
    c = rng.normal(size=3)
    w = MeasurementWindow(z)
    err = max(np.max(np.abs(scatter_matrix(w, a, b, c) - oracles.naive_scatter(z, a, b, c)))
              for a in range(1, 11) for b in range(a, 11))
    return err <= 1e-12, f"max abs err {err:.2e}"


def check_logdet() -> tuple[bool, str]:
    rng = _rng(3)
    err = 0.0
    for _ in range(50):
        a = rng.normal(size=(4, 4))
        m = a @ a.T + np.eye(4)
        err = max(err, abs(cholesky_logdet(m).log_det - oracles.eig_logdet(m)))
    return err <= 1e-9, f"max abs err {err:.2e}"


def check_log_pdf() -> tuple[bool, str]:
    rng = _rng(4)
    err = 0.0
    for _ in range(50):
        a = rng.normal(size=(3, 3))
        cov = a @ a.T + 0.5 * np.eye(3)
        mean = rng.normal(size=3)
        z = rng.normal(size=3) * 2
        got = gaussian_log_pdf(z, GaussianModel(mean, CovMatrix.full(cov)))
        err = max(err, abs(got - oracles.explicit_log_pdf(z, mean, cov)))
    return err <= 1e-10, f"max abs err {err:.2e}"


def check_h0_grid() -> tuple[bool, str]:
    z = _rng(5).normal(size=(2, 50)) * [[2.0], [0.5]] + [[1.0], [-3.0]]
    model = h0_mle(MeasurementWindow(z), "diagonal")
    mean, var = model.mean, model.covariance.values
    best = sum(gaussian_log_pdf(z[:, k], model) for k in range(50))
    # 21^4 grid around the estimate, evaluated in closed form per dimension
    offs = np.linspace(-0.5, 0.5, 21)
    scales = np.exp(np.linspace(-0.5, 0.5, 21))
    per_dim = []
    for n in range(2):
        m = mean[n] + offs * np.sqrt(var[n])
        v = var[n] * scales
        sq = ((z[n][None, :] - m[:, None]) ** 2).sum(axis=1)
        per_dim.append(-0.5 * 50 * (np.log(2 * np.pi) + np.log(v)[None, :]) - 0.5 * sq[:, None] / v[None, :])
    grid = per_dim[0][:, :, None, None] + per_dim[1][None, None, :, :]
    gap = best - grid.max()
    return gap >= -1e-9, f"MLE minus best grid point {gap:.3e}"


def check_cubic() -> tuple[bool, str]:
    rng = _rng(6)
    worst = 0.0
    for _ in range(200):
        c = rng.normal(size=4)
        got = np.array(solve_cubic_real(CubicCoefficients(*c)))
        ref = oracles.companion_roots(*c)
        if got.size != ref.size:
            return False, f"root count {got.size} vs {ref.size} for {c}"
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst <= 1e-7, f"max root err {worst:.2e}"


# ---------------------------------------------------------------------------
# GLRT statistics against direct maximisation
# ---------------------------------------------------------------------------


def _small_windows(offset: int, n_dims: int, n_samples: int, count: int, jam: bool) -> list[np.ndarray]:
    rng = _rng(offset)
    out = []
    for _ in range(count):
        z = rng.normal(size=(n_dims, n_samples))
        if jam:
            z[:, n_samples // 2:] *= rng.uniform(0.5, 3.0, size=(n_dims, 1))
        else:
            z[:, n_samples // 2:] += rng.uniform(-2.0, 2.0, size=(n_dims, 1))
        out.append(z)
    return out


def check_nlj_um_direct() -> tuple[bool, str]:
    dom = ChangePointDomain.between(2, 6)
    err = 0.0
    for z in _small_windows(10, 2, 8, 4, jam=True):
        got = nlj.nlj_um_statistic(MeasurementWindow(z), dom).statistic
        err = max(err, abs(got - oracles.nlj_um_statistic_direct(z, dom.candidates)))
    return err <= 1e-4, f"max abs err {err:.2e}"


def check_nlj_cm_mean_direct() -> tuple[bool, str]:
    dom = ChangePointDomain.between(3, 7)
    err = 0.0
    for z in _small_windows(11, 2, 10, 3, jam=True):
        got = nlj.cm_candidate_means(MeasurementWindow(z), dom)
        ref = np.array([oracles.cm_mean_direct(z, k) for k in dom.candidates])
        err = max(err, float(np.max(np.abs(got - ref))))
    return err <= 1e-5, f"max argument err {err:.2e}"


def check_nlj_cm_direct() -> tuple[bool, str]:
    dom = ChangePointDomain.between(3, 7)
    err = 0.0
    for z in _small_windows(12, 2, 10, 3, jam=True):
        got = nlj.nlj_cm_statistic(MeasurementWindow(z), dom).statistic
        err = max(err, abs(got - oracles.nlj_cm_statistic_direct(z, dom.candidates)))
    return err <= 1e-4, f"max abs err {err:.2e}"


def check_sp_um_direct() -> tuple[bool, str]:
    dom = ChangePointDomain.between(2, 6)
    err = 0.0
    for z in _small_windows(13, 2, 8, 3, jam=False):
        got = spoof.sp_um_statistic(MeasurementWindow(z), dom).statistic
        err = max(err, abs(got - oracles.sp_um_statistic_direct(z, dom.candidates)))
    return err <= 1e-4, f"max abs err {err:.2e}"


def check_sp_cm_direct() -> tuple[bool, str]:
    dom = ChangePointDomain.between(2, 8)
    err = 0.0
    for z in _small_windows(14, 2, 10, 3, jam=False):
        got = spoof.sp_cm_statistic(MeasurementWindow(z), dom).statistic
        err = max(err, abs(got - oracles.sp_cm_statistic_direct(z, dom.candidates)))
    return err <= 1e-5, f"max abs err {err:.2e}"


# ---------------------------------------------------------------------------
# EM against scalar loops
# ---------------------------------------------------------------------------


def _scalar_windows(offset: int, count: int) -> list[np.ndarray]:
    rng = _rng(offset)
    return [rng.normal(size=6) * rng.uniform(0.5, 3.0) * np.r_[np.ones(3), rng.uniform(1.0, 4.0) * np.ones(3)]
            + rng.uniform(-1, 1) * np.r_[np.zeros(3), np.ones(3)] for _ in range(count)]


def check_nlj_em_steps() -> tuple[bool, str]:
    err = 0.0
    for z in _scalar_windows(20, 10):
        w = MeasurementWindow(z[None])
        state = nlj.lvm_nlj_initial_state(w)
        pri, mean, var = list(state.priors), float(state.means[0, 0]), list(state.covariances[:, 0, 0])
        for _ in range(5):
            state = nlj.lvm_nlj_em_step(w, state)
            pri, mean, var, resp = oracles.scalar_nlj_em_step(list(z), pri, mean, var)
            err = max(err, np.max(np.abs(state.priors - pri)), abs(state.means[0, 0] - mean),
                      np.max(np.abs(state.covariances[:, 0, 0] - var)),
                      np.max(np.abs(state.responsibilities - np.array(resp))))
    return err <= 1e-10, f"max abs err {err:.2e}"


def check_sp_em_steps() -> tuple[bool, str]:
    err = 0.0
    for z in _scalar_windows(21, 10):
        w = MeasurementWindow(z[None])
        state = spoof.lvm_sp_initial_state(w)
        pri, means, var = list(state.priors), list(state.means[:, 0]), float(state.covariances[0, 0, 0])
        for _ in range(5):
            state = spoof.lvm_sp_em_step(w, state)
            pri, means, var, resp = oracles.scalar_sp_em_step(list(z), pri, means, var)
            err = max(err, np.max(np.abs(state.priors - pri)), np.max(np.abs(state.means[:, 0] - means)),
                      abs(state.covariances[0, 0, 0] - var),
                      np.max(np.abs(state.responsibilities - np.array(resp))))
    return err <= 1e-10, f"max abs err {err:.2e}"


def check_lvm_statistics() -> tuple[bool, str]:
    err = 0.0
    for z in _scalar_windows(22, 10):
        w = MeasurementWindow(z[None])
        err = max(err, abs(nlj.lvm_nlj_statistic(w).statistic - oracles.scalar_lvm_statistic(list(z), "nlj")),
                  abs(spoof.lvm_sp_statistic(w).statistic - oracles.scalar_lvm_statistic(list(z), "sp")))
    return err <= 1e-8, f"max abs err {err:.2e}"


def check_em_delta() -> tuple[bool, str]:
    from locsec.harness import relative_changes

    err = 0.0
    for z in _scalar_windows(23, 5):
        for det_id, kind in (("nlj-lvm", "nlj"), ("sp-lvm", "sp")):
            trace, ok = get_detector(det_id).em_trace(z[None, None], 10)
            delta, _ = relative_changes(trace, ok)
            ref = oracles.scalar_delta_sequence(list(z), kind, 10)
            err = max(err, float(np.max(np.abs(delta[0] - ref))))
    return err <= 1e-8, f"max abs err {err:.2e}"


def check_symmetric_fixed_point() -> tuple[bool, str]:
    z = _rng(24).normal(size=(2, 12))
    w = MeasurementWindow(z)
    cov = np.cov(z, bias=True)
    m = z.mean(axis=1)
    st = nlj.lvm_nlj_em_step(w, MixtureState(np.array([0.5, 0.5]), np.stack([m, m]), np.stack([cov, cov])))
    sp = spoof.lvm_sp_em_step(w, MixtureState(np.array([0.5, 0.5]), np.stack([m, m]), np.stack([cov, cov])))
    err = max(np.max(np.abs(st.responsibilities - 0.5)), np.max(np.abs(st.priors - 0.5)),
              np.max(np.abs(st.covariances[0] - st.covariances[1])),
              np.max(np.abs(sp.means[0] - sp.means[1])), np.max(np.abs(sp.priors - 0.5)))
    return err <= 1e-12, f"max asymmetry {err:.2e}"


# ---------------------------------------------------------------------------
# Simulation plumbing
# ---------------------------------------------------------------------------


def check_jam_ratio() -> tuple[bool, str]:
    base = GaussianModel(np.zeros(3), CovMatrix.diagonal(np.ones(3)))
    sc = AttackScenario("noise_jam", base, 3.0, 5000)
    z = generate_window(sc, 10_000, derive_stream(SEED, 0, 0)).data
    ratio = z[:, 5000:].var(axis=1) / z[:, :5000].var(axis=1)
    return bool(np.all((ratio >= 1.8) & (ratio <= 2.2))), f"variance ratios {np.round(ratio, 3).tolist()}"


def check_stream_independence() -> tuple[bool, str]:
    a = derive_stream(SEED, 0, 0).standard_normal(10_000)
    b = derive_stream(SEED, 1, 0).standard_normal(10_000)
    c = derive_stream(SEED, 0, 1).standard_normal(10_000)
    r1 = abs(np.corrcoef(a, b)[0, 1])
    r2 = abs(np.corrcoef(a, c)[0, 1])
    return max(r1, r2) < 0.05, f"|corr| {r1:.4f}, {r2:.4f}"


def check_seed_collisions() -> tuple[bool, str]:
    firsts = {derive_stream(s, 0, 0).standard_normal() for s in range(100)}
    return len(firsts) == 100, f"{len(firsts)} distinct first draws over 100 seeds"


def check_calibration_validity() -> tuple[bool, str]:
    det = get_detector("nlj-um")
    h0 = AttackScenario("none", location_preset())
    cal = calibrate_threshold(det, h0, 24, 0.01, 10_000, SEED)
    pfa, _ = empirical_pfa(det, h0, 24, cal.threshold, 10_000, SEED, VALIDATION)
    return 0.007 <= pfa <= 0.013, f"validation P_fa {pfa:.4f} at threshold {cal.threshold:.4f}"


CHECKS: tuple[tuple[str, Callable[[], tuple[bool, str]]], ...] = (
    ("sample_mean vs summation", check_sample_mean),
    ("scatter_matrix vs double loop", check_scatter),
    ("cholesky_logdet vs eigenvalues", check_logdet),
    ("gaussian_log_pdf vs explicit inverse", check_log_pdf),
    ("h0_mle vs likelihood grid", check_h0_grid),
    ("cubic roots vs companion matrix", check_cubic),
    ("nlj-um vs direct maximisation", check_nlj_um_direct),
    ("nlj-cm mean vs direct maximisation", check_nlj_cm_mean_direct),
    ("nlj-cm vs direct maximisation", check_nlj_cm_direct),
    ("sp-um vs direct maximisation", check_sp_um_direct),
    ("sp-cm vs direct maximisation", check_sp_cm_direct),
    ("nlj-lvm EM steps vs scalar EM", check_nlj_em_steps),
    ("sp-lvm EM steps vs scalar EM", check_sp_em_steps),
    ("mixture statistics vs scalar EM", check_lvm_statistics),
    ("EM relative changes vs scalar EM", check_em_delta),
    ("EM symmetric fixed point", check_symmetric_fixed_point),
    ("jamming variance ratio", check_jam_ratio),
    ("stream independence", check_stream_independence),
    ("seed collision scan", check_seed_collisions),
    ("nlj-um calibration validity", check_calibration_validity),
)


def run_selftest() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the suite
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
        logger.info("%s: %s (%s)", name, "pass" if ok else "FAIL", detail)
    return results
