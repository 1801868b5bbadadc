from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from locsec import oracles
from locsec.core import MeasurementWindow
from locsec.detectors import ChangePointDomain, get_detector, nlj
from locsec.errors import ConfigError, DegenerateWindow


def _jammed(rng, n_dims, n_samples, onset=None, scale=3.0):
    z = rng.normal(size=(n_dims, n_samples))
    onset = n_samples // 2 if onset is None else onset
    z[:, onset:] *= scale
    return z


def _affine_diag(rng, z):
    d = rng.uniform(0.2, 5.0, size=(z.shape[0], 1)) * rng.choice([-1, 1], size=(z.shape[0], 1))
    return d * z + rng.normal(size=(z.shape[0], 1)) * 10


def _affine_full(rng, z):
    while True:
        a = rng.normal(size=(z.shape[0], z.shape[0]))
        if abs(np.linalg.det(a)) > 0.1:
            return a @ z + rng.normal(size=(z.shape[0], 1)) * 10


# -- NLJ-D-UM ------------------------------------------------------------------


def test_um_variance_quadruples_across_split():
    w = MeasurementWindow(np.array([[1, -1, 1, -1, 3, -3, 3, -3]], dtype=float))
    out = nlj.nlj_um_statistic(w, ChangePointDomain((4,)))
    assert out.statistic > 0
    assert out.active_set == (1,)
    assert out.k0_hat == 4


def test_um_shrinking_variance_gives_zero():
    # every split leaves the later segment with the smaller variance
    sign = np.tile([1.0, -1.0], 12)
    z = np.stack([sign * np.r_[np.full(12, a), np.full(12, a / 4)] for a in (2.0, 1.0, 5.0)])
    out = nlj.nlj_um_statistic(MeasurementWindow(z))
    assert out.statistic == 0.0
    assert out.active_set == ()
    assert out.decide(0.0).decision is False


def test_um_matches_grid_oracle():
    rng = np.random.default_rng(11)
    dom = ChangePointDomain.between(2, 6)
    for _ in range(2):
        z = _jammed(rng, 2, 8, scale=rng.uniform(0.5, 3.0))
        got = nlj.nlj_um_statistic(MeasurementWindow(z), dom).statistic
        assert got == pytest.approx(oracles.nlj_um_statistic_direct(z, dom.candidates), abs=1e-4)


def test_um_nuisance_reports_pooled_fit_outside_active_set():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(2, 20))
    z[0, 10:] *= 4.0
    z[1, 10:] *= 0.1
    out = nlj.nlj_um_statistic(MeasurementWindow(z), ChangePointDomain((10,)))
    assert out.active_set == (1,)
    assert out.nuisance["var_pre"][1] == out.nuisance["var_post"][1] == pytest.approx(z[1].var())
    assert out.nuisance["var_post"][0] > out.nuisance["var_pre"][0]


def test_um_affine_invariance(rng):
    for _ in range(20):
        z = _jammed(rng, 3, 24, onset=int(rng.integers(4, 20)), scale=rng.uniform(1, 3))
        ref = nlj.nlj_um_statistic(MeasurementWindow(z))
        got = nlj.nlj_um_statistic(MeasurementWindow(_affine_diag(rng, z)))
        assert got.statistic == pytest.approx(ref.statistic, rel=1e-8, abs=1e-10)
        assert got.k0_hat == ref.k0_hat


def test_um_within_segment_permutation(rng):
    for _ in range(10):
        z = _jammed(rng, 3, 16, scale=2.0)
        for k0 in (4, 8, 11):
            perm = np.r_[rng.permutation(k0), k0 + rng.permutation(16 - k0)]
            dom = ChangePointDomain((k0,))
            a = nlj.nlj_um_statistic(MeasurementWindow(z), dom).statistic
            b = nlj.nlj_um_statistic(MeasurementWindow(z[:, perm]), dom).statistic
            assert b == pytest.approx(a, rel=1e-10, abs=1e-12)


def test_um_domain_and_degeneracy_errors():
    z = np.random.default_rng(0).normal(size=(2, 10))
    with pytest.raises(ConfigError):
        nlj.nlj_um_statistic(MeasurementWindow(z), ChangePointDomain((1, 2)))
    with pytest.raises(ConfigError):
        ChangePointDomain(())
    z[1] = 4.0
    with pytest.raises(DegenerateWindow):
        nlj.nlj_um_statistic(MeasurementWindow(z))


def test_um_batch_flags_degenerate_windows():
    z = np.random.default_rng(1).normal(size=(3, 2, 10))
    z[1, 0] = 1.0
    stats, errors = nlj.nlj_um_batch(z)
    assert errors.tolist() == [False, True, False]
    assert stats[1] == 0.0
    assert stats[0] == pytest.approx(nlj.nlj_um_statistic(MeasurementWindow(z[0])).statistic, abs=1e-12)


# -- NLJ-D-CM ------------------------------------------------------------------


def test_cm_gate_failure_everywhere_gives_zero():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(2, 24))
    z[:, 12:] *= 0.05
    out = nlj.nlj_cm_statistic(MeasurementWindow(z))
    assert out.statistic == 0.0
    assert out.k0_hat is None
    assert "gate_failed" in out.flags


def test_cm_reduces_to_um_for_one_dimension(rng):
    checked = 0
    for _ in range(40):
        z = _jammed(rng, 1, 16, onset=int(rng.integers(4, 12)), scale=rng.uniform(1.5, 4))
        dom = ChangePointDomain.between(2, 14)
        um = nlj.nlj_um_statistic(MeasurementWindow(z), dom)
        cm = nlj.nlj_cm_statistic(MeasurementWindow(z), dom)
        if um.statistic > 0:
            # UM scores a failed gate as 0 while CM drops the candidate, so
            # the two coincide whenever some candidate passes
            assert cm.statistic == pytest.approx(um.statistic, rel=1e-9, abs=1e-9)
            assert cm.k0_hat == um.k0_hat
            checked += 1
    assert checked > 20


def test_cm_mean_matches_direct_maximisation():
    rng = np.random.default_rng(12)
    dom = ChangePointDomain.between(3, 7)
    for _ in range(2):
        z = _jammed(rng, 2, 10, scale=rng.uniform(0.5, 3.0))
        got = nlj.cm_candidate_means(MeasurementWindow(z), dom)
        ref = np.array([oracles.cm_mean_direct(z, k) for k in dom.candidates])
        np.testing.assert_allclose(got, ref, atol=1e-5)


def test_cm_exact_mean_dominates_closed_form(rng):
    dom = ChangePointDomain.between(4, 16)
    for _ in range(10):
        z = _jammed(rng, 3, 20, scale=2.0)
        exact = nlj.cm_candidate_means(MeasurementWindow(z), dom, "exact")
        closed = nlj.cm_candidate_means(MeasurementWindow(z), dom, "closed_form")
        for j, k0 in enumerate(dom.candidates):
            assert oracles.cm_profile_value(z, k0, exact[j]) >= oracles.cm_profile_value(z, k0, closed[j]) - 1e-9


def test_cm_matches_direct_statistic():
    rng = np.random.default_rng(13)
    dom = ChangePointDomain.between(3, 7)
    z = _jammed(rng, 2, 10, scale=3.0)
    got = nlj.nlj_cm_statistic(MeasurementWindow(z), dom).statistic
    assert got == pytest.approx(oracles.nlj_cm_statistic_direct(z, dom.candidates), abs=1e-4)


@pytest.mark.parametrize("estimator", ["exact", "closed_form"])
def test_cm_affine_invariance(rng, estimator):
    for _ in range(20):
        z = _jammed(rng, 3, 24, onset=int(rng.integers(6, 18)), scale=rng.uniform(1.5, 3))
        ref = nlj.nlj_cm_statistic(MeasurementWindow(z), mean_estimator=estimator)
        got = nlj.nlj_cm_statistic(MeasurementWindow(_affine_full(rng, z)), mean_estimator=estimator)
        assert got.statistic == pytest.approx(ref.statistic, rel=1e-8, abs=1e-9)
        assert got.k0_hat == ref.k0_hat


def test_cm_within_segment_permutation(rng):
    for _ in range(10):
        z = _jammed(rng, 2, 16, scale=2.5)
        for k0 in (5, 8, 11):
            perm = np.r_[rng.permutation(k0), k0 + rng.permutation(16 - k0)]
            dom = ChangePointDomain((k0,))
            a = nlj.nlj_cm_statistic(MeasurementWindow(z), dom).statistic
            b = nlj.nlj_cm_statistic(MeasurementWindow(z[:, perm]), dom).statistic
            assert b == pytest.approx(a, rel=1e-9, abs=1e-10)


def test_cm_domain_floor_enforced():
    z = np.random.default_rng(0).normal(size=(3, 12))
    with pytest.raises(ConfigError):
        nlj.nlj_cm_statistic(MeasurementWindow(z), ChangePointDomain.between(3, 8))
    assert nlj.cm_domain(24, 3).candidates == tuple(range(4, 21))


def test_cm_rejects_rank_deficient_window():
    z = np.random.default_rng(0).normal(size=(2, 12))
    z[1] = 2 * z[0]
    with pytest.raises(DegenerateWindow):
        nlj.nlj_cm_statistic(MeasurementWindow(z))


# -- shared properties -------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 16), elements=st.floats(-100, 100, allow_subnormal=False)))
def test_glrt_statistics_non_negative(z):
    if np.any(z.std(axis=1) < 1e-3) or np.linalg.cond(np.cov(z)) > 1e8:
        return
    assert nlj.nlj_um_statistic(MeasurementWindow(z)).statistic >= -1e-9
    assert nlj.nlj_cm_statistic(MeasurementWindow(z)).statistic >= -1e-9


@pytest.mark.parametrize("det_id", ["nlj-um", "nlj-cm", "nlj-lvm"])
def test_batch_matches_single_window(rng, det_id):
    det = get_detector(det_id)
    z = np.stack([_jammed(rng, 3, 24, scale=s) for s in (1.0, 2.0, 3.0, 0.5)])
    stats, errors = det.batch_statistics(z)
    assert not errors.any()
    for i in range(4):
        assert stats[i] == pytest.approx(det.evaluate(z[i]).statistic, rel=1e-10, abs=1e-10)


# -- LVM-NLJ-D statistic -------------------------------------------------------------


def test_lvm_statistic_decision_and_nuisance(rng):
    z = _jammed(rng, 3, 32, onset=16, scale=np.sqrt(10.0))
    out = nlj.lvm_nlj_statistic(MeasurementWindow(z), threshold=0.0)
    assert out.k0_hat is None
    assert out.decision is True
    assert np.isclose(out.nuisance["priors"].sum(), 1.0)
    assert 1 <= out.nuisance["iterations"] <= 10
    np.testing.assert_allclose(out.nuisance["covariances"], np.swapaxes(out.nuisance["covariances"], 1, 2),
                               atol=1e-12)


def test_lvm_statistic_matches_scalar_oracle():
    rng = np.random.default_rng(22)
    for _ in range(5):
        z = rng.normal(size=6) * np.r_[np.ones(3), rng.uniform(1, 4) * np.ones(3)]
        got = nlj.lvm_nlj_statistic(MeasurementWindow(z[None])).statistic
        assert got == pytest.approx(oracles.scalar_lvm_statistic(list(z), "nlj"), abs=1e-8)


def test_lvm_n_iters_validated():
    with pytest.raises(ValueError):
        nlj.lvm_nlj_statistic(MeasurementWindow(np.random.default_rng(0).normal(size=(1, 8))), n_iters=0)
    with pytest.raises(ConfigError):
        get_detector("nlj-lvm", n_iters=0)
