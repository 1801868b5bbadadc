from __future__ import annotations

import math

import numpy as np
import pytest

from locsec.core import CovMatrix, GaussianModel
from locsec.detectors import get_detector
from locsec.errors import ConfigError
from locsec.harness import (
    ThresholdKey,
    ThresholdTable,
    calibrate_threshold,
    em_convergence,
    estimate_pd,
    map_chunks,
    min_calibration_trials,
    order_statistic_index,
    pfa_sensitivity,
    relative_changes,
    threshold_from_statistics,
)
from locsec.scenario import AttackScenario, ScenarioSpec, location_preset

SEED = 424242


class StubDetector:
    """Returns fixed statistics in trial order, optionally flagging errors."""

    id = "stub"

    def __init__(self, stats, errors=None):
        self.stats = np.asarray(stats, dtype=float)
        self.errors = np.zeros(self.stats.size, bool) if errors is None else np.asarray(errors, bool)
        self.calls = 0

    def batch_statistics(self, z):
        m = z.shape[0]
        s = self.stats[self.calls:self.calls + m]
        e = self.errors[self.calls:self.calls + m]
        self.calls += m
        return s, e


class StubTrace:
    """EM trace that settles after the first iteration."""

    def em_trace(self, z, max_iters):
        m = z.shape[0]
        trace = np.full((m, max_iters + 1), -50.0)
        trace[:, 0] = -80.0
        return trace, np.ones(m, bool)


def _null():
    return AttackScenario("none", location_preset())


# -- thresholds ------------------------------------------------------------------


def test_stub_order_statistic():
    res = calibrate_threshold(StubDetector(np.arange(1, 11)), _null(), 8, 0.5, 10, SEED,
                              enforce_min_trials=False, chunk_size=10)
    assert res.threshold == 5.0


@pytest.mark.parametrize("n,pfa,idx", [(10, 0.5, 5), (10_000, 0.01, 9900), (100_000, 0.01, 99_000), (7, 0.1, 7)])
def test_order_statistic_index(n, pfa, idx):
    assert order_statistic_index(n, pfa) == idx


def test_threshold_ignores_input_order(rng):
    s = rng.normal(size=1000)
    assert threshold_from_statistics(s, 0.01) == threshold_from_statistics(rng.permutation(s), 0.01)
    assert np.mean(s > threshold_from_statistics(s, 0.01)) == pytest.approx(0.01)


def test_minimum_trial_count_enforced():
    assert min_calibration_trials(0.01) == 10_000
    assert min_calibration_trials(0.1) == 1000
    with pytest.raises(ConfigError):
        calibrate_threshold(get_detector("nlj-um"), _null(), 24, 0.01, 9999, SEED)
    with pytest.raises(ConfigError):
        calibrate_threshold(get_detector("nlj-um"), AttackScenario("noise_jam", location_preset(), 1.0, 4),
                            24, 0.1, 1000, SEED)


def test_errored_trials_score_zero_and_warn():
    stats = np.arange(1.0, 101.0)
    errors = np.zeros(100, bool)
    errors[-2:] = True
    res = calibrate_threshold(StubDetector(stats, errors), _null(), 8, 0.05, 100, SEED,
                              enforce_min_trials=False, chunk_size=100)
    # sorted statistics are 0, 0, 1..98, so the 95th order statistic is 93
    assert res.threshold == 93.0
    assert res.errors == 2
    assert res.warnings and res.warnings[0].startswith("CalibrationWarning")


def test_calibration_is_deterministic_across_threads_and_chunks():
    det = get_detector("nlj-um")
    a = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED).threshold
    b = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED).threshold
    c = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED, threads=8, chunk_size=64).threshold
    d = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED + 1).threshold
    assert a == b == c
    assert d != a


@pytest.mark.parametrize("det_id", ["nlj-um", "nlj-cm", "sp-um", "sp-cm"])
def test_threshold_invariant_to_null_model(det_id):
    rng = np.random.default_rng(5)
    if det_id.endswith("um"):
        other = GaussianModel(rng.normal(size=3) * 50, CovMatrix.diagonal(rng.uniform(0.01, 100, size=3)))
    else:
        a = rng.normal(size=(3, 3))
        other = GaussianModel(rng.normal(size=3) * 50, CovMatrix.full(a @ a.T + 0.1 * np.eye(3)))
    det = get_detector(det_id)
    t1 = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED).threshold
    t2 = calibrate_threshold(det, AttackScenario("none", other), 16, 0.1, 1000, SEED).threshold
    assert t2 == pytest.approx(t1, rel=1e-8)


def test_threshold_table_roundtrip(tmp_path):
    table = ThresholdTable()
    k1 = ThresholdKey("nlj-um", 3, 24, "2-22", 0.01, SEED, 10_000)
    k2 = ThresholdKey("sp-cm", 3, 32, "3-29", 0.01, SEED, 10_000)
    table.add(k1, 10.635212345678901)
    table.add(k2, 7.25)
    table.to_csv(tmp_path / "t.csv")
    back = ThresholdTable.from_csv(tmp_path / "t.csv")
    assert back.entries == table.entries
    assert back.get(k1) == 10.635212345678901


def test_map_chunks_preserves_order():
    out = map_chunks(lambda r: list(r), 1003, threads=8, chunk_size=10)
    assert [t for part in out for t in part] == list(range(1003))


# -- detection curves ------------------------------------------------------------


@pytest.fixture(scope="module")
def um_threshold():
    return calibrate_threshold(get_detector("nlj-um"), _null(), 24, 0.01, 10_000, SEED).threshold


def test_zero_db_attack_matches_pfa(um_threshold):
    spec = ScenarioSpec(location_preset(), "noise_jam", 0.0, 0.5)
    n = 2000
    curve = estimate_pd(get_detector("nlj-um"), spec, 24, 12, [0.0], um_threshold, n, SEED)
    assert abs(curve.pd[0] - 0.01) <= 3 * math.sqrt(0.01 * 0.99 / n)


def test_nlj_um_pd_non_decreasing_under_crn(um_threshold):
    spec = ScenarioSpec(location_preset(), "noise_jam", 0.0, 0.5)
    grid = np.arange(0.0, 11.0)
    for onset in (6, 12, 18):
        curve = estimate_pd(get_detector("nlj-um"), spec, 24, onset, grid, um_threshold, 1000, SEED)
        assert np.all(np.diff(curve.pd) >= 0), curve.pd
        assert np.all((curve.pd >= 0) & (curve.pd <= 1))
        assert curve.axis == "gamma_db"


def test_pd_curve_rejects_bad_grids(um_threshold):
    spec = ScenarioSpec(location_preset(), "noise_jam", 0.0, 0.5)
    with pytest.raises(ConfigError):
        estimate_pd(get_detector("nlj-um"), spec, 24, 12, [2.0, 1.0], um_threshold, 10, SEED)
    with pytest.raises(ConfigError):
        estimate_pd(get_detector("nlj-um"), ScenarioSpec(location_preset()), 24, 12, [1.0], um_threshold, 10, SEED)


def test_pd_threads_do_not_change_results(um_threshold):
    spec = ScenarioSpec(location_preset(), "noise_jam", 0.0, 0.5)
    a = estimate_pd(get_detector("nlj-um"), spec, 24, 12, [0, 4, 8], um_threshold, 700, SEED, chunk_size=100)
    b = estimate_pd(get_detector("nlj-um"), spec, 24, 12, [0, 4, 8], um_threshold, 700, SEED, threads=8,
                    chunk_size=100)
    np.testing.assert_array_equal(a.pd, b.pd)


# -- false-alarm sensitivity -------------------------------------------------------


@pytest.mark.parametrize("det_id", ["nlj-um", "sp-cm"])
def test_mean_mismatch_leaves_glrt_pfa_unchanged(det_id):
    det = get_detector(det_id)
    thr = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED).threshold
    curve = pfa_sensitivity(det, location_preset(), "mean", [-1, -0.5, 0, 0.5, 1], thr, 16, 1000, SEED)
    # common draws plus a pure shift of the data: identical statistics at every point
    assert np.all(curve.pfa == curve.pfa[2])


def test_covariance_mismatch_leaves_lvm_sp_pfa_unchanged():
    # the mixture fit is affine equivariant, so rescaling the covariance cannot move P_fa
    det = get_detector("sp-lvm")
    thr = calibrate_threshold(det, _null(), 16, 0.1, 1000, SEED).threshold
    curve = pfa_sensitivity(det, location_preset(), "covariance", [-6, 0, 6], thr, 16, 1000, SEED)
    assert np.all(curve.pfa == curve.pfa[1])


def test_mismatch_kind_validated():
    with pytest.raises(ConfigError):
        pfa_sensitivity(get_detector("nlj-um"), location_preset(), "skew", [0.0], 1.0, 16, 10, SEED)


# -- EM convergence ----------------------------------------------------------------


def test_stub_fixed_point_has_zero_delta_after_first_iteration():
    res = em_convergence(StubTrace(), _null(), 8, 50, 6, SEED)
    assert res.rms_delta[0] == pytest.approx(30 / 50)
    np.testing.assert_array_equal(res.rms_delta[1:], 0.0)
    np.testing.assert_array_equal(res.iterations, np.arange(1, 7))
    assert np.all(res.included == 50)


def test_relative_changes_excludes_zero_and_failed_entries():
    trace = np.array([[-4.0, -2.0, 0.0], [-3.0, -2.0, -1.0], [-1.0, -1.0, -1.0]])
    delta, usable = relative_changes(trace, np.array([True, True, False]))
    np.testing.assert_allclose(delta[0, 0], 1.0)
    np.testing.assert_allclose(delta[1], [0.5, 1.0])
    assert usable.tolist() == [[True, False], [True, True], [False, False]]


def test_em_convergence_requires_two_iterations():
    with pytest.raises(ConfigError):
        em_convergence(StubTrace(), _null(), 8, 10, 1, SEED)


@pytest.mark.parametrize("det_id,spec", [
    ("nlj-lvm", ScenarioSpec(location_preset(), "noise_jam", 8.0, 0.5)),
    ("sp-lvm", ScenarioSpec(location_preset(), "spoof", 0.107239, 0.5)),
])
def test_em_rms_delta_decreases(det_id, spec):
    res = em_convergence(get_detector(det_id), spec.build(24), 24, 500, 10, SEED)
    assert res.rms_delta[9] < res.rms_delta[1]
    assert np.all(res.excluded == 0)
