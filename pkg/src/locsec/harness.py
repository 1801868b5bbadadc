"""Monte Carlo engine: threshold calibration, detection curves, false-alarm
sensitivity and EM convergence.

Trials are split into fixed-size chunks by trial index. Each trial draws its
standard normals from a stream derived from ``(seed, trial, purpose)`` only,
so results do not depend on the number of worker threads or on scheduling.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from locsec.core import CovMatrix, GaussianModel
from locsec.errors import ConfigError
from locsec.scenario import (
    CALIBRATION,
    EM,
    PD,
    PFA_SWEEP,
    AttackScenario,
    ScenarioSpec,
    db_to_linear,
    draw_normals,
    windows_from_normals,
)

logger = logging.getLogger(__name__)

DEFAULT_CHUNK = 500
ERROR_WARN_FRACTION = 0.01


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------


def order_statistic_index(n_trials: int, pfa: float) -> int:
    """1-based index ``ceil(n (1 - pfa))`` of the threshold order statistic."""
    if not 0.0 < pfa < 1.0:
        raise ConfigError(f"P_fa must lie in (0, 1), got {pfa}")
    # round first so that e.g. 10000 * 0.99 does not become 9901
    idx = math.ceil(round(n_trials * (1.0 - pfa), 9))
    return min(max(idx, 1), n_trials)


def threshold_from_statistics(stats: np.ndarray, pfa: float) -> float:
    stats = np.sort(np.asarray(stats, dtype=float))
    return float(stats[order_statistic_index(stats.size, pfa) - 1])


def min_calibration_trials(pfa: float) -> int:
    return math.ceil(round(100.0 / pfa, 9))


@dataclass(frozen=True)
class ThresholdKey:
    detector: str
    n_dims: int
    n_samples: int
    omega0: str
    pfa: float
    seed: int
    n_trials: int


@dataclass
class ThresholdTable:
    """Calibrated thresholds keyed by detector, window shape and run settings."""

    entries: dict[ThresholdKey, float] = field(default_factory=dict)

    FIELDS = ("detector", "N", "K", "omega0", "pfa", "seed", "trials", "threshold")

    def add(self, key: ThresholdKey, threshold: float) -> None:
        self.entries[key] = float(threshold)

    def get(self, key: ThresholdKey) -> float | None:
        return self.entries.get(key)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for k in sorted(self.entries, key=lambda k: (k.detector, k.n_dims, k.n_samples, k.omega0, k.pfa, k.seed)):
                w.writerow([k.detector, k.n_dims, k.n_samples, k.omega0, repr(k.pfa), k.seed, k.n_trials,
                            repr(self.entries[k])])

    @classmethod
    def from_csv(cls, path: str | Path) -> ThresholdTable:
        table = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = ThresholdKey(row["detector"], int(row["N"]), int(row["K"]), row["omega0"],
                                   float(row["pfa"]), int(row["seed"]), int(row["trials"]))
                table.add(key, float(row["threshold"]))
        return table


# ---------------------------------------------------------------------------
# Chunked execution
# ---------------------------------------------------------------------------


def _chunks(n_trials: int, chunk_size: int) -> list[range]:
    return [range(s, min(s + chunk_size, n_trials)) for s in range(0, n_trials, chunk_size)]


def map_chunks(fn: Callable[[range], object], n_trials: int, threads: int = 1,
               chunk_size: int = DEFAULT_CHUNK) -> list:
    """Apply ``fn`` to consecutive trial ranges; results in trial order."""
    if chunk_size < 1:
        raise ConfigError("chunk size must be positive")
    chunks = _chunks(n_trials, chunk_size)
    if threads <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))


def _concat(parts: list[tuple[np.ndarray, np.ndarray]], axis: int = 0):
    stats = np.concatenate([p[0] for p in parts], axis=axis)
    errors = np.concatenate([p[1] for p in parts], axis=axis)
    return stats, errors


def simulate_statistics(detector, scenario: AttackScenario, n_samples: int, n_trials: int, seed: int,
                        purpose: int, threads: int = 1, chunk_size: int = DEFAULT_CHUNK):
    """Statistics of ``n_trials`` windows from ``scenario``; errored trials score 0."""

    def run(trials: range):
        normals = draw_normals(seed, trials, purpose, scenario.n_dims, n_samples)
        stats, errors = detector.batch_statistics(windows_from_normals(scenario, normals))
        return np.where(errors, 0.0, stats), np.asarray(errors, dtype=bool)

    return _concat(map_chunks(run, n_trials, threads, chunk_size))


@dataclass
class CalibrationResult:
    threshold: float
    n_trials: int
    errors: int
    warnings: list[str] = field(default_factory=list)

    @property
    def error_fraction(self) -> float:
        return self.errors / self.n_trials


def _error_warnings(errors: int, n_trials: int, label: str) -> list[str]:
    if errors > ERROR_WARN_FRACTION * n_trials:
        msg = f"CalibrationWarning: {label}: {errors}/{n_trials} trials raised detector errors"
        logger.warning(msg)
        return [msg]
    return []


def calibrate_threshold(detector, h0_scenario: AttackScenario, n_samples: int, target_pfa: float,
                        n_trials: int, seed: int, *, threads: int = 1, chunk_size: int = DEFAULT_CHUNK,
                        enforce_min_trials: bool = True, purpose: int = CALIBRATION) -> CalibrationResult:
    """Order-statistic threshold from ``n_trials`` null windows."""
    if h0_scenario.kind != "none":
        raise ConfigError("calibration needs a null scenario")
    if enforce_min_trials and n_trials < min_calibration_trials(target_pfa):
        raise ConfigError(f"calibration at P_fa={target_pfa} needs at least "
                          f"{min_calibration_trials(target_pfa)} trials, got {n_trials}")
    stats, errors = simulate_statistics(detector, h0_scenario, n_samples, n_trials, seed, purpose,
                                        threads, chunk_size)
    thr = threshold_from_statistics(stats, target_pfa)
    n_err = int(errors.sum())
    logger.info("calibrated threshold %.6g from %d trials (%d errors)", thr, n_trials, n_err)
    return CalibrationResult(thr, n_trials, n_err, _error_warnings(n_err, n_trials, "calibration"))


def empirical_pfa(detector, h0_scenario: AttackScenario, n_samples: int, threshold: float, n_trials: int,
                  seed: int, purpose: int, threads: int = 1, chunk_size: int = DEFAULT_CHUNK):
    """Fraction of null windows above ``threshold``; returns ``(pfa, errors)``."""
    stats, errors = simulate_statistics(detector, h0_scenario, n_samples, n_trials, seed, purpose,
                                        threads, chunk_size)
    return float(np.mean(stats > threshold)), int(errors.sum())


# ---------------------------------------------------------------------------
# Sweeps with common random numbers
# ---------------------------------------------------------------------------


@dataclass
class PdCurve:
    detector: str
    axis: str
    grid_db: np.ndarray
    pd: np.ndarray
    trials: int
    errors: np.ndarray
    n_samples: int
    onset: int
    n_dims: int
    seed: int
    threshold: float

    def __post_init__(self) -> None:
        if np.any(np.diff(self.grid_db) <= 0):
            raise ConfigError("sweep grid must be strictly increasing")


def _check_grid(grid_db: Sequence[float]) -> np.ndarray:
    grid = np.asarray(grid_db, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigError("sweep grid must be a non-empty list of dB values")
    if np.any(np.diff(grid) <= 0):
        raise ConfigError("sweep grid must be strictly increasing")
    return grid


def _sweep(detector, scenarios: list[AttackScenario], n_samples: int, n_trials: int, seed: int, purpose: int,
           threads: int, chunk_size: int):
    """Statistics ``(P, M)`` for every scenario on shared normals."""
    n_dims = scenarios[0].n_dims

    def run(trials: range):
        normals = draw_normals(seed, trials, purpose, n_dims, n_samples)
        out_s, out_e = [], []
        for sc in scenarios:
            s, e = detector.batch_statistics(windows_from_normals(sc, normals))
            out_s.append(np.where(e, 0.0, s))
            out_e.append(np.asarray(e, dtype=bool))
        return np.stack(out_s), np.stack(out_e)

    return _concat(map_chunks(run, n_trials, threads, chunk_size), axis=1)


def axis_for_kind(kind: str) -> str:
    return {"noise_jam": "gamma_db", "spoof": "nu_db"}[kind]


def estimate_pd(detector, spec: ScenarioSpec, n_samples: int, onset: int, grid_db: Sequence[float],
                threshold: float, n_trials: int, seed: int, *, threads: int = 1,
                chunk_size: int = DEFAULT_CHUNK) -> PdCurve:
    """Detection probability along an attack-level grid at one onset.

    Trial ``t`` uses the same standard normals at every grid point and every
    onset.
    """
    if spec.kind == "none":
        raise ConfigError("P_d needs an attack scenario")
    grid = _check_grid(grid_db)
    scenarios = [spec.build(n_samples, level_db=g, onset=onset) for g in grid]
    stats, errors = _sweep(detector, scenarios, n_samples, n_trials, seed, PD, threads, chunk_size)
    return PdCurve(detector.id, axis_for_kind(spec.kind), grid, (stats > threshold).mean(axis=1), n_trials,
                   errors.sum(axis=1), n_samples, onset, spec.base.dim, seed, threshold)


@dataclass
class SensitivityCurve:
    detector: str
    mismatch: str
    grid_db: np.ndarray
    pfa: np.ndarray
    trials: int
    errors: np.ndarray
    n_samples: int
    n_dims: int
    seed: int


def mismatched_model(base: GaussianModel, mismatch: str, level_db: float) -> GaussianModel:
    scale = db_to_linear(level_db)
    if mismatch == "mean":
        return GaussianModel(scale * base.mean, base.covariance)
    if mismatch == "covariance":
        return GaussianModel(base.mean, CovMatrix(base.covariance.kind, base.covariance.values * scale))
    raise ConfigError(f"mismatch must be 'mean' or 'covariance', got {mismatch!r}")


def pfa_sensitivity(detector, base: GaussianModel, mismatch: str, grid_db: Sequence[float], threshold: float,
                    n_samples: int, n_trials: int, seed: int, *, threads: int = 1,
                    chunk_size: int = DEFAULT_CHUNK) -> SensitivityCurve:
    """Empirical P_fa on null data whose mean or covariance is rescaled."""
    grid = _check_grid(grid_db)
    scenarios = [AttackScenario("none", mismatched_model(base, mismatch, g)) for g in grid]
    stats, errors = _sweep(detector, scenarios, n_samples, n_trials, seed, PFA_SWEEP, threads, chunk_size)
    return SensitivityCurve(detector.id, mismatch, grid, (stats > threshold).mean(axis=1), n_trials,
                            errors.sum(axis=1), n_samples, base.dim, seed)


# ---------------------------------------------------------------------------
# EM convergence
# ---------------------------------------------------------------------------


@dataclass
class EmConvergence:
    detector: str
    rms_delta: np.ndarray  # index h-1 for iteration h
    included: np.ndarray
    excluded: np.ndarray

    @property
    def iterations(self) -> np.ndarray:
        return np.arange(1, self.rms_delta.size + 1)


def relative_changes(trace: np.ndarray, ok: np.ndarray | None = None):
    """``|(t_h - t_{h-1}) / t_h|`` for ``h >= 1`` with a mask of usable entries."""
    trace = np.asarray(trace, dtype=float)
    t_now = trace[:, 1:]
    usable = t_now != 0
    if ok is not None:
        usable &= np.asarray(ok, dtype=bool)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.abs((t_now - trace[:, :-1]) / t_now)
    return np.where(usable, delta, 0.0), usable


def em_convergence(detector, scenario: AttackScenario, n_samples: int, n_trials: int, max_iters: int, seed: int,
                   *, threads: int = 1, chunk_size: int = DEFAULT_CHUNK) -> EmConvergence:
    """RMS over trials of the relative change of the mixture log-likelihood."""
    if max_iters < 2:
        raise ConfigError("em-convergence needs max_iters >= 2")

    def run(trials: range):
        normals = draw_normals(seed, trials, EM, scenario.n_dims, n_samples)
        trace, ok = detector.em_trace(windows_from_normals(scenario, normals), max_iters)
        return relative_changes(trace, ok)

    delta, usable = _concat(map_chunks(run, n_trials, threads, chunk_size))
    n_inc = usable.sum(axis=0)
    with np.errstate(invalid="ignore"):
        rms = np.sqrt((delta**2).sum(axis=0) / n_inc)
    return EmConvergence(getattr(detector, "id", "stub"), rms, n_inc, n_trials - n_inc)
