"""Run configuration (YAML).

Example::

    scenario: location.yaml        # path relative to this file, or an inline mapping
    detector: nlj-um
    detector_options:
      domain: [2, 22]              # inclusive change-point range, optional
      n_iters: 10                  # EM iterations (mixture detectors)
      mean_estimator: exact        # or closed_form (nlj-cm, nlj-lvm)
    K: 24
    pfa: 0.01
    seed: 20240601
    threads: 1
    chunk_size: 500
    calibration_trials: 10000
    trials: 1000
    max_error_fraction: 0.01
    pd_curve:
      onsets: [6, 12, 18]          # or onset_fractions: [0.25, 0.5, 0.75]
      grid_db: [0, 2, 4, 6, 8, 10]
    pfa_sweep:
      mismatch: mean               # or covariance
      grid_db: [-1.0, -0.5, 0.0, 0.5, 1.0]
    em_convergence:
      max_iters: 10

All attack and mismatch levels are in dB (``linear = 10**(dB/10)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from locsec.detectors import DETECTOR_IDS, Detector
from locsec.errors import ConfigError
from locsec.harness import DEFAULT_CHUNK, ERROR_WARN_FRACTION
from locsec.scenario import ScenarioSpec, load_scenario_file, scenario_from_mapping

KNOWN_KEYS = {
    "scenario", "detector", "detector_options", "K", "pfa", "seed", "threads", "chunk_size",
    "calibration_trials", "trials", "max_error_fraction", "pd_curve", "pfa_sweep", "em_convergence",
}


@dataclass(frozen=True)
class PdCurveConfig:
    grid_db: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    onsets: tuple[int, ...] | None = None
    onset_fractions: tuple[float, ...] = (0.25, 0.5, 0.75)

    def resolve_onsets(self, n_samples: int) -> tuple[int, ...]:
        if self.onsets is not None:
            return self.onsets
        return tuple(int(round(f * n_samples)) for f in self.onset_fractions)


@dataclass(frozen=True)
class PfaSweepConfig:
    mismatch: str = "mean"
    grid_db: tuple[float, ...] = (-1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioSpec
    detectors: tuple[str, ...] = ("nlj-um",)
    detector_options: dict[str, Any] = field(default_factory=dict)
    n_samples: int = 24
    pfa: float = 0.01
    seed: int = 0
    threads: int = 1
    chunk_size: int = DEFAULT_CHUNK
    calibration_trials: int = 10_000
    trials: int = 1000
    max_error_fraction: float = ERROR_WARN_FRACTION
    pd_curve: PdCurveConfig = PdCurveConfig()
    pfa_sweep: PfaSweepConfig = PfaSweepConfig()
    em_max_iters: int = 10

    def detector(self, detector_id: str) -> Detector:
        opts = dict(self.detector_options)
        if opts.get("domain") is not None:
            opts["domain"] = tuple(int(v) for v in opts["domain"])
        try:
            return Detector(detector_id, **opts)
        except TypeError as exc:
            raise ConfigError(f"bad detector_options: {exc}") from None

    def override(self, **kwargs: Any) -> RunConfig:
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _floats(values, name: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a list of numbers") from None


def parse_detectors(value) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    ids = tuple(value)
    if ids == ("all",):
        ids = DETECTOR_IDS
    for d in ids:
        if d not in DETECTOR_IDS:
            raise ConfigError(f"unknown detector {d!r}; expected one of {', '.join(DETECTOR_IDS)}")
    if not ids:
        raise ConfigError("no detector given")
    return ids


def config_from_mapping(doc: dict[str, Any], base_dir: Path | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    sc = doc.get("scenario")
    if sc is None:
        raise ConfigError("config needs a 'scenario' entry")
    if isinstance(sc, str):
        path = Path(sc)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        scenario = load_scenario_file(path)
    else:
        scenario = scenario_from_mapping(sc)

    pd_doc = doc.get("pd_curve") or {}
    pd_cfg = PdCurveConfig(
        grid_db=_floats(pd_doc.get("grid_db", PdCurveConfig.grid_db), "pd_curve.grid_db"),
        onsets=tuple(int(k) for k in pd_doc["onsets"]) if "onsets" in pd_doc else None,
        onset_fractions=_floats(pd_doc.get("onset_fractions", PdCurveConfig.onset_fractions),
                                "pd_curve.onset_fractions"),
    )
    sw_doc = doc.get("pfa_sweep") or {}
    sw_cfg = PfaSweepConfig(
        mismatch=str(sw_doc.get("mismatch", "mean")),
        grid_db=_floats(sw_doc.get("grid_db", PfaSweepConfig.grid_db), "pfa_sweep.grid_db"),
    )
    if sw_cfg.mismatch not in ("mean", "covariance"):
        raise ConfigError("pfa_sweep.mismatch must be 'mean' or 'covariance'")
    try:
        cfg = RunConfig(
            scenario=scenario,
            detectors=parse_detectors(doc.get("detector", "nlj-um")),
            detector_options=dict(doc.get("detector_options") or {}),
            n_samples=int(doc.get("K", 24)),
            pfa=float(doc.get("pfa", 0.01)),
            seed=int(doc.get("seed", 0)),
            threads=int(doc.get("threads", 1)),
            chunk_size=int(doc.get("chunk_size", DEFAULT_CHUNK)),
            calibration_trials=int(doc.get("calibration_trials", 10_000)),
            trials=int(doc.get("trials", 1000)),
            max_error_fraction=float(doc.get("max_error_fraction", ERROR_WARN_FRACTION)),
            pd_curve=pd_cfg,
            pfa_sweep=sw_cfg,
            em_max_iters=int((doc.get("em_convergence") or {}).get("max_iters", 10)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.n_samples < 2:
        raise ConfigError("K must be >= 2")
    if not 0.0 < cfg.pfa < 1.0:
        raise ConfigError("pfa must lie in (0, 1)")
    if cfg.threads < 1 or cfg.chunk_size < 1 or cfg.trials < 1 or cfg.calibration_trials < 1:
        raise ConfigError("threads, chunk_size and trial counts must be positive")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    for d in cfg.detectors:
        cfg.detector(d)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_mapping(doc, path.parent)
