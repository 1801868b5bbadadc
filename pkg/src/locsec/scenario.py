"""Seeded generation of measurement windows under the null and both attacks.

A window is ``N x K``: columns ``1..onset`` come from the base Gaussian, the
remaining columns from the attacked one. Jamming scales the covariance by
``10**(level_db/10)``; spoofing scales the mean by the same conversion.

All draws go through :func:`windows_from_normals`, so the same standard
normals can be pushed through several scenarios (common random numbers).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml

from locsec.core import CovMatrix, GaussianModel, MeasurementWindow, cholesky_logdet
from locsec.errors import ConfigError

logger = logging.getLogger(__name__)

AttackKind = Literal["none", "noise_jam", "spoof"]
ATTACK_KINDS = ("none", "noise_jam", "spoof")

DB_CONVENTION = "linear = 10**(dB/10) for both the covariance scale and the mean scale"

# purpose tags for derive_stream
CALIBRATION = 0
PD = 1
PFA_SWEEP = 2
EM = 3
VALIDATION = 4

NOMINAL_RANGE_M = 200.0
NOMINAL_DOA_DEG = 0.0


def db_to_linear(level_db: float) -> float:
    return float(10.0 ** (level_db / 10.0))


@dataclass(frozen=True)
class AttackScenario:
    """Data model for one window.

    Attributes:
        kind: ``"none"``, ``"noise_jam"`` or ``"spoof"``.
        level_db: covariance scale (jamming) or mean scale (spoofing) in dB.
        onset: last pre-attack time index ``K0``; ignored when ``kind`` is none.
        base: pre-attack model (and the whole window under the null).
    """

    kind: AttackKind
    base: GaussianModel
    level_db: float = 0.0
    onset: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.kind == "none":
            return
        if self.onset is None or self.onset < 1:
            raise ConfigError("attack scenarios need an onset >= 1")
        if not np.isfinite(self.level_db):
            raise ConfigError("attack level must be finite")
        # 0 dB is allowed as the null point of a sweep
        if self.kind == "noise_jam" and self.level_db < 0:
            raise ConfigError("jamming must not shrink the covariance (gamma_db >= 0)")

    @property
    def n_dims(self) -> int:
        return self.base.dim

    def attacked_model(self) -> GaussianModel:
        """Post-onset Gaussian."""
        scale = db_to_linear(self.level_db)
        if self.kind == "noise_jam":
            return GaussianModel(self.base.mean, self.base.covariance.scaled(scale))
        if self.kind == "spoof":
            return GaussianModel(scale * self.base.mean, self.base.covariance)
        return self.base

    def with_level(self, level_db: float) -> AttackScenario:
        return replace(self, level_db=float(level_db))


def location_preset(
    stds: tuple[float, float, float] = (1.0, 0.5, 0.5),
    snr_db: float | None = None,
    reference_snr_db: float = 0.0,
    range_m: float = NOMINAL_RANGE_M,
    doa_deg: float = NOMINAL_DOA_DEG,
) -> GaussianModel:
    """Range / azimuth / elevation model around the nominal geometry.

    Args:
        stds: error standard deviations (metres, degrees, degrees).
        snr_db: optional SNR knob; standard deviations are multiplied by
            ``10**(-(snr_db - reference_snr_db)/20)``.
        reference_snr_db: SNR at which ``stds`` apply.
        range_m: nominal distance between the access node and the device.
        doa_deg: nominal azimuth and elevation.
    """
    stds = np.asarray(stds, dtype=float)
    if stds.shape != (3,) or np.any(stds <= 0):
        raise ConfigError("location preset needs three positive standard deviations")
    if snr_db is not None:
        stds = stds * 10.0 ** (-(snr_db - reference_snr_db) / 20.0)
    return GaussianModel(np.array([range_m, doa_deg, doa_deg]), CovMatrix.diagonal(stds**2))


def derive_stream(master_seed: int, trial_index: int, purpose_tag: int) -> np.random.Generator:
    """Independent generator for one (trial, purpose) pair.

    The stream depends only on its three arguments, so trials can run in any
    order or on any worker.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(trial_index), int(purpose_tag)))
    return np.random.Generator(np.random.PCG64(ss))


def draw_normals(master_seed: int, trials, purpose_tag: int, n_dims: int, n_samples: int) -> np.ndarray:
    """Standard normals ``(M, N, K)``, one trial per derived stream."""
    out = np.empty((len(trials), n_dims, n_samples))
    for i, t in enumerate(trials):
        out[i] = derive_stream(master_seed, t, purpose_tag).standard_normal((n_dims, n_samples))
    return out


def _factor(model: GaussianModel) -> np.ndarray:
    cov = model.covariance
    if cov.kind == "diagonal":
        return np.diag(np.sqrt(cov.values))
    return cholesky_logdet(cov.values).factor


def windows_from_normals(scenario: AttackScenario, normals: np.ndarray) -> np.ndarray:
    """Map standard normals ``(..., N, K)`` to windows of ``scenario``.

    Column ``k`` becomes ``m + L w_k`` with ``(m, L)`` the mean and lower
    Cholesky factor of the model active at ``k``.
    """
    normals = np.asarray(normals, dtype=float)
    n_dims, n_samples = normals.shape[-2:]
    if n_dims != scenario.n_dims:
        raise ValueError(f"normals have {n_dims} rows, scenario has {scenario.n_dims} dimensions")
    base_l = _factor(scenario.base)
    out = base_l @ normals + scenario.base.mean[:, None]
    if scenario.kind == "none":
        return out
    if not 1 <= scenario.onset <= n_samples - 1:
        raise ConfigError(f"onset {scenario.onset} outside 1..{n_samples - 1}")
    attacked = scenario.attacked_model()
    k0 = scenario.onset
    out[..., k0:] = _factor(attacked) @ normals[..., k0:] + attacked.mean[:, None]
    return out


def generate_window(scenario: AttackScenario, n_samples: int, rng: np.random.Generator) -> MeasurementWindow:
    """Draw one window from ``scenario`` using ``rng``."""
    if n_samples < 2:
        raise ConfigError("windows need K >= 2")
    normals = rng.standard_normal((scenario.n_dims, n_samples))
    return MeasurementWindow(windows_from_normals(scenario, normals))


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    """Scenario as read from a file; the onset is a fraction of ``K``."""

    base: GaussianModel
    kind: AttackKind = "none"
    level_db: float = 0.0
    onset_fraction: float = 0.5

    def build(self, n_samples: int, level_db: float | None = None, onset: int | None = None) -> AttackScenario:
        if self.kind == "none":
            return AttackScenario("none", self.base)
        if onset is None:
            onset = int(round(self.onset_fraction * n_samples))
        return AttackScenario(
            self.kind, self.base, self.level_db if level_db is None else float(level_db), onset
        )

    def null(self) -> AttackScenario:
        return AttackScenario("none", self.base)

    def with_base(self, base: GaussianModel) -> ScenarioSpec:
        return replace(self, base=base)


def _base_from_mapping(doc: dict[str, Any]) -> GaussianModel:
    if "preset" in doc:
        if doc["preset"] != "location":
            raise ConfigError(f"unknown preset {doc['preset']!r}")
        kw = {k: doc[k] for k in ("stds", "snr_db", "reference_snr_db", "range_m", "doa_deg") if k in doc}
        if "stds" in kw:
            kw["stds"] = tuple(float(s) for s in kw["stds"])
        return location_preset(**kw)
    try:
        mean = np.asarray(doc["mean"], dtype=float)
        cov = doc["covariance"]
    except KeyError as exc:
        raise ConfigError(f"scenario needs either 'preset' or 'mean' and 'covariance' ({exc})") from None
    if not isinstance(cov, dict) or len(cov) != 1 or next(iter(cov)) not in ("diagonal", "full"):
        raise ConfigError("covariance must be {diagonal: [...]} or {full: [[...], ...]}")
    kind, values = next(iter(cov.items()))
    try:
        cov_m = CovMatrix(kind, np.asarray(values, dtype=float))
        model = GaussianModel(mean, cov_m)
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"invalid base model: {exc}") from None
    if "n_dims" in doc and int(doc["n_dims"]) != model.dim:
        raise ConfigError(f"n_dims={doc['n_dims']} disagrees with the mean length {model.dim}")
    return model


def scenario_from_mapping(doc: dict[str, Any]) -> ScenarioSpec:
    """Build a :class:`ScenarioSpec` from a parsed scenario document.

    Schema::

        preset: location            # or mean + covariance below
        stds: [1.0, 0.5, 0.5]
        snr_db: 0.0                 # optional
        # mean: [200, 0, 0]
        # covariance: {diagonal: [1, 0.25, 0.25]}   or {full: [[...], ...]}
        attack:
          kind: noise_jam           # none | noise_jam | spoof
          level_db: 8.0
          onset_fraction: 0.5
    """
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a mapping")
    base = _base_from_mapping(doc)
    attack = doc.get("attack") or {"kind": "none"}
    kind = attack.get("kind", "none")
    if kind not in ATTACK_KINDS:
        raise ConfigError(f"unknown attack kind {kind!r}")
    frac = float(attack.get("onset_fraction", 0.5))
    if not 0.0 < frac < 1.0:
        raise ConfigError("onset_fraction must lie strictly between 0 and 1")
    return ScenarioSpec(base, kind, float(attack.get("level_db", 0.0)), frac)


def load_scenario_file(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    logger.debug("loaded scenario %s", path)
    return scenario_from_mapping(doc)
