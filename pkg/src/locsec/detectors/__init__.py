"""Detector registry.

Every detector exposes a batched kernel ``batch_statistics(z)`` returning
``(statistics, errors)`` for a stack of windows ``(M, N, K)``, and a
single-window ``evaluate`` returning a :class:`DetectionOutcome`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from locsec.core import MeasurementWindow
from locsec.detectors import nlj, spoof
from locsec.detectors.common import ChangePointDomain, DetectionOutcome, MixtureState
from locsec.detectors.mixture import mixture_log_likelihood
from locsec.errors import ConfigError

__all__ = [
    "DETECTOR_IDS",
    "ChangePointDomain",
    "DetectionOutcome",
    "Detector",
    "MixtureState",
    "get_detector",
    "mixture_log_likelihood",
]

DETECTOR_IDS = ("nlj-um", "nlj-cm", "nlj-lvm", "sp-um", "sp-cm", "sp-lvm")
GLRT_IDS = ("nlj-um", "nlj-cm", "sp-um", "sp-cm")
LVM_IDS = ("nlj-lvm", "sp-lvm")


@dataclass(frozen=True)
class Detector:
    """A configured detector.

    Attributes:
        id: one of ``DETECTOR_IDS``.
        domain: change-point candidates ``(lo, hi)`` inclusive, or None for the
            detector default. Ignored by the mixture detectors.
        n_iters: EM iterations for the mixture detectors.
        mean_estimator: ``"exact"`` or ``"closed_form"`` shared-mean estimate
            for the jamming detectors with free covariances.
    """

    id: str
    domain: tuple[int, int] | None = None
    n_iters: int = 10
    mean_estimator: str = "exact"

    def __post_init__(self) -> None:
        if self.id not in DETECTOR_IDS:
            raise ConfigError(f"unknown detector {self.id!r}; expected one of {', '.join(DETECTOR_IDS)}")
        if self.n_iters < 1:
            raise ConfigError("n_iters must be >= 1")
        if self.mean_estimator not in ("exact", "closed_form"):
            raise ConfigError(f"unknown mean estimator {self.mean_estimator!r}")
        if self.domain is not None:
            lo, hi = self.domain
            if lo > hi:
                raise ConfigError(f"empty change-point domain {lo}..{hi}")

    @property
    def is_glrt(self) -> bool:
        return self.id in GLRT_IDS

    @property
    def is_mixture(self) -> bool:
        return self.id in LVM_IDS

    def change_point_domain(self, n_dims: int, n_samples: int) -> ChangePointDomain | None:
        if self.is_mixture:
            return None
        if self.domain is not None:
            return ChangePointDomain.between(*self.domain)
        return {
            "nlj-um": lambda: nlj.um_domain(n_samples),
            "nlj-cm": lambda: nlj.cm_domain(n_samples, n_dims),
            "sp-um": lambda: spoof.um_domain(n_samples),
            "sp-cm": lambda: spoof.cm_domain(n_samples, n_dims),
        }[self.id]()

    def domain_label(self, n_dims: int, n_samples: int) -> str:
        dom = self.change_point_domain(n_dims, n_samples)
        if dom is None:
            return "none"
        return f"{dom.candidates[0]}-{dom.candidates[-1]}"

    def batch_statistics(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            z = z[None]
        dom = self.change_point_domain(z.shape[1], z.shape[2])
        if self.id == "nlj-um":
            return nlj.nlj_um_batch(z, dom)
        if self.id == "nlj-cm":
            return nlj.nlj_cm_batch(z, dom, self.mean_estimator)
        if self.id == "nlj-lvm":
            return nlj.nlj_lvm_batch(z, self.n_iters, self.mean_estimator)
        if self.id == "sp-um":
            return spoof.sp_um_batch(z, dom)
        if self.id == "sp-cm":
            return spoof.sp_cm_batch(z, dom)
        return spoof.sp_lvm_batch(z, self.n_iters)

    def evaluate(self, window, threshold: float | None = None) -> DetectionOutcome:
        if not isinstance(window, MeasurementWindow):
            window = MeasurementWindow(np.asarray(window, dtype=float))
        dom = self.change_point_domain(window.n_dims, window.n_samples)
        if self.id == "nlj-um":
            return nlj.nlj_um_statistic(window, dom, threshold)
        if self.id == "nlj-cm":
            return nlj.nlj_cm_statistic(window, dom, threshold, self.mean_estimator)
        if self.id == "nlj-lvm":
            return nlj.lvm_nlj_statistic(window, self.n_iters, threshold, self.mean_estimator)
        if self.id == "sp-um":
            return spoof.sp_um_statistic(window, dom, threshold)
        if self.id == "sp-cm":
            return spoof.sp_cm_statistic(window, dom, threshold)
        return spoof.lvm_sp_statistic(window, self.n_iters, threshold)

    def em_trace(self, z: np.ndarray, max_iters: int) -> tuple[np.ndarray, np.ndarray]:
        """Mixture log-likelihood after each of ``max_iters`` EM iterations.

        Returns ``(trace (M, max_iters + 1), ok (M,))``; column 0 is the
        initial state.
        """
        if not self.is_mixture:
            raise ConfigError(f"detector {self.id} has no EM recursion")
        if self.id == "nlj-lvm":
            return nlj.nlj_lvm_trace(z, max_iters, self.mean_estimator)
        return spoof.sp_lvm_trace(z, max_iters)


def get_detector(detector_id: str, **kwargs: Any) -> Detector:
    return Detector(detector_id, **kwargs)
