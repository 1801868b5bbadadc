"""Types and helpers shared by the jamming and spoofing detectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from locsec.core import MeasurementWindow, batch_cholesky, chol_logdet
from locsec.errors import ConfigError


@dataclass(frozen=True)
class ChangePointDomain:
    """Ordered set of admissible change points ``K0`` (last pre-change index)."""

    candidates: tuple[int, ...]

    def __post_init__(self) -> None:
        cands = tuple(int(c) for c in self.candidates)
        if not cands:
            raise ConfigError("change-point domain is empty")
        if list(cands) != sorted(set(cands)):
            raise ConfigError("change-point candidates must be strictly increasing")
        object.__setattr__(self, "candidates", cands)

    @classmethod
    def with_floor(cls, n_samples: int, floor: int) -> ChangePointDomain:
        """All ``K0`` with at least ``floor`` samples on each side."""
        return cls(tuple(range(floor, n_samples - floor + 1)))

    @classmethod
    def between(cls, lo: int, hi: int) -> ChangePointDomain:
        return cls(tuple(range(lo, hi + 1)))

    def check(self, n_samples: int, floor: int) -> None:
        if self.candidates[0] < floor or n_samples - self.candidates[-1] < floor:
            raise ConfigError(
                f"domain {self.candidates[0]}..{self.candidates[-1]} violates the "
                f"segment floor {floor} for K={n_samples}"
            )

    def as_array(self) -> np.ndarray:
        return np.asarray(self.candidates, dtype=int)

    def __len__(self) -> int:
        return len(self.candidates)


@dataclass
class DetectionOutcome:
    statistic: float
    k0_hat: int | None = None
    active_set: tuple[int, ...] | None = None
    nuisance: dict[str, Any] = field(default_factory=dict)
    decision: bool | None = None
    flags: tuple[str, ...] = ()

    def decide(self, threshold: float | None) -> DetectionOutcome:
        if threshold is not None:
            self.decision = bool(self.statistic > threshold)
        return self


@dataclass(frozen=True)
class MixtureState:
    """EM state for a two-component mixture.

    ``means`` and ``covariances`` always carry one entry per component; the
    jamming mixture shares the mean (both rows equal) and the spoofing mixture
    shares the covariance.
    """

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    responsibilities: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self) -> None:
        priors = np.asarray(self.priors, dtype=float)
        if priors.shape != (2,) or np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError(f"priors must be a length-2 simplex vector, got {priors}")
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covariances, dtype=float)
        if means.ndim != 2 or means.shape[0] != 2:
            raise ValueError("means must have shape (2, N)")
        if covs.shape != (2, means.shape[1], means.shape[1]):
            raise ValueError("covariances must have shape (2, N, N)")
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)


# ---------------------------------------------------------------------------
# Batch plumbing
# ---------------------------------------------------------------------------


def as_batch(windows) -> np.ndarray:
    """Accept a MeasurementWindow, an (N, K) array or an (M, N, K) stack."""
    if isinstance(windows, MeasurementWindow):
        return windows.data[None]
    z = np.asarray(windows, dtype=float)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3:
        raise ValueError(f"expected (M, N, K) windows, got shape {z.shape}")
    return z


def standardize(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-dimension centring and scaling of a window stack.

    Returns ``(x, mean, std, ok)``; ``ok`` is False for windows with a
    numerically zero variance in some dimension.
    """
    mean = z.mean(axis=-1)
    var = ((z - mean[..., None]) ** 2).mean(axis=-1)
    ok = np.all(var >= 1e-12 * (mean**2 + 1.0), axis=-1)
    std = np.sqrt(np.where(var > 0, var, 1.0))
    x = (z - mean[..., None]) / std[..., None]
    return x, mean, std, ok


def whiten(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Affine whitening by the H0 maximum-likelihood estimates.

    ``x_k = L^{-1} (z_k - m0)`` with ``L L^T`` the biased sample covariance.
    Returns ``(x, mean, L, ok)``; after whitening the H0 scatter is ``K * I``.
    """
    m, n, k = z.shape
    mean = z.mean(axis=-1)
    d = z - mean[..., None]
    cov = np.einsum("mik,mjk->mij", d, d) / k
    L, ok = batch_cholesky(cov)
    x = np.linalg.solve(L, d)
    return x, mean, L, ok


def whitening_log_jacobian(L: np.ndarray, n_samples: int) -> np.ndarray:
    """``K * log|det L|``: shift between original-unit and whitened log-likelihoods."""
    return 0.5 * n_samples * chol_logdet(L)


def segment_sums(x: np.ndarray, k0: np.ndarray):
    """First/second-segment sums and sums of squares per candidate.

    ``x`` is ``(M, N, K)``; returns four ``(M, N, J)`` arrays
    ``(A0, B0, A1, B1)`` for the candidates ``k0`` (1-based).
    """
    cs = np.cumsum(x, axis=-1)
    cs2 = np.cumsum(x * x, axis=-1)
    a0 = cs[..., k0 - 1]
    b0 = cs2[..., k0 - 1]
    a1 = cs[..., -1:] - a0
    b1 = cs2[..., -1:] - b0
    return a0, b0, a1, b1


def segment_outer_sums(x: np.ndarray, k0: np.ndarray):
    """Vector sums and outer-product sums of both segments per candidate.

    Returns ``(s0, S0, s1, S1)`` with shapes ``(M, J, N)`` and ``(M, J, N, N)``.
    """
    xt = np.swapaxes(x, -1, -2)  # (M, K, N)
    cs = np.cumsum(xt, axis=1)
    cS = np.cumsum(np.einsum("mki,mkj->mkij", xt, xt), axis=1)
    s0 = cs[:, k0 - 1]
    S0 = cS[:, k0 - 1]
    s1 = cs[:, -1:] - s0
    S1 = cS[:, -1:] - S0
    return s0, S0, s1, S1


def first_argmax(values: np.ndarray) -> np.ndarray:
    """Index of the maximum along the last axis, smallest index on ties."""
    return np.argmax(values, axis=-1)
