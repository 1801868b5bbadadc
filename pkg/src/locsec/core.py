"""Gaussian linear-algebra and likelihood primitives.

Everything here works in the log domain. Time indices in the public
functions are 1-based and inclusive, matching the way change points are
described (``K0`` is the last pre-change sample). Batched helpers
(``batch_cholesky``, ``batch_log_pdf``, ``cubic_real_roots``) accept arbitrary
leading dimensions and are what the detectors use internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from locsec.errors import DegenerateWindow, InvalidCubic, NotPositiveDefinite, RangeError

PD_REL_TOL = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasurementWindow:
    """An ``N x K`` block of measurements; column ``k`` is the vector at time ``k``."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError(f"window data must be 2-D (N x K), got shape {arr.shape}")
        n, k = arr.shape
        if n < 1 or k < 2:
            raise ValueError(f"need N >= 1 and K >= 2, got N={n}, K={k}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("window contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_dims(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def column(self, k: int) -> np.ndarray:
        """Return ``z_k`` for a 1-based time index."""
        if not 1 <= k <= self.n_samples:
            raise RangeError(f"time index {k} outside 1..{self.n_samples}")
        return self.data[:, k - 1]


@dataclass(frozen=True)
class CovMatrix:
    """Covariance stored either as its diagonal or as a full symmetric matrix."""

    kind: Literal["diagonal", "full"]
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if self.kind == "diagonal":
            if vals.ndim != 1 or not np.all(vals > 0):
                raise ValueError("diagonal covariance needs a 1-D vector of positive entries")
        elif self.kind == "full":
            if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
                raise ValueError("full covariance must be square")
            scale = max(np.max(np.abs(vals)), 1e-300)
            if np.max(np.abs(vals - vals.T)) > 1e-12 * scale:
                raise ValueError("full covariance is not symmetric")
            _, ok = batch_cholesky(vals)
            if not ok:
                raise NotPositiveDefinite("covariance is not positive definite")
        else:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def diagonal(cls, variances) -> CovMatrix:
        return cls("diagonal", np.asarray(variances, dtype=float))

    @classmethod
    def full(cls, matrix) -> CovMatrix:
        return cls("full", np.asarray(matrix, dtype=float))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def matrix(self) -> np.ndarray:
        if self.kind == "diagonal":
            return np.diag(self.values)
        return np.array(self.values)

    def scaled(self, factor: float) -> CovMatrix:
        return CovMatrix(self.kind, self.values * factor)


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: CovMatrix

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if mean.shape[0] != self.covariance.dim:
            raise ValueError("mean and covariance dimensions disagree")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class CubicCoefficients:
    """``c3*x**3 + c2*x**2 + c1*x + c0``."""

    c3: float
    c2: float
    c1: float
    c0: float

    def __call__(self, x):
        return ((self.c3 * x + self.c2) * x + self.c1) * x + self.c0


@dataclass(frozen=True)
class CholeskyResult:
    log_det: float
    factor: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# Window statistics
# ---------------------------------------------------------------------------


def _check_range(window: MeasurementWindow, start: int, stop: int) -> None:
    if not 1 <= start <= stop <= window.n_samples:
        raise RangeError(f"range {start}..{stop} invalid for K={window.n_samples}")


def sample_mean(window: MeasurementWindow, start: int, stop: int) -> np.ndarray:
    """Mean of columns ``start..stop`` (1-based, inclusive)."""
    _check_range(window, start, stop)
    return window.data[:, start - 1 : stop].mean(axis=1)


def scatter_matrix(
    window: MeasurementWindow, start: int, stop: int, center: np.ndarray
) -> np.ndarray:
    """Unnormalised scatter ``sum_k (z_k - c)(z_k - c)^T`` over ``start..stop``."""
    _check_range(window, start, stop)
    center = np.asarray(center, dtype=float).reshape(-1)
    if center.shape[0] != window.n_dims:
        raise ValueError("center length does not match window dimension")
    d = window.data[:, start - 1 : stop] - center[:, None]
    s = d @ d.T
    return 0.5 * (s + s.T)


# ---------------------------------------------------------------------------
# Cholesky / log-determinant
# ---------------------------------------------------------------------------


def batch_cholesky(a: np.ndarray, rel_tol: float = PD_REL_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Lower Cholesky factors of a stack of symmetric matrices.

    Only the lower triangle of ``a`` is read. A matrix is rejected when any
    pivot is ``<= rel_tol * max(diag)``; rejected entries get an identity-like
    factor and ``ok`` False, so callers can mask rather than branch.

    Returns:
        ``(L, ok)`` with shapes ``a.shape`` and ``a.shape[:-2]``.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    diag = np.diagonal(a, axis1=-2, axis2=-1)
    scale = diag.max(axis=-1)
    ok = scale > 0
    tol = rel_tol * np.where(ok, scale, 1.0)
    L = np.zeros_like(a)
    for j in range(n):
        row = L[..., j, :j]
        d = a[..., j, j] - np.einsum("...i,...i->...", row, row)
        good = d > tol
        ok = ok & good
        ljj = np.sqrt(np.where(good, d, 1.0))
        L[..., j, j] = ljj
        for i in range(j + 1, n):
            off = a[..., i, j] - np.einsum("...i,...i->...", L[..., i, :j], row)
            L[..., i, j] = np.where(good, off / ljj, 0.0)
    return L, ok


def chol_logdet(L: np.ndarray) -> np.ndarray:
    """``log det`` of ``L @ L.T`` from its Cholesky factor(s)."""
    return 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)


def cholesky_logdet(matrix: np.ndarray) -> CholeskyResult:
    """Log-determinant of a symmetric PD matrix via its Cholesky factor.

    Raises:
        NotPositiveDefinite: if a pivot is ``<= 1e-12 * max(diag)``.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("cholesky_logdet needs a square matrix")
    L, ok = batch_cholesky(m)
    if not ok:
        raise NotPositiveDefinite("matrix is not positive definite within tolerance")
    return CholeskyResult(log_det=float(chol_logdet(L)), factor=L)


def batch_log_pdf(x: np.ndarray, mean: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Gaussian log-density of rows of ``x`` given lower Cholesky factor ``L``.

    Shapes: ``x (..., K, N)``, ``mean (..., N)``, ``L (..., N, N)`` -> ``(..., K)``.
    """
    n = x.shape[-1]
    d = x - mean[..., None, :]
    y = np.linalg.solve(L, np.swapaxes(d, -1, -2))
    maha = np.einsum("...ik,...ik->...k", y, y)
    return -0.5 * n * LOG_2PI - 0.5 * chol_logdet(L)[..., None] - 0.5 * maha


def gaussian_log_pdf(z: np.ndarray, model: GaussianModel) -> float:
    """Natural log of the ``N``-variate normal density at ``z``."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != model.dim:
        raise ValueError(f"z has length {z.shape[0]}, model has dimension {model.dim}")
    d = z - model.mean
    cov = model.covariance
    if cov.kind == "diagonal":
        v = cov.values
        return float(-0.5 * model.dim * LOG_2PI - 0.5 * np.log(v).sum() - 0.5 * np.sum(d * d / v))
    chol = cholesky_logdet(cov.values)
    y = np.linalg.solve(chol.factor, d)
    return float(-0.5 * model.dim * LOG_2PI - 0.5 * chol.log_det - 0.5 * y @ y)


def h0_mle(window: MeasurementWindow, kind: Literal["diagonal", "full"] = "full") -> GaussianModel:
    """Maximum-likelihood mean and (biased) covariance of the whole window.

    Raises:
        DegenerateWindow: zero variance in some dimension (diagonal), or the
            sample covariance is not PD (full).
    """
    z = window.data
    k = window.n_samples
    mean = z.mean(axis=1)
    if kind == "diagonal":
        var = ((z - mean[:, None]) ** 2).sum(axis=1) / k
        if np.any(var < 1e-12 * (mean**2 + 1.0)):
            raise DegenerateWindow("per-dimension variance is numerically zero")
        return GaussianModel(mean, CovMatrix.diagonal(var))
    if kind != "full":
        raise ValueError(f"unknown kind {kind!r}")
    cov = scatter_matrix(window, 1, k, mean) / k
    _, ok = batch_cholesky(cov)
    if not ok:
        raise DegenerateWindow("sample covariance is not positive definite")
    return GaussianModel(mean, CovMatrix.full(cov))


# ---------------------------------------------------------------------------
# Cubic roots
# ---------------------------------------------------------------------------


def _polish(coefs, x, steps: int = 2):
    """Newton steps on the cubic, each kept only if it lowers the residual."""
    c3, c2, c1, c0 = coefs

    def value(v):
        return ((c3 * v + c2) * v + c1) * v + c0

    pv = value(x)
    for _ in range(steps):
        dp = (3.0 * c3 * x + 2.0 * c2) * x + c1
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            cand = x - np.where(dp != 0, pv / dp, 0.0)
            pc = value(cand)
        better = np.isfinite(cand) & (np.abs(pc) < np.abs(pv))
        x = np.where(better, cand, x)
        pv = np.where(better, pc, pv)
    return x


def cubic_real_roots(c3, c2, c1, c0) -> np.ndarray:
    """Real roots of a batch of cubics, padded with NaN.

    The depressed-cubic closed form (trigonometric with three real roots,
    Cardano otherwise) locates the largest-magnitude real root, which is then
    polished and deflated. The remaining quadratic is solved with the
    cancellation-free formula, so small roots next to a large one keep full
    relative accuracy. A (near) zero quadratic discriminant yields a double root.

    Returns:
        Array of shape ``broadcast(c*).shape + (3,)``; unused slots are NaN.
        Slot 0 always holds a real root.
    """
    c3, c2, c1, c0 = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (c3, c2, c1, c0)))
    if np.any(c3 == 0):
        raise InvalidCubic("leading coefficient must be non-zero")
    b = c2 / c3
    c = c1 / c3
    d = c0 / c3
    shift = b / 3.0
    p = c - b * shift
    q = 2.0 * shift**3 - shift * c + d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    three = disc < 0

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        r = np.sqrt(np.where(three, -p / 3.0, 1.0))
        cos_arg = np.clip(np.where(three, -q / (2.0 * r**3), 0.0), -1.0, 1.0)
        theta = np.arccos(cos_arg) / 3.0
        ks = 2.0 * np.pi * np.arange(3) / 3.0
        trig3 = 2.0 * r[..., None] * np.cos(theta[..., None] - ks) - shift[..., None]
        pick = np.argmax(np.abs(np.where(np.isfinite(trig3), trig3, 0.0)), axis=-1)
        trig = np.take_along_axis(trig3, pick[..., None], axis=-1)[..., 0] + shift
        sq = np.sqrt(np.where(three, 0.0, disc))
        cardano = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
        big = np.where(three, trig, cardano) - shift
    coefs = (c3, c2, c1, c0)
    big = _polish(coefs, big, 3)

    # deflate: c3 x^3 + c2 x^2 + c1 x + c0 = (x - big)(c3 x^2 + bq x + cq)
    bq = c2 + c3 * big
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        cq = np.where(big != 0, -c0 / np.where(big != 0, big, 1.0), c1 + bq * big)
        qd = bq * bq - 4.0 * c3 * cq
        double = np.abs(qd) <= 1e-12 * (bq * bq + np.abs(4.0 * c3 * cq))
        real = (qd > 0) & ~double
        sq = np.sqrt(np.where(real, qd, 0.0))
        h = -0.5 * (bq + np.where(bq >= 0, sq, -sq))
        x1 = np.where(double, -bq / (2.0 * c3), np.where(real, h / c3, np.nan))
        x2 = np.where(double, np.nan, np.where(real & (h != 0), cq / np.where(h != 0, h, 1.0), np.nan))
        # h == 0 only when bq == cq == 0: a double root at zero
        x2 = np.where(real & (h == 0), 0.0, x2)

    out = np.stack([big, x1, x2], axis=-1)
    out = _polish(tuple(v[..., None] for v in coefs), out)
    return out


def solve_cubic_real(c: CubicCoefficients) -> list[float]:
    """All real roots of a cubic, ascending, with repeated roots collapsed."""
    if c.c3 == 0:
        raise InvalidCubic("leading coefficient must be non-zero")
    roots = cubic_real_roots(c.c3, c.c2, c.c1, c.c0)
    roots = np.sort(roots[np.isfinite(roots)])
    collapsed: list[float] = []
    for r in roots:
        if collapsed and abs(r - collapsed[-1]) <= 1e-6 * (1.0 + abs(r)):
            continue
        collapsed.append(float(r))
    return collapsed
