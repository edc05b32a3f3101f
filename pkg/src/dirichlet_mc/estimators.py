"""Estimators built on (X, Γ[X], A[X]) draws.

* :func:`shifted_mean` / :func:`estimate_optimal_epsilon`: the mean of
  X + eps A[X], which keeps E[X] and lowers the variance.
* :func:`random_kernel_density`: Gaussian kernel whose centre is shifted by
  eps A[X] and whose covariance is eps Γ[X], draw by draw.
* :func:`classical_kde`: fixed-bandwidth Gaussian kernel baseline.
* :func:`direct_density`, :func:`direct_conditional`,
  :func:`control_zero_mean`: sign formulas for scalar X that are unbiased
  (eps = 0) or monotone in eps (eps > 0).

Every estimator returns values together with standard errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    ExtendedBatch,
    ExtendedSample,
    TripletBatch,
    TripletSample,
    stack_extended,
    stack_triplets,
)

DEFAULT_RIDGE = 1e-8
_SINGULAR_RCOND = 1e-14
_BLOCK = 1 << 22  # grid points x draws evaluated at once


class NoReductionError(ValueError):
    """A[X] is statistically zero, so no optimal shift exists."""


class DegenerateSampleError(ValueError):
    pass


def _as_triplets(samples) -> TripletBatch:
    if isinstance(samples, TripletBatch):
        return samples
    if isinstance(samples, ExtendedBatch):
        return samples.triplets()
    if isinstance(samples, TripletSample):
        return stack_triplets([samples])
    return stack_triplets(list(samples))


def _as_extended(samples) -> ExtendedBatch:
    if isinstance(samples, ExtendedBatch):
        return samples
    if isinstance(samples, ExtendedSample):
        return stack_extended([samples])
    return stack_extended(list(samples))


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


def epsilon_rule(N: int, d: int, criterion: str) -> float:
    if N < 2 or d < 1:
        raise ValueError("need N >= 2 and d >= 1")
    if criterion == "L2":
        return N ** (-2.0 / (d + 8))
    if criterion == "poly":
        return N ** (-2.0 / (d + 4))
    raise ValueError(f"unknown criterion {criterion!r}")


def classical_bandwidth(N: int, d: int, criterion: str = "L2") -> float:
    """Rate-optimal order of the fixed bandwidth for each criterion."""
    if N < 2 or d < 1:
        raise ValueError("need N >= 2 and d >= 1")
    if criterion == "L2":
        return N ** (-1.0 / (d + 4))
    if criterion == "poly":
        return N ** (-1.0 / (d + 2))
    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass
class EstimatorConfig:
    N: int
    epsilon: Union[float, str] = "L2"
    grid: Sequence[float] = (0.0,)
    ridge: float = DEFAULT_RIDGE
    control_c: Optional[Callable] = None

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if len(self.grid) == 0:
            raise ValueError("grid must be nonempty")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if isinstance(self.epsilon, str):
            if self.epsilon not in ("L2", "poly"):
                raise ValueError(f"unknown epsilon rule {self.epsilon!r}")
        elif not self.epsilon > 0:
            raise ValueError("manual epsilon must be > 0")

    def resolve_epsilon(self, d: int) -> float:
        if isinstance(self.epsilon, str):
            return epsilon_rule(self.N, d, self.epsilon)
        return float(self.epsilon)


@dataclass
class DensityEstimate:
    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    method: str
    parameter: float
    N: int
    seed: Optional[int] = None
    skipped: np.ndarray = field(default=None)
    undefined: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.skipped is None:
            self.skipped = np.zeros(len(self.values), dtype=int)
        if self.undefined is None:
            self.undefined = ~np.isfinite(self.values)


# ---------------------------------------------------------------------------
# Mean with generator shift
# ---------------------------------------------------------------------------


@dataclass
class ShiftedMean:
    mean: np.ndarray
    trace_cov: float
    stderr: np.ndarray
    trace_cov_stderr: float


def shifted_mean(samples, eps: float) -> ShiftedMean:
    """Mean and total variance of X + eps A[X]."""
    b = _as_triplets(samples)
    y = b.x + eps * b.a
    n = b.n
    mean = y.mean(axis=0)
    cen = y - mean
    if n > 1:
        var = (cen**2).sum(axis=0) / (n - 1)
        tr = float(var.sum())
        # delta-method stderr of the trace of a sample covariance
        q = (cen**2).sum(axis=1)
        tr_se = float(np.std(q, ddof=1) / math.sqrt(n))
    else:
        var = np.zeros_like(mean)
        tr, tr_se = 0.0, 0.0
    return ShiftedMean(mean, tr, np.sqrt(var / n), tr_se)


@dataclass
class OptimalShift:
    epsilon: float
    predicted_trace: float
    dirichlet_sum: float   # Σ_i E[X_i] estimated as ½ mean Γ_ii
    a_norm2: float         # mean ‖A[X]‖²
    trace_var: float


def estimate_optimal_epsilon(samples) -> OptimalShift:
    """Variance-minimising shift eps* = Σ E[X_i] / ‖A[X]‖².

    At eps* the total variance drops to trace var[X] - (Σ E[X_i])² / ‖A[X]‖².
    """
    b = _as_triplets(samples)
    dsum = 0.5 * float(np.trace(b.gamma, axis1=1, axis2=2).mean())
    a2 = float((b.a**2).sum(axis=1).mean())
    if not a2 > 0:
        raise NoReductionError("A[X] vanishes on the sample; no shift reduces variance")
    tr = shifted_mean(b, 0.0).trace_cov
    return OptimalShift(dsum / a2, tr - dsum**2 / a2, dsum, a2, tr)


# ---------------------------------------------------------------------------
# Gaussian kernels
# ---------------------------------------------------------------------------


def gaussian_kernel_eval(z, sigma, ridge: float = 0.0):
    """Normal density with covariance ``sigma + ridge I`` at ``z``.

    Vectorised: ``z`` has shape ``(..., d)`` and ``sigma`` ``(..., d, d)``
    (broadcastable). A ``sigma`` with fewer than two axes is read as
    elementwise variances with d = 1. Numerically singular covariances give
    NaN (the caller skips them).
    """
    z = np.asarray(z, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim < 2:
        s = sigma + ridge
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.exp(-0.5 * z * z / s) / np.sqrt(2.0 * math.pi * s)
        return np.where(s > 0, out, np.nan)
    d = z.shape[-1]
    cov = sigma + ridge * np.eye(d)
    evals, evecs = np.linalg.eigh(cov)
    top = np.max(np.abs(evals), axis=-1, keepdims=True)
    bad = np.any(evals <= _SINGULAR_RCOND * np.maximum(top, 1e-300), axis=-1)
    safe = np.where(evals > 0, evals, 1.0)
    proj = np.einsum("...ji,...j->...i", evecs, z)
    quad = np.sum(proj**2 / safe, axis=-1)
    logdet = np.sum(np.log(safe), axis=-1)
    val = np.exp(-0.5 * quad - 0.5 * logdet - 0.5 * d * math.log(2 * math.pi))
    return np.where(bad, np.nan, val)


def _grid_array(grid, d):
    g = np.asarray(grid, dtype=float)
    if d == 1:
        return g.reshape(-1, 1)
    return g.reshape(-1, d)


def _kernel_mean(kernel_rows, n_grid, n):
    """Mean/stderr over draws of per-grid-point kernel rows, skipping NaNs."""
    values = np.empty(n_grid)
    stderr = np.empty(n_grid)
    skipped = np.zeros(n_grid, dtype=int)
    for i, row in enumerate(kernel_rows):
        ok = np.isfinite(row)
        m = int(ok.sum())
        skipped[i] = n - m
        if m == 0:
            values[i] = np.nan
            stderr[i] = np.nan
            continue
        r = row[ok]
        values[i] = r.mean()
        stderr[i] = r.std(ddof=1) / math.sqrt(m) if m > 1 else 0.0
    return values, stderr, skipped


def random_kernel_density(samples, cfg: EstimatorConfig, seed: Optional[int] = None,
                          return_terms: bool = False) -> DensityEstimate:
    """f̂(x) = mean_n g(x - X_n - eps A_n, eps Γ_n), with ridge eps*ridge*I."""
    b = _as_triplets(samples)
    eps = cfg.resolve_epsilon(b.d)
    grid = _grid_array(cfg.grid, b.d)
    centers = b.x + eps * b.a
    rows = []
    if b.d == 1:
        s = eps * (b.gamma[:, 0, 0] + cfg.ridge)
        bad = ~(s > 0)
        s_safe = np.where(bad, 1.0, s)
        norm = 1.0 / np.sqrt(2.0 * math.pi * s_safe)
        c = centers[:, 0]
        for xg in grid[:, 0]:
            z = xg - c
            row = norm * np.exp(-0.5 * z * z / s_safe)
            row[bad] = np.nan
            rows.append(row)
    else:
        cov = eps * b.gamma
        for xg in grid:
            rows.append(gaussian_kernel_eval(xg - centers, cov, eps * cfg.ridge))
    if return_terms:
        return np.array(rows)
    values, stderr, skipped = _kernel_mean(rows, len(grid), b.n)
    return DensityEstimate(np.asarray(cfg.grid, dtype=float), values, stderr,
                           "random_kernel", eps, b.n, seed, skipped)


def classical_kde(x, h: Optional[float], grid, seed: Optional[int] = None) -> DensityEstimate:
    """Fixed-bandwidth Gaussian KDE; ``h=None`` uses N^(-1/(d+4))."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if h is None:
        h = classical_bandwidth(max(n, 2), d, "L2")
    if not h > 0:
        raise ValueError("bandwidth must be > 0")
    g = _grid_array(grid, d)
    norm = (2.0 * math.pi * h * h) ** (-d / 2)
    rows = []
    for xg in g:
        z2 = np.sum((xg - x) ** 2, axis=1)
        rows.append(norm * np.exp(-0.5 * z2 / (h * h)))
    values, stderr, skipped = _kernel_mean(rows, len(g), n)
    return DensityEstimate(np.asarray(grid, dtype=float), values, stderr,
                           "classical", float(h), n, seed, skipped)


# ---------------------------------------------------------------------------
# Sign formulas (scalar X)
# ---------------------------------------------------------------------------


def _check_eps(b: ExtendedBatch, eps: float):
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0 and np.any(b.degenerate):
        raise DegenerateSampleError(
            f"{int(b.degenerate.sum())} draws have Γ[X] = 0; use eps > 0 "
            "(the regularised, monotone version of the formula)"
        )


def density_terms(samples, x: float, eps: float) -> np.ndarray:
    """Per-draw summands ½ sign(x - X)(Γ[X, 1/(eps+Γ)] + 2A/(eps+Γ))."""
    b = _as_extended(samples)
    _check_eps(b, eps)
    den = eps + b.gamma
    return 0.5 * np.sign(x - b.x) * (b.gamma_inv(eps) + 2.0 * b.a / den)


def _mean_se(v):
    n = v.shape[0]
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def direct_density(samples, x: float, eps: float = 0.0):
    """Sign-formula density estimate at ``x``; returns ``(value, stderr)``.

    With eps = 0 it is unbiased for f(x) when 1/Γ[X] is regular enough; with
    eps > 0 it estimates a value below f(x) that increases as eps
    decreases.
    """
    return _mean_se(density_terms(samples, x, eps))


def _bracket(b: ExtendedBatch, eps: float) -> np.ndarray:
    """Γ[X, G/(eps+Γ)] + 2 G A/(eps+Γ)."""
    if not b.has_payload:
        raise ValueError("draws carry no payload G")
    den = eps + b.gamma
    cross = b.gamma_xg / den + b.payload_g * b.gamma_inv(eps)
    return cross + 2.0 * b.payload_g * b.a / den


def optimal_control(samples, x: float, eps: float = 0.0) -> float:
    """Variance-minimising constant c for (sign(x - X) - c) * bracket."""
    b = _as_extended(samples)
    _check_eps(b, eps)
    br = _bracket(b, eps)
    sb = np.sign(x - b.x) * br
    var_b = float(np.var(br))
    if var_b == 0:
        return 0.0
    return float(np.mean((sb - sb.mean()) * (br - br.mean())) / var_b)


def mean_sign_control(samples, x: float) -> float:
    b = _as_extended(samples)
    return float(np.mean(np.sign(x - b.x)))


def conditional_terms(samples, x: float, eps: float = 0.0, c="optimal") -> np.ndarray:
    b = _as_extended(samples)
    _check_eps(b, eps)
    br = _bracket(b, eps)
    cval = _resolve_control(b, x, eps, c)
    return 0.5 * (np.sign(x - b.x) - cval) * br


def _resolve_control(b, x, eps, c) -> float:
    if c is None:
        return 0.0
    if isinstance(c, str):
        if c == "optimal":
            return optimal_control(b, x, eps)
        if c == "mean_sign":
            return mean_sign_control(b, x)
        raise ValueError(f"unknown control {c!r}")
    if callable(c):
        return float(c(x))
    return float(c)


def direct_conditional(samples, x: float, eps: float = 0.0, c="optimal"):
    """Estimate f(x) E[G | X = x]; returns ``(value, stderr)``.

    ``c`` is the control: ``"optimal"`` (default, empirical variance
    minimiser), ``"mean_sign"``, a number, a function of x, or ``None``
    for no control.
    """
    return _mean_se(conditional_terms(samples, x, eps, c))


def control_zero_mean(samples, eps: float = 0.0):
    """Mean and stderr of the bracket, whose expectation is zero."""
    b = _as_extended(samples)
    _check_eps(b, eps)
    return _mean_se(_bracket(b, eps))
