"""Oracles, statistical identity checks and convergence-rate experiments.

Nothing here calls the kernel code of :mod:`estimators` to produce a
reference value: references come from quadrature or closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from .core import RngStream, StructureProvider, derive_substream
from .estimators import (
    EstimatorConfig,
    classical_bandwidth,
    classical_kde,
    density_terms,
    epsilon_rule,
    random_kernel_density,
)


class QuadratureError(RuntimeError):
    pass


class NoiseFloorError(RuntimeError):
    """Statistical noise is too large to resolve the bias; increase N."""


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def quadrature_oracle(integrand: Callable[[float], float], interval, tol: float = 1e-10,
                      points: Optional[Sequence[float]] = None, limit: int = 500) -> float:
    """Adaptive Gauss-Kronrod integral with absolute tolerance ``tol``."""
    lo, hi = interval
    kw = {"epsabs": tol, "epsrel": 0.0, "limit": limit}
    if points is not None and np.isfinite(lo) and np.isfinite(hi):
        inner = [p for p in points if lo < p < hi]
        if inner:
            kw["points"] = inner
    val, err = integrate.quad(integrand, lo, hi, **kw)
    if not err <= tol:
        raise QuadratureError(f"tolerance {tol:g} not reached (estimated error {err:.3g})")
    return float(val)


def normal_expectation(fn: Callable[[float], float], tol: float = 1e-10,
                       points: Sequence[float] = (), span: float = 12.0) -> float:
    """E[fn(Z)] for Z standard normal, truncated to ``[-span, span]``."""
    return quadrature_oracle(lambda z: fn(z) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi),
                             (-span, span), tol, points=sorted(points))


# ---------------------------------------------------------------------------
# Slope fitting
# ---------------------------------------------------------------------------


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    lo: float
    hi: float

    def within(self, target: float, tol: float) -> bool:
        return abs(self.slope - target) <= tol


def fit_loglog(xs, ys, level: float = 0.95) -> SlopeFit:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2:
        raise ValueError("need at least two points to fit a slope")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log fit needs positive data")
    res = stats.linregress(np.log(xs), np.log(ys))
    dof = len(xs) - 2
    if dof > 0:
        q = stats.t.ppf(0.5 + level / 2, dof)
        half = q * res.stderr
    else:
        half = 0.0
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr),
                    float(res.slope - half), float(res.slope + half))


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------

PHI_FAMILY = {
    "x^2": (lambda x: 2 * x, lambda x: 2 * np.ones_like(x)),
    "x": (lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "cos": (lambda x: -np.sin(x), lambda x: -np.cos(x)),
    "tanh": (lambda x: 1 / np.cosh(x) ** 2, lambda x: -2 * np.tanh(x) / np.cosh(x) ** 2),
}


@dataclass
class MeanCheck:
    name: str
    mean: float
    stderr: float

    def straddles_zero(self, k: float = 3.0) -> bool:
        return abs(self.mean) <= k * self.stderr


def ibp_residual(provider: StructureProvider, phis, N: int, stream: RngStream,
                 samples=None):
    """Sample mean of φ'(X) A[X] + ½ φ''(X) Γ[X] for each φ.

    ``phis`` is a mapping name -> (φ', φ'') or an iterable of names from
    :data:`PHI_FAMILY`.
    """
    if provider.dim != 1:
        raise ValueError("ibp_residual needs a scalar provider")
    if not isinstance(phis, dict):
        phis = {k: PHI_FAMILY[k] for k in phis}
    b = samples if samples is not None else provider.sample(N, stream)
    x, g, a = b.scalar()
    out = []
    for name, (d1, d2) in phis.items():
        v = d1(x) * a + 0.5 * d2(x) * g
        out.append(MeanCheck(name, float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))))
    return out


# ---------------------------------------------------------------------------
# Bias and variance orders
# ---------------------------------------------------------------------------


@dataclass
class OrderReport:
    params: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    fit: SlopeFit
    extra: dict = field(default_factory=dict)


def bias_curve(provider: StructureProvider, estimator: str, x: float, params,
               N: int, stream: RngStream, strict: bool = True) -> OrderReport:
    """|E f̂(x) - f(x)| against eps (random kernel) or h (classical)."""
    params = np.asarray(params, dtype=float)
    if len(params) < 2:
        raise ValueError("need at least two eps/h values to fit a slope")
    if not provider.has_density:
        raise ValueError("bias_curve needs a provider with a known density")
    b = provider.sample(N, stream)
    f = float(provider.density(np.array([x]))[0])
    biases, ses = [], []
    for p in params:
        if estimator == "random_kernel":
            est = random_kernel_density(b, EstimatorConfig(N, float(p), [x]))
        elif estimator == "classical":
            est = classical_kde(b.x, float(p), [x])
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        biases.append(abs(est.values[0] - f))
        ses.append(est.stderr[0])
    biases, ses = np.array(biases), np.array(ses)
    if strict and np.any(ses > biases / 3):
        raise NoiseFloorError(
            f"stderr exceeds bias/3 at {params[ses > biases / 3]}; increase N"
        )
    return OrderReport(params, biases, ses, fit_loglog(params, biases))


def variance_scaling(provider: StructureProvider, x, eps_grid, N: int,
                     stream: RngStream) -> OrderReport:
    """Variance of the random-kernel summand against eps.

    ``extra["scaled"]`` holds eps^(d/2) times the variance, whose limit is
    E[η(x, Γ, A) / ((4π)^(d/2) sqrt det Γ)], η being the density of X given
    (Γ, A).
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    if len(eps_grid) < 2:
        raise ValueError("need at least two eps values to fit a slope")
    b = provider.sample(N, stream)
    d = b.d
    xg = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, d)
    var, se = [], []
    for eps in eps_grid:
        t = random_kernel_density(b, EstimatorConfig(N, float(eps), xg), return_terms=True)[0]
        t = t[np.isfinite(t)]
        v = t.var(ddof=1)
        var.append(v)
        # stderr of a sample variance
        se.append(math.sqrt(max(np.mean((t - t.mean()) ** 4) - v * v, 0.0) / len(t)))
    var, se = np.array(var), np.array(se)
    scaled = eps_grid ** (d / 2) * var
    return OrderReport(eps_grid, var, se, fit_loglog(eps_grid, var),
                       {"scaled": scaled, "scaled_stderr": eps_grid ** (d / 2) * se})


# ---------------------------------------------------------------------------
# Rate experiments
# ---------------------------------------------------------------------------


@dataclass
class RateReport:
    method: str
    criterion: str
    Ns: np.ndarray
    params: np.ndarray
    errors: np.ndarray
    stderr: np.ndarray
    fit: SlopeFit

    def __post_init__(self):
        if np.any(np.diff(self.Ns) <= 0):
            raise ValueError("Ns must be strictly increasing")

    def rows(self):
        for n, e, s in zip(self.Ns, self.errors, self.stderr):
            yield int(n), float(e), float(s), self.fit.lo, self.fit.hi


def _trapz(y, x):
    return float(np.trapezoid(y, x)) if hasattr(np, "trapezoid") else float(np.trapz(y, x))


def _l2_error(values, exact, grid):
    return math.sqrt(_trapz((values - exact) ** 2, grid))


def _estimate(method, b, N, grid, criterion):
    if method == "random_kernel":
        eps = epsilon_rule(N, b.d, criterion)
        return eps, random_kernel_density(b, EstimatorConfig(N, eps, grid)).values
    if method == "classical":
        h = classical_bandwidth(N, b.d, criterion)
        return h, classical_kde(b.x, h, grid).values
    raise ValueError(f"unknown method {method!r}")


def rate_experiment(provider: StructureProvider, methods: Sequence[str], Ns: Sequence[int],
                    criterion: str, seed: int, grid=None, replicates: int = 4,
                    eps_direct: float = 0.0, workers: int = 1) -> dict:
    """Error against N for each method; returns {method: RateReport}.

    L2: root of the mean (over replicates) integrated squared error on the
    grid. The kernel methods share draws within a cell.
    poly: |E f̂² - f²| + |E f̂ - f| averaged over the grid, with E f̂ and E f̂²
    evaluated by quadrature over the law of the draw (the provider must
    expose ``triple_of_normal``).
    ``direct`` is supported for L2 only.
    """
    Ns = np.asarray(Ns, dtype=int)
    if len(Ns) < 4:
        raise ValueError("need at least 4 values of N to fit a rate")
    if not provider.has_density:
        raise ValueError("rate experiments need a provider with a known density")
    if grid is None:
        grid = np.linspace(-3, 3, 61)
    grid = np.asarray(grid, dtype=float)
    f = provider.density(grid)
    if criterion == "poly":
        return {m: _poly_rates(provider, m, Ns, grid, f) for m in methods}
    if criterion != "L2":
        raise ValueError(f"unknown criterion {criterion!r}")

    ise = {m: np.zeros((len(Ns), replicates)) for m in methods}
    params = {m: np.zeros(len(Ns)) for m in methods}
    for i, N in enumerate(Ns):
        for r in range(replicates):
            stream = derive_substream(seed, i, r)
            kernel_methods = [m for m in methods if m != "direct"]
            if kernel_methods:
                b = provider.sample(int(N), stream, workers=workers)
                for m in kernel_methods:
                    params[m][i], vals = _estimate(m, b, int(N), grid, "L2")
                    ise[m][i, r] = _l2_error(vals, f, grid) ** 2
            if "direct" in methods:
                e = provider.sample_extended(int(N), derive_substream(seed, i, r + replicates),
                                             workers=workers)
                vals = np.array([density_terms(e, x, eps_direct).mean() for x in grid])
                params["direct"][i] = eps_direct
                ise["direct"][i, r] = _l2_error(vals, f, grid) ** 2
    out = {}
    for m in methods:
        mean_ise = ise[m].mean(axis=1)
        err = np.sqrt(mean_ise)
        se_ise = ise[m].std(axis=1, ddof=1) / math.sqrt(replicates) if replicates > 1 \
            else np.zeros(len(Ns))
        se = se_ise / (2 * err)
        out[m] = RateReport(m, "L2", Ns, params[m], err, se, fit_loglog(Ns, err))
    return out


def _poly_rates(provider, method, Ns, grid, f):
    if "quadrature_law" not in provider.capabilities:
        raise ValueError("the polynomial criterion needs a provider with a quadrature law")
    errs, params = [], []
    for N in Ns:
        N = int(N)
        if method == "random_kernel":
            p = epsilon_rule(N, 1, "poly")
        elif method == "classical":
            p = classical_bandwidth(N, 1, "poly")
        else:
            raise ValueError(f"poly criterion not defined for {method!r}")
        c = [_poly_criterion_at(provider, method, p, N, x, fx) for x, fx in zip(grid, f)]
        errs.append(_trapz(c, grid) / (grid[-1] - grid[0]))
        params.append(p)
    errs = np.array(errs)
    return RateReport(method, "poly", Ns, np.array(params), errs, np.zeros_like(errs),
                      fit_loglog(Ns, errs))


def _kernel_moment(provider, method, p, x, power):
    def integrand(z):
        xv, g, a = provider.triple_of_normal(np.array([z]))
        if method == "random_kernel":
            m, s = xv[0] + p * a[0], p * g[0]
        else:
            m, s = xv[0], p * p
        return (math.exp(-0.5 * (x - m) ** 2 / s) / math.sqrt(2 * math.pi * s)) ** power

    # locate the kernel peak in z to give quad a breakpoint
    z0 = _peak_z(provider, method, p, x)
    return normal_expectation(integrand, tol=1e-13, points=[z0])


def _peak_z(provider, method, p, x):
    xv, g, a = provider.triple_of_normal(np.array([0.0, 1.0]))
    cen = xv + (p * a if method == "random_kernel" else 0.0)
    slope = cen[1] - cen[0]
    return float((x - cen[0]) / slope) if slope != 0 else 0.0


def _poly_criterion_at(provider, method, p, N, x, fx):
    m1 = _kernel_moment(provider, method, p, x, 1)
    m2 = _kernel_moment(provider, method, p, x, 2)
    second = m2 / N + (1 - 1 / N) * m1 * m1
    return abs(second - fx * fx) + abs(m1 - fx)


# ---------------------------------------------------------------------------
# Monotonicity of the regularised direct formula
# ---------------------------------------------------------------------------


@dataclass
class MonotoneReport:
    passed: bool
    values: np.ndarray      # shape (len(xs), len(eps)), eps sorted decreasing
    stderr: np.ndarray
    eps: np.ndarray
    violations: list

    def __bool__(self):
        return self.passed


def monotone_feps_check(samples, xs, eps_ladder, k: float = 2.0) -> MonotoneReport:
    """Check that the eps-regularised direct density grows as eps decreases.

    Successive rungs are compared through the paired difference of the
    per-draw terms, with tolerance ``k`` standard errors.
    """
    eps = np.sort(np.asarray(eps_ladder, dtype=float))[::-1]
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    vals = np.zeros((len(xs), len(eps)))
    ses = np.zeros_like(vals)
    violations = []
    for i, x in enumerate(xs):
        terms = [density_terms(samples, x, e) for e in eps]
        n = len(terms[0])
        for j, t in enumerate(terms):
            vals[i, j] = t.mean()
            ses[i, j] = t.std(ddof=1) / math.sqrt(n)
        for j in range(1, len(eps)):
            diff = terms[j] - terms[j - 1]
            se = diff.std(ddof=1) / math.sqrt(n)
            if diff.mean() < -k * se:
                violations.append((float(x), float(eps[j - 1]), float(eps[j]),
                                   float(diff.mean()), float(se)))
    return MonotoneReport(not violations, vals, ses, eps, violations)
