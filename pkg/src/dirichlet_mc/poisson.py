"""Poisson point process on a finite-mass window with the white structure.

For X = N(h) the white structure gives Γ[X] = N(γ[h]), A[X] = N(a[h]) and,
by bilinearity, Γ[X, Γ[X]] = N(γ[h, γ[h]]). Hence

    Γ[X, 1/Γ[X]] = -N(γ[h, γ[h]]) / N(γ[h])**2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ExtendedBatch, StructureProvider, TripletBatch
from .wiener import fd_check

PointFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PoissonModel:
    mass: float
    point_sampler: Callable[[np.random.Generator, int], np.ndarray]
    h: PointFn
    gamma_h: PointFn
    a_h: PointFn
    gamma_h_gamma_h: PointFn

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise ValueError("mass must be finite and > 0")


@dataclass(frozen=True)
class PoissonDraw:
    """Extended batch plus the per-sample point counts."""

    batch: ExtendedBatch
    counts: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        return self.batch.gamma <= 0.0


def sample_poisson_functional(model: PoissonModel, rng, size: int = 1) -> PoissonDraw:
    gen = rng.generator() if hasattr(rng, "generator") else rng
    counts = gen.poisson(model.mass, size)
    total = int(counts.sum())
    pts = model.point_sampler(gen, total)
    owner = np.repeat(np.arange(size), counts)

    def total_of(fn):
        if total == 0:
            return np.zeros(size)
        return np.bincount(owner, weights=np.asarray(fn(pts), dtype=float), minlength=size)

    x = total_of(model.h)
    g = total_of(model.gamma_h)
    a = total_of(model.a_h)
    gg = total_of(model.gamma_h_gamma_h)
    return PoissonDraw(ExtendedBatch(x, g, a, gg), counts)


def make_interval_model(c: PointFn, c_x: PointFn, interval, h: PointFn, h_x: PointFn,
                        h_xx: PointFn, rate: float = 1.0,
                        rho: Optional[PointFn] = None, rho_x: Optional[PointFn] = None,
                        selftest: bool = True) -> PoissonModel:
    """Poisson model with base structure γ[u] = c u'^2 on an interval.

    The intensity is ``rate * rho(x) dx`` on ``interval`` (``rho`` defaults to
    1). The base generator is the one attached to γ and the intensity,
    ``a[u] = (c rho u')' / (2 rho) = ½ c u'' + ½ (c' + c rho'/rho) u'``.
    For E[A[X]] = 0 to hold, ``c rho h'`` must vanish at both endpoints.

    Points are drawn by rejection from the uniform law when ``rho`` is given.
    """
    lo, hi = map(float, interval)
    if not hi > lo:
        raise ValueError("empty interval")
    if rho is None:
        def rho(x):
            return np.ones_like(x)

        def rho_x(x):
            return np.zeros_like(x)
        mass = rate * (hi - lo)
        rho_max = 1.0
    else:
        if rho_x is None:
            raise ValueError("rho_x is required with rho")
        from scipy.integrate import quad

        mass = rate * quad(rho, lo, hi)[0]
        probe = np.linspace(lo, hi, 2049)
        rho_max = float(np.max(rho(probe))) * 1.05

    if selftest:
        probe = np.linspace(lo, hi, 103)[1:-1]
        t = np.zeros_like(probe)
        pairs = {
            "c_x": (lambda x, _: c(x), lambda x, _: c_x(x)),
            "h_x": (lambda x, _: h(x), lambda x, _: h_x(x)),
            "h_xx": (lambda x, _: h_x(x), lambda x, _: h_xx(x)),
            "rho_x": (lambda x, _: rho(x), lambda x, _: rho_x(x)),
        }
        rep = fd_check(pairs, probe, t)
        if not rep:
            raise ValueError(f"derivative self-test failed: {rep.max_rel_error}")
        if np.any(c(probe) < 0):
            raise ValueError("c must be >= 0 on the interval")

    def gamma_h(x):
        return c(x) * h_x(x) ** 2

    def a_h(x):
        return 0.5 * c(x) * h_xx(x) + 0.5 * (c_x(x) + c(x) * rho_x(x) / rho(x)) * h_x(x)

    def gamma_h_gamma_h(x):
        # γ[h, γ[h]] = c h' (c h'^2)'
        d_gh = c_x(x) * h_x(x) ** 2 + 2.0 * c(x) * h_x(x) * h_xx(x)
        return c(x) * h_x(x) * d_gh

    def sampler(gen, k):
        if k == 0:
            return np.empty(0)
        out = np.empty(0)
        while out.size < k:
            m = max(2 * (k - out.size), 16)
            cand = gen.uniform(lo, hi, m)
            keep = gen.uniform(0.0, rho_max, m) < rho(cand)
            out = np.concatenate([out, cand[keep]])
        return out[:k]

    return PoissonModel(mass, sampler, h, gamma_h, a_h, gamma_h_gamma_h)


class PoissonProvider(StructureProvider):
    def __init__(self, model: PoissonModel):
        self.model = model
        self.dim = 1
        self.capabilities = frozenset({"triplet", "extended"})

    def _triplet_chunk(self, n, rng):
        return sample_poisson_functional(self.model, rng, n).batch.triplets()

    def _extended_chunk(self, n, rng):
        return sample_poisson_functional(self.model, rng, n).batch
