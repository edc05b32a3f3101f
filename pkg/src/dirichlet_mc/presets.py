"""Built-in validation models with exact derivatives."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from .core import ProductProvider, StructureProvider
from .mcspace import McSpaceProvider, identity_functional
from .poisson import PoissonProvider, make_interval_model
from .wiener import EulerConfig, ErrorSource, WienerProvider, constant_sigma_model, linear_model

PRESETS = ("gauss_const_sigma", "gbm", "poisson_interval", "mc_identity")
PRESET_KIND = {
    "gauss_const_sigma": "wiener",
    "gbm": "wiener",
    "poisson_interval": "poisson",
    "mc_identity": "mcspace",
}

DEFAULTS = {
    "gauss_const_sigma": {"sigma": 1.0, "x0": 0.0, "T": 1.0, "n": 16},
    "gbm": {"sigma": 0.4, "r": 0.05, "x0": 1.0, "T": 1.0, "n": 512},
    "poisson_interval": {"rate": 5.0},
    "mc_identity": {},
}


class GaussianWiener(WienerProvider):
    """Constant-σ SDE: X_T ~ N(x0, σ²T), Γ = σ²T, A = -(X - x0)/2.

    ``triple_of_normal`` maps a standard normal z to the exact draw, which
    lets quadrature compute expectations over the law of (X, Γ, A).
    """

    def __init__(self, sigma=1.0, x0=0.0, T=1.0, n=16):
        self.sigma, self.x0, self.T = float(sigma), float(x0), float(T)
        sd = abs(self.sigma) * math.sqrt(self.T)
        super().__init__(
            constant_sigma_model(sigma, x0, T), EulerConfig(int(n)),
            density=lambda x: stats.norm.pdf(x, loc=self.x0, scale=sd),
        )
        self.capabilities = self.capabilities | {"quadrature_law"}

    def triple_of_normal(self, z):
        s = self.sigma * math.sqrt(self.T)
        x = self.x0 + s * z
        return x, np.full_like(np.asarray(z, dtype=float), self.sigma**2 * self.T), -0.5 * s * z


def gbm_density(sigma, r, x0, T):
    """Lognormal density of the exact GBM solution at T."""
    mu = math.log(x0) + (r - 0.5 * sigma**2) * T
    s = sigma * math.sqrt(T)
    return lambda x: stats.lognorm.pdf(x, s=s, scale=math.exp(mu))


def poisson_interval_model(rate: float = 5.0):
    """N(h) with h(x) = x on (0, 1), uniform intensity, c(x) = x²(1-x)².

    c vanishes at both ends, so the base generator is symmetric and
    E[A[X]] = 0.
    """
    return make_interval_model(
        c=lambda x: (x * (1 - x)) ** 2,
        c_x=lambda x: 2 * x * (1 - x) * (1 - 2 * x),
        interval=(0.0, 1.0),
        h=lambda x: x,
        h_x=lambda x: np.ones_like(x),
        h_xx=lambda x: np.zeros_like(x),
        rate=rate,
    )


def make_preset(name: str, **params) -> StructureProvider:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}")
    unknown = set(params) - set(DEFAULTS[name]) - {"error_source", "v0", "scheme"}
    if unknown:
        raise KeyError(f"unknown parameter(s) for {name}: {sorted(unknown)}")
    p = dict(DEFAULTS[name], **params)
    if name == "gauss_const_sigma":
        prov = GaussianWiener(p["sigma"], p["x0"], p["T"], p["n"])
        return _configure_wiener(prov, p)
    if name == "gbm":
        model = linear_model(p["sigma"], p["r"], p["x0"], p["T"])
        prov = WienerProvider(model, EulerConfig(int(p["n"])),
                              density=gbm_density(p["sigma"], p["r"], p["x0"], p["T"]))
        return _configure_wiener(prov, p)
    if name == "poisson_interval":
        return PoissonProvider(poisson_interval_model(p["rate"]))
    return McSpaceProvider(
        identity_functional(),
        density=lambda x: ((x > 0) & (x < 1)).astype(float),
    )


def _configure_wiener(prov: WienerProvider, p: dict) -> WienerProvider:
    if "error_source" in p:
        src = ErrorSource.parse(p["error_source"], float(p.get("v0", 0.0)))
        prov.model = prov.model.with_source(src)
        if src != ErrorSource():
            # the closed forms above assume a Brownian-only error
            prov.capabilities = prov.capabilities - {"quadrature_law"}
    if "scheme" in p:
        prov.cfg = EulerConfig(prov.cfg.n, prov.cfg.record_path, p["scheme"])
    return prov


def gauss_product(copies: int = 2, **params) -> ProductProvider:
    return ProductProvider(make_preset("gauss_const_sigma", **params), copies)

