"""Scalar SDE under the Ornstein-Uhlenbeck error structure.

The SDE is ``dX = sigma(X, t) dB + r(X, t) dt`` on ``[0, T]`` with a uniform
grid of ``n`` steps. Two recursions for (X, Γ[X], A[X]) are provided:

``scheme="exact"`` (default)
    Applies the functional calculus of Γ and A to the Euler map
    ``X_{k+1} = X_k + sigma(X_k) dB_k + r(X_k) dt`` itself. The second and
    third components are then *exactly* Γ[X^n] and A[X^n] of the discrete
    variable, draw by draw.

``scheme="augmented"``
    The Euler discretisation of the joint SDE satisfied by
    (X, Γ[X], A[X]) in continuous time. Its A component coincides with the
    exact one; its Γ component differs by the mean-zero term
    ``γ_k (σ'² (dB² - dt) + 2σ' r' dB dt + r'² dt²)`` per step.

Under the OU structure Γ[dB_k] = dt, A[dB_k] = -dB_k / 2, and distinct
increments are Γ-orthogonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    ExtendedBatch,
    RngStream,
    SimulationError,
    StructureProvider,
    TripletBatch,
)

EXPLOSION = 1e12
_FD_TOL = 1e-5
_FD_FLOOR = 1e-8

Coef = Callable[[np.ndarray, float], np.ndarray]


def _zero(x, t):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ErrorSource:
    """Where the error sits: on the Brownian path, on x0, or both.

    ``v0`` is Γ[X_0]; the generator weight on x0 is ``a0`` (0 by default,
    i.e. a centred error on the initial value).
    """

    brownian: bool = True
    initial: bool = False
    v0: float = 0.0
    a0: float = 0.0

    def __post_init__(self):
        if not (self.brownian or self.initial):
            raise ValueError("at least one error source is required")
        if self.v0 < 0:
            raise ValueError("v0 must be >= 0")

    @classmethod
    def parse(cls, kind: str, v0: float = 0.0) -> "ErrorSource":
        if kind == "brownian":
            return cls(True, False, 0.0)
        if kind == "initial":
            return cls(False, True, v0)
        if kind == "both":
            return cls(True, True, v0)
        raise ValueError(f"unknown error source {kind!r}")


@dataclass(frozen=True)
class SdeModel:
    x0: float
    T: float
    sigma: Coef
    r: Coef
    sigma_x: Coef
    sigma_xx: Coef
    r_x: Coef
    r_xx: Coef
    error_source: ErrorSource = field(default_factory=ErrorSource)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be > 0")

    def with_source(self, source: ErrorSource) -> "SdeModel":
        return SdeModel(self.x0, self.T, self.sigma, self.r, self.sigma_x,
                        self.sigma_xx, self.r_x, self.r_xx, source)


def constant_sigma_model(sigma: float = 1.0, x0: float = 0.0, T: float = 1.0,
                         source: Optional[ErrorSource] = None) -> SdeModel:
    c = float(sigma)
    return SdeModel(
        x0, T,
        sigma=lambda x, t: np.full_like(np.asarray(x, dtype=float), c),
        r=_zero, sigma_x=_zero, sigma_xx=_zero, r_x=_zero, r_xx=_zero,
        error_source=source or ErrorSource(),
    )


def linear_model(sigma: float, r: float, x0: float = 1.0, T: float = 1.0,
                 source: Optional[ErrorSource] = None) -> SdeModel:
    """Geometric Brownian motion: sigma(x) = sigma x, r(x) = r x."""
    s, m = float(sigma), float(r)
    return SdeModel(
        x0, T,
        sigma=lambda x, t: s * np.asarray(x, dtype=float),
        r=lambda x, t: m * np.asarray(x, dtype=float),
        sigma_x=lambda x, t: np.full_like(np.asarray(x, dtype=float), s),
        sigma_xx=_zero,
        r_x=lambda x, t: np.full_like(np.asarray(x, dtype=float), m),
        r_xx=_zero,
        error_source=source or ErrorSource(),
    )


@dataclass(frozen=True)
class EulerConfig:
    n: int = 1
    record_path: bool = False
    scheme: str = "exact"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.scheme not in ("exact", "augmented"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


# ---------------------------------------------------------------------------
# Coefficients
# ---------------------------------------------------------------------------


def augmented_coefficients(model: SdeModel, y, s: float):
    """Diffusion and drift of the joint SDE for (X, Γ[X], A[X]).

    ``y = (x, γ, α)``; entries may be scalars or equally shaped arrays.
    Returns ``(diffusion, drift)`` as 3-tuples.
    """
    x, g, al = (np.asarray(v, dtype=float) for v in y)
    src = model.error_source
    sb = 1.0 if src.brownian else 0.0
    sig, sx, sxx = model.sigma(x, s), model.sigma_x(x, s), model.sigma_xx(x, s)
    r, rx, rxx = model.r(x, s), model.r_x(x, s), model.r_xx(x, s)
    diffusion = (sig, 2.0 * sx * g, -0.5 * sb * sig + 0.5 * sxx * g + sx * al)
    drift = (r, sb * sig**2 + (2.0 * rx + sx**2) * g, 0.5 * rxx * g + rx * al)
    for comp in diffusion + drift:
        if not np.all(np.isfinite(comp)):
            bad = np.flatnonzero(~np.isfinite(np.broadcast_to(comp, np.shape(x))))
            xb = np.ravel(x)[bad[0]] if np.ndim(x) else float(x)
            raise SimulationError(f"non-finite coefficient at x={xb!r}, t={s!r}")
    return diffusion, drift


# ---------------------------------------------------------------------------
# Schemes
# ---------------------------------------------------------------------------


@dataclass
class _State:
    x: np.ndarray
    g: np.ndarray        # Γ[X]
    al: np.ndarray       # A[X]
    gg: Optional[np.ndarray] = None   # Γ[X, Γ[X]]
    hh: Optional[np.ndarray] = None   # Γ[Γ[X]]


def _check(state: _State, k: int):
    for name in ("x", "g", "al", "gg", "hh"):
        v = getattr(state, name)
        if v is None:
            continue
        if not np.all(np.isfinite(v)) or np.max(np.abs(v), initial=0.0) > EXPLOSION:
            raise SimulationError(f"state component {name} exploded at step {k}")


def _step_exact(model, st: _State, b, t, dt, extended):
    src = model.error_source
    sb = 1.0 if src.brownian else 0.0
    x, g, al = st.x, st.g, st.al
    sig, sx, sxx = model.sigma(x, t), model.sigma_x(x, t), model.sigma_xx(x, t)
    r, rx, rxx = model.r(x, t), model.r_x(x, t), model.r_xx(x, t)
    # X' = phi(X, b) = X + sig(X) b + r(X) dt
    phi_x = 1.0 + sx * b + rx * dt
    phi_xx = sxx * b + rxx * dt
    gb = sb * dt  # Γ[b]
    x_new = x + sig * b + r * dt
    g_new = phi_x**2 * g + sig**2 * gb
    al_new = phi_x * al - 0.5 * sb * sig * b + 0.5 * phi_xx * g
    gg_new = hh_new = None
    if extended:
        # gamma' = psi(X, gamma, b) = phi_x^2 gamma + sig^2 Γ[b]
        psi_x = 2.0 * phi_x * phi_xx * g + 2.0 * sig * sx * gb
        psi_g = phi_x**2
        psi_b = 2.0 * phi_x * sx * g
        gg, hh = st.gg, st.hh
        gg_new = phi_x * psi_x * g + phi_x * psi_g * gg + sig * psi_b * gb
        hh_new = psi_x**2 * g + 2.0 * psi_x * psi_g * gg + psi_g**2 * hh + psi_b**2 * gb
    return _State(x_new, g_new, al_new, gg_new, hh_new)


def _step_augmented(model, st: _State, b, t, dt, extended):
    (dx, dg, dal), (mx, mg, mal) = augmented_coefficients(model, (st.x, st.g, st.al), t)
    gg_new = hh_new = None
    if extended:
        gg_new, hh_new = _second_order_increment(model, st, b, t, dt)
    return _State(st.x + dx * b + mx * dt, st.g + dg * b + mg * dt,
                  st.al + dal * b + mal * dt, gg_new, hh_new)


def _second_order_increment(model, st, b, t, dt):
    """Euler step for the Γ-matrix of Z = (X, Γ[X]).

    With dZ = S(Z) dB + R(Z) dt the matrix G = Γ[Z, Z^T] solves
    dG = (J_S G + G J_S^T) dB + (J_R G + G J_R^T + J_S G J_S^T + s S S^T) dt.
    """
    sb = 1.0 if model.error_source.brownian else 0.0
    x, g, gg, hh = st.x, st.g, st.gg, st.hh
    sig, sx, sxx = model.sigma(x, t), model.sigma_x(x, t), model.sigma_xx(x, t)
    rx, rxx = model.r_x(x, t), model.r_xx(x, t)
    S = (sig, 2.0 * sx * g)
    JS = ((sx, 0.0 * sx), (2.0 * sxx * g, 2.0 * sx))
    JR = ((rx, 0.0 * rx),
          (2.0 * sb * sig * sx + 2.0 * (rxx + sx * sxx) * g, 2.0 * rx + sx**2))
    G = ((g, gg), (gg, hh))

    def mm(P, Q):
        return tuple(tuple(sum(P[i][k] * Q[k][j] for k in range(2)) for j in range(2))
                     for i in range(2))

    def tr(P):
        return ((P[0][0], P[1][0]), (P[0][1], P[1][1]))

    JSG = mm(JS, G)
    JRG = mm(JR, G)
    JSGJS = mm(JSG, tr(JS))
    out = []
    for i, j in ((0, 1), (1, 1)):
        diff = JSG[i][j] + JSG[j][i]
        drift = JRG[i][j] + JRG[j][i] + JSGJS[i][j] + sb * S[i] * S[j]
        out.append(G[i][j] + diff * b + drift * dt)
    return out[0], out[1]


def _run(model: SdeModel, cfg: EulerConfig, rng: np.random.Generator, size: int,
         extended: bool, increments: Optional[np.ndarray] = None):
    dt = model.T / cfg.n
    src = model.error_source
    shape = (size,)
    st = _State(
        np.full(shape, float(model.x0)),
        np.full(shape, src.v0 if src.initial else 0.0),
        np.full(shape, src.a0 if src.initial else 0.0),
        np.zeros(shape) if extended else None,
        np.zeros(shape) if extended else None,
    )
    step = _step_exact if cfg.scheme == "exact" else _step_augmented
    if increments is None:
        increments = rng.standard_normal((cfg.n, size)) * math.sqrt(dt)
    path = [st] if cfg.record_path else None
    for k in range(cfg.n):
        st = step(model, st, increments[k], k * dt, dt, extended)
        _check(st, k)
        if path is not None:
            path.append(st)
    return st, path


def euler_triplet(model: SdeModel, cfg: EulerConfig, rng, size: int = 1,
                  increments: Optional[np.ndarray] = None) -> TripletBatch:
    """Simulate ``size`` draws of (X^n_T, Γ[X^n_T], A[X^n_T]).

    ``rng`` is an :class:`RngStream` or a numpy Generator. ``increments``
    (shape ``(n, size)``) overrides the Brownian increments, which lets
    callers drive several models with the same noise.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    st, _ = _run(model, cfg, gen, size, extended=False, increments=increments)
    return TripletBatch(st.x[:, None], st.g[:, None, None], st.al[:, None])


def euler_path(model: SdeModel, cfg: EulerConfig, rng, size: int = 1,
               increments: Optional[np.ndarray] = None):
    """Like :func:`euler_triplet` but returns arrays of shape (n+1, size)."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    cfg = EulerConfig(cfg.n, True, cfg.scheme)
    _, path = _run(model, cfg, gen, size, extended=False, increments=increments)
    return (np.stack([p.x for p in path]), np.stack([p.g for p in path]),
            np.stack([p.al for p in path]))


def euler_extended(model: SdeModel, cfg: EulerConfig, rng, size: int = 1,
                   increments: Optional[np.ndarray] = None,
                   payload: Optional[tuple] = None,
                   allow_degenerate: bool = False) -> ExtendedBatch:
    """Simulate draws carrying Γ[X^n, Γ[X^n]] as well.

    ``payload=(g, g_prime)`` attaches G = g(X^n) with Γ[X, G] = g'(X) Γ[X].
    A draw with Γ[X^n] = 0 raises unless ``allow_degenerate``.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    st, _ = _run(model, cfg, gen, size, extended=True, increments=increments)
    if not allow_degenerate and np.any(st.g <= 0.0):
        raise SimulationError("Γ[X] = 0 at final time; direct formulas undefined")
    out = ExtendedBatch(st.x, st.g, st.al, st.gg)
    if payload is not None:
        out = out.with_payload(*payload)
    return out


# ---------------------------------------------------------------------------
# Derivative self-test
# ---------------------------------------------------------------------------


@dataclass
class DerivativeReport:
    passed: bool
    max_rel_error: dict

    def __bool__(self):
        return self.passed


def fd_check(pairs, xs, ts, tol=_FD_TOL, floor=_FD_FLOOR):
    """Compare supplied derivatives with central differences.

    ``pairs`` maps a label to ``(f, df)`` with ``f(x, t)``. The relative
    error is measured only where ``|df| > floor``; elsewhere the absolute
    error must be below ``tol``.
    """
    worst = {}
    ok = True
    for label, (f, df) in pairs.items():
        h = 1e-5 * np.maximum(1.0, np.abs(xs))
        # Richardson-extrapolated central difference keeps truncation error
        # well below tol for smooth coefficients.
        d1 = (f(xs + h, ts) - f(xs - h, ts)) / (2 * h)
        d2 = (f(xs + 2 * h, ts) - f(xs - 2 * h, ts)) / (4 * h)
        num = (4 * d1 - d2) / 3
        sup = np.asarray(df(xs, ts), dtype=float) * np.ones_like(xs)
        big = np.abs(sup) > floor
        rel = np.where(big, np.abs(num - sup) / np.where(big, np.abs(sup), 1.0),
                       np.abs(num - sup))
        worst[label] = float(rel.max())
        ok &= worst[label] <= tol
    return DerivativeReport(bool(ok), worst)


def derivative_selftest(model: SdeModel, probes: int, rng, scale: float = 2.0):
    if probes < 1:
        raise ValueError("probes must be >= 1")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    xs = model.x0 + scale * gen.uniform(-1.0, 1.0, probes)
    ts = gen.uniform(0.0, model.T, probes)
    pairs = {
        "sigma_x": (model.sigma, model.sigma_x),
        "sigma_xx": (model.sigma_x, model.sigma_xx),
        "r_x": (model.r, model.r_x),
        "r_xx": (model.r_x, model.r_xx),
    }
    return fd_check(pairs, xs, ts)


# ---------------------------------------------------------------------------
# Provider
# ---------------------------------------------------------------------------


class WienerProvider(StructureProvider):
    def __init__(self, model: SdeModel, cfg: EulerConfig,
                 density: Optional[Callable] = None):
        self.model = model
        self.cfg = cfg
        self._density = density
        self.dim = 1
        caps = {"triplet", "extended"}
        if density is not None:
            caps.add("known_density")
        self.capabilities = frozenset(caps)

    def density(self, x):
        if self._density is None:
            return super().density(x)
        return self._density(np.asarray(x, dtype=float))

    def _triplet_chunk(self, n, rng):
        return euler_triplet(self.model, self.cfg, rng, size=n)

    def _extended_chunk(self, n, rng):
        return euler_extended(self.model, self.cfg, rng, size=n, allow_degenerate=True)
