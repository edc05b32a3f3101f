"""Monte Carlo space: X = F(U; V) with the product structure on the U's.

Each smooth coordinate U_i carries γ[u](x) = x²(1-x)² u'(x)²; the
irregular coordinates V_j carry no error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ExtendedBatch, StructureProvider, TripletBatch


def coordinate_weights(u):
    """Return ``(w, w')`` with w(u) = u²(1-u)²."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("coordinate outside [0, 1]")
    v = u * (1.0 - u)
    return v * v, 2.0 * v * (1.0 - 2.0 * u)


@dataclass(frozen=True)
class McFunctional:
    """F and its partials in the smooth coordinates.

    All callables take ``(U, V)`` with shapes ``(N, m)`` and ``(N, k)``.
    ``dF`` returns ``(N, m)``. ``d2F`` returns either the diagonal ``(N, m)``
    or the full Hessian ``(N, m, m)``; the full matrix is needed for
    extended sampling.
    """

    m: int
    k: int
    F: Callable
    dF: Callable
    d2F: Callable
    full_hessian: bool = False

    def __post_init__(self):
        if self.m < 1 or self.k < 0:
            raise ValueError("need m >= 1 and k >= 0")


def _evaluate(model: McFunctional, U, V, extended: bool):
    x = np.asarray(model.F(U, V), dtype=float)
    d1 = np.asarray(model.dF(U, V), dtype=float).reshape(len(x), model.m)
    d2 = np.asarray(model.d2F(U, V), dtype=float)
    w, wp = coordinate_weights(U)
    if d2.ndim == 3:
        diag = np.einsum("nii->ni", d2)
    else:
        diag = d2.reshape(len(x), model.m)
    gamma = np.sum(d1**2 * w, axis=1)
    a = np.sum(0.5 * diag * w + 0.5 * d1 * wp, axis=1)
    gg = None
    if extended:
        if d2.ndim != 3:
            raise ValueError("extended sampling needs the full Hessian of F")
        # ∂_i Γ = Σ_j 2 F'_j F''_ji w(U_j) + F'_i² w'(U_i)
        d_gamma = 2.0 * np.einsum("nj,nji,nj->ni", d1, d2, w) + d1**2 * wp
        gg = np.sum(d1 * d_gamma * w, axis=1)
    return x, gamma, a, gg


def sample_mc_functional(model: McFunctional, rng, size: int = 1,
                         extended: bool = False):
    gen = rng.generator() if hasattr(rng, "generator") else rng
    U = gen.random((size, model.m))
    V = gen.random((size, model.k))
    return evaluate_at(model, U, V, extended)


def evaluate_at(model: McFunctional, U, V, extended: bool = False):
    """Deterministic evaluation at given coordinates (used by tests and oracles)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    V = np.asarray(V, dtype=float).reshape(U.shape[0], model.k)
    x, gamma, a, gg = _evaluate(model, U, V, extended)
    if extended:
        return ExtendedBatch(x, gamma, a, gg)
    return TripletBatch(x[:, None], gamma[:, None, None], a[:, None])


def identity_functional() -> McFunctional:
    """F(U; V) = U_0."""
    return McFunctional(
        1, 0,
        F=lambda U, V: U[:, 0],
        dF=lambda U, V: np.ones_like(U),
        d2F=lambda U, V: np.zeros((U.shape[0], 1, 1)),
        full_hessian=True,
    )


def fd_selftest(model: McFunctional, probes: int, rng, tol: float = 1e-5) -> bool:
    """Check dF and the Hessian diagonal against central differences."""
    gen = rng.generator() if hasattr(rng, "generator") else rng
    U = gen.uniform(0.05, 0.95, (probes, model.m))
    V = gen.random((probes, model.k))
    h = 1e-5
    d1 = np.asarray(model.dF(U, V)).reshape(probes, model.m)
    d2 = np.asarray(model.d2F(U, V))
    diag = np.einsum("nii->ni", d2) if d2.ndim == 3 else d2.reshape(probes, model.m)
    for i in range(model.m):
        e = np.zeros(model.m)
        e[i] = h
        num1 = (model.F(U + e, V) - model.F(U - e, V)) / (2 * h)
        num2 = (np.asarray(model.dF(U + e, V))[:, i] - np.asarray(model.dF(U - e, V))[:, i]) / (2 * h)
        for num, sup in ((num1, d1[:, i]), (num2, diag[:, i])):
            scale = np.maximum(np.abs(sup), 1e-8)
            if np.any(np.abs(num - sup) > tol * np.maximum(scale, 1.0)):
                return False
    return True


class McSpaceProvider(StructureProvider):
    def __init__(self, model: McFunctional, density: Optional[Callable] = None):
        self.model = model
        self._density = density
        self.dim = 1
        caps = {"triplet"}
        if model.full_hessian:
            caps.add("extended")
        if density is not None:
            caps.add("known_density")
        self.capabilities = frozenset(caps)

    def density(self, x):
        if self._density is None:
            return super().density(x)
        return self._density(np.asarray(x, dtype=float))

    def _triplet_chunk(self, n, rng):
        return sample_mc_functional(self.model, rng, n)

    def _extended_chunk(self, n, rng):
        return sample_mc_functional(self.model, rng, n, extended=True)
