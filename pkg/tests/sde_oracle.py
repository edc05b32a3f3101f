"""Symbolic chain-rule oracle for the Euler map under the OU structure.

X^n is written as an explicit function of (x0, dB_0, ..., dB_{n-1}); Γ and A
follow from Γ[u, v] = Σ ∂_i u ∂_i v Γ[y_i] and
A[u] = Σ ∂_i u A[y_i] + ½ Σ ∂_ii u Γ[y_i], with independent inputs.
"""

import numpy as np
import sympy as sp

X0, T, V0 = sp.symbols("x0 T v0")
P = sp.symbols("p0:4")
Q = sp.symbols("q0:3")


def sigma_expr(x, t):
    return P[0] + P[1] * sp.sin(P[2] * x) + P[3] * x * (1 + t)


def r_expr(x, t):
    return Q[0] + Q[1] * x + Q[2] * sp.cos(x) * t


def numeric_model(p, q, x0, T_, source):
    from dirichlet_mc.wiener import SdeModel

    p0, p1, p2, p3 = p
    q0, q1, q2 = q
    return SdeModel(
        x0, T_,
        sigma=lambda x, t: p0 + p1 * np.sin(p2 * x) + p3 * x * (1 + t),
        r=lambda x, t: q0 + q1 * x + q2 * np.cos(x) * t,
        sigma_x=lambda x, t: p1 * p2 * np.cos(p2 * x) + p3 * (1 + t),
        sigma_xx=lambda x, t: -p1 * p2**2 * np.sin(p2 * x) + 0 * x,
        r_x=lambda x, t: q1 - q2 * np.sin(x) * t + 0 * x,
        r_xx=lambda x, t: -q2 * np.cos(x) * t + 0 * x,
        error_source=source,
    )


def build(n, brownian=True, initial=False):
    """Lambdified (X, Γ[X], A[X], Γ[X, Γ[X]]) of (params, x0, T, v0, dB...)."""
    bs = sp.symbols(f"b0:{n}")
    dt = T / n
    x = X0
    for k in range(n):
        x = x + sigma_expr(x, k * dt) * bs[k] + r_expr(x, k * dt) * dt
    ys = [X0, *bs]
    sb = 1 if brownian else 0
    gam = [V0 if initial else 0] + [sb * dt] * n
    gen = [0] + [-sb * b / 2 for b in bs]

    def G(u, v):
        return sum(sp.diff(u, y) * sp.diff(v, y) * g for y, g in zip(ys, gam))

    def A(u):
        return sum(sp.diff(u, y) * a + sp.Rational(1, 2) * sp.diff(u, y, 2) * g
                   for y, a, g in zip(ys, gen, gam))

    gx = G(x, x)
    exprs = [x, gx, A(x), G(x, gx)]
    args = [*P, *Q, X0, T, V0, *bs]
    return sp.lambdify(args, exprs, "numpy")
