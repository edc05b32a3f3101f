import numpy as np
import pytest

from dirichlet_mc.core import SimulationError, derive_substream
from dirichlet_mc.wiener import (
    EulerConfig,
    ErrorSource,
    SdeModel,
    augmented_coefficients,
    constant_sigma_model,
    derivative_selftest,
    euler_extended,
    euler_path,
    euler_triplet,
    linear_model,
)

from .sde_oracle import build, numeric_model

BROWNIAN = ErrorSource()
INITIAL = ErrorSource(brownian=False, initial=True, v0=0.0)


def identity_sigma(source=BROWNIAN):
    return SdeModel(
        2.0, 1.0,
        sigma=lambda x, t: np.asarray(x, dtype=float),
        r=lambda x, t: 0 * x,
        sigma_x=lambda x, t: 1 + 0 * x,
        sigma_xx=lambda x, t: 0 * x,
        r_x=lambda x, t: 0 * x,
        r_xx=lambda x, t: 0 * x,
        error_source=source,
    )


class TestAugmentedCoefficients:
    def test_linear_sigma(self):
        diff, drift = augmented_coefficients(identity_sigma(), (2.0, 1.0, 0.5), 0.3)
        np.testing.assert_allclose(diff, (2.0, 2.0, -0.5))
        np.testing.assert_allclose(drift, (0.0, 5.0, 0.0))

    def test_constant_sigma(self):
        diff, drift = augmented_coefficients(constant_sigma_model(1.7), (0.4, 2.0, -1.0), 0.0)
        np.testing.assert_allclose(diff, (1.7, 0.0, -0.85))
        np.testing.assert_allclose(drift, (0.0, 1.7**2, 0.0))

    def test_initial_error_drops_source(self):
        _, drift = augmented_coefficients(identity_sigma(INITIAL), (2.0, 1.0, 0.5), 0.0)
        assert drift[1] == pytest.approx(1.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_aborts(self):
        m = SdeModel(0.0, 1.0, lambda x, t: np.log(x), lambda x, t: 0 * x,
                     lambda x, t: 1 / x, lambda x, t: -1 / x**2,
                     lambda x, t: 0 * x, lambda x, t: 0 * x)
        with pytest.raises(SimulationError, match="x=0.0"):
            augmented_coefficients(m, (0.0, 1.0, 0.0), 0.0)


class TestEulerTriplet:
    @pytest.mark.parametrize("n", [1, 7, 64])
    @pytest.mark.parametrize("scheme", ["exact", "augmented"])
    def test_constant_sigma_closed_form(self, n, scheme):
        b = euler_triplet(constant_sigma_model(1.0), EulerConfig(n, scheme=scheme),
                          derive_substream(1, 0, n), size=1000)
        x, g, a = b.scalar()
        np.testing.assert_allclose(g, 1.0, rtol=1e-12)
        np.testing.assert_allclose(a, -0.5 * x, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 5, 50])
    def test_cancellation_nonzero_x0(self, n):
        x0 = 0.7
        b = euler_triplet(constant_sigma_model(1.0, x0=x0), EulerConfig(n),
                          derive_substream(2, 0, n), size=2000)
        x, _, a = b.scalar()
        assert np.max(np.abs(x + 2 * a - x0)) <= 1e-12

    @pytest.mark.parametrize("scheme", ["exact", "augmented"])
    def test_one_step(self, scheme, rng):
        m = numeric_model((0.3, 0.5, 1.3, 0.2), (0.1, -0.4, 0.2), 0.8, 1.5, BROWNIAN)
        db = rng.standard_normal((1, 50)) * np.sqrt(1.5)
        b = euler_triplet(m, EulerConfig(1, scheme=scheme), rng, size=50, increments=db)
        x, g, a = b.scalar()
        s0 = m.sigma(np.array(0.8), 0.0)
        r0 = m.r(np.array(0.8), 0.0)
        np.testing.assert_allclose(x, 0.8 + s0 * db[0] + r0 * 1.5, rtol=1e-14)
        np.testing.assert_allclose(g, s0**2 * 1.5, rtol=1e-14)
        np.testing.assert_allclose(a, -0.5 * s0 * db[0], rtol=1e-14)

    def test_zero_initial_error(self, rng):
        src = ErrorSource(brownian=False, initial=True, v0=0.0)
        m = numeric_model((0.3, 0.5, 1.3, 0.2), (0.1, -0.4, 0.2), 0.8, 1.0, src)
        b = euler_triplet(m, EulerConfig(20), rng, size=100)
        _, g, a = b.scalar()
        assert np.all(g == 0) and np.all(a == 0)

    def test_initial_error_constant_sigma_has_no_bias(self, rng):
        src = ErrorSource(brownian=False, initial=True, v0=0.25)
        m = constant_sigma_model(2.0, source=src)
        b = euler_triplet(m, EulerConfig(10), rng, size=100)
        _, g, a = b.scalar()
        np.testing.assert_allclose(g, 0.25)
        np.testing.assert_array_equal(a, 0.0)

    @pytest.mark.parametrize("scheme", ["exact", "augmented"])
    def test_both_sources_add(self, scheme, rng):
        p, q = (0.3, 0.5, 1.3, 0.2), (0.1, -0.4, 0.2)
        n = 12
        db = rng.standard_normal((n, 200)) * np.sqrt(1.0 / n)
        out = {}
        for name, src in {"b": ErrorSource(), "i": ErrorSource(False, True, 0.4),
                          "both": ErrorSource(True, True, 0.4)}.items():
            m = numeric_model(p, q, 0.5, 1.0, src)
            out[name] = euler_triplet(m, EulerConfig(n, scheme=scheme), rng, 200, increments=db)
        np.testing.assert_allclose(out["both"].gamma, out["b"].gamma + out["i"].gamma,
                                   rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(out["both"].a, out["b"].a + out["i"].a, atol=1e-12)

    def test_explosion(self):
        m = linear_model(0.1, 1e7, x0=1.0, T=1.0)
        with pytest.raises(SimulationError, match="step"):
            euler_triplet(m, EulerConfig(2), np.random.default_rng(0), size=3)

    def test_path_records_every_step(self):
        xs, gs, al = euler_path(constant_sigma_model(1.0), EulerConfig(8), np.random.default_rng(1), 5)
        assert xs.shape == (9, 5)
        np.testing.assert_allclose(gs[:, 0], np.linspace(0, 1, 9))

    def test_bad_config(self):
        with pytest.raises(ValueError):
            EulerConfig(0)
        with pytest.raises(ValueError):
            EulerConfig(3, scheme="milstein")


class TestChainRuleOracle:
    """The exact scheme reproduces Γ and A of the discrete variable."""

    @pytest.mark.parametrize("n", [1, 2, 3])
    @pytest.mark.parametrize("source", ["brownian", "both"])
    def test_against_symbolic(self, n, source, rng):
        brownian, initial = True, source == "both"
        f = build(n, brownian, initial)
        for _ in range(5):
            p = rng.uniform(-0.6, 0.6, 4)
            q = rng.uniform(-0.5, 0.5, 3)
            x0, T_, v0 = rng.uniform(-1, 1), rng.uniform(0.3, 2.0), rng.uniform(0, 0.5)
            db = rng.standard_normal((n, 4)) * np.sqrt(T_ / n)
            src = ErrorSource(brownian, initial, v0 if initial else 0.0)
            m = numeric_model(p, q, x0, T_, src)
            e = euler_extended(m, EulerConfig(n), rng, 4, increments=db, allow_degenerate=True)
            ref = [np.broadcast_to(v, (4,)) for v in f(*p, *q, x0, T_, v0, *db)]
            np.testing.assert_allclose(e.x, ref[0], rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(e.gamma, ref[1], rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(e.a, ref[2], rtol=1e-10, atol=1e-12)
            np.testing.assert_allclose(e.gamma_gamma, ref[3], rtol=1e-10, atol=1e-12)

    def test_augmented_scheme_gamma_gap_at_two_steps(self, rng):
        """The joint-SDE Euler step misses γ (σ'² (dB² - dt) + ...) per step."""
        p, q, x0, T_ = (0.3, 0.5, 1.3, 0.2), (0.1, -0.4, 0.2), 0.4, 1.0
        m = numeric_model(p, q, x0, T_, BROWNIAN)
        db = rng.standard_normal((2, 100)) * np.sqrt(0.5)
        ex = euler_triplet(m, EulerConfig(2), rng, 100, increments=db)
        au = euler_triplet(m, EulerConfig(2, scheme="augmented"), rng, 100, increments=db)
        np.testing.assert_allclose(ex.a, au.a, atol=1e-14)
        x1 = x0 + m.sigma(np.array(x0), 0.0) * db[0] + m.r(np.array(x0), 0.0) * 0.5
        g1 = m.sigma(np.array(x0), 0.0) ** 2 * 0.5
        sx, rx = m.sigma_x(x1, 0.5), m.r_x(x1, 0.5)
        gap = g1 * (sx**2 * (db[1] ** 2 - 0.5) + 2 * sx * rx * db[1] * 0.5 + rx**2 * 0.25)
        np.testing.assert_allclose(ex.gamma[:, 0, 0] - au.gamma[:, 0, 0], gap, atol=1e-12)


class TestEulerExtended:
    @pytest.mark.parametrize("scheme", ["exact", "augmented"])
    def test_constant_sigma_no_gamma_gamma(self, scheme, rng):
        e = euler_extended(constant_sigma_model(0.7), EulerConfig(30, scheme=scheme), rng, 500)
        np.testing.assert_array_equal(e.gamma_gamma, 0.0)

    @pytest.mark.parametrize("scheme", ["exact", "augmented"])
    def test_linear_sigma_one_step(self, scheme, rng):
        # X1 = x0 + x0 dB with error on both dB (Γ = T) and x0 (Γ = v0):
        # Γ[X1] = (1 + dB)² v0 + x0² T, so with ∂_{x0}X1 = 1 + dB, ∂_{dB}X1 = x0,
        # ∂_{x0}Γ = 2 x0 T and ∂_{dB}Γ = 2 (1 + dB) v0 the chain rule gives
        # Γ[X1, Γ[X1]] = 4 x0 v0 T (1 + dB).
        x0, v0, T_ = 1.5, 0.2, 0.8
        src = ErrorSource(True, True, v0)
        m = linear_model(1.0, 0.0, x0, T_, source=src)
        db = rng.standard_normal((1, 20)) * np.sqrt(T_)
        e = euler_extended(m, EulerConfig(1, scheme=scheme), rng, 20, increments=db)
        expected = (1 + db[0]) * 2 * x0 * T_ * v0 + x0 * 2 * (1 + db[0]) * v0 * T_
        if scheme == "exact":
            np.testing.assert_allclose(e.gamma_gamma, expected, rtol=1e-12)
        else:
            # coefficients frozen at time 0: only the 4 σ σ' γ dt source survives
            np.testing.assert_allclose(e.gamma_gamma, 4 * x0 * v0 * T_, rtol=1e-12)

    def test_payload_chain_rule(self, rng):
        m = numeric_model((0.3, 0.5, 1.3, 0.2), (0.1, -0.4, 0.2), 0.8, 1.0, BROWNIAN)
        e = euler_extended(m, EulerConfig(10), rng, 100, payload=(np.cos, lambda x: -np.sin(x)))
        np.testing.assert_allclose(e.payload_g, np.cos(e.x))
        np.testing.assert_allclose(e.gamma_xg, -np.sin(e.x) * e.gamma)

    def test_degenerate_flagged(self, rng):
        m = constant_sigma_model(1.0, source=ErrorSource(False, True, 0.0))
        with pytest.raises(SimulationError, match="Γ"):
            euler_extended(m, EulerConfig(3), rng, 10)
        e = euler_extended(m, EulerConfig(3), rng, 10, allow_degenerate=True)
        assert e.degenerate.all()


class TestDerivativeSelftest:
    def test_identity_sigma(self):
        assert derivative_selftest(identity_sigma(), 50, derive_substream(1, 0, 0))

    def test_wrong_derivative(self):
        bad = SdeModel(1.0, 1.0, lambda x, t: x, lambda x, t: 0 * x,
                       lambda x, t: 0 * x, lambda x, t: 0 * x,
                       lambda x, t: 0 * x, lambda x, t: 0 * x)
        rep = derivative_selftest(bad, 20, derive_substream(1, 0, 0))
        assert not rep.passed
        assert rep.max_rel_error["sigma_x"] > 0.5

    def test_sine_drift(self):
        m = SdeModel(0.0, 1.0, lambda x, t: 1 + 0 * x, lambda x, t: np.sin(x),
                     lambda x, t: 0 * x, lambda x, t: 0 * x,
                     lambda x, t: np.cos(x), lambda x, t: -np.sin(x))
        assert derivative_selftest(m, 100, derive_substream(2, 0, 0))

    def test_oracle_models_pass(self, rng):
        for _ in range(20):
            m = numeric_model(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 3), 0.0, 1.0, BROWNIAN)
            assert derivative_selftest(m, 30, rng)

    def test_probes_positive(self):
        with pytest.raises(ValueError):
            derivative_selftest(identity_sigma(), 0, derive_substream(1, 0, 0))
