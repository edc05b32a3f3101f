import math

import numpy as np
import pytest
from scipy import stats

from dirichlet_mc.analysis import (
    NoiseFloorError,
    QuadratureError,
    bias_curve,
    fit_loglog,
    ibp_residual,
    monotone_feps_check,
    normal_expectation,
    quadrature_oracle,
    rate_experiment,
    variance_scaling,
)
from dirichlet_mc.core import derive_substream
from dirichlet_mc.presets import gauss_product, make_preset


class TestQuadrature:
    def test_polynomial(self):
        assert quadrature_oracle(lambda u: u * u, (0, 1)) == pytest.approx(1 / 3, abs=1e-12)

    def test_normal_moments(self):
        assert normal_expectation(lambda z: z * z) == pytest.approx(1.0, abs=1e-10)
        assert normal_expectation(lambda z: math.cos(z)) == pytest.approx(math.exp(-0.5), abs=1e-10)

    def test_kink_breakpoint(self):
        v = quadrature_oracle(lambda u: abs(u - 0.3), (0, 1), points=[0.3])
        assert v == pytest.approx(0.5 * (0.09 + 0.49), abs=1e-12)

    @pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
    def test_unreachable_tolerance(self):
        with pytest.raises(QuadratureError):
            quadrature_oracle(lambda u: math.sin(1 / u) / u, (1e-9, 1), tol=1e-14, limit=20)


class TestSlopeFit:
    def test_exact_power(self):
        xs = np.array([1, 2, 4, 8, 16.0])
        fit = fit_loglog(xs, 3 * xs ** -0.5)
        assert fit.slope == pytest.approx(-0.5, abs=1e-12)
        assert fit.within(-0.5, 1e-9)
        assert fit.lo <= fit.slope <= fit.hi

    @pytest.mark.parametrize("xs, ys", [([1.0], [1.0]), ([1, 2], [1, 0]), ([2, 2, 2], [1, 2, 3])])
    def test_degenerate(self, xs, ys):
        with pytest.raises(ValueError):
            fit_loglog(xs, ys)


class TestIdentityChecks:
    def test_ibp_gauss(self, gauss):
        for chk in ibp_residual(gauss, ["x^2", "x", "cos", "tanh"], 200_000,
                                derive_substream(31, 0, 0)):
            assert chk.straddles_zero(), chk

    def test_ibp_quadratic_is_one_minus_one(self, gauss):
        # φ = x²: E[2XA] = -E[(X - x0)X] = -1 and ½E[2Γ] = 1 exactly
        chk = ibp_residual(gauss, ["x^2"], 10_000, derive_substream(32, 0, 0))[0]
        assert abs(chk.mean) < 5 * chk.stderr

    def test_ibp_rejects_vector(self):
        with pytest.raises(ValueError):
            ibp_residual(gauss_product(2), ["x"], 10, derive_substream(1, 0, 0))


class TestOrders:
    def test_noise_floor(self, gauss):
        with pytest.raises(NoiseFloorError):
            bias_curve(gauss, "random_kernel", 0.0, [1e-3, 2e-3], 500, derive_substream(1, 0, 0))

    def test_bias_classical(self, gauss):
        # exact bias is f(0)(1 - (1 + h²)^(-1/2)); h² order only shows for h <~ 0.5
        one_step = make_preset("gauss_const_sigma", n=1)
        rep = bias_curve(one_step, "classical", 0.0, [0.5, 0.35, 0.25, 0.18], 1 << 22,
                         derive_substream(33, 0, 0))
        assert rep.fit.within(2.0, 0.3)

    def test_variance_two_dimensions(self):
        rep = variance_scaling(gauss_product(2), [0.0, 0.0], [1e-2, 1e-3, 1e-4], 1 << 18,
                               derive_substream(34, 0, 0))
        assert rep.fit.within(-1.0, 0.15)

    def test_variance_limit_one_dimension(self, gauss):
        rep = variance_scaling(gauss, 0.0, [1e-2, 1e-3, 1e-4], 1 << 18, derive_substream(35, 0, 0))
        limit = stats.norm.pdf(0.0) / math.sqrt(4 * math.pi)
        assert rep.extra["scaled"][-1] == pytest.approx(limit, rel=0.1)
        assert rep.fit.within(-0.5, 0.1)

    def test_rates_need_four_sizes(self, gauss):
        with pytest.raises(ValueError):
            rate_experiment(gauss, ["classical"], [100, 200, 400], "L2", 1)

    def test_small_rate_run(self, gauss):
        rep = rate_experiment(gauss, ["random_kernel", "classical"], [256, 1024, 4096, 16384],
                              "L2", 36, replicates=2)
        for r in rep.values():
            assert r.fit.slope < 0
            assert len(list(r.rows())) == 4


class TestMonotone:
    def test_gauss_closed_form(self, gauss_ext):
        eps = [1.0, 0.5, 0.1, 0.01]
        rep = monotone_feps_check(gauss_ext, [0.0, 1.0], eps, k=2)
        assert rep
        for i, x in enumerate([0.0, 1.0]):
            for j, e in enumerate(rep.eps):
                expect = stats.norm.pdf(x) / (1 + e)
                assert abs(rep.values[i, j] - expect) < 4 * rep.stderr[i, j]

    def test_single_rung(self, gauss_ext):
        rep = monotone_feps_check(gauss_ext, [0.0], [0.5])
        assert rep and rep.violations == []

    def test_mcspace(self, mc_identity):
        b = mc_identity.sample_extended(100_000, derive_substream(37, 0, 0))
        assert monotone_feps_check(b, [0.25, 0.5, 0.75], [0.3, 0.1, 0.03, 0.01])
