import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import rtp_fluct as rf
from rtp_fluct import spectral as sp


def rtp_params(kappa=1.0, lam=1.0, gamma=1.0, convention="microscopic"):
    return rf.ModelParams(
        family=rf.FAMILY_RTP,
        kappa=kappa,
        lam=lam,
        layers=rf.LayerSet.two_state(gamma),
        scaling_n=8,
        rho=1.0,
        convention=convention,
    )


def sep_params(kappa=(1.0, 0.5), gamma=1.0, alpha=2):
    return rf.ModelParams(
        family=rf.FAMILY_SEP,
        kappa=list(kappa),
        layers=rf.LayerSet.two_state(gamma),
        scaling_n=8,
        rho=0.4,
        alpha=alpha,
    )


def bump(length, n_points, n_layers=2, center=None, width=None, tilt=0.4):
    center = 0.5 * length if center is None else center
    width = length / 8 if width is None else width
    return sp.GridFunction.from_callable(
        lambda x, i: np.exp(-((x - center) ** 2) / (2 * width**2)) * (1 + tilt * (2 * i - 1)),
        length,
        n_points,
        n_layers,
    )


class TestSymbols:
    def test_generator_at_zero_wavenumber_is_switching(self):
        gamma = 0.7
        a = sp.build_symbol(sp.GENERATOR, rtp_params(gamma=gamma), 0.0)
        assert np.allclose(a, [[-gamma, gamma], [gamma, -gamma]])

    def test_flip_form_two_state(self):
        gamma = 0.9
        sig = sp.build_symbol(sp.FLIP_FORM, rtp_params(gamma=gamma), 0.42).real
        assert np.allclose(sig, [[gamma, -gamma], [-gamma, gamma]])
        eigs = np.sort(np.linalg.eigvalsh(sig))
        assert np.allclose(eigs, [0.0, 2 * gamma])

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-40.0, 40.0))
    def test_adjoint_is_conjugate_transpose(self, k):
        p = rtp_params(kappa=0.8, lam=1.3, gamma=0.6)
        a = sp.build_symbol(sp.GENERATOR, p, k)
        astar = sp.build_symbol(sp.GENERATOR_ADJOINT, p, k)
        assert np.max(np.abs(astar - a.conj().T)) < 1e-14

    def test_sep_symbol_self_adjoint(self):
        p = sep_params()
        b = sp.build_symbol(sp.SEP_GENERATOR, p, 2.2)
        assert np.max(np.abs(b - b.conj().T)) < 1e-14
        # diffusivity alpha*kappa_sigma on the diagonal, switching alpha*c
        assert b[0, 0].real == pytest.approx(-2 * 1.0 * 2.2**2 - 2 * 1.0)
        assert b[0, 1].real == pytest.approx(2 * 1.0)

    def test_mobility_diagonal(self):
        k = sp.build_symbol(sp.MOBILITY, sep_params(), 1.0)
        assert np.allclose(k, np.diag([1.0, 0.5]))

    def test_kind_family_mismatch(self):
        with pytest.raises(rf.DomainError):
            sp.build_symbol(sp.GENERATOR, sep_params(), 1.0)
        with pytest.raises(rf.DomainError):
            sp.build_symbol(sp.SEP_GENERATOR, rtp_params(), 1.0)


class TestSemigroup:
    def test_identity_at_zero_time(self):
        p = rtp_params()
        phi = bump(8.0, 128)
        out = sp.semigroup_apply(sp.GENERATOR, 0.0, phi, p)
        assert np.max(np.abs(out.values - phi.values)) < 1e-13

    def test_negative_time_rejected(self):
        with pytest.raises(rf.DomainError):
            sp.semigroup_apply(sp.GENERATOR, -0.1, bump(8.0, 64), rtp_params())

    def test_single_mode_decay_rate(self):
        # layer-symmetric sine mode with lam = 0 decays at exp(-D k^2 t),
        # D = kappa under the microscopic convention
        kappa, t = 0.7, 0.3
        p = rtp_params(kappa=kappa, lam=0.0)
        length, m = 8.0, 128
        k = 2 * np.pi * 3 / length
        phi = sp.GridFunction.from_callable(
            lambda x, i: np.sin(k * x), length, m, 2
        )
        out = sp.semigroup_apply(sp.GENERATOR, t, phi, p)
        expected = np.exp(-kappa * k**2 * t)
        assert np.max(np.abs(out.values - expected * phi.values)) < 1e-10

    def test_paper_convention_halves_diffusivity(self):
        kappa, t = 1.0, 0.25
        length, m = 8.0, 128
        k = 2 * np.pi / length
        phi = sp.GridFunction.from_callable(lambda x, i: np.cos(k * x), length, m, 2)
        p = rtp_params(kappa=kappa, lam=0.0, convention="paper")
        out = sp.semigroup_apply(sp.GENERATOR, t, phi, p)
        expected = np.exp(-0.5 * kappa * k**2 * t)
        assert np.max(np.abs(out.values - expected * phi.values)) < 1e-10

    def test_mass_conservation(self):
        p = rtp_params(lam=1.7)
        phi = bump(8.0, 256)
        out = sp.semigroup_apply(sp.GENERATOR, 0.9, phi, p)
        assert abs(out.values.mean() - phi.values.mean()) < 1e-12

    def test_semigroup_composition(self):
        p = rtp_params(lam=1.2, gamma=0.8)
        phi = bump(8.0, 128)
        one = sp.semigroup_apply(sp.GENERATOR, 0.7, phi, p)
        two = sp.semigroup_apply(
            sp.GENERATOR, 0.3, sp.semigroup_apply(sp.GENERATOR, 0.4, phi, p), p
        )
        assert np.max(np.abs(one.values - two.values)) < 1e-10

    def test_pairing_duality(self):
        p = rtp_params(lam=1.5, gamma=0.9)
        phi = bump(8.0, 128, center=3.0)
        psi = bump(8.0, 128, center=5.0, tilt=-0.2)
        t = 0.4
        lhs = sp.inner_product(sp.semigroup_apply(sp.GENERATOR, t, phi, p), psi)
        rhs = sp.inner_product(phi, sp.semigroup_apply(sp.GENERATOR_ADJOINT, t, psi, p))
        assert abs(lhs - rhs) < 1e-10

    def test_positivity(self):
        p = rtp_params(lam=1.0)
        phi = bump(8.0, 256, tilt=0.9)
        out = sp.semigroup_apply(sp.GENERATOR, 0.5, phi, p)
        assert out.values.min() > -1e-12

    def test_finite_difference_cross_check(self):
        # symbol application matches a 4th-order finite-difference stencil of
        # the drift-diffusion-switching operator at O(h^4); trig polynomial so
        # the spectral side is exact and only the stencil error remains
        p = rtp_params(kappa=0.9, lam=1.1, gamma=0.7)
        length = 8.0
        errs = []
        for m in (128, 256):
            phi = sp.GridFunction.from_callable(
                lambda x, i: np.sin(2 * np.pi * x / length)
                + (0.5 + 0.2 * i) * np.cos(6 * np.pi * x / length),
                length,
                m,
                2,
            )
            exact = sp.apply_operator(sp.GENERATOR, phi, p).values
            h = length / m
            v = phi.values
            d1 = (np.roll(v, 2, 0) - 8 * np.roll(v, 1, 0) + 8 * np.roll(v, -1, 0) - np.roll(v, -2, 0)) / (12 * h)
            d2 = (-np.roll(v, 2, 0) + 16 * np.roll(v, 1, 0) - 30 * v + 16 * np.roll(v, -1, 0) - np.roll(v, -2, 0)) / (12 * h**2)
            states = np.array(p.states, dtype=float)
            c = p.layers.switch_rates
            flips = v @ c.T - v * c.sum(axis=1)[None, :]
            fd = p.diffusivity()[None, :] * d2 + p.lam * states[None, :] * d1 + flips
            errs.append(np.max(np.abs(fd - exact)))
        ratio = errs[0] / errs[1]
        assert 10 < ratio < 24  # 4th order: halving h divides the error by ~16


class TestInnerProduct:
    def test_constants(self):
        ones = sp.GridFunction(np.ones((64, 2)), 8.0)
        assert sp.inner_product(ones, ones) == pytest.approx(16.0)

    def test_orthogonal_modes(self):
        length, m = 8.0, 64
        f = sp.GridFunction.from_callable(
            lambda x, i: np.sin(2 * np.pi * x / length), length, m, 1
        )
        g = sp.GridFunction.from_callable(
            lambda x, i: np.sin(4 * np.pi * x / length), length, m, 1
        )
        assert abs(sp.inner_product(f, g)) < 1e-13

    def test_grid_mismatch(self):
        with pytest.raises(rf.DomainError):
            sp.inner_product(
                sp.GridFunction(np.ones((64, 2)), 8.0), sp.GridFunction(np.ones((32, 2)), 8.0)
            )

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_flip_form_self_adjoint_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        p = rtp_params(gamma=0.8)
        vals = rng.normal(size=(64, 2))
        phi = sp.GridFunction(vals, 8.0)
        psi = sp.GridFunction(rng.normal(size=(64, 2)), 8.0)
        sphi = sp.apply_operator(sp.FLIP_FORM, phi, p)
        spsi = sp.apply_operator(sp.FLIP_FORM, psi, p)
        assert abs(sp.inner_product(sphi, psi) - sp.inner_product(phi, spsi)) < 1e-12
        assert sp.inner_product(phi, sphi) > -1e-12


class TestHMinus1:
    def test_zero(self):
        assert sp.h_minus1_norm_sq(np.zeros(64), 2 * np.pi) == 0.0

    def test_unit_sine(self):
        f = sp.GridFunction.from_callable(lambda x, i: np.sin(x), 2 * np.pi, 128, 1)
        assert sp.h_minus1_norm_sq(f) == pytest.approx(np.pi, abs=1e-12)

    def test_scaling_with_wavenumber(self):
        length = 8.0
        for j in (1, 2, 5):
            k = 2 * np.pi * j / length
            f = sp.GridFunction.from_callable(lambda x, i: np.sin(k * x), length, 256, 1)
            assert sp.h_minus1_norm_sq(f) == pytest.approx((length / 2) / k**2, rel=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_derivative_identity(self, seed):
        # ||dx g||_{H^-1}^2 equals ||g - mean||_{L2}^2
        rng = np.random.default_rng(seed)
        length, m = 8.0, 128
        x = np.arange(m) * length / m
        g = np.zeros(m)
        for j in range(1, 6):
            aj, bj = rng.normal(size=2)
            g += aj * np.sin(2 * np.pi * j * x / length) + bj * np.cos(2 * np.pi * j * x / length)
        gf = sp.GridFunction(g, length)
        dg = sp.derivative(gf)
        lhs = sp.h_minus1_norm_sq(dg.values[:, 0], length)
        rhs = sp.l2_norm_sq(g - g.mean(), length)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_nonzero_mean_rejected(self):
        with pytest.raises(rf.DomainError):
            sp.h_minus1_norm_sq(np.ones(64), 8.0)


class TestGridFunction:
    def test_power_of_two_required(self):
        with pytest.raises(rf.DomainError):
            sp.GridFunction(np.ones((48, 2)), 8.0)

    def test_finite_required(self):
        vals = np.ones((64, 1))
        vals[3] = np.nan
        with pytest.raises(rf.DomainError):
            sp.GridFunction(vals, 8.0)

    def test_evaluate_at_grid_points_exact(self):
        phi = bump(8.0, 64)
        xs = phi.grid()
        vals = sp.evaluate_at_positions(phi, xs)
        assert np.max(np.abs(vals - phi.values)) < 1e-14
