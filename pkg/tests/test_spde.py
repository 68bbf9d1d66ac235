import math

import numpy as np
import pytest

import rtp_fluct as rf
from rtp_fluct import fluctuations as fl, spde
from rtp_fluct.spectral import GridFunction


def rtp(kappa=1.0, lam=1.0, gamma=1.0, rho=1.0, convention="microscopic"):
    return rf.ModelParams(
        family=rf.FAMILY_RTP, kappa=kappa, lam=lam,
        layers=rf.LayerSet.two_state(gamma), scaling_n=16, rho=rho,
        convention=convention,
    )


def sep(kappa=(1.0, 0.5), gamma=0.8, rho=0.4, alpha=2):
    return rf.ModelParams(
        family=rf.FAMILY_SEP, kappa=list(kappa), layers=rf.LayerSet.two_state(gamma),
        scaling_n=16, rho=rho, alpha=alpha,
    )


def bump_pair(length=8.0, m=128):
    w = length / 8
    phi = GridFunction.from_callable(
        lambda x, i: np.exp(-((x - 0.45 * length) ** 2) / (2 * w**2)), length, m, 2
    )
    psi = GridFunction.from_callable(
        lambda x, i: np.exp(-((x - 0.55 * length) ** 2) / (2 * w**2)), length, m, 2
    )
    return phi, psi


class TestLyapunov:
    def test_microscopic_convention_balances(self):
        assert spde.lyapunov_residual(rtp(), 8.0, 256) <= 1e-12
        assert spde.lyapunov_residual(rtp(kappa=0.3, lam=2.0, gamma=0.5), 8.0, 256) <= 1e-12

    def test_sep_balances_with_alpha_scaling(self):
        assert spde.lyapunov_residual(sep(), 8.0, 256) <= 1e-12
        assert spde.lyapunov_residual(sep(alpha=1, kappa=(1.0, 1.0)), 8.0, 256) <= 1e-12

    def test_printed_half_coefficient_breaks_balance(self):
        # the regression content of the convention decision
        assert spde.lyapunov_residual(rtp(convention="paper"), 8.0, 256) > 1.0


class TestStationaryField:
    def test_mode_variance(self):
        rng = np.random.default_rng(1)
        chi, length = 1.3, 8.0
        modes = spde.stationary_modes(chi, length, 32, 2, 40_000, rng)
        var0 = np.var(modes[:, 0, :].real)
        var_pos = np.mean(np.abs(modes[:, 1:, :]) ** 2)
        assert abs(var0 - chi / length) <= 3 * (chi / length) * math.sqrt(2 / 40_000)
        assert abs(var_pos - chi / length) <= 5e-3 * chi / length

    def test_pairing_matches_grid_white_noise(self):
        # E[Y(phi) Y(psi)] = chi <<phi, psi>> from the mode representation
        p = rtp(rho=0.9)
        phi, psi = bump_pair()
        rng = np.random.default_rng(7)
        modes = spde.stationary_modes(p.chi, 8.0, 64, 2, 60_000, rng)
        ya = spde.pair_modes(modes, phi)
        yb = spde.pair_modes(modes, psi)
        est = np.mean(ya * yb)
        se = np.std(ya * yb, ddof=1) / math.sqrt(len(ya))
        from rtp_fluct.spectral import inner_product

        assert abs(est - p.chi * inner_product(phi, psi)) <= 3 * se

    def test_zero_variance_gives_zero_field(self):
        p = rtp(rho=0.0)
        traj = spde.simulate_ou_field(p, 8.0, 16, [0.1, 0.2], n_replicas=3, rng_seed=5)
        assert np.max(np.abs(traj)) == 0.0


class TestOUEvolution:
    def test_stationarity_along_trajectory(self):
        p = rtp()
        traj = spde.simulate_ou_field(p, 8.0, 24, np.linspace(0.05, 0.5, 10),
                                      n_replicas=4000, rng_seed=11)
        # per-time covariance of every mode stays chi/ell within 5%
        target = p.chi / 8.0
        for j in range(traj.shape[1]):
            var_pos = np.mean(np.abs(traj[:, j, 1:, :]) ** 2)
            assert abs(var_pos - target) <= 0.05 * target

    def test_real_field_reconstruction(self):
        p = rtp()
        traj = spde.simulate_ou_field(p, 8.0, 16, [0.3], n_replicas=2, rng_seed=3)
        # k = 0 rows stay real
        assert np.max(np.abs(traj[:, :, 0, :].imag)) <= 1e-12

    def test_covariance_matches_spectral_formula(self):
        p = rtp()
        phi, psi = bump_pair()
        for t in (0.0, 0.25):
            mean, se = spde.estimate_ou_covariance(p, phi, psi, t, 6000, 64, 13)
            pred = fl.predicted_covariance(p, phi, psi, t)
            assert abs(mean - pred) <= 3 * se

    def test_sep_covariance_route(self):
        p = sep()
        phi, psi = bump_pair()
        mean, se = spde.estimate_ou_covariance(p, phi, psi, 0.2, 6000, 64, 17)
        pred = fl.predicted_covariance(p, phi, psi, 0.2)
        assert abs(mean - pred) <= 3 * se


class TestSumDifference:
    def test_z_covariance_consistent_with_layer_simulation(self):
        p = rtp()
        length = 8.0
        phi1 = GridFunction.from_callable(
            lambda x, i: np.exp(-((x - 3.6) ** 2) / 0.8), length, 128, 1
        )
        psi1 = GridFunction.from_callable(
            lambda x, i: np.exp(-((x - 4.4) ** 2) / 0.8), length, 128, 1
        )
        t = 0.3
        n = 8000
        zr = spde.simulate_sum_difference(p, length, 48, [t], n_replicas=n, rng_seed=19)
        # pair Z against phi via the mode formula
        zr0 = spde.simulate_sum_difference(p, length, 48, [1e-12], n_replicas=n, rng_seed=19)
        z_t = spde.pair_modes(zr[:, 0, :, :1], phi1)
        z_0 = spde.pair_modes(zr0[:, 0, :, :1], psi1)
        prod = (z_t - z_t.mean()) * (z_0 - z_0.mean())
        est = prod.sum() / (n - 1)
        se = prod.std(ddof=1) / math.sqrt(n)
        pred = fl.total_density_covariance(p, phi1, psi1, t)
        assert abs(est - pred) <= 3 * se

    def test_kappa_zero_sum_noise_vanishes(self):
        # Var(Z_t(phi) - Z_0(phi)) = O(t^2): the ratio Var/t vanishes as t -> 0
        p = rtp(kappa=0.0)
        length = 8.0
        phi1 = GridFunction.from_callable(
            lambda x, i: np.sin(2 * np.pi * x / length), length, 64, 1
        )
        n = 20_000
        ratios = []
        for t in (0.08, 0.02):
            zr = spde.simulate_sum_difference(p, length, 8, [0.0 + 1e-15, t],
                                              n_replicas=n, rng_seed=23)
            z0 = spde.pair_modes(zr[:, 0, :, :1], phi1)
            zt = spde.pair_modes(zr[:, 1, :, :1], phi1)
            ratios.append(np.var(zt - z0, ddof=1) / t)
        assert ratios[1] < 0.35 * ratios[0]

    def test_frozen_switching_reduces_to_transport_ode(self):
        # gamma ~ 0: R is frozen and Z integrates the transport term exactly
        import rtp_fluct.ou as ou

        lam, length, k = 1.2, 8.0, 2 * np.pi / 8.0
        drift = np.array([[0.0, -1j * lam * k], [-1j * lam * k, 0.0]])
        e = ou.integrated_noise_covariance(drift, np.zeros((2, 2)), 0.4)
        assert np.max(np.abs(e)) <= 1e-14  # no noise at gamma = 0
        import scipy.linalg

        prop = scipy.linalg.expm(drift * 0.4)
        z0 = np.array([0.7 + 0.2j, -0.3 + 0.5j])
        # two-step via the same propagator equals one step (sanity of the
        # exact evolution used in the simulator)
        one = prop @ z0
        half = scipy.linalg.expm(drift * 0.2)
        assert np.max(np.abs(half @ (half @ z0) - one)) < 1e-12


class TestSecondOrderResidual:
    def test_whiteness_and_variance(self):
        p = rtp(kappa=0.0, lam=1.0, gamma=1.0)
        length, dt = 8.0, 0.002
        tgrid = np.arange(1, 1501) * dt
        zr = spde.simulate_sum_difference(p, length, 3, tgrid, n_replicas=12, rng_seed=29)
        reports = spde.total_density_second_order_check(zr[:, :, :, 0], p, length, dt)
        r = reports[0]
        # lag >= 2 uncorrelated
        for c in r["autocorr"][1:]:
            assert abs(c) <= 3 * r["autocorr_se"]
        # lag 1 carries the structural 1/4 correlation of the stencil
        assert abs(r["autocorr"][0] - 0.25) < 0.05
        # empirical variance matches the exact stationary-covariance oracle
        assert abs(r["variance"] - r["exact_variance"]) <= 3 * r["variance_se"]
        # and the asymptotic (2/3) v_k / dt within 10%
        assert abs(r["variance"] - r["asymptotic_variance"]) <= 0.1 * r["asymptotic_variance"]

    def test_lambda_zero_trivial_residual(self):
        p = rtp(kappa=0.0, lam=0.0, gamma=1.0)
        length, dt = 8.0, 0.01
        tgrid = np.arange(1, 101) * dt
        zr = spde.simulate_sum_difference(p, length, 3, tgrid, n_replicas=4, rng_seed=31)
        reports = spde.total_density_second_order_check(zr[:, :, :, 0], p, length, dt)
        for r in reports:
            assert r["variance"] <= 1e-8

    def test_kappa_nonzero_rejected(self):
        p = rtp(kappa=1.0)
        with pytest.raises(rf.DomainError):
            spde.total_density_second_order_check(
                np.zeros((2, 10, 4), dtype=complex), p, 8.0, 0.01
            )


class TestThreeRoutes:
    def test_microscopic_spectral_and_galerkin_agree(self):
        p = rtp()
        lat = rf.Lattice(128, 16)
        phi, psi = bump_pair(lat.length, 128)
        t = 0.2
        n = 3000
        pred = fl.predicted_covariance(p, phi, psi, t)
        est = fl.estimate_stationary_covariance(p, lat, phi, psi, t, n, 41)
        ou_mean, ou_se = spde.estimate_ou_covariance(p, phi, psi, t, n, 64, 43)
        assert abs(est.z_score(pred)) <= 3
        assert abs(ou_mean - pred) <= 3 * ou_se
        assert abs(est.mean - ou_mean) <= 3 * math.hypot(est.std_error, ou_se)
