import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import rtp_fluct as rf
from rtp_fluct import duality
from rtp_fluct.model import (
    ACTIVE_JUMP,
    FLIP,
    HOP_LEFT,
    HOP_RIGHT,
    total_rate,
)


def two_state_rtp(n=2, kappa=1.0, lam=1.0, gamma=1.0, rho=1.0):
    return rf.ModelParams(
        family=rf.FAMILY_RTP,
        kappa=kappa,
        lam=lam,
        layers=rf.LayerSet.two_state(gamma),
        scaling_n=n,
        rho=rho,
    )


def two_state_sep(n=1, kappa=1.0, gamma=1.0, rho=0.5, alpha=1):
    return rf.ModelParams(
        family=rf.FAMILY_SEP,
        kappa=kappa,
        layers=rf.LayerSet.two_state(gamma),
        scaling_n=n,
        rho=rho,
        alpha=alpha,
    )


class TestLayerSet:
    def test_symmetry_required(self):
        with pytest.raises(rf.DomainError):
            rf.LayerSet(states=(-1, 1), switch_rates=np.array([[0.0, 1.0], [0.5, 0.0]]))

    def test_zero_diagonal_required(self):
        with pytest.raises(rf.DomainError):
            rf.LayerSet(states=(-1, 1), switch_rates=np.array([[0.1, 1.0], [1.0, 0.0]]))

    def test_connectivity_required(self):
        rates = np.zeros((3, 3))
        rates[0, 1] = rates[1, 0] = 1.0  # state 2 disconnected
        with pytest.raises(rf.DomainError):
            rf.LayerSet(states=(-1, 0, 1), switch_rates=rates)

    def test_exit_rates(self):
        ls = rf.LayerSet.two_state(0.7)
        assert np.allclose(ls.exit_rates, [0.7, 0.7])


class TestModelParams:
    def test_sep_rho_range(self):
        with pytest.raises(rf.DomainError):
            two_state_sep(rho=1.5)
        with pytest.raises(rf.DomainError):
            two_state_sep(rho=0.0)

    def test_rtp_rho_nonnegative(self):
        with pytest.raises(rf.DomainError):
            two_state_rtp(rho=-0.5)

    def test_chi_values(self):
        assert two_state_rtp(rho=1.3).chi == 1.3
        p = two_state_sep(rho=0.25, alpha=2)
        assert p.chi == pytest.approx(2 * 0.25 * 0.75)
        assert p.chi_quadratic == pytest.approx(0.25 * (2 - 0.25))
        # the two conventions coincide at alpha = 1
        p1 = two_state_sep(rho=0.3, alpha=1)
        assert p1.chi == pytest.approx(p1.chi_quadratic)

    def test_diffusivity_conventions(self):
        p = two_state_rtp(kappa=2.0)
        assert p.diffusivity()[0] == 2.0
        assert p.with_convention("paper").diffusivity()[0] == 1.0
        ps = two_state_sep(kappa=[1.0, 0.5], alpha=3)
        assert np.allclose(ps.diffusivity(), [3.0, 1.5])


class TestLattice:
    def test_divisibility(self):
        with pytest.raises(rf.DomainError):
            rf.Lattice(10, 4)

    def test_minimum_size(self):
        with pytest.raises(rf.DomainError):
            rf.Lattice(8, 4)
        rf.Lattice(8, 4, allow_small=True)
        rf.Lattice(16, 4)

    def test_time_horizon_guard(self):
        lat = rf.Lattice(256, 8)
        p = two_state_rtp(n=8)
        assert lat.supports_time_horizon(p, 0.5)
        assert not lat.supports_time_horizon(p, 500.0)


class TestSampling:
    def test_zero_density_gives_empty(self):
        p = two_state_rtp(rho=0.0)
        cfg = rf.sample_product_measure(p, rf.Lattice(16, 2), rng_seed=1)
        assert cfg.total_particles == 0

    def test_poisson_moments_large_lattice(self):
        # CLT bands: with 2e5 cells at rho = 1, the mean has SE ~ 0.0022 and
        # the variance/mean ratio concentrates similarly
        p = two_state_rtp(n=1, rho=1.0)
        lat = rf.Lattice(100_000, 1)
        cfg = rf.sample_product_measure(p, lat, rng_seed=7)
        occ = cfg.occ.astype(float)
        mean = occ.mean()
        ratio = occ.var() / mean
        assert 0.99 <= mean <= 1.01
        assert 0.97 <= ratio <= 1.03

    def test_bernoulli_variance(self):
        p = two_state_sep(rho=0.5)
        lat = rf.Lattice(100_000, 1, allow_small=False)
        occ = rf.sample_product_measure(p, lat, rng_seed=11).occ.astype(float)
        var = occ.var(ddof=1)
        dev = occ - occ.mean()
        se = np.sqrt(max((dev**4).mean() - var**2, 0.0) / occ.size) + 5.0 / occ.size
        assert abs(var - 0.25) <= 3 * se + 1e-6

    def test_profile_errors(self):
        p = two_state_rtp()
        lat = rf.Lattice(16, 2)
        with pytest.raises(rf.DomainError):
            rf.sample_product_measure(p, lat, profile=lambda x, i: -1.0, rng_seed=0)
        with pytest.raises(rf.DomainError):
            rf.sample_product_measure(
                two_state_sep(n=2), lat, profile=lambda x, i: 1.5, rng_seed=0
            )

    def test_reproducible(self):
        p = two_state_rtp()
        lat = rf.Lattice(32, 2)
        a = rf.sample_product_measure(p, lat, rng_seed=5).occ
        b = rf.sample_product_measure(p, lat, rng_seed=5).occ
        assert np.array_equal(a, b)

    def test_profile_modulates_mean(self):
        p = two_state_rtp(n=4, rho=1.0)
        lat = rf.Lattice(4096, 4)
        prof = lambda x, i: 2.0 if x < 512 else 0.5
        occ = rf.sample_product_measure(p, lat, profile=prof, rng_seed=3).occ
        lo = occ[: 2048].mean()
        hi = occ[2048:].mean()
        assert abs(lo - 2.0) < 0.1 and abs(hi - 0.5) < 0.1


class TestTransitions:
    def test_single_rtp_particle_rates(self):
        # one particle at (0, sigma=+1), kappa=1, lambda=1, c=1, N=2:
        # hops at kappa N^2 = 4 each way, active jump to x+1 at lambda N = 2,
        # flip at 1
        p = two_state_rtp(n=2)
        lat = rf.Lattice(8, 2)
        occ = np.zeros((8, 2), dtype=int)
        occ[0, 1] = 1  # states are (-1, +1): index 1 is sigma = +1
        trs = rf.enumerate_transitions(rf.Configuration(occ), p, lat)
        by_kind = {t.kind: t for t in trs}
        assert len(trs) == 4
        assert by_kind[HOP_LEFT].rate == 4.0 and by_kind[HOP_LEFT].target == (7, 1)
        assert by_kind[HOP_RIGHT].rate == 4.0
        assert by_kind[ACTIVE_JUMP].rate == 2.0 and by_kind[ACTIVE_JUMP].target == (1, 1)
        assert by_kind[FLIP].rate == 1.0 and by_kind[FLIP].target == (0, 0)

    def test_empty_configuration(self):
        p = two_state_rtp()
        lat = rf.Lattice(8, 2)
        assert rf.enumerate_transitions(rf.Configuration(np.zeros((8, 2))), p, lat) == []

    def test_exclusion_blocks_hop(self):
        p = two_state_sep(n=1)
        lat = rf.Lattice(4, 1)
        occ = np.zeros((4, 1), dtype=int)
        occ[0, 0] = occ[1, 0] = 1
        p1 = rf.ModelParams(
            family=rf.FAMILY_SEP,
            kappa=1.0,
            layers=rf.LayerSet(states=(1,), switch_rates=np.zeros((1, 1))),
            scaling_n=1,
            rho=0.5,
            alpha=1,
        )
        trs = rf.enumerate_transitions(rf.Configuration(occ), p1, lat)
        # the hop between the two occupied neighbours has rate 1*1*(1-1) = 0
        # and is therefore not listed
        assert all(not (t.source == (0, 0) and t.target == (1, 0)) for t in trs)
        assert all(not (t.source == (1, 0) and t.target == (0, 0)) for t in trs)
        assert all(t.rate > 0 for t in trs)

    def test_total_rate_matches_enumeration(self):
        p = two_state_sep(n=2, alpha=2, rho=0.4)
        lat = rf.Lattice(8, 2)
        cfg = rf.sample_product_measure(p, lat, rng_seed=9)
        trs = rf.enumerate_transitions(cfg, p, lat)
        assert total_rate(cfg, p, lat) == pytest.approx(sum(t.rate for t in trs))


class TestApplyTransition:
    def test_hop_right(self):
        p = two_state_rtp()
        occ = np.zeros((8, 2), dtype=int)
        occ[0, 1] = 1
        new = rf.apply_transition(
            rf.Configuration(occ), rf.Transition(HOP_RIGHT, (0, 1), (1, 1), 1.0), p
        )
        assert new.occ[0, 1] == 0 and new.occ[1, 1] == 1

    def test_flip(self):
        p = two_state_rtp()
        occ = np.zeros((8, 2), dtype=int)
        occ[3, 0] = 2
        new = rf.apply_transition(
            rf.Configuration(occ), rf.Transition(FLIP, (3, 0), (3, 1), 1.0), p
        )
        assert new.occ[3, 0] == 1 and new.occ[3, 1] == 1

    def test_active_jump_negative_state_wraps(self):
        # layer index 0 is sigma = -1: active jump moves left, wrapping at 0
        p = two_state_rtp(n=1)
        lat = rf.Lattice(8, 1)
        for x, expect in [(5, 4), (0, 7)]:
            occ = np.zeros((8, 2), dtype=int)
            occ[x, 0] = 1
            trs = rf.enumerate_transitions(rf.Configuration(occ), p, lat)
            jump = [t for t in trs if t.kind == ACTIVE_JUMP][0]
            assert jump.target == (expect, 0)

    def test_illegal_transition_raises(self):
        p = two_state_rtp()
        occ = np.zeros((8, 2), dtype=int)
        with pytest.raises(rf.TransitionError):
            rf.apply_transition(
                rf.Configuration(occ), rf.Transition(HOP_RIGHT, (0, 1), (1, 1), 1.0), p
            )
        ps = two_state_sep()
        occ = np.ones((8, 2), dtype=int)
        with pytest.raises(rf.TransitionError):
            rf.apply_transition(
                rf.Configuration(occ), rf.Transition(HOP_RIGHT, (0, 0), (1, 0), 1.0), ps
            )

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_particle_number_conserved(self, seed):
        rng = np.random.default_rng(seed)
        family = rng.choice([rf.FAMILY_RTP, rf.FAMILY_SEP])
        if family == rf.FAMILY_SEP:
            p = two_state_sep(n=1, alpha=int(rng.integers(1, 4)), rho=0.5)
        else:
            p = two_state_rtp(n=1, rho=0.8)
        lat = rf.Lattice(6, 1, allow_small=True)
        cfg = rf.sample_product_measure(p, lat, rng_seed=int(rng.integers(2**31)))
        trs = rf.enumerate_transitions(cfg, p, lat)
        if not trs:
            return
        tr = trs[int(rng.integers(len(trs)))]
        new = rf.apply_transition(cfg, tr, p)
        assert new.total_particles == cfg.total_particles
        assert tr.rate > 0
        new.validate(p)


class TestSectorStationarity:
    def test_rtp_product_poisson_stationary(self):
        # conditioned on the particle number, the product-Poisson weights are
        # stationary for the sector master equation (number is conserved)
        p = two_state_rtp(n=1, rho=0.7)
        lat = rf.Lattice(3, 1, allow_small=True)
        for n_particles in (1, 2):
            res = duality.sector_stationary_residual(lat, p, n_particles)
            assert res <= 1e-10

    def test_sep_product_binomial_stationary(self):
        p = two_state_sep(n=1, alpha=2, rho=0.3)
        lat = rf.Lattice(3, 1, allow_small=True)
        for n_particles in (1, 2, 3):
            res = duality.sector_stationary_residual(lat, p, n_particles)
            assert res <= 1e-10
