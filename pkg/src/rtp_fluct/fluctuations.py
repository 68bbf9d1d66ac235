"""Empirical fluctuation fields, covariance estimates and martingale statistics.

The fluctuation field pairs a centered, 1/sqrt(N)-rescaled configuration
with a macroscopic test function:

    Y_t(phi) = N^{-1/2} sum_{x,sigma} (eta_t(x,sigma) - m) phi(x/N, sigma),

with centering m the stationary mean occupancy.  Started from the
stationary product measure, the covariance E[Y_t(phi) Y_0(psi)] converges to
chi * <<exp(t G) phi, psi>> where G is the single-particle limit generator
of the family and chi the per-site variance; ``predicted_covariance``
evaluates that closed form spectrally and the Monte Carlo estimators here
reproduce it.

``martingale_statistics`` accumulates the compensated increment

    M_t = Y_t(phi) - Y_0(phi) - int_0^t (generator applied to the pairing) ds

exactly along event streams (the integrand is piecewise constant between
events) and compares var(M_t)/t with the limiting quadratic-variation rate

    2 kappa rho <<dx phi, dx phi>> + 2 rho <<phi, Sigma phi>>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .kmc import replica_seeds, rtp_snapshot_ensemble, sep_snapshot_ensemble
from .model import DomainError, FAMILY_RTP
from .spectral import (
    FLIP_FORM,
    GridFunction,
    apply_operator,
    derivative,
    evaluate_at_positions,
    inner_product,
    limit_kind,
    semigroup_apply,
)


@dataclass
class FieldPairing:
    """One evaluation of the fluctuation field against a test function."""

    value: float
    time: float


@dataclass
class CovarianceEstimate:
    """Monte Carlo covariance of Y_t(phi) with Y_0(psi)."""

    mean: float
    std_error: float
    n_replicas: int
    t: float
    label_phi: str = "phi"
    label_psi: str = "psi"

    def __post_init__(self):
        if self.n_replicas < 2:
            raise DomainError("need at least two replicas")

    def z_score(self, predicted):
        return (self.mean - predicted) / self.std_error


def _phi_sites(phi, params, lattice):
    if phi.n_layers != params.n_layers:
        raise DomainError("test function layer count mismatch")
    if abs(phi.length - lattice.length) > 1e-9:
        raise DomainError("test function lives on a different torus")
    return evaluate_at_positions(phi, lattice.site_positions())


def pair_field(config, phi, params, lattice, t=0.0):
    """Exact finite-sum pairing of the centered rescaled field with phi."""
    table = _phi_sites(phi, params, lattice)
    centered = config.occ.astype(float) - params.centering
    value = float((centered * table).sum() / math.sqrt(lattice.scaling_n))
    return FieldPairing(value=value, time=t)


def field_values(snaps, phi, params, lattice):
    """Bulk pairing: snaps (..., n_sites, n_layers) -> values (...)."""
    table = _phi_sites(phi, params, lattice)
    centered = snaps.astype(float) - params.centering
    flat = centered.reshape(*snaps.shape[:-2], -1)
    return flat @ table.reshape(-1) / math.sqrt(lattice.scaling_n)


def extend_to_layers(phi, n_layers):
    """Layer-constant extension of a single-layer test function."""
    if phi.n_layers != 1:
        raise DomainError("expected a single-layer function")
    return GridFunction(np.repeat(phi.values, n_layers, axis=1), phi.length)


def z_pair_field(config, phi, params, lattice, t=0.0):
    """Total-density pairing: both layers against the same spatial function.

    Identical, by construction, to pairing the layer-constant extension of
    phi with the full field.
    """
    return pair_field(config, extend_to_layers(phi, params.n_layers), params, lattice, t)


def predicted_covariance(params, phi, psi, t):
    """chi * <<exp(t G) phi, psi>> with G the family's limit generator."""
    if t < 0:
        raise DomainError("t must be >= 0")
    return params.chi * inner_product(semigroup_apply(limit_kind(params), t, phi, params), psi)


def total_density_covariance(params, phi, psi, t):
    """Covariance of the layer-summed field: layer-constant extension of both."""
    n = params.n_layers
    return predicted_covariance(params, extend_to_layers(phi, n), extend_to_layers(psi, n), t)


def estimate_stationary_covariance(
    params, lattice, phi, psi, t, n_replicas, rng_seed, snaps=None
):
    """Sample covariance of Y_t(phi) and Y_0(psi) over stationary replicas.

    Each replica draws eta_0 from the stationary product measure and evolves
    it to time t exactly.  Precomputed snapshots (from the ensemble helpers,
    times [0, t]) can be passed to share replicas between several pairings.
    """
    if n_replicas < 100:
        raise DomainError("need at least 100 replicas")
    if t < 0:
        raise DomainError("t must be >= 0")
    if snaps is None:
        snaps = ensemble_snapshots(params, lattice, [0.0, float(t)], n_replicas, rng_seed)
    u = field_values(snaps[:, -1], phi, params, lattice)  # Y_t(phi)
    v = field_values(snaps[:, 0], psi, params, lattice)  # Y_0(psi)
    du = u - u.mean()
    dv = v - v.mean()
    prod = du * dv
    mean = float(prod.sum() / (n_replicas - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n_replicas))
    return CovarianceEstimate(mean=mean, std_error=se, n_replicas=n_replicas, t=float(t))


def ensemble_snapshots(params, lattice, times, n_replicas, rng_seed, profile=None):
    """Family-dispatched stationary replica snapshots (int16 array)."""
    if params.is_sep:
        snaps, _ = sep_snapshot_ensemble(params, lattice, times, n_replicas, rng_seed, profile)
        return snaps
    return rtp_snapshot_ensemble(params, lattice, times, n_replicas, rng_seed, profile)


def predicted_quadratic_variation_rate(params, phi):
    """Limiting var(M_t)/t: 2 kappa rho <<dx phi, dx phi>> + 2 rho <<phi, Sigma phi>>."""
    if params.family != FAMILY_RTP:
        raise DomainError("the quoted limit is for the run-and-tumble family")
    dphi = derivative(phi)
    grad_term = 2.0 * params.kappa_vec[0] * params.rho * inner_product(dphi, dphi)
    flip_term = 2.0 * params.rho * inner_product(phi, apply_operator(FLIP_FORM, phi, params))
    return float(grad_term + flip_term)


def _lattice_generator_table(phi_table, params, lattice):
    """Exact lattice generator applied to the site-sampled test function."""
    n = lattice.scaling_n
    kap = float(params.kappa_vec[0])
    lam = params.lam
    c = params.layers.switch_rates
    states = params.states
    up = np.roll(phi_table, -1, axis=0)
    dn = np.roll(phi_table, 1, axis=0)
    out = kap * n * n * (up + dn - 2.0 * phi_table)
    for i, s in enumerate(states):
        out[:, i] += lam * n * (np.roll(phi_table[:, i], -s) - phi_table[:, i])
    flip = phi_table @ c.T - phi_table * c.sum(axis=1)[None, :]
    return out + flip


def expected_quadratic_variation_rate(params, lattice, phi):
    """Exact finite-N expectation of the quadratic-variation rate of M_t.

    Deterministic under the stationary law: sum over transitions of
    rate * (field increment)^2 with E[eta] = rho.
    """
    if params.family != FAMILY_RTP:
        raise DomainError("run-and-tumble only")
    table = _phi_sites(phi, params, lattice)
    n = lattice.scaling_n
    kap = float(params.kappa_vec[0])
    lam = params.lam
    rho = params.rho
    c = params.layers.switch_rates
    states = params.states
    up = np.roll(table, -1, axis=0)
    dn = np.roll(table, 1, axis=0)
    total = kap * n * n * rho * (((up - table) ** 2).sum() + ((dn - table) ** 2).sum())
    for i, s in enumerate(states):
        jumped = np.roll(table[:, i], -s)
        total += lam * n * rho * ((jumped - table[:, i]) ** 2).sum()
    for i in range(params.n_layers):
        for j in range(params.n_layers):
            if i != j:
                total += c[i, j] * rho * ((table[:, j] - table[:, i]) ** 2).sum()
    return float(total / n)


def martingale_statistics(params, lattice, phi, t, n_replicas, rng_seed):
    """Empirical law of the compensated field increment M_t over replicas.

    Each replica samples the stationary product measure and runs every
    particle's exact event stream; the compensator integral is accumulated
    term by term between events.  Returns a report dict with the empirical
    mean and variance rate of M_t, their standard errors, and the predicted
    limit rate.
    """
    if params.family != FAMILY_RTP:
        raise DomainError("martingale statistics cover the run-and-tumble family")
    if t <= 0:
        raise DomainError("t must be > 0")
    table = _phi_sites(phi, params, lattice)
    lphi = _lattice_generator_table(table, params, lattice)
    n = lattice.scaling_n
    seeds = (replica_seeds(rng_seed, n_replicas) % (2**31 - 1)).astype(np.int64)
    out = np.empty(n_replicas)
    _kernels.rtp_martingale_ensemble(
        seeds,
        lattice.n_sites,
        params.n_layers,
        float(params.rho),
        float(t),
        float(params.kappa_vec[0]) * n * n,
        float(params.lam) * n,
        params.layers.switch_rates.astype(float),
        params.layers.exit_rates.astype(float),
        np.asarray(params.states, dtype=np.int64),
        lphi,
        table,
        math.sqrt(n),
        out,
    )
    var = float(out.var(ddof=1))
    report = {
        "t": float(t),
        "n_replicas": n_replicas,
        "mean": float(out.mean()),
        "mean_std_error": float(out.std(ddof=1) / math.sqrt(n_replicas)),
        "variance_rate": var / t,
        "variance_rate_std_error": var / t * math.sqrt(2.0 / (n_replicas - 1)),
        "predicted_rate": predicted_quadratic_variation_rate(params, phi),
        "expected_rate_finite_n": expected_quadratic_variation_rate(params, lattice, phi),
    }
    return report
