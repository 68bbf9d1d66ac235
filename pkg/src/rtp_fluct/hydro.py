"""Hydrodynamic solver and checks for the macroscopic density evolution.

The rescaled empirical density converges to the solution of the linear
system rho_dot = (adjoint generator) rho, solved here exactly on the Fourier
side.  For two layers with switching rate gamma the layer sum satisfies a
closed second-order-in-time equation: with diffusivity D per layer and
activity lambda,

    rho_tt + (2*gamma - 2*D*dxx) rho_t = ((lambda^2 + 2*gamma*D) dxx - D^2 dxxxx) rho.

Note the signs: eliminating the layer difference from the first-order system
produces +2*gamma on the damping side and +2*gamma*D on the right; the
dissipative form is also what stability of the two-by-two mode system
dictates.  ``total_density_residual`` measures how well a trajectory
satisfies this equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kmc import rtp_snapshot_ensemble, sep_snapshot_ensemble
from .model import DomainError, FAMILY_RTP
from .spectral import (
    GridFunction,
    adjoint_kind,
    evaluate_at_positions,
    inner_product,
    semigroup_apply,
    wavenumbers,
)


@dataclass
class DensityTrajectory:
    """Per-layer density profiles at sorted times."""

    times: list
    profiles: list

    def __post_init__(self):
        if len(self.times) != len(self.profiles):
            raise DomainError("times/profiles length mismatch")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise DomainError("times must be sorted")

    @property
    def n_layers(self):
        return self.profiles[0].n_layers

    def total(self, j):
        """Layer-summed density at time index j (single-layer GridFunction)."""
        p = self.profiles[j]
        return GridFunction(p.values.sum(axis=1), p.length)

    def difference(self, j):
        """First layer minus second (two-layer trajectories)."""
        p = self.profiles[j]
        if p.n_layers != 2:
            raise DomainError("difference needs two layers")
        return GridFunction(p.values[:, 0] - p.values[:, 1], p.length)

    def mass(self, j):
        p = self.profiles[j]
        return float(p.values.sum() * p.dx)

    def total_array(self):
        """Layer-summed values, shape (n_times, n_points)."""
        return np.stack([p.values.sum(axis=1) for p in self.profiles])


def solve_hydro(rho0, t_grid, params):
    """Evolve an initial profile by the adjoint semigroup at each grid time."""
    if np.any(rho0.values < 0):
        raise DomainError("initial density must be nonnegative")
    kind = adjoint_kind(params)
    profiles = [semigroup_apply(kind, float(t), rho0, params) for t in t_grid]
    return DensityTrajectory([float(t) for t in t_grid], profiles)


_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0


def _time_derivatives(arr, dt):
    """4th-order interior first and second time derivatives of (n_t, ...) data."""
    n = arr.shape[0]
    if n < 5:
        raise DomainError("need at least 5 uniform time samples")
    d1 = np.zeros_like(arr)
    d2 = np.zeros_like(arr)
    for off, (w1, w2) in enumerate(zip(_D1, _D2)):
        sl = arr[off : n - 4 + off]
        d1[2 : n - 2] += w1 * sl
        d2[2 : n - 2] += w2 * sl
    return d1[2 : n - 2] / dt, d2[2 : n - 2] / dt**2


def closed_equation_coefficients(params):
    """(D, gamma, lambda) entering the two-layer closed total-density equation."""
    if params.n_layers != 2:
        raise DomainError("the closed equation is the two-layer reduction")
    diff = params.diffusivity()
    if abs(diff[0] - diff[1]) > 1e-14:
        raise DomainError("closed equation needs a layer-uniform diffusivity")
    gamma = float(params.layers.switch_rates[0, 1])
    lam = params.lam if params.family == FAMILY_RTP else 0.0
    return float(diff[0]), gamma, lam


def total_density_residual(traj, params):
    """Max-over-time relative L2 residual of the closed total-density equation.

    Time derivatives by 4th-order central stencils on the uniform grid,
    space derivatives spectrally.  Normalised by the largest L2 norm of the
    second time derivative (falls back to the first-derivative scale and
    then the field scale when the trajectory is steady).
    """
    d, gamma, lam = closed_equation_coefficients(params)
    times = np.asarray(traj.times)
    if times.size < 5:
        raise DomainError("need at least 5 time samples")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(dts[0], 1e-300):
        raise DomainError("time grid must be uniform")
    dt = float(dts[0])
    rho = traj.total_array()
    length = traj.profiles[0].length
    m = rho.shape[1]
    ks = wavenumbers(length, m)
    co = np.fft.rfft(rho, axis=1)
    dxx = np.fft.irfft(co * (-(ks**2))[None, :], n=m, axis=1)
    dxxxx = np.fft.irfft(co * (ks**4)[None, :], n=m, axis=1)
    rho_t, rho_tt = _time_derivatives(rho, dt)
    dxx_t, _ = _time_derivatives(dxx, dt)
    mid = slice(2, rho.shape[0] - 2)
    resid = (
        rho_tt
        + 2.0 * gamma * rho_t
        - 2.0 * d * dxx_t
        - (lam**2 + 2.0 * gamma * d) * dxx[mid]
        - (-(d**2)) * dxxxx[mid]
    )
    dx = length / m
    res_norm = np.sqrt((resid**2).sum(axis=1) * dx).max()
    # roundoff floor of the second-difference stencil on this data
    floor = 1e-12 * float(np.abs(rho).max()) * np.sqrt(length) / dt**2
    if res_norm <= floor:
        return 0.0
    scale = max(np.sqrt((rho_tt**2).sum(axis=1) * dx).max(), floor)
    return float(res_norm / scale)


def bin_sites_to_grid(occ, n_bins):
    """Average site occupancies into n_bins macroscopic bins per layer.

    occ: (..., n_sites, n_layers).  Sites are grouped left-aligned; each bin
    mean estimates the density at the bin's cells (the empirical measure
    gives every particle mass 1/N at x/N).
    """
    occ = np.asarray(occ, dtype=float)
    n_sites = occ.shape[-2]
    if n_sites % n_bins != 0:
        raise DomainError("n_bins must divide the site count")
    step = n_sites // n_bins
    shape = occ.shape[:-2] + (n_bins, step, occ.shape[-1])
    return occ.reshape(shape).mean(axis=-2)


def compare_empirical_to_hydro(
    params,
    lattice,
    rho0,
    t,
    n_replicas,
    rng_seed,
    test_functions=(),
    n_bins=32,
):
    """Run the particle system from the local-equilibrium start and compare.

    Returns a dict with the replica-averaged binned profile, the
    hydrodynamic profile binned the same way, their L1 distance, and one
    (empirical pairing, predicted pairing, standard error) row per test
    function.
    """
    times = [float(t)]
    if params.is_sep:
        snaps, _ = sep_snapshot_ensemble(params, lattice, times, n_replicas, rng_seed, profile=rho0)
    else:
        snaps = rtp_snapshot_ensemble(params, lattice, times, n_replicas, rng_seed, profile=rho0)
    occ_t = snaps[:, 0].astype(float)

    traj = solve_hydro(rho0, [0.0, float(t)], params)
    rho_t = traj.profiles[1]

    emp_binned = bin_sites_to_grid(occ_t.mean(axis=0), n_bins)
    exact_binned = bin_sites_to_grid(
        _grid_to_sites(rho_t, lattice), n_bins
    )
    length = rho0.length
    l1 = float(np.abs(emp_binned - exact_binned).sum() * (length / n_bins))

    rows = []
    n = lattice.scaling_n
    for phi in test_functions:
        phi_sites = _grid_to_sites(phi, lattice)
        pairings = occ_t.reshape(n_replicas, -1) @ phi_sites.reshape(-1) / n
        predicted = inner_product(phi, rho_t)
        rows.append(
            {
                "empirical": float(pairings.mean()),
                "predicted": float(predicted),
                "std_error": float(pairings.std(ddof=1) / np.sqrt(n_replicas)),
            }
        )
    return {
        "l1_error": l1,
        "empirical_profile": emp_binned,
        "hydro_profile": exact_binned,
        "pairings": rows,
    }


def _grid_to_sites(phi, lattice):
    """Evaluate a GridFunction at the microscopic site positions."""
    return evaluate_at_positions(phi, lattice.site_positions())
