"""Duality function, reversed dual walker, and dense master-equation oracles.

The many-particle process started from eta and the reversed single/few
particle process started from xi satisfy

    E_eta[ D(xi, eta_t) ] = E_xi[ D(xi_t, eta) ],

where D is a product of binomial coefficients and the dual walker runs the
same dynamics with active jumps in the reverse direction.  On a small closed
ring both sides are computable exactly: the dynamics conserve particle
number, so each side lives in a fixed-particle-number sector that can be
enumerated and exponentiated densely.  Those dense checks are the trust
anchor for the event-driven engines.
"""

from __future__ import annotations

import math
from dataclasses import replace
from itertools import combinations_with_replacement

import numpy as np
import scipy.linalg

from .kmc import _as_rng, propagate_rtp_particles
from .model import (
    Configuration,
    DomainError,
    FAMILY_RTP,
    LayerSet,
    enumerate_transitions,
)

MAX_SECTOR_STATES = 200_000


def duality_function(xi, config):
    """Product over sites of binom(eta(x,s), xi(x,s)), zero unless xi <= eta.

    ``xi`` is a finitely supported map {(site, layer_index): count}.
    """
    occ = config.occ
    out = 1.0
    for (x, s), k in xi.items():
        if k < 0:
            raise DomainError("dual occupancies must be >= 0")
        n = int(occ[x, s])
        if k > n:
            return 0.0
        out *= math.comb(n, k)
    return float(out)


def dual_occupancy_weight(xi):
    """Product of factorials of the dual occupancies.

    For independent walkers the pairing that is exactly dual in all sectors
    is the falling-factorial one, weight(xi) * duality_function(xi, eta):
    with several dual particles on one site the plain binomial product is
    not preserved (it coincides whenever all dual occupancies are <= 1,
    which covers every single-dual-particle application).
    """
    w = 1.0
    for k in xi.values():
        w *= math.factorial(k)
    return w


def falling_factorial_duality(xi, config):
    """Product over sites of eta!/(eta - xi)!; the exactly dual pairing."""
    return dual_occupancy_weight(xi) * duality_function(xi, config)


def reversed_params(params):
    """Parameters of the dual walker: active jumps against the internal state."""
    if params.family != FAMILY_RTP:
        raise DomainError("the reversed dual walker is defined for run-and-tumble")
    layers = LayerSet(
        states=tuple(-s for s in params.states),
        switch_rates=params.layers.switch_rates,
    )
    return replace(params, layers=layers)


def simulate_dual_particle(start, params, t, rng_seed=0, n_sites=None):
    """One reversed walker from start = (site, layer_index) for time t."""
    rng = _as_rng(rng_seed)
    pos = np.array([start[0]], dtype=np.int64)
    lay = np.array([start[1]], dtype=np.int64)
    if t > 0:
        pos, lay = propagate_rtp_particles(
            pos, lay, t, params, rng, n_sites=n_sites, reverse=True
        )
    return int(pos[0]), int(lay[0])


def simulate_dual_particles(start, params, t, n_replicas, rng_seed=0, n_sites=None):
    """n_replicas independent reversed walkers from the same start."""
    rng = _as_rng(rng_seed)
    pos = np.full(n_replicas, start[0], dtype=np.int64)
    lay = np.full(n_replicas, start[1], dtype=np.int64)
    if t > 0:
        pos, lay = propagate_rtp_particles(
            pos, lay, t, params, rng, n_sites=n_sites, reverse=True
        )
    return pos, lay


def dual_moment_prediction(site, layer, t, params, lattice, profile, n_replicas=20_000, rng_seed=0):
    """Expected occupancy at (site, layer) at time t from a profile start.

    Monte Carlo over the reversed walker: the first moment of eta_t(x, s)
    started from the local-equilibrium product measure with the given
    profile equals the dual expectation of the profile.  Returns
    (estimate, standard_error).  Every sample is bounded by sup(profile),
    hence so is the estimate; this is asserted.
    """
    pos, lay = simulate_dual_particles(
        (site, layer), params, t, n_replicas, rng_seed, n_sites=lattice.n_sites
    )
    values = _profile_at(profile, pos, lay, lattice)
    sup = _profile_sup(profile, lattice, params.n_layers)
    assert np.all(values <= sup + 1e-12), "dual sample exceeded the profile bound"
    est = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n_replicas))
    return est, se


def _profile_at(profile, pos, lay, lattice):
    if callable(profile):
        xs = pos / lattice.scaling_n
        return np.array([profile(x, s) for x, s in zip(xs, lay)])
    values = profile.values
    length = profile.length
    m = values.shape[0]
    x = (pos / lattice.scaling_n) % length
    u = x / (length / m)
    j0 = np.floor(u).astype(int) % m
    frac = u - np.floor(u)
    j1 = (j0 + 1) % m
    return (1 - frac) * values[j0, lay] + frac * values[j1, lay]


def _profile_sup(profile, lattice, n_layers):
    if callable(profile):
        xs = lattice.site_positions()
        return max(profile(x, s) for x in xs for s in range(n_layers))
    return float(np.max(profile.values))


def enumerate_sector(n_cells, n_particles, cap=None):
    """All occupancy vectors with the given particle number (optionally capped).

    Returns (states, index): states is a list of tuples, index maps tuple to
    its position.  Refuses sectors larger than MAX_SECTOR_STATES.
    """
    size = math.comb(n_particles + n_cells - 1, n_cells - 1)
    if size > MAX_SECTOR_STATES:
        raise DomainError(
            f"sector too large: {size} states exceeds {MAX_SECTOR_STATES}"
        )
    states = []
    for combo in combinations_with_replacement(range(n_cells), n_particles):
        occ = [0] * n_cells
        for c in combo:
            occ[c] += 1
        if cap is not None and any(o > cap for o in occ):
            continue
        states.append(tuple(occ))
    states = sorted(set(states))
    index = {s: i for i, s in enumerate(states)}
    return states, index


def sector_generator(lattice, params, n_particles, reverse_active=False):
    """Dense generator of the particle-number sector of the master equation.

    Acts on functions f over sector states: (G f)(eta) =
    sum_moves rate * (f(eta') - f(eta)).  ``reverse_active`` builds the dual
    dynamics.
    """
    p = reversed_params(params) if reverse_active else params
    n_cells = lattice.n_sites * params.n_layers
    cap = params.alpha if params.is_sep else None
    states, index = enumerate_sector(n_cells, n_particles, cap=cap)
    nS = params.n_layers
    g = np.zeros((len(states), len(states)))
    for a, occ_flat in enumerate(states):
        occ = np.array(occ_flat, dtype=np.int64).reshape(lattice.n_sites, nS)
        for tr in enumerate_transitions(Configuration(occ), p, lattice):
            (x, i), (y, j) = tr.source, tr.target
            new = occ.copy()
            new[x, i] -= 1
            new[y, j] += 1
            b = index[tuple(new.reshape(-1))]
            g[a, b] += tr.rate
            g[a, a] -= tr.rate
    return g, states, index


def _as_flat_key(occ_map_or_config, lattice, n_layers):
    if isinstance(occ_map_or_config, Configuration):
        return tuple(occ_map_or_config.occ.reshape(-1))
    occ = np.zeros((lattice.n_sites, n_layers), dtype=np.int64)
    for (x, s), k in occ_map_or_config.items():
        occ[x, s] += k
    return tuple(occ.reshape(-1))


def check_duality_identity(lattice, params, xi, eta, t):
    """|LHS - RHS| of the duality identity via dense sector exponentials.

    xi: finitely supported dual map {(site, layer): count}; eta: a
    Configuration on the same small ring.  Both sides are evaluated by
    exponentiating the corresponding sector generators, with the
    falling-factorial pairing (normalised by weight(xi) so values reduce to
    the binomial ones whenever no dual site holds more than one particle;
    the plain binomial product is not conserved through states where dual
    particles stack).
    """
    if params.family != FAMILY_RTP:
        raise DomainError("dense duality checks cover the run-and-tumble family")
    nS = params.n_layers
    n_eta = eta.total_particles
    n_xi = sum(xi.values())
    if n_xi < 1:
        raise DomainError("need at least one dual particle")
    w0 = dual_occupancy_weight(xi)

    g_fwd, states_f, index_f = sector_generator(lattice, params, n_eta)
    f = np.array(
        [
            duality_function(xi, Configuration(np.array(s).reshape(lattice.n_sites, nS)))
            for s in states_f
        ]
    )
    lhs = scipy.linalg.expm(t * g_fwd).dot(f)[index_f[_as_flat_key(eta, lattice, nS)]]

    g_dual, states_d, index_d = sector_generator(lattice, params, n_xi, reverse_active=True)
    gvec = np.array(
        [
            falling_factorial_duality(_occ_tuple_to_map(s, lattice.n_sites, nS), eta) / w0
            for s in states_d
        ]
    )
    rhs = scipy.linalg.expm(t * g_dual).dot(gvec)[index_d[_as_flat_key(xi, lattice, nS)]]
    return abs(float(lhs) - float(rhs))


def _occ_tuple_to_map(occ_flat, n_sites, n_layers):
    occ = np.array(occ_flat).reshape(n_sites, n_layers)
    return {
        (x, s): int(occ[x, s])
        for x in range(n_sites)
        for s in range(n_layers)
        if occ[x, s] > 0
    }


def sector_stationary_residual(lattice, params, n_particles):
    """Norm of the stationary product law under the sector master equation.

    The dynamics conserve particle number, so the product measure
    conditioned on the sector is stationary: mu^T G = 0.  Returns the max
    absolute entry of mu^T G with mu normalised to sum one.
    """
    g, states, _ = sector_generator(lattice, params, n_particles)
    if params.is_sep:
        weights = np.array(
            [np.prod([math.comb(params.alpha, o) for o in s]) for s in states],
            dtype=float,
        )
    else:
        weights = np.array(
            [1.0 / np.prod([math.factorial(o) for o in s]) for s in states]
        )
    weights /= weights.sum()
    return float(np.max(np.abs(weights @ g)))
