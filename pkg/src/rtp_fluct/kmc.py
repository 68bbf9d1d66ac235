"""Exact continuous-time simulation of the lattice dynamics.

Three complementary drivers, all exact in law at the requested observation
times:

* ``gillespie_step`` / ``simulate_gillespie``: classical event-by-event
  simulation.  Exclusion configurations of any size are advanced by the
  numba window kernels (uniformization / stirring, see ``_kernels``);
  run-and-tumble configurations use a plain Python event loop, which is
  meant for small closed systems (the scalable route for independent
  particles is ``simulate_independent``).
* ``simulate_independent``: independent walkers advanced window by window.
  Each particle's internal-state history over a window is simulated
  exactly; conditional on the time spent in each state, the hop and
  active-jump counts are Poisson, so the displacement is drawn exactly
  without touching individual hop events.
* replica ensembles (``rtp_snapshot_ensemble``, ``sep_snapshot_ensemble``):
  bulk versions used by the statistical experiments, vectorized across
  replicas, with one deterministically derived seed per replica so that
  results do not depend on worker or thread counts.

The simulation clock is macroscopic time; all rates already carry their
powers of N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import (
    Configuration,
    DomainError,
    FAMILY_RTP,
    enumerate_transitions,
    apply_transition,
    sample_product_measure,
    _profile_on_sites,
)


@dataclass
class TrajectoryRecord:
    """Snapshots of one trajectory at sorted observation times."""

    times: list
    snapshots: list
    seed: object = None
    n_events: int = 0
    observables: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = list(self.times)
        if any(t < 0 for t in ts) or any(b < a for a, b in zip(ts, ts[1:])):
            raise DomainError("observation times must be sorted and >= 0")


class RateTree:
    """Fenwick tree over nonnegative rates: O(log n) update and sampling."""

    def __init__(self, n):
        self.n = n
        self._tree = np.zeros(n + 1)
        self._rates = np.zeros(n)

    @property
    def total(self):
        return float(self._rates.sum()) if self.n < 64 else self._prefix(self.n)

    def _prefix(self, i):
        s = 0.0
        while i > 0:
            s += self._tree[i]
            i -= i & (-i)
        return float(s)

    def update(self, i, rate):
        if rate < 0:
            raise DomainError("rates must be nonnegative")
        delta = rate - self._rates[i]
        self._rates[i] = rate
        i += 1
        while i <= self.n:
            self._tree[i] += delta
            i += i & (-i)

    def rate(self, i):
        return float(self._rates[i])

    def sample(self, u):
        """Smallest index whose prefix sum exceeds u (u in [0, total))."""
        idx = 0
        mask = 1
        while (mask << 1) <= self.n:
            mask <<= 1
        while mask:
            nxt = idx + mask
            if nxt <= self.n and self._tree[nxt] <= u:
                idx = nxt
                u -= self._tree[nxt]
            mask >>= 1
        return idx


def _as_rng(rng_seed):
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def gillespie_step(config, params, lattice, rng):
    """One exact event: returns (new configuration, holding time).

    A configuration with zero total rate is absorbed: the input is returned
    unchanged with dt = inf (no division by zero).
    """
    transitions = enumerate_transitions(config, params, lattice)
    if not transitions:
        return config, math.inf
    rates = np.array([tr.rate for tr in transitions])
    total = float(rates.sum())
    if total <= 0:
        return config, math.inf
    dt = rng.exponential(1.0 / total)
    j = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    j = min(j, len(transitions) - 1)
    return apply_transition(config, transitions[j], params), dt


def _moves_and_rates(occ, params, L):
    """Lean transition enumeration used by the Python event loop."""
    moves = []
    rates = []
    c = params.layers.switch_rates
    states = params.states
    n = params.scaling_n
    sites, layers = np.nonzero(occ)
    if params.is_sep:
        alpha = params.alpha
        for x, i in zip(sites.tolist(), layers.tolist()):
            h = int(occ[x, i])
            for y in ((x - 1) % L, (x + 1) % L):
                r = n * n * params.kappa_vec[i] * h * (alpha - occ[y, i])
                if r > 0:
                    moves.append((x, i, y, i))
                    rates.append(r)
            for j in range(params.n_layers):
                if j != i:
                    r = c[i, j] * h * (alpha - occ[x, j])
                    if r > 0:
                        moves.append((x, i, x, j))
                        rates.append(r)
    else:
        hop = params.kappa_vec[0] * n * n
        act = params.lam * n
        for x, i in zip(sites.tolist(), layers.tolist()):
            h = int(occ[x, i])
            if hop > 0:
                moves.append((x, i, (x - 1) % L, i))
                rates.append(hop * h)
                moves.append((x, i, (x + 1) % L, i))
                rates.append(hop * h)
            if act > 0:
                moves.append((x, i, (x + states[i]) % L, i))
                rates.append(act * h)
            for j in range(params.n_layers):
                if j != i and c[i, j] > 0:
                    moves.append((x, i, x, j))
                    rates.append(c[i, j] * h)
    return moves, np.asarray(rates)


def _gillespie_python(occ, params, L, t_from, t_to, rng):
    """Advance occ in place from t_from to t_to, event by event.  Returns events."""
    t = t_from
    n_events = 0
    while True:
        moves, rates = _moves_and_rates(occ, params, L)
        if len(moves) == 0:
            return n_events
        total = float(rates.sum())
        dt = rng.exponential(1.0 / total)
        if t + dt >= t_to:
            return n_events
        t += dt
        j = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
        j = min(j, len(moves) - 1)
        x, i, y, jl = moves[j]
        occ[x, i] -= 1
        occ[y, jl] += 1
        n_events += 1


def _sep_kernel_args(params):
    edge_rates = (params.scaling_n**2) * params.kappa_vec.astype(float)
    c_mat = params.layers.switch_rates.astype(float)
    # per-unit-occupancy flip bound; the kernels scale it by alpha as needed
    cmax = float(np.max(params.layers.exit_rates)) if params.n_layers > 1 else 0.0
    return edge_rates, c_mat, cmax


def simulate_gillespie(config0, params, lattice, t_final, observe_times=None, rng_seed=0):
    """Exact trajectory of the configuration process, observed at given times.

    The state is carried across event epochs and snapshotted at each
    requested time; t_final = 0 records the initial snapshot only.
    """
    rng = _as_rng(rng_seed)
    config0.validate(params)
    times = _check_times(observe_times, t_final)
    occ = config0.occ.copy()
    L = lattice.n_sites
    snaps = []
    n_events = 0
    tprev = 0.0
    if params.is_sep:
        edge_rates, c_mat, cmax = _sep_kernel_args(params)
        for t in times:
            seed = int(rng.integers(0, 2**31 - 1))
            dt = t - tprev
            if dt > 0:
                occ_i64 = occ.astype(np.int64)
                _kernels.seed_kernel_rng(seed)
                if params.alpha == 1:
                    n_events += _kernels.sep_stir_window(occ_i64, dt, edge_rates, c_mat, cmax)
                else:
                    n_events += _kernels.sep_thin_window(
                        occ_i64, dt, edge_rates, c_mat, params.alpha, cmax
                    )
                occ = occ_i64
            tprev = t
            snaps.append(Configuration(occ.copy()))
    else:
        for t in times:
            n_events += _gillespie_python(occ, params, L, tprev, t, rng)
            tprev = t
            snaps.append(Configuration(occ.copy()))
    return TrajectoryRecord(list(times), snaps, seed=rng_seed, n_events=n_events)


def _check_times(observe_times, t_final):
    if t_final < 0:
        raise DomainError("t_final must be >= 0")
    if observe_times is None:
        times = [float(t_final)]
    else:
        times = [float(t) for t in observe_times]
    if any(t < 0 or t > t_final + 1e-12 for t in times):
        raise DomainError("observation times must lie in [0, t_final]")
    if any(b < a for a, b in zip(times, times[1:])):
        raise DomainError("observation times must be sorted")
    return times


def layer_occupation_times(lay, tau, layers, rng):
    """Simulate the internal-state chains of independent walkers over windows tau.

    Returns (occupation_times, final_layers): occupation_times[p, i] is the
    time particle p spent in layer i during its window, exact in law.
    """
    c = layers.switch_rates
    exit_rates = layers.exit_rates
    n_layers = layers.n_layers
    P = lay.shape[0]
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (P,)).copy()
    occ_t = np.zeros((P, n_layers))
    rem = tau.copy()
    cur = lay.astype(np.int64).copy()
    idx = np.arange(P)
    cum_probs = np.cumsum(c, axis=1)
    with np.errstate(divide="ignore"):
        inv_exit = np.where(exit_rates > 0, 1.0 / np.maximum(exit_rates, 1e-300), np.inf)
    while True:
        act = rem > 0
        if not np.any(act):
            break
        ii = idx[act]
        ci = cur[ii]
        draw = rng.standard_exponential(ii.size) * inv_exit[ci]
        step = np.minimum(draw, rem[ii])
        occ_t[ii, ci] += step
        rem[ii] -= step
        flip = draw < rem[ii] + step  # strictly inside the window
        flip &= np.isfinite(draw)
        jj = ii[flip]
        if jj.size:
            cj = cur[jj]
            u = rng.random(jj.size) * exit_rates[cj]
            cur[jj] = (u[:, None] < cum_probs[cj]).argmax(axis=1)
        rem[ii[~flip]] = 0.0
    return occ_t, cur


def propagate_rtp_particles(pos, lay, tau, params, rng, n_sites=None, reverse=False):
    """Advance independent run-and-tumble walkers by windows tau, exactly.

    pos/lay are modified copies returned as (pos, lay).  Conditional on the
    per-layer occupation times the hop count in each direction and the
    active-jump count per layer are Poisson; only their net effect on the
    position is drawn.  ``reverse`` runs the time-reversed walk (active
    jumps against the internal state).  Positions wrap modulo n_sites when
    given, else live on the integers.
    """
    if params.family != FAMILY_RTP:
        raise DomainError("independent propagation applies to run-and-tumble only")
    P = pos.shape[0]
    occ_t, lay_new = layer_occupation_times(lay, tau, params.layers, rng)
    n = params.scaling_n
    tau_tot = occ_t.sum(axis=1)
    hops = params.kappa_vec[0] * n * n * tau_tot
    disp = np.zeros(P, dtype=np.int64)
    if params.kappa_vec[0] > 0:
        disp += rng.poisson(hops) - rng.poisson(hops)
    if params.lam > 0:
        sgn = -1 if reverse else 1
        for i, s in enumerate(params.states):
            lam_i = params.lam * n * occ_t[:, i]
            disp += sgn * s * rng.poisson(lam_i)
    pos_new = pos + disp
    if n_sites is not None:
        pos_new %= n_sites
    return pos_new, lay_new


def _particles_from_occ(occ):
    sites, layers = np.nonzero(occ)
    counts = occ[sites, layers]
    pos = np.repeat(sites, counts).astype(np.int64)
    lay = np.repeat(layers, counts).astype(np.int64)
    return pos, lay


def _occ_from_particles(pos, lay, L, n_layers):
    flat = np.bincount(pos * n_layers + lay, minlength=L * n_layers)
    return flat.reshape(L, n_layers)


def simulate_independent(config0, params, lattice, t_final, observe_times=None, rng_seed=0):
    """Independent-particle trajectory, observed at given times.

    Equal in law to ``simulate_gillespie`` at the observation times; within a
    window each particle's flips are simulated exactly and the hop/jump
    counts are aggregated (the particles never interact).
    """
    if params.family != FAMILY_RTP:
        raise DomainError("simulate_independent applies to run-and-tumble only")
    rng = _as_rng(rng_seed)
    times = _check_times(observe_times, t_final)
    L = lattice.n_sites
    pos, lay = _particles_from_occ(config0.occ)
    snaps = []
    tprev = 0.0
    for t in times:
        if t > tprev:
            pos, lay = propagate_rtp_particles(pos, lay, t - tprev, params, rng, n_sites=L)
        tprev = t
        snaps.append(Configuration(_occ_from_particles(pos, lay, L, params.n_layers)))
    return TrajectoryRecord(list(times), snaps, seed=rng_seed)


def replica_seeds(rng_seed, n):
    """Deterministic per-replica seeds; aggregation order never matters."""
    return np.random.SeedSequence(rng_seed).generate_state(n).astype(np.int64)


def rtp_snapshot_ensemble(
    params, lattice, times, n_replicas, rng_seed, profile=None, chunk=None
):
    """Snapshots of independent replicas at the given times.

    Returns an int16 array (n_replicas, n_times, n_sites, n_layers).  Each
    replica draws its initial configuration from the product measure (with
    optional profile) and is propagated exactly.  Replicas are vectorized in
    chunks; the result depends only on (rng_seed, n_replicas).
    """
    if params.family != FAMILY_RTP:
        raise DomainError("rtp ensemble applies to run-and-tumble only")
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise DomainError("times must be sorted and >= 0")
    L = lattice.n_sites
    nS = params.n_layers
    mean = (
        np.full((L, nS), params.rho)
        if profile is None
        else _profile_on_sites(profile, lattice, nS)
    )
    if np.any(mean < 0):
        raise DomainError("profile must be nonnegative")
    seeds = replica_seeds(rng_seed, n_replicas)
    out = np.empty((n_replicas, len(times), L, nS), dtype=np.int16)
    if chunk is None:
        chunk = max(1, int(2e6 / max(1.0, mean.sum())))
    for lo in range(0, n_replicas, chunk):
        hi = min(lo + chunk, n_replicas)
        _rtp_chunk(params, L, mean, times, seeds[lo:hi], out[lo:hi])
    return out


def _rtp_chunk(params, L, mean, times, seeds, out):
    R = seeds.shape[0]
    nS = params.n_layers
    # one generator per replica for the initial draw, then a merged stream
    # for propagation; everything is derived from the per-replica seeds.
    counts = np.empty((R, L, nS), dtype=np.int64)
    for r in range(R):
        counts[r] = np.random.default_rng(int(seeds[r])).poisson(mean)
    flat = counts.reshape(-1)
    nz = np.nonzero(flat)[0]
    reps = np.repeat(nz, flat[nz])
    rep_id = reps // (L * nS)
    pos = (reps % (L * nS)) // nS
    lay = reps % nS
    rng = np.random.default_rng(np.random.SeedSequence([int(seeds[0]), R, 0xA5]))
    tprev = 0.0
    for j, t in enumerate(times):
        if t > tprev:
            pos, lay = propagate_rtp_particles(pos, lay, t - tprev, params, rng, n_sites=L)
        tprev = t
        occ = np.bincount(
            (rep_id * L + pos) * nS + lay, minlength=R * L * nS
        ).reshape(R, L, nS)
        out[:, j] = occ.astype(np.int16)


def sep_snapshot_ensemble(params, lattice, times, n_replicas, rng_seed, profile=None):
    """Exclusion replicas via the numba window kernels.

    Returns (snaps, moves): snaps is int16 (n_replicas, n_times, n_sites,
    n_layers), moves the accepted-event count per replica.  Deterministic in
    (rng_seed, n_replicas) regardless of thread count.
    """
    if not params.is_sep:
        raise DomainError("sep ensemble needs exclusion parameters")
    times_arr = np.asarray([float(t) for t in times])
    if np.any(np.diff(times_arr) < 0) or (times_arr.size and times_arr[0] < 0):
        raise DomainError("times must be sorted and >= 0")
    L = lattice.n_sites
    nS = params.n_layers
    p_cell = (
        np.full((L, nS), params.rho)
        if profile is None
        else _profile_on_sites(profile, lattice, nS)
    )
    if np.any(p_cell < 0) or np.any(p_cell > 1):
        raise DomainError("exclusion profile must lie in [0, 1]")
    edge_rates, c_mat, cmax = _sep_kernel_args(params)
    seeds = (replica_seeds(rng_seed, n_replicas) % (2**31 - 1)).astype(np.int64)
    snaps = np.empty((n_replicas, times_arr.size, L, nS), dtype=np.int16)
    moves = np.zeros(n_replicas, dtype=np.int64)
    _kernels.sep_ensemble(
        seeds, L, nS, p_cell, params.alpha, edge_rates, c_mat, cmax, times_arr, snaps, moves
    )
    return snaps, moves


def stationary_configuration(params, lattice, rng_seed=0):
    """Convenience: one draw from the stationary product measure."""
    return sample_product_measure(params, lattice, rng_seed=rng_seed)
