"""Numba hot loops for bulk exclusion simulation and martingale accumulation.

The exclusion kernels advance whole observation windows at a time using
uniformization: a Poisson number of clock ticks at a constant bounding rate,
each tick proposing one move and accepting it with probability
rate/bound.  This reproduces the continuous-time law exactly at the window
ends.  For alpha = 1 the hop part needs no acceptance test at all: symmetric
exclusion is the stirring process, so every hop tick swaps the contents of a
uniformly chosen edge.

Each replica re-seeds numba's thread-local legacy RNG at the start of its
loop iteration, which makes results independent of the number of threads and
of the scheduling order.

Positions use explicit wrap arithmetic so ring sizes need not be powers of
two.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True)
def seed_kernel_rng(seed):
    """Seed numba's legacy RNG state for the calling thread.

    Pure-Python np.random.seed does not touch the state the jitted kernels
    draw from, so single-trajectory callers must seed through this helper.
    """
    np.random.seed(seed)


@njit(cache=True)
def _binomial_fill(occ, p_cell, alpha):
    """occ[x,s] ~ Binomial(alpha, p_cell[x,s]) via summed Bernoulli draws."""
    L, nS = occ.shape
    for x in range(L):
        for s in range(nS):
            o = 0
            for _ in range(alpha):
                if np.random.random() < p_cell[x, s]:
                    o += 1
            occ[x, s] = o


@njit(cache=True)
def sep_stir_window(occ, dt, edge_rates, c_mat, cmax):
    """Advance an alpha = 1 exclusion configuration by dt.  Returns moves done.

    edge_rates[s] = N^2 * kappa_s, the per-unordered-edge swap rate on layer s.
    cmax must bound sum_{s'} c(s, s') * (alpha - occ) for every s; alpha = 1 so
    cmax = max_s sum_{s'} c(s, s') works.  One uniform drives each tick: the
    branch, the edge (or cell) choice and the flip acceptance reuse disjoint
    digits of the same draw.  Uniforms are generated in blocks; scalar RNG
    calls dominate the tick cost otherwise.
    """
    L, nS = occ.shape
    r_swap = 0.0
    for s in range(nS):
        r_swap += edge_rates[s] * L
    r_flip = cmax * L * nS
    rtot = r_swap + r_flip
    if rtot <= 0.0 or dt <= 0.0:
        return 0
    p_swap = r_swap / rtot
    inv_p_swap_times_rswap = rtot  # z = u/p_swap*r_swap == u*rtot
    inv_edge = np.empty(nS)
    block_end = np.empty(nS)
    acc = 0.0
    for s in range(nS):
        inv_edge[s] = 1.0 / edge_rates[s] if edge_rates[s] > 0 else 0.0
        acc += edge_rates[s] * L
        block_end[s] = acc
    flip_scale = (L * nS) / (1.0 - p_swap) if r_flip > 0.0 else 0.0
    K = np.random.poisson(rtot * dt)
    moves = 0
    done = 0
    while done < K:
        n_block = K - done
        if n_block > 16384:
            n_block = 16384
        buf = np.random.random(n_block)
        for b in range(n_block):
            u = buf[b]
            if u < p_swap:
                z = u * inv_p_swap_times_rswap
                s = 0
                while z >= block_end[s]:
                    s += 1
                if s > 0:
                    z -= block_end[s - 1]
                x = int(z * inv_edge[s])
                if x >= L:
                    x = L - 1
                xr = x + 1
                if xr == L:
                    xr = 0
                a = occ[x, s]
                c = occ[xr, s]
                if a != c:
                    occ[x, s] = c
                    occ[xr, s] = a
                    moves += 1
            elif r_flip > 0.0:
                z = (u - p_swap) * flip_scale
                cell = int(z)
                if cell >= L * nS:
                    cell = L * nS - 1
                frac = z - cell
                x = cell // nS
                s = cell - x * nS
                if occ[x, s] == 0:
                    continue
                v = frac * cmax
                for s2 in range(nS):
                    if s2 == s:
                        continue
                    rc = c_mat[s, s2] * (1 - occ[x, s2])
                    if v < rc:
                        occ[x, s] = 0
                        occ[x, s2] = 1
                        moves += 1
                        break
                    v -= rc
        done += n_block
    return moves


@njit(cache=True)
def sep_thin_window(occ, dt, hop_pref, c_mat, alpha, cflip_max):
    """General-alpha exclusion window update by cell thinning.  Returns moves.

    hop_pref[s] = N^2 * kappa_s.  Cell bound: hop_pref*alpha*2*alpha plus
    cflip_max*alpha*alpha with cflip_max = max_s sum_{s'} c(s,s').
    """
    L, nS = occ.shape
    ncell = L * nS
    cell_max = 0.0
    for s in range(nS):
        m = hop_pref[s] * alpha * 2.0 * alpha + cflip_max * alpha * alpha
        if m > cell_max:
            cell_max = m
    rbar = cell_max * ncell
    if rbar <= 0.0 or dt <= 0.0:
        return 0
    K = np.random.poisson(rbar * dt)
    moves = 0
    for _ in range(K):
        z = np.random.random() * ncell
        cell = int(z)
        if cell >= ncell:
            cell = ncell - 1
        frac = z - cell
        x = cell // nS
        s = cell - x * nS
        h = occ[x, s]
        if h == 0:
            continue
        xl = x - 1 if x > 0 else L - 1
        xr = x + 1 if x < L - 1 else 0
        v = frac * cell_max
        rl = hop_pref[s] * h * (alpha - occ[xl, s])
        if v < rl:
            occ[x, s] = h - 1
            occ[xl, s] += 1
            moves += 1
            continue
        v -= rl
        rr = hop_pref[s] * h * (alpha - occ[xr, s])
        if v < rr:
            occ[x, s] = h - 1
            occ[xr, s] += 1
            moves += 1
            continue
        v -= rr
        for s2 in range(nS):
            if s2 == s:
                continue
            rc = c_mat[s, s2] * h * (alpha - occ[x, s2])
            if v < rc:
                occ[x, s] = h - 1
                occ[x, s2] += 1
                moves += 1
                break
            v -= rc
    return moves


@njit(cache=True)
def _sep_replica(seed, L, nS, p_cell, alpha, edge_rates, c_mat, cmax, times, snap):
    np.random.seed(seed)
    occ = np.zeros((L, nS), dtype=np.int64)
    _binomial_fill(occ, p_cell, alpha)
    moves = 0
    tprev = 0.0
    for j in range(times.shape[0]):
        if alpha == 1:
            moves += sep_stir_window(occ, times[j] - tprev, edge_rates, c_mat, cmax)
        else:
            moves += sep_thin_window(occ, times[j] - tprev, edge_rates, c_mat, alpha, cmax)
        tprev = times[j]
        for x in range(L):
            for s in range(nS):
                snap[j, x, s] = occ[x, s]
    return moves


@njit(cache=True, parallel=True)
def sep_ensemble(seeds, L, nS, p_cell, alpha, edge_rates, c_mat, cmax, times, snaps, moves):
    """Independent exclusion replicas; snapshot at each requested time.

    snaps: (R, n_times, L, nS) int16 output.  times must include t = 0
    explicitly if the initial state is wanted (a zero-length first window
    is a no-op).
    """
    R = seeds.shape[0]
    for r in prange(R):
        moves[r] = _sep_replica(
            seeds[r], L, nS, p_cell, alpha, edge_rates, c_mat, cmax, times, snaps[r]
        )


@njit(cache=True)
def _rtp_particle_martingale(x0, s0, t_final, L, hop, act, c_mat, exit_rates, states, lphi, phi):
    """One run-and-tumble walker: exact event stream and compensator integral.

    Returns (phi(end) - phi(start) - integral of (lattice generator phi)
    along the path, final x, final s).
    """
    nS = c_mat.shape[0]
    x = x0
    s = s0
    t = 0.0
    integ = 0.0
    while True:
        rate = 2.0 * hop + act + exit_rates[s]
        if rate <= 0.0:
            integ += lphi[x, s] * (t_final - t)
            break
        dt = -np.log(np.random.random()) / rate
        if t + dt >= t_final:
            integ += lphi[x, s] * (t_final - t)
            break
        integ += lphi[x, s] * dt
        t += dt
        v = np.random.random() * rate
        if v < hop:
            x = x - 1 if x > 0 else L - 1
        elif v < 2.0 * hop:
            x = x + 1 if x < L - 1 else 0
        elif v < 2.0 * hop + act:
            x = (x + states[s]) % L
        else:
            v -= 2.0 * hop + act
            for s2 in range(nS):
                if s2 == s:
                    continue
                if v < c_mat[s, s2]:
                    s = s2
                    break
                v -= c_mat[s, s2]
    return phi[x, s] - phi[x0, s0] - integ, x, s


@njit(cache=True, parallel=True)
def rtp_martingale_ensemble(
    seeds, L, nS, rho, t_final, hop, act, c_mat, exit_rates, states, lphi, phi, sqrt_n, out
):
    """Per replica: sample Poisson(rho) initial occupancies, accumulate the
    compensated field increment M_t = Y_t - Y_0 - integral, exactly between
    events.  out[r] = M_t for replica r."""
    R = seeds.shape[0]
    for r in prange(R):
        np.random.seed(seeds[r])
        acc = 0.0
        for x0 in range(L):
            for s0 in range(nS):
                n_here = np.random.poisson(rho)
                for _ in range(n_here):
                    m, _, _ = _rtp_particle_martingale(
                        x0, s0, t_final, L, hop, act, c_mat, exit_rates, states, lphi, phi
                    )
                    acc += m
        out[r] = acc / sqrt_n
