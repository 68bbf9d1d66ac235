"""Spectral Galerkin simulation of the limiting Gaussian field equations.

The stationary fluctuation field solves a linear SPDE whose drift is the
adjoint single-particle limit generator and whose noise has a conservative
part from particle transport and a switching part from internal-state
flips.  Per wavenumber k the noise covariance rate is

    N(k) = 2 chi (kappa k^2 I + Sigma)            (run-and-tumble)
    N(k) = 2 chi alpha (diag(kappa_sigma) k^2 + Sigma)   (exclusion)

with Sigma the switching quadratic form and chi the per-site variance of
the stationary marginal.  Stationarity of spatial white noise with variance
chi is the per-mode Lyapunov balance  A*(k) Q + Q A*(k)^H + N(k) = 0 with
Q = chi I, which holds exactly under the microscopic diffusivity convention
(``lyapunov_residual`` is the regression check for that choice).

Mode normalisation (see ``spectral`` for the transform conventions): a real
field with coefficient vectors Yhat(k) pairs with a test function as
Y(phi) = ell * sum_k Yhat(k) . conj(phihat(k)), and spatial white noise with
variance chi has per-mode covariance (chi/ell) I.  All simulation here uses
exact one-step OU updates (no Euler bias); modes evolve independently.

For two layers the sum Z and difference R of the layer fields satisfy a
coupled system; with kappa = 0 the sum field obeys the second-order-in-time
equation  Z_tt + 2 gamma Z_t - lambda^2 Z_xx = -lambda dx(R-noise),  whose
discrete residual statistics ``total_density_second_order_check`` verifies
(the damping sign and the noise rate follow from the (Z, R) system; see the
stationary covariance oracle in the same function).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ou
from .model import DomainError, FAMILY_RTP
from .spectral import (
    GridFunction,
    adjoint_kind,
    build_symbols,
    coefficients,
    switching_generator,
    wavenumbers,
)


def mode_wavenumbers(length, n_modes):
    """k_j = 2*pi*j/length for j = 0..n_modes."""
    return 2.0 * np.pi * np.arange(n_modes + 1) / length


def noise_matrices(params, ks):
    """Per-mode noise covariance rates N(k), stacked (len(ks), nS, nS)."""
    ks = np.asarray(ks, dtype=float)
    sig = -switching_generator(params.layers)
    n = params.n_layers
    out = np.empty((ks.size, n, n))
    if params.is_sep:
        mobility = np.diag(params.kappa_vec.astype(float))
        pref = 2.0 * params.chi * params.alpha
        for i, k in enumerate(ks):
            out[i] = pref * (mobility * k**2 + sig)
    else:
        kap = float(params.kappa_vec[0])
        pref = 2.0 * params.chi
        eye = np.eye(n)
        for i, k in enumerate(ks):
            out[i] = pref * (kap * k**2 * eye + sig)
    return out


def drift_matrices(params, ks):
    """Per-mode drift: the adjoint limit generator symbols."""
    return build_symbols(adjoint_kind(params), params, np.asarray(ks, dtype=float))


def lyapunov_residual(params, length, n_modes):
    """max_k || A*(k) (chi I) + (chi I) A*(k)^H + N(k) ||_max.

    Zero (to rounding) exactly under the microscopic convention; order chi
    under the printed-coefficient compatibility convention.
    """
    ks = mode_wavenumbers(length, n_modes)[1:]
    drifts = drift_matrices(params, ks)
    noises = noise_matrices(params, ks)
    q = params.chi * np.eye(params.n_layers)
    res = drifts @ q + q @ drifts.conj().transpose(0, 2, 1) + noises
    return float(np.max(np.abs(res)))


@dataclass
class ModeEnsemble:
    """Complex mode coefficients of real fields: shape (R, n_modes+1, nS).

    Row j holds Yhat(k_j); the negative half spectrum is implied by
    conjugate symmetry.  The j = 0 row is kept exactly real.
    """

    modes: np.ndarray
    length: float

    @property
    def n_modes(self):
        return self.modes.shape[1] - 1


def stationary_modes(chi, length, n_modes, n_layers, n_replicas, rng):
    """Sample the stationary spatial-white-noise law, per-mode cov (chi/ell) I."""
    scale = math.sqrt(chi / length)
    modes = np.empty((n_replicas, n_modes + 1, n_layers), dtype=complex)
    modes[:, 0, :] = scale * rng.standard_normal((n_replicas, n_layers))
    z = rng.standard_normal((n_replicas, n_modes, n_layers)) + 1j * rng.standard_normal(
        (n_replicas, n_modes, n_layers)
    )
    modes[:, 1:, :] = scale * z / math.sqrt(2.0)
    return modes


def _mode_step_factors(drifts, noises, dt, length):
    """Exact per-mode (propagator, noise factor) pairs; noise rate scaled 1/ell."""
    factors = []
    for a, q in zip(drifts, noises):
        factors.append(ou.step_matrices(a, q / length, dt))
    return factors


def _advance(modes, factors, rng):
    """One exact OU step for every mode; j = 0 is real-sampled."""
    e0, g0 = factors[0]
    real0 = np.real(modes[:, 0, :]) @ np.real(e0).T + ou.sample_real(g0, (modes.shape[0],), rng)
    modes[:, 0, :] = real0
    for j in range(1, modes.shape[1]):
        e, g = factors[j]
        modes[:, j, :] = modes[:, j, :] @ e.T + ou.sample_complex(g, (modes.shape[0],), rng)


def simulate_ou_field(params, length, n_modes, t_grid, n_replicas=1, rng_seed=0):
    """Stationary-start trajectories of the limiting field, exact per mode.

    Returns an array (n_replicas, len(t_grid), n_modes+1, n_layers) of mode
    coefficients at the uniform grid times (t_grid[0] may be 0 for the
    initial state).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise DomainError("t_grid must be strictly increasing")
    steps = np.diff(t_grid, prepend=0.0)
    dt_set = {round(float(d), 15) for d in steps if d > 0}
    rng = np.random.default_rng(rng_seed)
    ks = mode_wavenumbers(length, n_modes)
    drifts = drift_matrices(params, ks)
    noises = noise_matrices(params, ks)
    factors_by_dt = {d: _mode_step_factors(drifts, noises, d, length) for d in dt_set}
    modes = stationary_modes(params.chi, length, n_modes, params.n_layers, n_replicas, rng)
    out = np.empty((n_replicas, t_grid.size, n_modes + 1, params.n_layers), dtype=complex)
    for j, d in enumerate(steps):
        if d > 0:
            _advance(modes, factors_by_dt[round(float(d), 15)], rng)
        out[:, j] = modes
    return out


def pair_modes(mode_states, phi):
    """Field pairing Y(phi) from mode coefficients; phi a GridFunction.

    mode_states: (..., n_modes+1, nS).  Uses the half-spectrum doubling and
    the ell Parseval factor.
    """
    co = coefficients(phi.values)
    n_modes = mode_states.shape[-2] - 1
    if n_modes + 1 > co.shape[0]:
        raise DomainError("test function grid too coarse for the mode count")
    weights = np.full(n_modes + 1, 2.0)
    weights[0] = 1.0
    prod = mode_states * np.conj(co[: n_modes + 1])
    return phi.length * np.real(np.einsum("...ms,m->...", prod, weights))


def estimate_ou_covariance(params, phi, psi, t, n_replicas, n_modes, rng_seed):
    """Monte Carlo covariance of Y_t(phi), Y_0(psi) from the mode simulation.

    Stationary initialisation and a single exact step to t.  Returns
    (mean, std_error).
    """
    if t < 0:
        raise DomainError("t must be >= 0")
    rng = np.random.default_rng(rng_seed)
    length = phi.length
    modes = stationary_modes(params.chi, length, n_modes, params.n_layers, n_replicas, rng)
    y0 = pair_modes(modes, psi)
    if t > 0:
        ks = mode_wavenumbers(length, n_modes)
        factors = _mode_step_factors(
            drift_matrices(params, ks), noise_matrices(params, ks), float(t), length
        )
        _advance(modes, factors, rng)
    yt = pair_modes(modes, phi)
    du = yt - yt.mean()
    dv = y0 - y0.mean()
    prod = du * dv
    mean = float(prod.sum() / (n_replicas - 1))
    se = float(prod.std(ddof=1) / math.sqrt(n_replicas))
    return mean, se


def sum_difference_matrices(params, ks):
    """Per-mode drift and noise rate of the two-layer (sum, difference) system.

    Derived from the layer system by the linear change of variables
    Z = Y_+ + Y_-, R = Y_+ - Y_-: drift [[-D k^2, -i lam k], [-i lam k,
    -D k^2 - 2 gamma]], independent noises of rates 4 kappa chi k^2 on Z and
    4 kappa chi k^2 + 8 gamma chi on R (the switching noise enters R only).
    """
    from .hydro import closed_equation_coefficients

    d, gamma, lam = closed_equation_coefficients(params)
    if params.family != FAMILY_RTP:
        raise DomainError("sum/difference reduction implemented for run-and-tumble")
    kap = float(params.kappa_vec[0])
    chi = params.chi
    ks = np.asarray(ks, dtype=float)
    drifts = np.zeros((ks.size, 2, 2), dtype=complex)
    noises = np.zeros((ks.size, 2, 2))
    drifts[:, 0, 0] = -d * ks**2
    drifts[:, 1, 1] = -d * ks**2 - 2.0 * gamma
    drifts[:, 0, 1] = -1j * lam * ks
    drifts[:, 1, 0] = -1j * lam * ks
    noises[:, 0, 0] = 4.0 * kap * chi * ks**2
    noises[:, 1, 1] = 4.0 * kap * chi * ks**2 + 8.0 * gamma * chi
    return drifts, noises


def simulate_sum_difference(params, length, n_modes, t_grid, n_replicas=1, rng_seed=0):
    """Trajectories of the (Z, R) mode pair; same layout as simulate_ou_field.

    Output component 0 is Zhat, component 1 is Rhat.  Stationary start with
    per-mode covariance (2 chi / ell) I (the stationary variance of both the
    sum and the difference of two independent chi-variance white noises).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise DomainError("t_grid must be strictly increasing")
    steps = np.diff(t_grid, prepend=0.0)
    dt_set = {round(float(d), 15) for d in steps if d > 0}
    rng = np.random.default_rng(rng_seed)
    ks = mode_wavenumbers(length, n_modes)
    drifts, noises = sum_difference_matrices(params, ks)
    factors_by_dt = {d: _mode_step_factors(drifts, noises, d, length) for d in dt_set}
    modes = stationary_modes(2.0 * params.chi, length, n_modes, 2, n_replicas, rng)
    out = np.empty((n_replicas, t_grid.size, n_modes + 1, 2), dtype=complex)
    for j, d in enumerate(steps):
        if d > 0:
            _advance(modes, factors_by_dt[round(float(d), 15)], rng)
        out[:, j] = modes
    return out


def second_order_residual_weights(k, gamma, lam, dt):
    """Stencil weights of Z_tt + 2 gamma Z_t + lam^2 k^2 Z on three points."""
    return np.array(
        [1.0 / dt**2 - gamma / dt, -2.0 / dt**2 + lam**2 * k**2, 1.0 / dt**2 + gamma / dt]
    )


def _stationary_mode_covariance_fn(drift, q_inf):
    """C(tau) = E[X(t+tau) X(t)^H] = exp(drift*tau) Q_inf for tau >= 0."""
    import scipy.linalg

    def cov(tau):
        if tau >= 0:
            return scipy.linalg.expm(drift * tau) @ q_inf
        return (scipy.linalg.expm(drift * (-tau)) @ q_inf).conj().T

    return cov


def total_density_second_order_check(z_traj, params, length, dt, max_lag=4):
    """Residual statistics of the closed second-order equation at kappa = 0.

    z_traj: (R, n_times, n_modes+1) complex Zhat trajectories on a uniform
    grid of spacing dt (from ``simulate_sum_difference`` component 0, run
    with kappa = 0).  For each mode k > 0 the three-point residual

        r_j = (Z_{j+1} - 2 Z_j + Z_{j-1})/dt^2 + 2 gamma (Z_{j+1} -
              Z_{j-1})/(2 dt) + lam^2 k^2 Z_j

    estimates -lam dx applied to the difference-field noise, which is white
    in time: lag >= 2 autocorrelations vanish and the variance approaches
    (2/3) * v_k / dt with v_k = 8 lam^2 gamma chi k^2 / ell (the 2/3 is the
    double integration of white noise across the central stencil).  The
    exact finite-dt variance from the stationary covariance of the (Z, R)
    system is reported as the oracle.

    Returns a list of per-mode dicts.
    """
    from .hydro import closed_equation_coefficients

    d, gamma, lam = closed_equation_coefficients(params)
    if abs(d) > 1e-14:
        raise DomainError("second-order residual check requires kappa = 0")
    chi = params.chi
    n_times = z_traj.shape[1]
    if n_times < 5:
        raise DomainError("need at least 5 time samples")
    ks = mode_wavenumbers(length, z_traj.shape[2] - 1)
    reports = []
    for j in range(1, z_traj.shape[2]):
        k = ks[j]
        z = z_traj[:, :, j]
        w = second_order_residual_weights(k, gamma, lam, dt)
        r = w[0] * z[:, :-2] + w[1] * z[:, 1:-1] + w[2] * z[:, 2:]
        flat = r.reshape(-1)
        var = float(np.mean(np.abs(flat) ** 2))
        n_eff = flat.size
        # lagged correlations across the time axis, replica-averaged
        corrs = []
        for lag in range(1, max_lag + 1):
            a = r[:, :-lag].reshape(-1)
            b = r[:, lag:].reshape(-1)
            c = np.mean(np.real(a * np.conj(b))) / var if var > 0 else 0.0
            corrs.append(float(c))
        v_k = 8.0 * lam**2 * gamma * chi * k**2 / length
        # exact oracle from the stationary (Z, R) covariance
        drift = np.array(
            [[0.0, -1j * lam * k], [-1j * lam * k, -2.0 * gamma]], dtype=complex
        )
        q_inf = (2.0 * chi / length) * np.eye(2)
        cov = _stationary_mode_covariance_fn(drift, q_inf)
        exact = 0.0
        for a_i, w_i in enumerate(w):
            for b_i, w_b in enumerate(w):
                exact += w_i * w_b * cov((a_i - b_i) * dt)[0, 0]
        reports.append(
            {
                "k": float(k),
                "variance": var,
                "variance_se": var * math.sqrt(2.0 / n_eff),
                "asymptotic_variance": (2.0 / 3.0) * v_k / dt,
                "exact_variance": float(np.real(exact)),
                "autocorr": corrs,
                "autocorr_se": 1.0 / math.sqrt(n_eff),
            }
        )
    return reports
