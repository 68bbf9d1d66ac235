"""Exact one-step updates for small linear SDE systems dX = A X dt + noise.

Over a step dt the update is X <- exp(A dt) X + xi with xi Gaussian of
covariance C(dt) = int_0^dt exp(As) Q exp(A^H s) ds, Q the noise covariance
rate.  C is computed in closed form, by the eigendecomposition of A when it
is well conditioned and by the Van Loan block-exponential otherwise, so
there is no time-step bias anywhere downstream.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


def integrated_noise_covariance(drift, noise_rate, dt):
    """C(dt) = int_0^dt exp(s*drift) noise_rate exp(s*drift)^H ds, exactly."""
    a = np.asarray(drift, dtype=complex)
    q = np.asarray(noise_rate, dtype=complex)
    n = a.shape[0]
    try:
        w, v = np.linalg.eig(a)
        cond = np.linalg.cond(v)
    except np.linalg.LinAlgError:
        cond = np.inf
    if np.isfinite(cond) and cond < 1e8:
        vinv = np.linalg.inv(v)
        m = vinv @ q @ vinv.conj().T
        z = w[:, None] + w[None, :].conj()
        g = np.where(np.abs(z) * dt > 1e-8, np.expm1(z * dt) / np.where(z == 0, 1.0, z), dt * (1.0 + z * dt / 2.0))
        c = v @ (m * g) @ v.conj().T
    else:  # Van Loan block exponential
        h = np.zeros((2 * n, 2 * n), dtype=complex)
        h[:n, :n] = -a
        h[:n, n:] = q
        h[n:, n:] = a.conj().T
        f = scipy.linalg.expm(h * dt)
        c = f[n:, n:].conj().T @ f[:n, n:]
    return 0.5 * (c + c.conj().T)


def factor_psd(c, name="covariance"):
    """G with G G^H = c for Hermitian PSD c; tiny negative eigenvalues floored.

    Eigenvalues below -1e-12 (relative) are clipped and logged rather than
    allowed to poison the square root.
    """
    c = np.asarray(c)
    w, u = np.linalg.eigh(c)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if np.min(w) < -1e-12 * scale:
        log.warning("%s not PSD: min eigenvalue %g (scale %g); flooring", name, np.min(w), scale)
    w = np.maximum(w, 0.0)
    return u * np.sqrt(w)[None, :]


def step_matrices(drift, noise_rate, dt):
    """(E, G): one-step propagator and noise factor for the exact update."""
    e = scipy.linalg.expm(np.asarray(drift, dtype=complex) * dt)
    g = factor_psd(integrated_noise_covariance(drift, noise_rate, dt))
    return e, g


def sample_complex(g, shape, rng):
    """Proper (circular) complex Gaussian with covariance G G^H per row."""
    z = rng.standard_normal(shape + (g.shape[1],)) + 1j * rng.standard_normal(
        shape + (g.shape[1],)
    )
    return z @ g.T / np.sqrt(2.0)


def sample_real(g, shape, rng):
    """Real Gaussian with covariance Re(G G^H) per row (for real modes)."""
    gr = np.real(g)
    z = rng.standard_normal(shape + (gr.shape[1],))
    return z @ gr.T
