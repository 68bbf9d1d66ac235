"""Fourier-side representation of the macroscopic operators on the torus.

Single source of truth for the transform conventions used everywhere in this
package (norms, noise scalings and covariance formulas all refer back here):

* grid points  x_j = j * ell / M,  j = 0..M-1,  M a power of two;
* wavenumbers  k_j = 2*pi*j / ell  (rfft half spectrum, j = 0..M/2);
* coefficients  phi_hat(k) = (1/M) * sum_j phi(x_j) exp(-i k x_j),  so that
  phi(x) = sum_k phi_hat(k) exp(+i k x)  and  d/dx  <->  multiplication by ik;
* Parseval  integral(phi*psi) dx = ell * sum_k phi_hat(k) * conj(psi_hat(k))
  for real phi, psi (sum over the full spectrum);
* H^{-1} seminorm  ||f||^2 = ell * sum_{k != 0} |f_hat(k)|^2 / k^2,  so a unit
  sine mode sin(kx) has ||.||^2 = (ell/2) / k^2.

Operators are per-wavenumber complex matrices of size n_layers x n_layers:

* ``generator``: drift-diffusion-switching operator of the rescaled
  run-and-tumble walker,  diag(-D k^2 + i sigma lambda k) + C  with C the
  switching-rate generator matrix;
* ``generator_adjoint``: same with the drift sign flipped (conjugate
  transpose of ``generator``);
* ``sep_generator``: self-adjoint exclusion analogue,
  diag(-D_sigma k^2) + alpha C;
* ``flip_form``: the nonnegative quadratic form -C of the switching noise;
* ``mobility``: diag(kappa_sigma).

The diffusivity D comes from ``ModelParams.diffusivity()`` and therefore
honours the microscopic/paper convention flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import DomainError, FAMILY_RTP, FAMILY_SEP

GENERATOR = "generator"
GENERATOR_ADJOINT = "generator_adjoint"
SEP_GENERATOR = "sep_generator"
FLIP_FORM = "flip_form"
MOBILITY = "mobility"

_KINDS = (GENERATOR, GENERATOR_ADJOINT, SEP_GENERATOR, FLIP_FORM, MOBILITY)


@dataclass
class GridFunction:
    """A real function on the torus sampled on a uniform grid, one column per layer."""

    values: np.ndarray
    length: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DomainError("values must be (n_points, n_layers)")
        m = v.shape[0]
        if m < 2 or (m & (m - 1)) != 0:
            raise DomainError("grid size must be a power of two")
        if not np.all(np.isfinite(v)):
            raise DomainError("values must be finite")
        if self.length <= 0:
            raise DomainError("length must be positive")
        self.values = v

    @property
    def n_points(self):
        return self.values.shape[0]

    @property
    def n_layers(self):
        return self.values.shape[1]

    @property
    def dx(self):
        return self.length / self.n_points

    def grid(self):
        return np.arange(self.n_points) * self.dx

    @classmethod
    def from_callable(cls, fn, length, n_points, n_layers=1):
        """Sample fn(x, layer_index) on the grid."""
        x = np.arange(n_points) * (length / n_points)
        vals = np.empty((n_points, n_layers))
        for i in range(n_layers):
            vals[:, i] = fn(x, i)
        return cls(vals, length)

    def copy(self):
        return GridFunction(self.values.copy(), self.length)

    def same_grid(self, other):
        return (
            self.n_points == other.n_points
            and self.n_layers == other.n_layers
            and abs(self.length - other.length) < 1e-12 * max(1.0, self.length)
        )

    def __add__(self, other):
        if not self.same_grid(other):
            raise DomainError("grid mismatch")
        return GridFunction(self.values + other.values, self.length)

    def __sub__(self, other):
        if not self.same_grid(other):
            raise DomainError("grid mismatch")
        return GridFunction(self.values - other.values, self.length)

    def __mul__(self, scalar):
        return GridFunction(self.values * float(scalar), self.length)

    __rmul__ = __mul__


def wavenumbers(length, n_points):
    """rfft wavenumbers k_j = 2*pi*j/ell, j = 0..M/2."""
    return 2.0 * np.pi * np.arange(n_points // 2 + 1) / length


def coefficients(values):
    """Half-spectrum Fourier coefficients phi_hat(k) = rfft/M along axis 0."""
    values = np.asarray(values)
    return np.fft.rfft(values, axis=0) / values.shape[0]


def synthesis(coeffs, n_points):
    """Inverse of ``coefficients``."""
    return np.fft.irfft(coeffs * n_points, n=n_points, axis=0)


def _half_spectrum_weights(n_points):
    """Multiplicity of each rfft mode in full-spectrum sums (2 except k=0, Nyquist)."""
    w = np.full(n_points // 2 + 1, 2.0)
    w[0] = 1.0
    if n_points % 2 == 0:
        w[-1] = 1.0
    return w


def switching_generator(layer_set):
    """The Markov generator matrix C of the internal-state chain."""
    c = layer_set.switch_rates.copy()
    np.fill_diagonal(c, -c.sum(axis=1))
    return c


def build_symbol(kind, params, k):
    """The n_layers x n_layers complex symbol of one operator at wavenumber k."""
    return build_symbols(kind, params, np.atleast_1d(float(k)))[0]


def build_symbols(kind, params, ks):
    """Stacked symbols, shape (len(ks), n_layers, n_layers)."""
    if kind not in _KINDS:
        raise DomainError(f"unknown operator kind {kind!r}")
    ks = np.asarray(ks, dtype=float)
    n = params.n_layers
    c_gen = switching_generator(params.layers)
    out = np.zeros((ks.size, n, n), dtype=complex)
    if kind == FLIP_FORM:
        out[:] = -c_gen
        return out
    if kind == MOBILITY:
        out[:] = np.diag(params.kappa_vec.astype(float))
        return out
    if kind == SEP_GENERATOR:
        if params.family != FAMILY_SEP:
            raise DomainError("sep_generator needs exclusion parameters")
        diff = params.diffusivity()
        out[:] = params.alpha * c_gen
        idx = np.arange(n)
        out[:, idx, idx] += -diff[None, :] * (ks**2)[:, None]
        return out
    if params.family != FAMILY_RTP:
        raise DomainError("generator/adjoint need run-and-tumble parameters")
    diff = params.diffusivity()
    sigma = np.asarray(params.states, dtype=float)
    drift_sign = 1.0 if kind == GENERATOR else -1.0
    out[:] = c_gen
    idx = np.arange(n)
    out[:, idx, idx] += (
        -diff[None, :] * (ks**2)[:, None]
        + drift_sign * 1j * params.lam * sigma[None, :] * ks[:, None]
    )
    return out


def limit_kind(params):
    """The kind of the single-particle limit generator for the family."""
    return SEP_GENERATOR if params.family == FAMILY_SEP else GENERATOR


def adjoint_kind(params):
    """The kind generating the hydrodynamic (forward) evolution."""
    return SEP_GENERATOR if params.family == FAMILY_SEP else GENERATOR_ADJOINT


def _expm_batch(mats, t):
    """exp(t*mats) for a stack of small matrices, eigendecomposition fast path."""
    n = mats.shape[-1]
    if n == 1:
        return np.exp(t * mats)
    w, v = np.linalg.eig(mats)
    cond = np.linalg.cond(v)
    out = np.einsum("mij,mj,mjk->mik", v, np.exp(t * w), np.linalg.inv(v))
    bad = ~np.isfinite(cond) | (cond > 1e10)
    if np.any(bad):
        for m in np.nonzero(bad)[0]:
            out[m] = scipy.linalg.expm(t * mats[m])
    return out


def semigroup_apply(kind, t, phi, params):
    """Apply exp(t * operator) to a grid function, mode by mode.

    Forward FFT per layer, multiply each mode vector by the exponential of
    t times the symbol, inverse FFT.  Output is real (conjugate symmetry is
    preserved exactly by the rfft representation).
    """
    if t < 0:
        raise DomainError("semigroup time must be >= 0")
    if phi.n_layers != params.n_layers:
        raise DomainError("layer count mismatch")
    ks = wavenumbers(phi.length, phi.n_points)
    coeff = coefficients(phi.values)
    mats = _expm_batch(build_symbols(kind, params, ks), t)
    new = np.einsum("mij,mj->mi", mats, coeff)
    return GridFunction(synthesis(new, phi.n_points), phi.length)


def apply_operator(kind, phi, params):
    """Apply the operator itself (the symbol, not its exponential)."""
    if phi.n_layers != params.n_layers:
        raise DomainError("layer count mismatch")
    ks = wavenumbers(phi.length, phi.n_points)
    coeff = coefficients(phi.values)
    mats = build_symbols(kind, params, ks)
    new = np.einsum("mij,mj->mi", mats, coeff)
    return GridFunction(synthesis(new, phi.n_points), phi.length)


def derivative(phi):
    """Spectral d/dx, applied per layer."""
    ks = wavenumbers(phi.length, phi.n_points)
    coeff = coefficients(phi.values) * (1j * ks)[:, None]
    if phi.n_points % 2 == 0:
        coeff[-1] = 0.0  # odd derivative of the real Nyquist mode
    return GridFunction(synthesis(coeff, phi.n_points), phi.length)


def inner_product(phi, psi):
    """Layer-summed L2 pairing sum_sigma integral(phi * psi) dx on the grid.

    Rectangle rule; exact for trigonometric polynomials below Nyquist.
    """
    if not phi.same_grid(psi):
        raise DomainError("grid mismatch")
    return float(np.sum(phi.values * psi.values) * phi.dx)


def h_minus1_norm_sq(f, length=None):
    """Squared H^{-1} seminorm of a mean-zero single-layer function.

    Accepts a single-layer GridFunction or a 1-d array plus ``length``.
    The zero mode has no preimage on the torus, so a nonzero spatial mean
    (beyond 1e-10 relative to the sup norm) is a domain error.
    """
    if isinstance(f, GridFunction):
        if f.n_layers != 1:
            raise DomainError("h_minus1_norm_sq takes a single-layer function")
        vals = f.values[:, 0]
        length = f.length
    else:
        vals = np.asarray(f, dtype=float)
        if length is None:
            raise DomainError("length required for array input")
    m = vals.shape[0]
    scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
    if abs(float(np.mean(vals))) > 1e-10 * scale:
        raise DomainError("function must have zero spatial mean")
    coeff = np.fft.rfft(vals) / m
    ks = wavenumbers(length, m)
    w = _half_spectrum_weights(m)
    return float(length * np.sum(w[1:] * np.abs(coeff[1:]) ** 2 / ks[1:] ** 2))


def l2_norm_sq(f, length=None):
    """Squared L2 norm of a single-layer function (grid rectangle rule)."""
    if isinstance(f, GridFunction):
        vals = f.values[:, 0]
        length = f.length
    else:
        vals = np.asarray(f, dtype=float)
    m = vals.shape[0]
    return float(np.sum(vals**2) * length / m)


def evaluate_at_positions(phi, xs):
    """Periodic linear interpolation of a grid function at arbitrary positions.

    Exact when the positions coincide with grid points (e.g. microscopic
    sites at matching resolution).  Returns (len(xs), n_layers).
    """
    xs = np.asarray(xs, dtype=float) % phi.length
    m = phi.n_points
    u = xs / phi.dx
    j0 = np.floor(u).astype(int) % m
    frac = (u - np.floor(u))[:, None]
    j1 = (j0 + 1) % m
    return (1 - frac) * phi.values[j0] + frac * phi.values[j1]
