"""Lattice gas state, parameters, sampling and exact transition enumeration.

Two model families live here:

* independent run-and-tumble walkers on a ring crossed with a finite set of
  internal states ("layers"): each particle hops left/right at rate kappa*N^2,
  makes an active jump of one site in the direction of its internal state at
  rate lambda*N, and switches internal state sigma -> sigma' at rate
  c(sigma, sigma').
* multi-layer symmetric exclusion with at most alpha particles per site:
  a particle at (x, sigma) hops to a neighbour y on the same layer at rate
  N^2 * kappa_sigma * eta(x,sigma) * (alpha - eta(y,sigma)) and switches layer
  at rate c(sigma,sigma') * eta(x,sigma) * (alpha - eta(x,sigma')).

All rates already carry their powers of the scaling parameter N, so the
simulation clock is macroscopic time.

The infinite lattice is replaced by a periodic ring of L = ell*N sites.  The
ring must be long enough that the diffusive support of the observables of
interest never wraps; ``Lattice.supports_time_horizon`` checks that.

Convention note: the second difference in the hop part of the generator
expands to kappa * d_xx (not kappa/2), so the macroscopic diffusivity used
throughout is D = kappa ("microscopic" convention).  A compatibility mode
with D = kappa/2 can be selected via ``ModelParams.convention`` for
comparison runs; only the microscopic value closes the fluctuation
-dissipation checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

FAMILY_RTP = "independent_rtp"
FAMILY_SEP = "multilayer_sep"

CONVENTION_MICRO = "microscopic"
CONVENTION_PAPER = "paper"

_FAMILIES = (FAMILY_RTP, FAMILY_SEP)
_CONVENTIONS = (CONVENTION_MICRO, CONVENTION_PAPER)


class DomainError(ValueError):
    """Raised when an argument lies outside the operation's domain."""


class TransitionError(RuntimeError):
    """Raised when a transition is applied to a state where it is illegal."""


@dataclass(frozen=True)
class LayerSet:
    """Ordered internal states and the symmetric switching-rate matrix.

    ``states`` are the integer internal states (e.g. (-1, 1)); the state value
    is the active-jump direction for run-and-tumble particles.
    ``switch_rates[i, j]`` is c(states[i], states[j]); it must be symmetric
    with zero diagonal and an irreducible positive-rate graph.
    """

    states: tuple
    switch_rates: np.ndarray

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        object.__setattr__(self, "states", states)
        c = np.asarray(self.switch_rates, dtype=float)
        n = len(states)
        if len(set(states)) != n or n == 0:
            raise DomainError("states must be distinct and non-empty")
        if c.shape != (n, n):
            raise DomainError(f"switch_rates must be {n}x{n}")
        if np.any(c < 0):
            raise DomainError("switch rates must be nonnegative")
        if np.any(np.abs(np.diag(c)) > 0):
            raise DomainError("switch_rates diagonal must be zero")
        if not np.allclose(c, c.T, rtol=0, atol=1e-12):
            raise DomainError("switch rates must be symmetric")
        if n > 1 and not _connected(c):
            raise DomainError("positive switch rates must form a connected graph")
        c = 0.5 * (c + c.T)  # enforce exact symmetry
        c.setflags(write=False)
        object.__setattr__(self, "switch_rates", c)

    @property
    def n_layers(self):
        return len(self.states)

    @property
    def exit_rates(self):
        """Total switching rate out of each state."""
        return self.switch_rates.sum(axis=1)

    @classmethod
    def two_state(cls, gamma):
        """The standard two-layer set S = (-1, +1) with symmetric rate gamma."""
        return cls(states=(-1, 1), switch_rates=np.array([[0.0, gamma], [gamma, 0.0]]))


def _connected(c):
    n = c.shape[0]
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(n):
            if j not in seen and c[i, j] > 0:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


@dataclass(frozen=True)
class ModelParams:
    """All rate constants plus the scaling parameter for one model family.

    For the run-and-tumble family, ``kappa`` is the scalar diffusion rate and
    ``lam`` the activity rate.  For exclusion, ``kappa`` may be a scalar or a
    per-layer sequence kappa_sigma, ``alpha`` is the maximal occupancy, and
    ``rho`` is the Bernoulli parameter p of the Binomial(alpha, p) marginal.
    """

    family: str
    kappa: object
    layers: LayerSet
    scaling_n: int
    rho: float
    lam: float = 0.0
    alpha: int = 1
    convention: str = CONVENTION_MICRO

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.convention not in _CONVENTIONS:
            raise DomainError(f"unknown convention {self.convention!r}")
        if self.scaling_n < 1:
            raise DomainError("scaling_n must be >= 1")
        kv = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        if kv.size == 1:
            kv = np.full(self.layers.n_layers, float(kv[0]))
        if kv.size != self.layers.n_layers:
            raise DomainError("kappa must be scalar or one value per layer")
        kv.setflags(write=False)
        object.__setattr__(self, "_kappa_vec", kv)
        if self.family == FAMILY_RTP:
            if np.any(kv < 0) or np.ptp(kv) != 0:
                raise DomainError("run-and-tumble kappa is a single nonnegative rate")
            if self.lam < 0:
                raise DomainError("lambda must be >= 0")
            if self.rho < 0:
                raise DomainError("rho must be >= 0 for the Poisson family")
        else:
            if np.any(kv <= 0):
                raise DomainError("exclusion requires kappa_sigma > 0")
            if self.alpha < 1:
                raise DomainError("alpha must be >= 1")
            if not 0.0 < self.rho < 1.0:
                raise DomainError("exclusion rho must lie in (0, 1)")

    @property
    def n_layers(self):
        return self.layers.n_layers

    @property
    def states(self):
        return self.layers.states

    @property
    def kappa_vec(self):
        """Per-layer hop rate constants (equal entries for run-and-tumble)."""
        return self._kappa_vec

    @property
    def is_sep(self):
        return self.family == FAMILY_SEP

    def diffusivity(self):
        """Macroscopic diffusivity per layer under the active convention.

        Microscopic convention: D = kappa (RTP), D_sigma = alpha*kappa_sigma
        (SEP).  The compatibility mode halves both.
        """
        base = self._kappa_vec * (self.alpha if self.is_sep else 1.0)
        if self.convention == CONVENTION_PAPER:
            return 0.5 * base
        return base.copy()

    @property
    def centering(self):
        """Mean occupancy of the stationary product marginal."""
        return self.alpha * self.rho if self.is_sep else self.rho

    @property
    def chi(self):
        """Exact per-site variance of the stationary product marginal."""
        if self.is_sep:
            return self.alpha * self.rho * (1.0 - self.rho)
        return self.rho

    @property
    def chi_quadratic(self):
        """The rho*(alpha - rho) quadratic form quoted for exclusion.

        Coincides with ``chi`` at alpha = 1; reported alongside for
        comparison at alpha > 1 where the two differ.
        """
        if self.is_sep:
            return self.rho * (self.alpha - self.rho)
        return self.rho

    def with_convention(self, convention):
        return replace(self, convention=convention)


@dataclass(frozen=True)
class Lattice:
    """Periodic ring of ``n_sites`` microscopic sites at scaling N.

    The macroscopic circumference is ell = n_sites / N.  ``n_sites`` must be a
    multiple of N; unless ``allow_small`` is set it must also be at least 4N
    so that compactly supported macroscopic test functions fit without wrap
    effects.  Dense-oracle checks on tiny closed rings set ``allow_small``.
    """

    n_sites: int
    scaling_n: int
    allow_small: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.n_sites < 1 or self.scaling_n < 1:
            raise DomainError("n_sites and scaling_n must be positive")
        if self.n_sites % self.scaling_n != 0:
            raise DomainError("n_sites must be a multiple of scaling_n")
        if not self.allow_small and self.n_sites < 4 * self.scaling_n:
            raise DomainError("need n_sites >= 4*scaling_n for field pairings")

    @property
    def length(self):
        """Macroscopic circumference ell."""
        return self.n_sites / self.scaling_n

    def site_positions(self):
        """Macroscopic positions x/N of the microscopic sites."""
        return np.arange(self.n_sites) / self.scaling_n

    def supports_time_horizon(self, params, t_max):
        """True if the diffusive support stays below a quarter ring up to t_max.

        Effective support radius: sqrt(2*kappa*t)*N + lambda*N*t microscopic
        sites around a point mass.
        """
        n = self.scaling_n
        kap = float(np.max(params.kappa_vec)) * (params.alpha if params.is_sep else 1.0)
        lam = params.lam if not params.is_sep else 0.0
        radius = math.sqrt(2.0 * kap * t_max) * n + lam * n * t_max
        return radius < self.n_sites / 4.0


@dataclass
class Configuration:
    """Occupation numbers eta(x, sigma) on the ring, one column per layer."""

    occ: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occ)
        if occ.ndim != 2:
            raise DomainError("occ must be (n_sites, n_layers)")
        if np.any(occ < 0):
            raise DomainError("occupancies must be nonnegative")
        self.occ = occ.astype(np.int64)

    @property
    def n_sites(self):
        return self.occ.shape[0]

    @property
    def n_layers(self):
        return self.occ.shape[1]

    @property
    def total_particles(self):
        return int(self.occ.sum())

    def copy(self):
        return Configuration(self.occ.copy())

    def validate(self, params):
        if params.is_sep and np.any(self.occ > params.alpha):
            raise DomainError("occupancy exceeds alpha")
        if self.n_layers != params.n_layers:
            raise DomainError("layer count mismatch")


HOP_LEFT = "hop_left"
HOP_RIGHT = "hop_right"
ACTIVE_JUMP = "active_jump"
FLIP = "flip"


@dataclass(frozen=True)
class Transition:
    """A single particle move (x, sigma_i) -> (y, sigma_j) with its rate.

    Layer coordinates are indices into ``LayerSet.states``.
    """

    kind: str
    source: tuple
    target: tuple
    rate: float


def sample_product_measure(params, lattice, profile=None, rng_seed=0):
    """Draw a configuration from the stationary (or local-equilibrium) product law.

    Poisson(rho) per site and layer for run-and-tumble, Binomial(alpha, p)
    for exclusion.  ``profile`` optionally modulates the parameter with the
    macroscopic position: the value at site x, layer i is profile evaluated
    at (x/N, layer i).  Accepts a GridFunction, a callable f(x, layer_index),
    or an (n_sites, n_layers) array of per-site parameters.

    ``rng_seed`` may be an integer seed or a numpy Generator; draws are
    reproducible given the seed.
    """
    rng = np.random.default_rng(rng_seed) if not isinstance(rng_seed, np.random.Generator) else rng_seed
    shape = (lattice.n_sites, params.n_layers)
    if profile is None:
        mean = np.full(shape, params.rho)
    else:
        mean = _profile_on_sites(profile, lattice, params.n_layers)
    if np.any(mean < 0):
        raise DomainError("profile must be nonnegative")
    if params.is_sep:
        if np.any(mean > 1.0):
            raise DomainError("exclusion profile is a Binomial parameter in [0, 1]")
        occ = rng.binomial(params.alpha, mean)
    else:
        occ = rng.poisson(mean)
    return Configuration(occ)


def _profile_on_sites(profile, lattice, n_layers):
    """Evaluate a macroscopic profile at the microscopic site positions."""
    xs = lattice.site_positions()
    if callable(profile):
        out = np.empty((lattice.n_sites, n_layers))
        for i in range(n_layers):
            out[:, i] = [profile(x, i) for x in xs]
        return out
    values = getattr(profile, "values", None)
    if values is not None:  # GridFunction: periodic linear interpolation
        length = profile.length
        m = values.shape[0]
        if values.shape[1] != n_layers:
            raise DomainError("profile layer count mismatch")
        pos = (xs % length) / (length / m)
        j0 = np.floor(pos).astype(int) % m
        frac = pos - np.floor(pos)
        j1 = (j0 + 1) % m
        return (1 - frac)[:, None] * values[j0] + frac[:, None] * values[j1]
    arr = np.asarray(profile, dtype=float)
    if arr.shape != (lattice.n_sites, n_layers):
        raise DomainError("array profile must be (n_sites, n_layers)")
    return arr


def enumerate_transitions(config, params, lattice):
    """List every transition with positive rate out of ``config``.

    The sum of the returned rates is the total holding rate of the
    configuration.  Empty configurations yield an empty list.
    """
    config.validate(params)
    occ = config.occ
    L = lattice.n_sites
    n = params.scaling_n
    c = params.layers.switch_rates
    states = params.states
    out = []
    sites, layers = np.nonzero(occ)
    if params.is_sep:
        hop_pref = float(n) ** 2 * params.kappa_vec
        alpha = params.alpha
        for x, i in zip(sites.tolist(), layers.tolist()):
            h = int(occ[x, i])
            for kind, y in ((HOP_LEFT, (x - 1) % L), (HOP_RIGHT, (x + 1) % L)):
                r = hop_pref[i] * h * (alpha - occ[y, i])
                if r > 0:
                    out.append(Transition(kind, (x, i), (y, i), float(r)))
            for j in range(params.n_layers):
                if j == i:
                    continue
                r = c[i, j] * h * (alpha - occ[x, j])
                if r > 0:
                    out.append(Transition(FLIP, (x, i), (x, j), float(r)))
    else:
        kap = float(params.kappa_vec[0])
        hop = kap * n * n
        act = params.lam * n
        for x, i in zip(sites.tolist(), layers.tolist()):
            h = int(occ[x, i])
            if hop > 0:
                out.append(Transition(HOP_LEFT, (x, i), ((x - 1) % L, i), hop * h))
                out.append(Transition(HOP_RIGHT, (x, i), ((x + 1) % L, i), hop * h))
            if act > 0:
                y = (x + states[i]) % L
                out.append(Transition(ACTIVE_JUMP, (x, i), (y, i), act * h))
            for j in range(params.n_layers):
                if j != i and c[i, j] > 0:
                    out.append(Transition(FLIP, (x, i), (x, j), float(c[i, j] * h)))
    return out


def total_rate(config, params, lattice):
    """Total holding rate, without materialising the transition list."""
    occ = config.occ
    n = params.scaling_n
    if params.is_sep:
        alpha = params.alpha
        r = 0.0
        for i in range(params.n_layers):
            col = occ[:, i]
            gaps = (alpha - np.roll(col, 1)) + (alpha - np.roll(col, -1))
            r += float(n) ** 2 * params.kappa_vec[i] * float(np.dot(col, gaps))
        c = params.layers.switch_rates
        for i in range(params.n_layers):
            for j in range(params.n_layers):
                if i != j:
                    r += c[i, j] * float(np.dot(occ[:, i], alpha - occ[:, j]))
        return r
    per_particle = 2.0 * params.kappa_vec[0] * n * n + params.lam * n
    exit_rates = params.layers.exit_rates
    return float(per_particle * occ.sum() + np.dot(occ.sum(axis=0), exit_rates))


def apply_transition(config, transition, params=None):
    """Return the configuration with one particle moved along ``transition``.

    Raises TransitionError if the source is empty or (for exclusion) the
    target is full; an illegal move is never silently ignored.
    """
    occ = config.occ
    (x, i), (y, j) = transition.source, transition.target
    if occ[x, i] <= 0:
        raise TransitionError(f"no particle at {transition.source}")
    if params is not None and params.is_sep and occ[y, j] >= params.alpha:
        raise TransitionError(f"target {transition.target} already at alpha")
    new = occ.copy()
    new[x, i] -= 1
    new[y, j] += 1
    return Configuration(new)
