"""Hierarchical binomial-logit model of shooting sessions.

Each session records ``hits`` out of 5 shots.  On the log-odds scale,

    eta = mu[t] + beta[s, t] + gamma[s, x] + omega[s, z]

for stage ``t``, athlete ``s``, position ``x`` and race type ``z``.  The
stage baseline ``mu`` and every athlete's ``beta`` trajectory follow
Gaussian random walks over stages (first element anchored at a 0 mean), so
form persists smoothly between stages.  ``gamma`` and ``omega`` are iid
normal athlete effects.

Identifiability comes from hard sum-to-zero reparameterizations: athlete
``S``'s beta trajectory is the negative column sum of the ``S-1`` free
trajectories, each athlete's standing effect is the negative of the prone
effect, and the last race-type effect is the negative row sum.  The free
coordinate vector is therefore

    mu[T], beta_free[(S-1) x T], gamma_free[S], omega_free[S x (Z-1)],
    log_sigma[4]

where the four scale parameters (one per effect class) carry half-normal
priors on the standard-deviation scale, sampled as logs with the
change-of-variables term included.  All densities keep their normalization
constants so scale comparisons are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .data import Dataset, RACE_TYPES, SHOTS_PER_BOUT, SessionRecord
from .errors import DataError

LN2 = float(np.log(2.0))
LN2PI = float(np.log(2.0 * np.pi))
# ln C(5, y) for y = 0..5
_LOG_CHOOSE = np.log(np.array([1.0, 5.0, 10.0, 10.0, 5.0, 1.0]))

SIGMA_NAMES = ("mu", "beta", "gamma", "omega")


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions and prior scale of one model instance.

    S athletes, T stages, Z race types (indices into the first Z entries of
    ``data.RACE_TYPES``).  ``sigma_scale`` is the half-normal scale on each
    of the four effect-class standard deviations.  ``mu_only`` clamps every
    effect but the stage baseline (and fixes its random-walk sd at 1.0),
    leaving T free coordinates — the reduced shape used by the quadrature
    oracle.
    """

    S: int
    T: int
    Z: int = 4
    sigma_scale: float = 1.0
    mu_only: bool = False

    def __post_init__(self):
        # DataError because degenerate shapes normally arrive via a dataset
        # (a single-athlete file has no identifiable relative effects)
        if self.S < 2:
            raise DataError(f"S must be >= 2, got {self.S}")
        if self.T < 1:
            raise DataError(f"T must be >= 1, got {self.T}")
        if not 2 <= self.Z <= len(RACE_TYPES):
            raise DataError(f"Z must be in 2..{len(RACE_TYPES)}, got {self.Z}")
        if self.sigma_scale <= 0:
            raise DataError("sigma_scale must be positive")

    @classmethod
    def for_dataset(cls, d: Dataset, Z: int = 4, sigma_scale: float = 1.0) -> "ModelSpec":
        return cls(S=d.n_athletes, T=d.n_stages, Z=Z, sigma_scale=sigma_scale)

    @property
    def n_mu(self) -> int:
        return self.T

    @property
    def n_beta(self) -> int:
        return 0 if self.mu_only else (self.S - 1) * self.T

    @property
    def n_gamma(self) -> int:
        return 0 if self.mu_only else self.S

    @property
    def n_omega(self) -> int:
        return 0 if self.mu_only else self.S * (self.Z - 1)

    @property
    def n_sigma(self) -> int:
        return 0 if self.mu_only else 4

    @property
    def dim(self) -> int:
        return self.n_mu + self.n_beta + self.n_gamma + self.n_omega + self.n_sigma


@dataclass(eq=False)
class ParameterState:
    """One point in the free-coordinate space (see module docstring)."""

    mu: np.ndarray
    beta_free: np.ndarray
    gamma_free: np.ndarray
    omega_free: np.ndarray
    log_sigma: np.ndarray

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ParameterState":
        return cls(
            mu=np.zeros(spec.T),
            beta_free=np.zeros((spec.S - 1, spec.T)),
            gamma_free=np.zeros(spec.S),
            omega_free=np.zeros((spec.S, spec.Z - 1)),
            log_sigma=np.zeros(4),
        )

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.mu.copy(),
            self.beta_free.copy(),
            self.gamma_free.copy(),
            self.omega_free.copy(),
            self.log_sigma.copy(),
        )


class Effects(NamedTuple):
    """Constrained effect arrays produced by :func:`expand`."""

    mu: np.ndarray      # (T,)
    beta: np.ndarray    # (S, T), columns sum to 0
    gamma: np.ndarray   # (S, 2), rows sum to 0
    omega: np.ndarray   # (S, Z), rows sum to 0
    sigma: np.ndarray   # (4,) positive


def _check_state(p: ParameterState, spec: ModelSpec):
    shapes = {
        "mu": (p.mu.shape, (spec.T,)),
        "beta_free": (p.beta_free.shape, (spec.S - 1, spec.T)),
        "gamma_free": (p.gamma_free.shape, (spec.S,)),
        "omega_free": (p.omega_free.shape, (spec.S, spec.Z - 1)),
        "log_sigma": (p.log_sigma.shape, (4,)),
    }
    for name, (got, want) in shapes.items():
        if got != want:
            raise DataError(f"{name} has shape {got}, expected {want}")


def expand(p: ParameterState, spec: ModelSpec) -> Effects:
    """Expand free coordinates to the constrained effect arrays.

    The sum-to-zero identities hold exactly by construction.
    """
    _check_state(p, spec)
    beta = np.vstack([p.beta_free, -p.beta_free.sum(axis=0, keepdims=True)])
    gamma = np.stack([p.gamma_free, -p.gamma_free], axis=1)
    omega = np.hstack([p.omega_free, -p.omega_free.sum(axis=1, keepdims=True)])
    return Effects(p.mu, beta, gamma, omega, np.exp(p.log_sigma))


def _check_indices(d: Dataset, spec: ModelSpec):
    a = d.arrays
    if len(a.athlete) == 0:
        return a
    if a.athlete.max() >= spec.S:
        raise DataError(f"athlete index {a.athlete.max()} out of range for S={spec.S}")
    if a.stage0.max() >= spec.T:
        raise DataError(f"stage {a.stage0.max() + 1} out of range for T={spec.T}")
    if a.race.max() >= spec.Z:
        raise DataError(
            f"race type {RACE_TYPES[a.race.max()]!r} out of range for Z={spec.Z}"
        )
    return a


def linear_predictors(p: ParameterState, d: Dataset, spec: ModelSpec) -> np.ndarray:
    """Log-odds eta for every record in the dataset, in record order."""
    a = _check_indices(d, spec)
    eff = expand(p, spec)
    return (
        eff.mu[a.stage0]
        + eff.beta[a.athlete, a.stage0]
        + eff.gamma[a.athlete, a.position]
        + eff.omega[a.athlete, a.race]
    )


def linear_predictor(p: ParameterState, r: SessionRecord, d: Dataset, spec: ModelSpec) -> float:
    """Log-odds for a single record (athlete resolved through the dataset)."""
    if r.athlete not in d.athlete_index:
        raise DataError(f"athlete {r.athlete!r} not in dataset")
    s = d.athlete_index[r.athlete]
    t = r.stage - 1
    x = 0 if r.position == "prone" else 1
    z = RACE_TYPES.index(r.race_type)
    if s >= spec.S or t >= spec.T or z >= spec.Z:
        raise DataError("record indices out of range for model spec")
    eff = expand(p, spec)
    return float(eff.mu[t] + eff.beta[s, t] + eff.gamma[s, x] + eff.omega[s, z])


def bout_log_likelihoods(hits: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Per-bout Binomial(5, expit(eta)) log-pmf, stable for any finite eta."""
    # ln C(5,y) + y*eta - 5*ln(1 + e^eta); never materializes p near 0/1
    return _LOG_CHOOSE[hits] + hits * eta - SHOTS_PER_BOUT * np.logaddexp(0.0, eta)


def log_likelihood(p: ParameterState, d: Dataset, spec: ModelSpec) -> float:
    eta = linear_predictors(p, d, spec)
    return float(np.sum(bout_log_likelihoods(d.arrays.hits, eta)))


def _rw_ss(x: np.ndarray) -> float:
    """Sum of squared random-walk increments along the last axis, with the
    first element anchored at mean 0."""
    first = x[..., 0]
    return float(np.sum(first * first) + np.sum(np.diff(x, axis=-1) ** 2))


def _gauss_class_logp(n: int, ss: float, v: float) -> float:
    # n iid N(0, e^v) increments with total sum of squares ss
    return -0.5 * n * LN2PI - n * v - 0.5 * ss * np.exp(-2.0 * v)


def _halfnormal_log_logp(v: float, c: float) -> float:
    # half-normal(c) density of sigma = e^v, plus the log-scale Jacobian e^v
    return LN2 - 0.5 * LN2PI - np.log(c) - np.exp(2.0 * v) / (2.0 * c * c) + v


def log_prior(p: ParameterState, spec: ModelSpec) -> float:
    """Joint log prior over the free coordinates (normalized)."""
    _check_state(p, spec)
    if spec.mu_only:
        return _gauss_class_logp(spec.T, _rw_ss(p.mu), 0.0)
    v = p.log_sigma
    total = _gauss_class_logp(spec.T, _rw_ss(p.mu), v[0])
    total += _gauss_class_logp((spec.S - 1) * spec.T, _rw_ss(p.beta_free), v[1])
    total += _gauss_class_logp(spec.S, float(np.sum(p.gamma_free**2)), v[2])
    total += _gauss_class_logp(spec.S * (spec.Z - 1), float(np.sum(p.omega_free**2)), v[3])
    for k in range(4):
        total += _halfnormal_log_logp(v[k], spec.sigma_scale)
    return float(total)


def log_posterior(p: ParameterState, d: Dataset, spec: ModelSpec) -> float:
    return log_likelihood(p, d, spec) + log_prior(p, spec)


def _rw_grad(x: np.ndarray, sd: float) -> np.ndarray:
    """Gradient of the random-walk log density along the last axis."""
    diff = np.empty_like(x)
    diff[..., 0] = x[..., 0]
    diff[..., 1:] = x[..., 1:] - x[..., :-1]
    g = -diff / sd**2
    g[..., :-1] += diff[..., 1:] / sd**2
    return g


def grad_log_posterior(p: ParameterState, d: Dataset, spec: ModelSpec) -> np.ndarray:
    """Exact gradient with respect to the free coordinates.

    The likelihood term per bout is (hits - 5 p) on eta; constraint
    expansion propagates a -1 through athlete S's trajectory, the standing
    position, and the last race type.
    """
    _check_state(p, spec)
    a = _check_indices(d, spec)
    eta = linear_predictors(p, d, spec)
    resid = a.hits - SHOTS_PER_BOUT * expit(eta)

    S, T, Z = spec.S, spec.T, spec.Z
    stage_resid = np.zeros((S, T))
    np.add.at(stage_resid, (a.athlete, a.stage0), resid)

    if spec.mu_only:
        return stage_resid.sum(axis=0) + _rw_grad(p.mu, 1.0)

    sigma = np.exp(p.log_sigma)
    g_mu = stage_resid.sum(axis=0) + _rw_grad(p.mu, sigma[0])
    g_beta = (stage_resid[: S - 1] - stage_resid[S - 1]) + _rw_grad(p.beta_free, sigma[1])

    possign = 1.0 - 2.0 * a.position  # prone +1, standing -1
    g_gamma = np.zeros(S)
    np.add.at(g_gamma, a.athlete, resid * possign)
    g_gamma -= p.gamma_free / sigma[2] ** 2

    race_resid = np.zeros((S, Z))
    np.add.at(race_resid, (a.athlete, a.race), resid)
    g_omega = (race_resid[:, : Z - 1] - race_resid[:, Z - 1][:, None]) - (
        p.omega_free / sigma[3] ** 2
    )

    v = p.log_sigma
    c = spec.sigma_scale
    ns = (T, (S - 1) * T, S, S * (Z - 1))
    sss = (
        _rw_ss(p.mu),
        _rw_ss(p.beta_free),
        float(np.sum(p.gamma_free**2)),
        float(np.sum(p.omega_free**2)),
    )
    g_sigma = np.array(
        [
            -n + ss * np.exp(-2.0 * v[k]) - np.exp(2.0 * v[k]) / c**2 + 1.0
            for k, (n, ss) in enumerate(zip(ns, sss))
        ]
    )

    return np.concatenate([g_mu, g_beta.ravel(), g_gamma, g_omega.ravel(), g_sigma])


class VectorLayout(NamedTuple):
    """Slices of the flat free-coordinate vector, one per effect class."""

    mu: slice
    beta: slice
    gamma: slice
    omega: slice
    sigma: slice


def layout(spec: ModelSpec) -> VectorLayout:
    T = spec.T
    if spec.mu_only:
        empty = slice(T, T)
        return VectorLayout(slice(0, T), empty, empty, empty, empty)
    S, Z = spec.S, spec.Z
    o1 = T + (S - 1) * T
    o2 = o1 + S
    o3 = o2 + S * (Z - 1)
    return VectorLayout(slice(0, T), slice(T, o1), slice(o1, o2), slice(o2, o3), slice(o3, o3 + 4))


def to_vector(p: ParameterState, spec: ModelSpec) -> np.ndarray:
    """Flatten a state into the free-coordinate vector (sampler layout)."""
    _check_state(p, spec)
    if spec.mu_only:
        return p.mu.copy()
    return np.concatenate(
        [p.mu, p.beta_free.ravel(), p.gamma_free, p.omega_free.ravel(), p.log_sigma]
    )


def from_vector(vec: np.ndarray, spec: ModelSpec) -> ParameterState:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (spec.dim,):
        raise DataError(f"expected vector of length {spec.dim}, got shape {vec.shape}")
    p = ParameterState.zeros(spec)
    if spec.mu_only:
        p.mu = vec.copy()
        return p
    S, T, Z = spec.S, spec.T, spec.Z
    i = 0
    p.mu = vec[i : i + T].copy()
    i += T
    p.beta_free = vec[i : i + (S - 1) * T].reshape(S - 1, T).copy()
    i += (S - 1) * T
    p.gamma_free = vec[i : i + S].copy()
    i += S
    p.omega_free = vec[i : i + S * (Z - 1)].reshape(S, Z - 1).copy()
    i += S * (Z - 1)
    p.log_sigma = vec[i : i + 4].copy()
    return p


def sample_prior(spec: ModelSpec, rng: np.random.Generator) -> ParameterState:
    """Draw a state from the prior.  Draw order is fixed (scales, mu, beta,
    gamma, omega) so results are reproducible for a given generator state."""
    p = ParameterState.zeros(spec)
    if spec.mu_only:
        p.mu = np.cumsum(rng.normal(0.0, 1.0, spec.T))
        return p
    sigma = np.abs(rng.normal(0.0, spec.sigma_scale, 4))
    p.log_sigma = np.log(sigma)
    p.mu = np.cumsum(rng.normal(0.0, sigma[0], spec.T))
    p.beta_free = np.cumsum(rng.normal(0.0, sigma[1], (spec.S - 1, spec.T)), axis=1)
    p.gamma_free = rng.normal(0.0, sigma[2], spec.S)
    p.omega_free = rng.normal(0.0, sigma[3], (spec.S, spec.Z - 1))
    return p


def param_names(spec: ModelSpec) -> tuple[str, ...]:
    """Display names for the free coordinates, in vector order (1-based
    athlete/stage indices; athlete S and the last race type are constrained
    and carry no coordinate)."""
    names = [f"mu[{t}]" for t in range(1, spec.T + 1)]
    if spec.mu_only:
        return tuple(names)
    for s in range(1, spec.S):
        names += [f"beta[{s},{t}]" for t in range(1, spec.T + 1)]
    names += [f"gamma_prone[{s}]" for s in range(1, spec.S + 1)]
    for s in range(1, spec.S + 1):
        names += [f"omega[{s},{r}]" for r in RACE_TYPES[: spec.Z - 1]]
    names += [f"log_sigma_{k}" for k in SIGMA_NAMES]
    return tuple(names)
