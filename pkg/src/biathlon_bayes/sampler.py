"""Adaptive Metropolis-within-Gibbs sampling, convergence diagnostics, and
the draws container.

One sweep visits a fixed block sequence: the stage baseline vector, each
free athlete's trajectory, the per-athlete position scalars, each athlete's
race-effect row, then the four log scales.  Each block takes a
Metropolis-Hastings step scaled by an adaptive scalar step size, shaped by
a block preconditioner: vector blocks use the Cholesky factor of a local
Gaussian approximation (likelihood Fisher information plus the exact prior
precision at the current scale parameters — for trajectory blocks that is
the tridiagonal random-walk precision, which carries the prior's serial
correlation into the proposal), scalar blocks a fixed information-based
scale.  The step size adapts by Robbins-Monro during burn-in only (toward
0.35 acceptance for vector blocks, 0.44 for scalars) and is frozen
afterwards, so the post-burn-in kernel is a valid fixed MCMC kernel.  In
``gradient_assisted`` mode the proposal gains a Langevin drift of half the
squared step times the preconditioned block gradient, with the exact
Hastings correction in the same metric.

Chains draw from independent RNG streams keyed by (seed, chain index), so
results are identical no matter how chains are scheduled across workers.

Likelihood deltas are computed from cached per-record log-odds: a block
move touches only its own records (its athlete plus the constrained last
athlete for trajectory blocks), and scale moves touch none.  The cache is
rebuilt from scratch periodically and at the burn-in boundary so float
accumulation cannot drift.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import model as _model
from .data import Dataset
from .errors import DataError, NumericalError
from .model import ModelSpec, SHOTS_PER_BOUT
from .streams import rng_for

THREADS_ENV = "BIATHLON_BAYES_THREADS"

_TARGET_RATE_VECTOR = 0.35
_TARGET_RATE_SCALAR = 0.44
_ADAPT_DECAY = 0.6
_CACHE_REFRESH = 500  # sweeps between full cache rebuilds
_INIT_ATTEMPTS = 100

PROPOSAL_MODES = ("random_walk", "gradient_assisted")


@dataclass(frozen=True)
class SamplerConfig:
    """Chain protocol. Defaults: 4 chains, 1000 burn-in sweeps, 5000 kept
    sweeps retained every 5th -> 4000 total draws."""

    n_chains: int = 4
    burn_in: int = 1000
    kept_iterations: int = 5000
    thin: int = 5
    seed: int = 0
    adapt_window: int | None = None
    proposal_mode: str = "random_walk"

    def __post_init__(self):
        if self.n_chains < 1:
            raise DataError("n_chains must be >= 1")
        if self.burn_in < 0:
            raise DataError("burn_in must be >= 0")
        if self.kept_iterations < 1 or self.thin < 1:
            raise DataError("kept_iterations and thin must be >= 1")
        if self.kept_iterations % self.thin:
            raise DataError(
                f"kept_iterations {self.kept_iterations} not divisible by thin {self.thin}"
            )
        if self.proposal_mode not in PROPOSAL_MODES:
            raise DataError(f"proposal_mode must be one of {PROPOSAL_MODES}")
        if self.adapt_window is not None and self.adapt_window < 0:
            raise DataError("adapt_window must be >= 0")

    @property
    def n_retained(self) -> int:
        return self.kept_iterations // self.thin

    def to_json_dict(self) -> dict:
        return {
            "n_chains": self.n_chains,
            "burn_in": self.burn_in,
            "kept_iterations": self.kept_iterations,
            "thin": self.thin,
            "seed": self.seed,
            "adapt_window": self.adapt_window,
            "proposal_mode": self.proposal_mode,
        }


@dataclass
class Block:
    """One Gibbs block: coordinate indices, proposal shape, and a
    target-specific payload describing which records it touches.

    ``precond`` is a fixed diagonal proposal scale; when ``fisher`` is set
    (vector blocks) the target instead supplies a state-dependent Cholesky
    transform built from it, and ``precond`` is unused.
    """

    name: str
    idx: np.ndarray
    scalar: bool
    precond: np.ndarray
    kind: str = "generic"
    payload: object = None
    fisher: np.ndarray | None = None
    repeats: int = 1  # MH tries per sweep visit (sharp-conditional scalars)


# ---------------------------------------------------------------------------
# generic chain runner over a block target
#
# A target provides: dim, blocks, initial_vector(rng), make_cache(x),
# propose_delta(x, cache, block, prop) -> (delta_logp, stash),
# commit(x, cache, block, prop, stash), and for gradient_assisted mode
# block_grad(x, cache, block) / block_grad_at(x, cache, block, prop, stash).
# Optionally proposal_transform(x, block) -> (L, A) with L the lower
# Cholesky factor of the block's proposal precision and A = inv(L).T, or
# None to use the block's fixed diagonal scale.


@dataclass
class ChainResult:
    draws: np.ndarray
    acceptance: np.ndarray       # post-burn-in acceptance rate per block
    scales: np.ndarray           # proposal scales at termination
    frozen_scales: np.ndarray    # proposal scales at the burn-in boundary
    block_names: tuple[str, ...]


def run_chain(target, cfg: SamplerConfig, chain_idx: int) -> ChainResult:
    """Run one chain; deterministic given (target inputs, cfg.seed, chain_idx)."""
    rng = rng_for(cfg.seed, chain_idx)
    x = cache = None
    for _ in range(_INIT_ATTEMPTS):
        x = target.initial_vector(rng)
        cache = target.make_cache(x)
        if np.isfinite(cache.logp):
            break
    else:
        raise NumericalError(
            f"chain {chain_idx}: no finite log-posterior in {_INIT_ATTEMPTS} initialization draws"
        )

    blocks = target.blocks
    nb = len(blocks)
    log_scale = np.array(
        [0.875 if b.scalar else np.log(2.38 / np.sqrt(len(b.idx))) for b in blocks]
    )  # 0.875 = ln 2.4
    adapt_until = cfg.burn_in if cfg.adapt_window is None else min(cfg.adapt_window, cfg.burn_in)
    adapt_count = np.zeros(nb)
    post_prop = np.zeros(nb)
    post_acc = np.zeros(nb)
    frozen_scales = np.exp(log_scale)
    mala = cfg.proposal_mode == "gradient_assisted"

    total = cfg.burn_in + cfg.kept_iterations
    retained = np.empty((cfg.n_retained, target.dim))
    r_i = 0

    transform = getattr(target, "proposal_transform", None)

    for it in range(1, total + 1):
        for b in range(nb):
            block = blocks[b]
            for _try in range(block.repeats):
                cur = x[block.idx]
                eps = np.exp(log_scale[b])
                z = rng.standard_normal(len(block.idx))
                tr = transform(x, block) if transform is not None else None
                if mala:
                    g = target.block_grad(x, cache, block)
                    if tr is None:
                        a_diag = block.precond**2
                        mean_fwd = cur + 0.5 * eps * eps * a_diag * g
                        prop = mean_fwd + eps * block.precond * z
                    else:
                        L, A = tr
                        mean_fwd = cur + 0.5 * eps * eps * (A @ (A.T @ g))
                        prop = mean_fwd + eps * (A @ z)
                    delta, stash = target.propose_delta(x, cache, block, prop)
                    g_prop = target.block_grad_at(x, cache, block, prop, stash)
                    if tr is None:
                        mean_rev = prop + 0.5 * eps * eps * a_diag * g_prop
                        log_fwd = -0.5 * float(np.sum((prop - mean_fwd) ** 2 / a_diag)) / (eps * eps)
                        log_rev = -0.5 * float(np.sum((cur - mean_rev) ** 2 / a_diag)) / (eps * eps)
                    else:
                        mean_rev = prop + 0.5 * eps * eps * (A @ (A.T @ g_prop))
                        log_fwd = -0.5 * float(np.sum((L.T @ (prop - mean_fwd)) ** 2)) / (eps * eps)
                        log_rev = -0.5 * float(np.sum((L.T @ (cur - mean_rev)) ** 2)) / (eps * eps)
                    log_alpha = delta + log_rev - log_fwd
                else:
                    if tr is None:
                        prop = cur + eps * block.precond * z
                    else:
                        prop = cur + eps * (tr[1] @ z)
                    log_alpha, stash = target.propose_delta(x, cache, block, prop)

                u = rng.random()  # always consumed: keeps streams aligned
                accept = bool(log_alpha >= 0.0) or (u > 0.0 and np.log(u) < log_alpha)
                if accept:
                    target.commit(x, cache, block, prop, stash)
                    x[block.idx] = prop

                if it <= adapt_until:
                    adapt_count[b] += 1
                    alpha_prob = (
                        float(np.exp(min(log_alpha, 0.0))) if np.isfinite(log_alpha) else 0.0
                    )
                    rate = _TARGET_RATE_SCALAR if block.scalar else _TARGET_RATE_VECTOR
                    log_scale[b] += adapt_count[b] ** -_ADAPT_DECAY * (alpha_prob - rate)
                elif it > cfg.burn_in:
                    post_prop[b] += 1
                    post_acc[b] += accept

        if it == cfg.burn_in:
            frozen_scales = np.exp(log_scale).copy()
            cache = target.make_cache(x)
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            retained[r_i] = x
            r_i += 1
        if it % _CACHE_REFRESH == 0:
            cache = target.make_cache(x)

    acceptance = post_acc / np.maximum(post_prop, 1.0)
    return ChainResult(
        draws=retained,
        acceptance=acceptance,
        scales=np.exp(log_scale),
        frozen_scales=frozen_scales,
        block_names=tuple(b.name for b in blocks),
    )


# ---------------------------------------------------------------------------
# the model target: delta-cached hierarchical posterior


@dataclass
class _Cache:
    eta: np.ndarray
    ll: np.ndarray
    ll_sum: float
    ss: np.ndarray  # sufficient statistics per prior class (mu, beta, gamma, omega)
    logp: float


def _rw_precision(T: int) -> np.ndarray:
    """Precision of the anchored random walk: x_1 ~ N(0,1), increments N(0,1)."""
    q = np.zeros((T, T))
    q[0, 0] = 1.0
    for t in range(1, T):
        q[t - 1, t - 1] += 1.0
        q[t, t] += 1.0
        q[t, t - 1] -= 1.0
        q[t - 1, t] -= 1.0
    return q


class ModelTarget:
    """Posterior of the hierarchical model over its free coordinates."""

    def __init__(self, spec: ModelSpec, dataset: Dataset):
        self.spec = spec
        a = _model._check_indices(dataset, spec)
        self.hits = a.hits
        self.stage0 = a.stage0
        self.athlete = a.athlete
        self.race = a.race
        self.possign = 1.0 - 2.0 * a.position
        self.dataset = dataset
        self.dim = spec.dim
        self._layout()
        self._group_records()
        self._build_blocks()

    # ---- layout ----------------------------------------------------------

    def _layout(self):
        spec = self.spec
        S, T, Z = spec.S, spec.T, spec.Z
        self.sl_mu = slice(0, T)
        if spec.mu_only:
            return
        off = T
        self.sl_beta = slice(off, off + (S - 1) * T)
        off += (S - 1) * T
        self.sl_gamma = slice(off, off + S)
        off += S
        self.sl_omega = slice(off, off + S * (Z - 1))
        off += S * (Z - 1)
        self.sl_sigma = slice(off, off + 4)
        self.class_n = np.array([T, (S - 1) * T, S, S * (Z - 1)], dtype=float)

    def _group_records(self):
        S, Z = self.spec.S, self.spec.Z
        self.rec_of = [np.where(self.athlete == s)[0] for s in range(S)]
        self.last_rec = self.rec_of[S - 1]
        self.last_t = self.stage0[self.last_rec]
        # per-athlete race design matrix against the constrained last type
        self.race_design = []
        for s in range(S):
            rec = self.rec_of[s]
            races = self.race[rec]
            m = np.zeros((len(rec), Z - 1))
            for j in range(Z - 1):
                m[:, j] = (races == j).astype(float) - (races == Z - 1).astype(float)
            self.race_design.append(m)

    def _session_counts(self):
        S, T, Z = self.spec.S, self.spec.T, self.spec.Z
        n_st = np.zeros((S, T))
        np.add.at(n_st, (self.athlete, self.stage0), 1.0)
        n_s = n_st.sum(axis=1)
        n_sz = np.zeros((S, Z))
        np.add.at(n_sz, (self.athlete, self.race), 1.0)
        return n_st, n_s, n_sz

    def _build_blocks(self):
        spec = self.spec
        S, T, Z = spec.S, spec.T, spec.Z
        shots = SHOTS_PER_BOUT * len(self.hits)
        pbar = np.clip(self.hits.sum() / shots, 0.1, 0.9) if shots else 0.5
        w = SHOTS_PER_BOUT * pbar * (1.0 - pbar)  # Fisher info of eta per session
        n_st, n_s, n_sz = self._session_counts()
        self._rw_Q = _rw_precision(T)
        self._chol: dict[str, tuple[float, np.ndarray, np.ndarray]] = {}

        blocks = []
        info_mu = w * n_st.sum(axis=0)
        blocks.append(
            Block(
                "mu",
                np.arange(T),
                T == 1,
                1.0 / np.sqrt(info_mu + 1.0),
                kind="mu",
                fisher=np.diag(info_mu) if T > 1 else None,
            )
        )
        if spec.mu_only:
            self.blocks = blocks
            return
        for s in range(S - 1):
            idx = np.arange(self.sl_beta.start + s * T, self.sl_beta.start + (s + 1) * T)
            info = w * (n_st[s] + n_st[S - 1])
            # Two tries per visit: trajectory wiggles are prior-dominated, so
            # their amplitudes (which drive the beta scale's conditional) need
            # the extra turnover to keep the scale parameter mixing.
            blocks.append(
                Block(
                    f"beta[{s + 1}]",
                    idx,
                    T == 1,
                    1.0 / np.sqrt(info + 1.0),
                    kind="beta",
                    payload=s,
                    fisher=np.diag(info) if T > 1 else None,
                    repeats=2 if T > 1 else 1,
                )
            )
        for s in range(S):
            idx = np.array([self.sl_gamma.start + s])
            info = np.array([w * n_s[s] + 1.0])
            blocks.append(
                Block(f"gamma[{s + 1}]", idx, True, 1.0 / np.sqrt(info), kind="gamma", payload=s)
            )
        for s in range(S):
            start = self.sl_omega.start + s * (Z - 1)
            idx = np.arange(start, start + Z - 1)
            info = w * (n_sz[s, : Z - 1] + n_sz[s, Z - 1])
            # race records of the constrained last type hit every free
            # coordinate with sign -1, giving a rank-one Fisher cross term
            fisher = np.diag(w * n_sz[s, : Z - 1]) + w * n_sz[s, Z - 1] * np.ones(
                (Z - 1, Z - 1)
            )
            blocks.append(
                Block(
                    f"omega[{s + 1}]",
                    idx,
                    Z == 2,
                    1.0 / np.sqrt(info + 1.0),
                    kind="omega",
                    payload=s,
                    fisher=fisher if Z > 2 else None,
                )
            )
        for k, name in enumerate(_model.SIGMA_NAMES):
            idx = np.array([self.sl_sigma.start + k])
            info = np.array([2.0 * self.class_n[k] + 2.0])
            # Scale conditionals are sharp (curvature ~ 2n) while their modes
            # track the trajectory sum of squares; several cheap O(1) tries
            # per visit let the scale keep up instead of lagging a sweep
            # behind, which is what throttles its effective sample size.
            blocks.append(
                Block(
                    f"log_sigma_{name}",
                    idx,
                    True,
                    1.0 / np.sqrt(info),
                    kind="sigma",
                    payload=k,
                    repeats=8,
                )
            )
        self.blocks = blocks

    _PRIOR_CLASS = {"mu": 0, "beta": 1, "omega": 3}

    def proposal_transform(self, x, block):
        """Cholesky pair (L, inv(L).T) of the block's Gaussian-approximation
        precision (Fisher + prior precision at the current scale), or None
        for scalar blocks.  Cached per block until its scale moves."""
        if block.fisher is None:
            return None
        k = self._PRIOR_CLASS[block.kind]
        v = 0.0 if self.spec.mu_only else float(x[self.sl_sigma.start + k])
        hit = self._chol.get(block.name)
        if hit is not None and hit[0] == v:
            return hit[1], hit[2]
        prior = self._rw_Q if block.kind in ("mu", "beta") else np.eye(len(block.idx))
        L = np.linalg.cholesky(block.fisher + np.exp(-2.0 * v) * prior)
        A = np.linalg.solve(L, np.eye(len(block.idx))).T
        self._chol[block.name] = (v, L, A)
        return L, A

    # ---- state plumbing --------------------------------------------------

    def initial_vector(self, rng: np.random.Generator) -> np.ndarray:
        # overdispersed: free coords N(0, 0.5); log scales N(0, 0.25)
        x = rng.normal(0.0, 0.5, self.dim)
        if not self.spec.mu_only:
            x[self.sl_sigma] = rng.normal(0.0, 0.25, 4)
        return x

    def make_cache(self, x: np.ndarray) -> _Cache:
        state = _model.from_vector(x, self.spec)
        eta = _model.linear_predictors(state, self.dataset, self.spec)
        ll = _model.bout_log_likelihoods(self.hits, eta)
        ss = self._suff_stats(x)
        logp = float(np.sum(ll)) + _model.log_prior(state, self.spec)
        return _Cache(eta=eta, ll=ll, ll_sum=float(np.sum(ll)), ss=ss, logp=logp)

    def _suff_stats(self, x: np.ndarray) -> np.ndarray:
        spec = self.spec
        if spec.mu_only:
            return np.array([_model._rw_ss(x[self.sl_mu]), 0.0, 0.0, 0.0])
        beta = x[self.sl_beta].reshape(spec.S - 1, spec.T)
        return np.array(
            [
                _model._rw_ss(x[self.sl_mu]),
                _model._rw_ss(beta),
                float(np.sum(x[self.sl_gamma] ** 2)),
                float(np.sum(x[self.sl_omega] ** 2)),
            ]
        )

    def _sigma_of(self, x: np.ndarray) -> np.ndarray:
        if self.spec.mu_only:
            return np.ones(4)
        return np.exp(x[self.sl_sigma])

    # ---- block proposal evaluation ----------------------------------------

    def propose_delta(self, x, cache, block, prop):
        kind = block.kind
        cur = x[block.idx]
        if kind == "mu":
            d_eta = (prop - cur)[self.stage0]
            eta_new = cache.eta + d_eta
            ll_new = _model.bout_log_likelihoods(self.hits, eta_new)
            ss_new = _model._rw_ss(prop)
            v = 0.0 if self.spec.mu_only else float(x[self.sl_sigma.start])
            d_prior = -0.5 * (ss_new - cache.ss[0]) * np.exp(-2.0 * v)
            d_ll = float(np.sum(ll_new)) - cache.ll_sum
            return d_ll + d_prior, ("mu", eta_new, ll_new, ss_new)
        if kind == "beta":
            s = block.payload
            own = self.rec_of[s]
            d_row = prop - cur
            eta_own = cache.eta[own] + d_row[self.stage0[own]]
            eta_last = cache.eta[self.last_rec] - d_row[self.last_t]
            ll_own = _model.bout_log_likelihoods(self.hits[own], eta_own)
            ll_last = _model.bout_log_likelihoods(self.hits[self.last_rec], eta_last)
            d_ll = (
                float(np.sum(ll_own))
                - float(np.sum(cache.ll[own]))
                + float(np.sum(ll_last))
                - float(np.sum(cache.ll[self.last_rec]))
            )
            ss_new = cache.ss[1] - _model._rw_ss(cur) + _model._rw_ss(prop)
            v = float(x[self.sl_sigma.start + 1])
            d_prior = -0.5 * (ss_new - cache.ss[1]) * np.exp(-2.0 * v)
            return d_ll + d_prior, ("beta", eta_own, ll_own, eta_last, ll_last, ss_new)
        if kind == "gamma":
            s = block.payload
            rec = self.rec_of[s]
            d_eta = (prop[0] - cur[0]) * self.possign[rec]
            eta_new = cache.eta[rec] + d_eta
            ll_new = _model.bout_log_likelihoods(self.hits[rec], eta_new)
            d_ll = float(np.sum(ll_new)) - float(np.sum(cache.ll[rec]))
            ss_new = cache.ss[2] - cur[0] ** 2 + prop[0] ** 2
            v = float(x[self.sl_sigma.start + 2])
            d_prior = -0.5 * (ss_new - cache.ss[2]) * np.exp(-2.0 * v)
            return d_ll + d_prior, ("gamma", eta_new, ll_new, ss_new)
        if kind == "omega":
            s = block.payload
            rec = self.rec_of[s]
            eta_new = cache.eta[rec] + self.race_design[s] @ (prop - cur)
            ll_new = _model.bout_log_likelihoods(self.hits[rec], eta_new)
            d_ll = float(np.sum(ll_new)) - float(np.sum(cache.ll[rec]))
            ss_new = cache.ss[3] - float(np.sum(cur**2)) + float(np.sum(prop**2))
            v = float(x[self.sl_sigma.start + 3])
            d_prior = -0.5 * (ss_new - cache.ss[3]) * np.exp(-2.0 * v)
            return d_ll + d_prior, ("omega", eta_new, ll_new, ss_new)
        # sigma: likelihood untouched, O(1)
        k = block.payload
        n, ss = self.class_n[k], cache.ss[k]
        c = self.spec.sigma_scale
        d_prior = (
            _model._gauss_class_logp(n, ss, prop[0])
            + _model._halfnormal_log_logp(prop[0], c)
            - _model._gauss_class_logp(n, ss, cur[0])
            - _model._halfnormal_log_logp(cur[0], c)
        )
        return float(d_prior), ("sigma",)

    def commit(self, x, cache, block, prop, stash):
        kind = stash[0]
        if kind == "mu":
            _, eta_new, ll_new, ss_new = stash
            d_ll = float(np.sum(ll_new)) - cache.ll_sum
            cache.eta = eta_new
            cache.ll = ll_new
            cache.ll_sum += d_ll
            v = 0.0 if self.spec.mu_only else float(x[self.sl_sigma.start])
            cache.logp += d_ll - 0.5 * (ss_new - cache.ss[0]) * np.exp(-2.0 * v)
            cache.ss[0] = ss_new
            return
        if kind == "beta":
            _, eta_own, ll_own, eta_last, ll_last, ss_new = stash
            s = block.payload
            own = self.rec_of[s]
            d_ll = (
                float(np.sum(ll_own))
                - float(np.sum(cache.ll[own]))
                + float(np.sum(ll_last))
                - float(np.sum(cache.ll[self.last_rec]))
            )
            cache.eta[own] = eta_own
            cache.ll[own] = ll_own
            cache.eta[self.last_rec] = eta_last
            cache.ll[self.last_rec] = ll_last
            cache.ll_sum += d_ll
            v = float(x[self.sl_sigma.start + 1])
            cache.logp += d_ll - 0.5 * (ss_new - cache.ss[1]) * np.exp(-2.0 * v)
            cache.ss[1] = ss_new
            return
        if kind in ("gamma", "omega"):
            _, eta_new, ll_new, ss_new = stash
            s = block.payload
            rec = self.rec_of[s]
            d_ll = float(np.sum(ll_new)) - float(np.sum(cache.ll[rec]))
            cache.eta[rec] = eta_new
            cache.ll[rec] = ll_new
            cache.ll_sum += d_ll
            k = 2 if kind == "gamma" else 3
            v = float(x[self.sl_sigma.start + k])
            cache.logp += d_ll - 0.5 * (ss_new - cache.ss[k]) * np.exp(-2.0 * v)
            cache.ss[k] = ss_new
            return
        # sigma
        k = block.payload
        cur = x[block.idx][0]
        n, ss = self.class_n[k], cache.ss[k]
        c = self.spec.sigma_scale
        cache.logp += (
            _model._gauss_class_logp(n, ss, prop[0])
            + _model._halfnormal_log_logp(prop[0], c)
            - _model._gauss_class_logp(n, ss, cur)
            - _model._halfnormal_log_logp(cur, c)
        )

    # ---- block gradients (gradient_assisted mode) --------------------------

    def _resid(self, hits, eta):
        return hits - SHOTS_PER_BOUT * expit(eta)

    def block_grad(self, x, cache, block):
        kind = block.kind
        cur = x[block.idx]
        spec = self.spec
        sigma = self._sigma_of(x)
        if kind == "mu":
            resid = self._resid(self.hits, cache.eta)
            g = np.bincount(self.stage0, weights=resid, minlength=spec.T)
            return g + _model._rw_grad(cur, sigma[0] if not spec.mu_only else 1.0)
        if kind == "beta":
            s = block.payload
            own = self.rec_of[s]
            r_own = self._resid(self.hits[own], cache.eta[own])
            r_last = self._resid(self.hits[self.last_rec], cache.eta[self.last_rec])
            g = np.bincount(self.stage0[own], weights=r_own, minlength=spec.T) - np.bincount(
                self.last_t, weights=r_last, minlength=spec.T
            )
            return g + _model._rw_grad(cur, sigma[1])
        if kind == "gamma":
            s = block.payload
            rec = self.rec_of[s]
            r = self._resid(self.hits[rec], cache.eta[rec])
            return np.array([float(np.sum(r * self.possign[rec]))]) - cur / sigma[2] ** 2
        if kind == "omega":
            s = block.payload
            rec = self.rec_of[s]
            r = self._resid(self.hits[rec], cache.eta[rec])
            return self.race_design[s].T @ r - cur / sigma[3] ** 2
        k = block.payload
        n, ss = self.class_n[k], cache.ss[k]
        c = self.spec.sigma_scale
        v = cur[0]
        return np.array([-n + ss * np.exp(-2.0 * v) - np.exp(2.0 * v) / c**2 + 1.0])

    def block_grad_at(self, x, cache, block, prop, stash):
        kind = block.kind
        spec = self.spec
        sigma = self._sigma_of(x)
        if kind == "mu":
            eta_new = stash[1]
            resid = self._resid(self.hits, eta_new)
            g = np.bincount(self.stage0, weights=resid, minlength=spec.T)
            return g + _model._rw_grad(prop, sigma[0] if not spec.mu_only else 1.0)
        if kind == "beta":
            s = block.payload
            own = self.rec_of[s]
            r_own = self._resid(self.hits[own], stash[1])
            r_last = self._resid(self.hits[self.last_rec], stash[3])
            g = np.bincount(self.stage0[own], weights=r_own, minlength=spec.T) - np.bincount(
                self.last_t, weights=r_last, minlength=spec.T
            )
            return g + _model._rw_grad(prop, sigma[1])
        if kind == "gamma":
            s = block.payload
            rec = self.rec_of[s]
            r = self._resid(self.hits[rec], stash[1])
            return np.array([float(np.sum(r * self.possign[rec]))]) - prop / sigma[2] ** 2
        if kind == "omega":
            s = block.payload
            rec = self.rec_of[s]
            r = self._resid(self.hits[rec], stash[1])
            return self.race_design[s].T @ r - prop / sigma[3] ** 2
        k = block.payload
        n, ss = self.class_n[k], cache.ss[k]
        c = self.spec.sigma_scale
        v = prop[0]
        return np.array([-n + ss * np.exp(-2.0 * v) - np.exp(2.0 * v) / c**2 + 1.0])


# ---------------------------------------------------------------------------
# multi-chain orchestration


@dataclass
class PosteriorSamples:
    """Retained draws (chains x retained x free dim) plus provenance."""

    draws: np.ndarray
    param_names: tuple[str, ...]
    spec: ModelSpec
    config: SamplerConfig
    source_digest: str
    acceptance_rates: dict[str, tuple[float, ...]]
    proposal_scales: dict[str, tuple[float, ...]]
    wall_time_s: float | None = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_retained(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def total_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        """All chains concatenated in chain order, shape (total, dim)."""
        return self.draws.reshape(-1, self.dim)

    def name_index(self, param) -> int:
        if isinstance(param, str):
            try:
                return self.param_names.index(param)
            except ValueError:
                raise DataError(f"unknown parameter {param!r}") from None
        i = int(param)
        if not 0 <= i < self.dim:
            raise DataError(f"parameter index {i} outside 0..{self.dim - 1}")
        return i

    def param_draws(self, param) -> np.ndarray:
        """Draws for one parameter, shape (chains, retained)."""
        return self.draws[:, :, self.name_index(param)]


def _chain_job(args) -> ChainResult:
    spec, dataset, cfg, chain_idx = args
    return run_chain(ModelTarget(spec, dataset), cfg, chain_idx)


def worker_cap(max_workers: int | None = None) -> int:
    env = os.environ.get(THREADS_ENV, "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise DataError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    else:
        cap = os.cpu_count() or 1
    if max_workers is not None:
        cap = min(cap, max_workers)
    return max(1, cap)


def run_chains(
    spec: ModelSpec,
    dataset: Dataset,
    cfg: SamplerConfig | None = None,
    max_workers: int | None = None,
) -> PosteriorSamples:
    """Sample the posterior with ``cfg.n_chains`` independent chains.

    Chains are distributed over processes (capped by the
    ``BIATHLON_BAYES_THREADS`` environment variable and ``max_workers``);
    draws are identical for any worker count because every chain owns its
    RNG stream.
    """
    cfg = cfg or SamplerConfig()
    t0 = time.perf_counter()
    jobs = [(spec, dataset, cfg, c) for c in range(cfg.n_chains)]
    workers = worker_cap(max_workers)
    if workers == 1 or cfg.n_chains == 1:
        results = [_chain_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.n_chains)) as ex:
            results = list(ex.map(_chain_job, jobs))
    block_names = results[0].block_names
    acceptance = {
        name: tuple(float(r.acceptance[i]) for r in results)
        for i, name in enumerate(block_names)
    }
    scales = {
        name: tuple(float(r.scales[i]) for r in results) for i, name in enumerate(block_names)
    }
    return PosteriorSamples(
        draws=np.stack([r.draws for r in results]),
        param_names=_model.param_names(spec),
        spec=spec,
        config=cfg,
        source_digest=dataset.source_digest,
        acceptance_rates=acceptance,
        proposal_scales=scales,
        wall_time_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# convergence diagnostics


def _as_chain_matrix(samples, param) -> np.ndarray:
    if isinstance(samples, PosteriorSamples):
        if param is None:
            raise DataError("param required with PosteriorSamples input")
        return samples.param_draws(param)
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2:
        raise DataError(f"expected (chains, draws) matrix, got shape {arr.shape}")
    return arr


def split_rhat(samples, param=None) -> float:
    """Split-R-hat: halve each chain, compare between- and within-half
    variance.  Raises NumericalError on degenerate input (constant chains)
    rather than reporting a hollow 1.0."""
    chains = _as_chain_matrix(samples, param)
    c, r = chains.shape
    n = r // 2
    if n < 2:
        raise NumericalError(f"insufficient draws for split-rhat: {r} per chain")
    halves = np.concatenate([chains[:, :n], chains[:, r - n :]], axis=0)
    means = halves.mean(axis=1)
    variances = halves.var(axis=1, ddof=1)
    w = float(variances.mean())
    b = n * float(means.var(ddof=1))
    if w == 0.0:
        raise NumericalError("zero within-chain variance: split-rhat undefined")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _chain_ess(y: np.ndarray) -> float:
    n = len(y)
    y = y - y.mean()
    c0 = float(np.dot(y, y)) / n
    if c0 == 0.0:
        raise NumericalError("zero variance: ESS undefined")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer initial positive sequence: sum consecutive lag pairs while positive
    tau = -1.0
    m = 0
    while 2 * m + 1 < n:
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        m += 1
    tau = max(tau, 1.0 / n)
    return min(n / tau, float(n))  # cap at the iid-equivalent count


def ess(samples, param=None) -> float:
    """Effective sample size: N / (1 + 2 sum of autocorrelations) with
    Geyer initial-positive-sequence truncation, per chain, summed."""
    chains = _as_chain_matrix(samples, param)
    if chains.shape[1] < 10:
        raise NumericalError(f"insufficient draws for ESS: {chains.shape[1]} per chain")
    return float(sum(_chain_ess(chains[c]) for c in range(chains.shape[0])))


@dataclass(frozen=True)
class ParamSummary:
    name: str
    mean: float
    sd: float
    median: float
    q025: float
    q975: float
    rhat: float
    ess: float


def summarize(samples: PosteriorSamples) -> list[ParamSummary]:
    """Posterior summary rows (moments, central interval, diagnostics) for
    every free coordinate."""
    from .intervals import empirical_quantile

    out = []
    pooled = samples.pooled()
    for j, name in enumerate(samples.param_names):
        col = pooled[:, j]
        chains = samples.draws[:, :, j]
        out.append(
            ParamSummary(
                name=name,
                mean=float(col.mean()),
                sd=float(col.std(ddof=1)) if len(col) > 1 else 0.0,
                median=float(empirical_quantile(col, 0.5)),
                q025=float(empirical_quantile(col, 0.025)),
                q975=float(empirical_quantile(col, 0.975)),
                rhat=split_rhat(chains),
                ess=ess(chains),
            )
        )
    return out


# ---------------------------------------------------------------------------
# draws container

_MAGIC = b"biathlon-bayes-draws-v1\n"
_DTYPE = "<f8"


def _manifest_dict(samples: PosteriorSamples) -> dict:
    return {
        "container": "draws-v1",
        "dtype": _DTYPE,
        "n_chains": samples.n_chains,
        "n_retained": samples.n_retained,
        "dim": samples.dim,
        "param_names": list(samples.param_names),
        "model": {
            "S": samples.spec.S,
            "T": samples.spec.T,
            "Z": samples.spec.Z,
            "sigma_scale": samples.spec.sigma_scale,
            "mu_only": samples.spec.mu_only,
        },
        "sampler": samples.config.to_json_dict(),
        "seed": samples.config.seed,
        "source_digest": samples.source_digest,
        "acceptance_rates": {k: list(v) for k, v in samples.acceptance_rates.items()},
        "proposal_scales": {k: list(v) for k, v in samples.proposal_scales.items()},
    }


def _manifest_bytes(samples: PosteriorSamples) -> bytes:
    return json.dumps(_manifest_dict(samples), sort_keys=True, separators=(",", ":")).encode()


def export_draws(samples: PosteriorSamples, sink, fmt: str = "binary"):
    """Write draws + manifest. ``fmt="binary"`` streams chains into a
    checksummed single-file container; ``fmt="csv"`` writes
    ``chain,iter,param,value`` rows with a JSON manifest sidecar at
    ``<path>.manifest.json``.  Paths are written atomically."""
    if fmt == "binary":
        if hasattr(sink, "write"):
            _export_binary(samples, sink)
            return
        path = Path(sink)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            _export_binary(samples, fh)
        os.replace(tmp, path)
        return
    if fmt == "csv":
        if hasattr(sink, "write"):
            raise DataError("csv export requires a path (it writes a manifest sidecar)")
        path = Path(sink)
        body = io.StringIO()
        writer = csv.writer(body, lineterminator="\n")
        writer.writerow(["chain", "iter", "param", "value"])
        for c in range(samples.n_chains):
            for i in range(samples.n_retained):
                row = samples.draws[c, i]
                for j, name in enumerate(samples.param_names):
                    writer.writerow([c + 1, i + 1, name, repr(float(row[j]))])
        csv_bytes = body.getvalue().encode()
        manifest = _manifest_dict(samples)
        manifest["csv_sha256"] = hashlib.sha256(csv_bytes).hexdigest()
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(csv_bytes)
        os.replace(tmp, path)
        side = path.with_name(path.name + ".manifest.json")
        tmp = side.with_name(side.name + ".tmp")
        tmp.write_bytes(json.dumps(manifest, sort_keys=True, indent=2).encode())
        os.replace(tmp, side)
        return
    raise DataError(f"unknown draws format {fmt!r}")


def _export_binary(samples: PosteriorSamples, fh):
    digest = hashlib.sha256()

    def put(chunk: bytes):
        digest.update(chunk)
        fh.write(chunk)

    put(_MAGIC)
    manifest = _manifest_bytes(samples)
    put(struct.pack("<Q", len(manifest)))
    put(manifest)
    for c in range(samples.n_chains):  # stream chain by chain
        put(np.ascontiguousarray(samples.draws[c], dtype=_DTYPE).tobytes())
    fh.write(digest.digest())


def _samples_from_manifest(manifest: dict, draws: np.ndarray) -> PosteriorSamples:
    try:
        spec = ModelSpec(**manifest["model"])
        cfg = SamplerConfig(**manifest["sampler"])
        names = tuple(manifest["param_names"])
        acceptance = {k: tuple(v) for k, v in manifest["acceptance_rates"].items()}
        scales = {k: tuple(v) for k, v in manifest["proposal_scales"].items()}
        source_digest = manifest["source_digest"]
    except (KeyError, TypeError, ValueError) as e:
        raise DataError(f"bad draws manifest: {e}") from None
    if len(names) != draws.shape[2]:
        raise DataError(
            f"manifest names ({len(names)}) do not match draw dim ({draws.shape[2]})"
        )
    return PosteriorSamples(
        draws=draws,
        param_names=names,
        spec=spec,
        config=cfg,
        source_digest=source_digest,
        acceptance_rates=acceptance,
        proposal_scales=scales,
        wall_time_s=None,
    )


def import_draws(source) -> PosteriorSamples:
    """Read a draws container (binary or CSV+sidecar); verifies checksums."""
    side = None
    if hasattr(source, "read"):
        raw = source.read()
    else:
        path = Path(source)
        raw = path.read_bytes()
        side = path.with_name(path.name + ".manifest.json")
    if raw[: len(_MAGIC)] == _MAGIC:
        return _import_binary(raw)
    if side is not None and side.exists():
        return _import_csv(raw, json.loads(side.read_text()))
    raise DataError("unrecognized draws container (bad magic, no manifest sidecar)")


def _import_binary(raw: bytes) -> PosteriorSamples:
    if len(raw) < len(_MAGIC) + 8 + 32:
        raise DataError("draws file truncated")
    body, trailer = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != trailer:
        raise DataError("draws file checksum mismatch (truncated or corrupted)")
    off = len(_MAGIC)
    (mlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    manifest = json.loads(body[off : off + mlen].decode())
    off += mlen
    c, r, d = manifest["n_chains"], manifest["n_retained"], manifest["dim"]
    expected = c * r * d * 8
    payload = body[off:]
    if len(payload) != expected:
        raise DataError(f"draws payload is {len(payload)} bytes, expected {expected}")
    draws = np.frombuffer(payload, dtype=_DTYPE).reshape(c, r, d).copy()
    return _samples_from_manifest(manifest, draws)


def _import_csv(raw: bytes, manifest: dict) -> PosteriorSamples:
    if manifest.get("csv_sha256") != hashlib.sha256(raw).hexdigest():
        raise DataError("draws CSV checksum mismatch against manifest sidecar")
    c, r, d = manifest["n_chains"], manifest["n_retained"], manifest["dim"]
    names = {name: j for j, name in enumerate(manifest["param_names"])}
    draws = np.full((c, r, d), np.nan)
    reader = csv.reader(io.StringIO(raw.decode()))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("draws CSV: empty file") from None
    if header != ["chain", "iter", "param", "value"]:
        raise DataError("draws CSV: bad header")
    try:
        for chain_s, iter_s, name, value_s in reader:
            draws[int(chain_s) - 1, int(iter_s) - 1, names[name]] = float(value_s)
    except (KeyError, ValueError, IndexError) as e:
        raise DataError(f"draws CSV: malformed row near line {reader.line_num}: {e}") from None
    if np.isnan(draws).any():
        raise DataError("draws CSV: missing entries")
    return _samples_from_manifest(manifest, draws)
