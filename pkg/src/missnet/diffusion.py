"""Streaming diffusion algorithms: standard ATC, modified ATC and the
online noise-power estimators.

The single-step functions operate on a :class:`NetworkState` and are the
readable reference.  :func:`run_batch` drives the compiled kernel in
:mod:`missnet._kernels` over many independent runs and is what the harness
uses; tests check that both paths agree.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .scenario import ScenarioSpec, draw_stream

CHUNK = 2048
SENTINEL_FACTOR = 1e6


@dataclass(frozen=True)
class DiffusionConfig:
    """Algorithm constants for one network.

    ``sel`` is an (N, M) 0/1 array marking the components that carry the
    de-regularisation (the maskable set); ``p_hat`` is per agent.
    """

    mu: np.ndarray
    p_hat: np.ndarray
    alphas: tuple
    sel: np.ndarray
    warm_start_iters: int = 0
    correction_enabled: bool = True
    sigma_v2_hint: Optional[np.ndarray] = None
    feasibility_clamp: bool = True

    @classmethod
    def from_spec(cls, spec: ScenarioSpec) -> "DiffusionConfig":
        n, m = spec.n_agents, spec.dim
        sel = np.zeros((n, m))
        sel[:, list(spec.maskable)] = 1.0
        return cls(mu=np.asarray(spec.step_sizes, dtype=float),
                   p_hat=np.full(n, float(spec.p_hat)),
                   alphas=tuple(float(a) for a in spec.alphas),
                   sel=sel, warm_start_iters=int(spec.warm_start_iters),
                   correction_enabled=bool(spec.correction_enabled),
                   sigma_v2_hint=np.full(n, float(spec.sigma_v2_hint)),
                   feasibility_clamp=bool(spec.feasibility_clamp))

    @property
    def correction_start(self) -> float:
        """First iteration index using the corrected recursion (inf if never)."""
        return self.warm_start_iters if self.correction_enabled else np.iinfo(np.int64).max

    def hint(self) -> np.ndarray:
        if self.sigma_v2_hint is None:
            return np.zeros_like(self.mu)
        return np.asarray(self.sigma_v2_hint, dtype=float)


@dataclass
class NetworkState:
    """Estimates and noise-power trackers for all agents of one run.

    ``w`` and ``r_ubar_hat`` are (N, M); ``sigma_e_hat`` and
    ``sigma_xi2_hat`` are (N,).
    """

    w: np.ndarray
    r_ubar_hat: np.ndarray
    sigma_e_hat: np.ndarray
    sigma_xi2_hat: np.ndarray

    @classmethod
    def zeros(cls, n, m):
        return cls(np.zeros((n, m)), np.zeros((n, m)), np.zeros(n), np.zeros(n))

    def copy(self):
        return NetworkState(self.w.copy(), self.r_ubar_hat.copy(),
                            self.sigma_e_hat.copy(), self.sigma_xi2_hat.copy())


class DivergenceError(FloatingPointError):
    pass


def _check_finite(w):
    if not np.all(np.isfinite(w)):
        bad = np.flatnonzero(~np.all(np.isfinite(w), axis=1))
        raise DivergenceError(f"non-finite estimate at agents {bad.tolist()}")


def _combine(a, phi):
    # w_k = sum_l a[l, k] phi_l, computed from this instant's phi only
    return a.T @ phi


def atc_standard_iteration(state: NetworkState, u_bar, d, a, cfg: DiffusionConfig) -> NetworkState:
    """One synchronous adapt-then-combine LMS step (estimators untouched)."""
    e = d - np.einsum("km,km->k", u_bar, state.w)
    phi = state.w + cfg.mu[:, None] * u_bar * e[:, None]
    w = _combine(a, phi)
    _check_finite(w)
    return replace(state, w=w)


def matc_iteration(state: NetworkState, u_bar, d, a, cfg: DiffusionConfig) -> NetworkState:
    """One modified ATC step using each agent's current noise-power estimate.

    The de-regularisation gain ``1 + mu p_hat sigma_xi2_hat`` applies on the
    components flagged in ``cfg.sel``.
    """
    e = d - np.einsum("km,km->k", u_bar, state.w)
    gain = (cfg.mu * cfg.p_hat * state.sigma_xi2_hat)[:, None]
    phi = state.w * (1.0 + gain * cfg.sel) + cfg.mu[:, None] * u_bar * e[:, None]
    w = _combine(a, phi)
    _check_finite(w)
    return replace(state, w=w)


def update_noise_estimators(state: NetworkState, u_bar, d, cfg: DiffusionConfig,
                            w_prev) -> NetworkState:
    """Smoothed moment trackers and the clamped noise-power estimate.

    ``w_prev`` must be the estimate used to form the error this instant.
    The ``g`` update is skipped for agents whose maskable-part norm is below
    the guard, and the estimate is capped so that the implied censored
    covariance stays feasible when ``cfg.feasibility_clamp`` is set.
    """
    a1, a2, a3 = cfg.alphas
    e = d - np.einsum("km,km->k", u_bar, w_prev)
    rhat = (1 - a1) * state.r_ubar_hat + a1 * u_bar * u_bar
    se = (1 - a2) * state.sigma_e_hat + a2 * e * e
    ww = np.sum(cfg.sel * w_prev ** 2, axis=1)
    wr = np.sum(cfg.sel * rhat * w_prev ** 2, axis=1)
    ok = ww >= _kernels.NORM_GUARD
    ph = cfg.p_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        g = ((1 - ph) * (se - cfg.hint()) - ph * wr) / (ph * (1 - 2 * ph) * ww)
    g = np.maximum(g, 0.0)
    sx = np.where(ok, (1 - a3) * state.sigma_xi2_hat + a3 * np.where(ok, g, 0.0), state.sigma_xi2_hat)
    if cfg.feasibility_clamp:
        rmin = np.min(np.where(cfg.sel > 0, rhat, np.inf), axis=1)
        sx = np.minimum(sx, rmin / ph)
    return NetworkState(state.w, rhat, se, sx)


def network_step(state: NetworkState, u_bar, d, a, cfg: DiffusionConfig, i: int) -> NetworkState:
    """Instant ``i`` of the modified diffusion recursion, including the warm-start switch."""
    if i < cfg.correction_start:
        return atc_standard_iteration(state, u_bar, d, a, cfg)
    nxt = matc_iteration(state, u_bar, d, a, cfg)
    est = update_noise_estimators(state, u_bar, d, cfg, state.w)
    return NetworkState(nxt.w, est.r_ubar_hat, est.sigma_e_hat, est.sigma_xi2_hat)


@dataclass
class BatchRecord:
    """Per-run, per-instant outputs of :func:`run_batch`.

    ``sqerr`` and ``sigma_xi2_hat`` are (B, T, N); rows of diverged runs are
    NaN from the divergence instant on.
    """

    sqerr: np.ndarray
    sigma_xi2_hat: np.ndarray
    diverged: np.ndarray
    w_final: np.ndarray

    @property
    def horizon(self):
        return self.sqerr.shape[1]


def run_batch(spec: ScenarioSpec, rngs: Sequence[np.random.Generator], a=None,
              horizon=None, cfg: Optional[DiffusionConfig] = None, backend=None,
              chunk=CHUNK) -> BatchRecord:
    """Run one independent experiment per generator in ``rngs``.

    Each run consumes only its own generator, in fixed-size time chunks, so a
    run's record does not depend on which other runs share the batch.
    """
    a = spec.combination_matrix() if a is None else np.asarray(a, dtype=float)
    cfg = cfg or DiffusionConfig.from_spec(spec)
    T = spec.horizon if horizon is None else int(horizon)
    B, N, M = len(rngs), spec.n_agents, spec.dim
    w_true = spec.w_true_array()
    sentinel2 = (SENTINEL_FACTOR * max(np.linalg.norm(w_true), 1e-12)) ** 2
    w = np.zeros((B, N, M))
    rhat = np.zeros((B, N, M))
    se = np.zeros((B, N))
    sx = np.zeros((B, N))
    alive = np.ones(B, dtype=bool)
    sqerr = np.empty((B, T, N))
    sxo = np.empty((B, T, N))
    corr_start = min(int(cfg.correction_start), np.iinfo(np.int64).max)
    for t0 in range(0, T, chunk):
        tc = min(chunk, T - t0)
        ub = np.empty((B, tc, N, M))
        d = np.empty((B, tc, N))
        for b, rng in enumerate(rngs):
            _, ub[b], _, d[b] = draw_stream(spec, rng, tc)
        out_e = np.empty((B, tc, N))
        out_s = np.empty((B, tc, N))
        _kernels.run_block(ub, d, a, cfg.mu, cfg.p_hat, cfg.sel, cfg.alphas, corr_start, t0,
                           cfg.hint(), cfg.feasibility_clamp, w, rhat, se, sx, w_true,
                           sentinel2, alive, out_e, out_s, backend=backend)
        sqerr[:, t0:t0 + tc] = out_e
        sxo[:, t0:t0 + tc] = out_s
    w_final = np.where(alive[:, None, None], w, np.nan)
    return BatchRecord(sqerr, sxo, ~alive, w_final)


def run_experiment(spec: ScenarioSpec, a, rng, horizon=None, backend=None) -> BatchRecord:
    """A single run; convenience wrapper around :func:`run_batch`."""
    return run_batch(spec, [rng], a=a, horizon=horizon, backend=backend)


def run_reference(spec: ScenarioSpec, rng, a=None, horizon=None):
    """Pure-Python run with the single-step functions (slow, for tests).

    Consumes ``rng`` exactly as :func:`run_batch` does for one run.
    Returns ``(sqerr (T, N), sigma_xi2_hat (T, N), final state)``.
    """
    a = spec.combination_matrix() if a is None else np.asarray(a, dtype=float)
    cfg = DiffusionConfig.from_spec(spec)
    T = spec.horizon if horizon is None else int(horizon)
    w_true = spec.w_true_array()
    state = NetworkState.zeros(spec.n_agents, spec.dim)
    sq = np.empty((T, spec.n_agents))
    sxt = np.empty((T, spec.n_agents))
    for t0 in range(0, T, CHUNK):
        tc = min(CHUNK, T - t0)
        _, ub, _, d = draw_stream(spec, rng, tc)
        for t in range(tc):
            state = network_step(state, ub[t], d[t], a, cfg, t0 + t)
            sq[t0 + t] = np.sum((state.w - w_true) ** 2, axis=1)
            sxt[t0 + t] = state.sigma_xi2_hat
    return sq, sxt, state
