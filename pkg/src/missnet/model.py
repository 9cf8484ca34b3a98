"""Ground-truth data model for regressors censored completely at random.

Every agent observes ``d = u @ w_true + v``; entries of ``u`` listed as
maskable are independently replaced, with probability ``p``, by a draw of the
perturbation ``xi``.  The closed forms below assume a diagonal regressor
covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

RegressorFn = Callable[[np.random.Generator, tuple], np.ndarray]


class ContractError(ValueError):
    """Raised when inputs violate an operation's preconditions."""


@dataclass(frozen=True)
class AgentStatistics:
    """Second-order statistics of one agent's uncensored data."""

    r_u_diag: np.ndarray
    sigma_v2: float
    w_true: Optional[np.ndarray] = None

    def __post_init__(self):
        r = np.asarray(self.r_u_diag, dtype=float)
        if r.ndim != 1 or r.size == 0:
            raise ContractError("r_u_diag must be a non-empty vector")
        if np.any(r <= 0):
            raise ContractError("r_u_diag entries must be strictly positive")
        if self.sigma_v2 < 0:
            raise ContractError("sigma_v2 must be nonnegative")
        object.__setattr__(self, "r_u_diag", r)
        if self.w_true is not None:
            w = np.asarray(self.w_true, dtype=float)
            if w.shape != r.shape:
                raise ContractError("w_true and r_u_diag dimensions differ")
            object.__setattr__(self, "w_true", w)

    @property
    def dim(self) -> int:
        return self.r_u_diag.size

    @property
    def r_du(self) -> np.ndarray:
        if self.w_true is None:
            raise ContractError("r_du needs w_true")
        return self.r_u_diag * self.w_true


@dataclass(frozen=True)
class MissingModel:
    """MCAR censoring mechanism for one agent.

    ``xi_kind`` is ``"gaussian"`` (``xi_param`` is the variance) or
    ``"uniform"`` (``xi_param`` is the half width of the support).
    ``maskable`` holds 0-based component indices.
    """

    p: float
    p_hat: float
    xi_kind: str
    xi_param: float
    maskable: tuple = field(default=(0,))

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ContractError(f"p must lie in [0, 1), got {self.p}")
        if not 0.0 < self.p_hat < 1.0 or self.p_hat == 0.5:
            raise ContractError(f"p_hat must lie in (0, 1) and differ from 1/2, got {self.p_hat}")
        if self.xi_kind not in ("gaussian", "uniform"):
            raise ContractError(f"unknown xi distribution {self.xi_kind!r}")
        if self.xi_param < 0:
            raise ContractError("xi parameter must be nonnegative")
        object.__setattr__(self, "maskable", tuple(sorted(int(j) for j in self.maskable)))
        if self.p > 0 and not self.maskable:
            raise ContractError("maskable set must be nonempty when p > 0")

    @property
    def sigma_xi2(self) -> float:
        if self.xi_kind == "uniform":
            return self.xi_param ** 2 / 3.0
        return float(self.xi_param)

    def mask_vector(self, dim: int) -> np.ndarray:
        """Boolean indicator of the maskable components."""
        sel = np.zeros(dim, dtype=bool)
        if self.maskable and max(self.maskable) >= dim:
            raise ContractError("maskable index out of range")
        sel[list(self.maskable)] = True
        return sel

    def p_vector(self, dim: int) -> np.ndarray:
        """Per-component missing probability (0 where not maskable)."""
        return self.p * self.mask_vector(dim)

    def draw_xi(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.xi_kind == "uniform":
            return rng.uniform(-self.xi_param, self.xi_param, shape)
        return rng.standard_normal(shape) * np.sqrt(self.xi_param)


@dataclass
class AgentSample:
    u: np.ndarray
    u_bar: np.ndarray
    mask: np.ndarray
    d: float


def gaussian_regressor(r_u_diag) -> RegressorFn:
    """Zero-mean Gaussian regressor with diagonal covariance."""
    scale = np.sqrt(np.asarray(r_u_diag, dtype=float))

    def draw(rng, shape):
        return rng.standard_normal(tuple(shape) + (scale.size,)) * scale

    return draw


def draw_samples(rng, stats: AgentStatistics, miss: MissingModel, w_true,
                 size=(), regressor: Optional[RegressorFn] = None,
                 force_mask: Optional[np.ndarray] = None):
    """Vectorised sample draw; returns ``(u, u_bar, mask, d)`` arrays.

    ``size`` is the leading batch shape.  ``force_mask`` overrides the random
    indicator (a test hook).
    """
    w_true = np.asarray(w_true, dtype=float)
    if w_true.shape != (stats.dim,):
        raise ContractError("w_true dimension does not match the statistics")
    size = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
    draw_u = regressor or gaussian_regressor(stats.r_u_diag)
    u = draw_u(rng, size)
    if u.shape != size + (stats.dim,):
        raise ContractError("regressor generator returned the wrong shape")
    if force_mask is not None:
        mask = np.broadcast_to(np.asarray(force_mask, dtype=bool), u.shape).copy()
    else:
        mask = (rng.random(u.shape) < miss.p) & miss.mask_vector(stats.dim)
    xi = miss.draw_xi(rng, u.shape)
    u_bar = np.where(mask, xi, u)
    v = rng.standard_normal(size) * np.sqrt(stats.sigma_v2)
    d = u @ w_true + v
    return u, u_bar, mask, d


def draw_sample(rng, stats: AgentStatistics, miss: MissingModel, w_true,
                regressor: Optional[RegressorFn] = None,
                force_mask=None) -> AgentSample:
    u, u_bar, mask, d = draw_samples(rng, stats, miss, w_true, (),
                                     regressor=regressor, force_mask=force_mask)
    return AgentSample(u=u, u_bar=u_bar, mask=mask, d=float(d))


def censored_covariance(stats: AgentStatistics, miss: MissingModel):
    """Diagonals of the censored covariance and of the regulariser ``T``."""
    pj = miss.p_vector(stats.dim)
    t_diag = pj * miss.sigma_xi2
    r_ubar = (1.0 - pj) * stats.r_u_diag + t_diag
    return r_ubar, t_diag


def censored_covariance_dense(r_u: np.ndarray, p: float, sigma_xi2: float) -> np.ndarray:
    """Censored covariance for a full (possibly non-diagonal) ``r_u``.

    Every component is maskable here.  The expectation
    ``E[(I-F) R (I-F)] + sigma_xi2 E[F^2]`` is assembled with the matrix
    ``P1 = (2p - p^2) 11^T - (p - p^2) I``.
    """
    r_u = np.asarray(r_u, dtype=float)
    m = r_u.shape[0]
    p1 = (2 * p - p * p) * np.ones((m, m)) - (p - p * p) * np.eye(m)
    return r_u - p1 * r_u + p * sigma_xi2 * np.eye(m)


def biased_fixed_point_dense(r_u, w_true, p: float, sigma_xi2: float) -> np.ndarray:
    """Biased Wiener solution ``(I - Q)(1-p) w`` for a full ``r_u``."""
    r_u = np.asarray(r_u, dtype=float)
    m = r_u.shape[0]
    r_r = censored_covariance_dense(r_u, p, sigma_xi2) - r_u
    x = np.linalg.solve(r_u, r_r)
    q = x @ np.linalg.inv(np.eye(m) + x)
    return (np.eye(m) - q) @ ((1 - p) * np.asarray(w_true, dtype=float))


def biased_fixed_point(stats: AgentStatistics, miss: MissingModel, w_true) -> np.ndarray:
    """Wiener solution obtained from censored regressors."""
    w_true = np.asarray(w_true, dtype=float)
    r_ubar, _ = censored_covariance(stats, miss)
    pj = miss.p_vector(stats.dim)
    return (1.0 - pj) * stats.r_u_diag * w_true / r_ubar


def mse_at(stats: AgentStatistics, w_true, w) -> float:
    """Exact MSE of the uncensored model at candidate ``w``."""
    w_true = np.asarray(w_true, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.shape != w_true.shape or w.shape != (stats.dim,):
        raise ContractError("dimension mismatch")
    return float(stats.sigma_v2 + np.sum(stats.r_u_diag * (w - w_true) ** 2))
