"""Centralised comparison pipeline: detect missing entries, impute, solve LS.

Detection is a Bayesian test on one regressor component.  Under H0 the
entry is an observed Gaussian with variance ``R``; under H1 it is the
substituted noise (Gaussian with variance ``s2`` or uniform on ``[-q, q]``).
Parameters are recovered from second moments given the known ratio
``r = R / s2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

GAUSSIAN = "gaussian-gaussian"
UNIFORM = "gaussian-uniform"
OBSERVED, MISSING = 0, 1


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class PooledDataset:
    """Per-agent censored samples handed to the centralised baselines.

    ``u_bar[k]`` is (M_k, M), ``d[k]`` is (M_k,), ``ratio[k]`` is the known
    ``R_u(j, j) / sigma_xi2`` of agent k and ``target`` the 0-based component.
    """

    u_bar: Sequence[np.ndarray]
    d: Sequence[np.ndarray]
    ratio: Sequence[float]
    p_hat: float
    target: int = 0

    def __post_init__(self):
        if len(self.u_bar) != len(self.d) or len(self.u_bar) != len(self.ratio):
            raise BaselineError("per-agent lists differ in length")
        for k, (ub, d) in enumerate(zip(self.u_bar, self.d)):
            if ub.ndim != 2 or ub.shape[0] != d.shape[0]:
                raise BaselineError(f"agent {k}: u_bar and d sizes differ")
        if any(r <= 0 for r in self.ratio):
            raise BaselineError("ratios must be positive")

    @property
    def n_agents(self):
        return len(self.u_bar)

    def head(self, n):
        """First ``n`` samples of every agent."""
        return PooledDataset([ub[:n] for ub in self.u_bar], [d[:n] for d in self.d],
                             self.ratio, self.p_hat, self.target)


@dataclass(frozen=True)
class DetectionRule:
    """Fitted two-hypothesis test for one agent."""

    kind: str
    r_hat: float
    sigma_check2: float
    p_hat: float

    @property
    def q_hat(self) -> float:
        return float(np.sqrt(3.0 * self.sigma_check2))

    @property
    def gamma(self) -> float:
        return (1.0 - self.p_hat) / self.p_hat


def moment_variance_estimate(u_bar_j, ratio, p_hat):
    """Noise variance and observed variance from the second moment.

    Returns ``(sigma_check2, r_u_hat)`` with
    ``sigma_check2 = sum(u_j^2) / (n ((1 - p_hat) r + p_hat))`` and
    ``r_u_hat = r sigma_check2``.
    """
    x = np.asarray(u_bar_j, dtype=float)
    if x.size == 0:
        raise BaselineError("no samples to estimate the variance from")
    s2 = float(np.dot(x, x) / (x.size * ((1.0 - p_hat) * ratio + p_hat)))
    return s2, ratio * s2


def fit_rule(u_bar_j, ratio, p_hat, kind=GAUSSIAN) -> DetectionRule:
    if kind not in (GAUSSIAN, UNIFORM):
        raise BaselineError(f"unknown detector kind {kind!r}")
    s2, r_hat = moment_variance_estimate(u_bar_j, ratio, p_hat)
    return DetectionRule(kind, r_hat, s2, p_hat)


def detect_gaussian(u_bar_j, rule: DetectionRule):
    """Gaussian-vs-Gaussian rule; returns 1 (missing) or 0 per entry."""
    x2 = np.square(np.asarray(u_bar_j, dtype=float))
    R, s2, p = rule.r_hat, rule.sigma_check2, rule.p_hat
    if R == s2 or s2 <= 0.0:
        if s2 <= 0.0 < R:
            # H1 density is a point mass at zero
            return np.where(x2 == 0.0, MISSING, OBSERVED)
        return np.full(x2.shape, MISSING if p > 0.5 else OBSERVED, dtype=int)
    lhs = x2 * (1.0 / R - 1.0 / s2)
    rhs = np.log((1.0 - p) ** 2 * s2 / (p * p * R))
    return np.where(lhs > rhs, MISSING, OBSERVED)


def detect_uniform(u_bar_j, rule: DetectionRule):
    """Gaussian-vs-uniform rule with the fitted half width ``q_hat``."""
    x = np.asarray(u_bar_j, dtype=float)
    R, p, q = rule.r_hat, rule.p_hat, rule.q_hat
    if q <= 0.0 or R <= 0.0:
        return np.full(x.shape, OBSERVED, dtype=int)
    thr = 2.0 * R * np.log(2.0 * (1.0 - p) * q / (p * np.sqrt(2.0 * np.pi * R)))
    inside = np.abs(x) <= q
    return np.where(inside & (x * x > thr), MISSING, OBSERVED)


def detect(u_bar_j, rule: DetectionRule):
    return detect_gaussian(u_bar_j, rule) if rule.kind == GAUSSIAN else detect_uniform(u_bar_j, rule)


def fit_rules(data: PooledDataset, kind=GAUSSIAN):
    """One rule per agent, fitted on that agent's full batch."""
    return [fit_rule(ub[:, data.target], r, data.p_hat, kind)
            for ub, r in zip(data.u_bar, data.ratio)]


def _solve_ls(x, d):
    """Pooled least squares; identically-zero columns get coefficient 0."""
    live = np.any(x != 0.0, axis=0)
    w = np.zeros(x.shape[1])
    if not live.any():
        return w
    xs = x[:, live]
    sol, _, rank, sv = np.linalg.lstsq(xs, d, rcond=None)
    if rank < xs.shape[1]:
        raise BaselineError(f"normal equations singular: rank {rank} < {xs.shape[1]} "
                            f"(smallest singular value {sv.min() if sv.size else 0:.3g})")
    w[live] = sol
    return w


def imput_ls(data: PooledDataset, rules=None, kind=GAUSSIAN):
    """Detect, fill detected-missing entries with the pooled mean, solve LS.

    Returns ``(w_hat, flags)`` where ``flags`` lists each agent's 0/1
    detection decisions on the target component.
    """
    rules = fit_rules(data, kind) if rules is None else rules
    j = data.target
    flags = [detect(ub[:, j], rule) for ub, rule in zip(data.u_bar, rules)]
    x = np.concatenate(data.u_bar).copy()
    d = np.concatenate(data.d)
    miss = np.concatenate(flags).astype(bool)
    kept = x[~miss, j]
    fill = kept.mean() if kept.size else 0.0
    x[miss, j] = fill
    return _solve_ls(x, d), flags


def oracle_ols(u: Sequence[np.ndarray], d: Sequence[np.ndarray]):
    """Pooled least squares on the uncensored regressors (a floor)."""
    return _solve_ls(np.concatenate(u), np.concatenate(d))


def checkpoint_grid(horizon, n_points=24):
    """Geometric grid of sample counts in ``[1, horizon]``, always ending at horizon."""
    if horizon <= 0:
        return np.zeros(0, dtype=int)
    grid = np.unique(np.round(np.geomspace(1, horizon, n_points)).astype(int))
    return grid
