"""Closed-form steady-state performance of the modified diffusion network.

Notation follows the block convention: every network quantity is an
NM x NM matrix built from per-agent M x M blocks, and ``vec`` stacks
columns (Fortran order) so that ``vec(X S Y) = (Y^T kron X) vec(S)``.

Per-component censoring is handled by replacing ``(1 - p) R`` with the
diagonal of ``(1 - p_j) r_j``, which reduces to the scalar form when every
component is maskable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .scenario import ScenarioSpec, draw_stream

DEFAULT_CAP = 256
# Refuse to allocate a transfer matrix beyond this many bytes.
DEFAULT_MAX_BYTES = 2 * 1024 ** 3


class CapacityError(ValueError):
    pass


class UnstableSpecError(ValueError):
    pass


def step_size_bound(r_u_diag, p, maskable=None) -> float:
    """Largest step size for mean stability of one agent.

    ``2 / max_j((1 - p_j) r_j)`` with ``p_j = p`` on ``maskable`` (all
    components when ``None``) and 0 elsewhere.
    """
    r = np.asarray(r_u_diag, dtype=float)
    if not 0.0 <= p < 1.0:
        raise ValueError("p must lie in [0, 1)")
    pj = np.full(r.size, float(p))
    if maskable is not None:
        pj = np.zeros(r.size)
        pj[list(maskable)] = p
    return float(2.0 / np.max((1.0 - pj) * r))


def spectral_radius(mat) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(mat)))) if np.size(mat) else 0.0


def mean_stability_radius(a_big, m_big, r_eff_block) -> float:
    """Spectral radius of ``A^T (I - M R_eff)`` (mean error recursion).

    ``r_eff_block`` is ``(1 - p) R`` in the scalar case; use
    :attr:`NetworkMoments.r_eff` for per-component censoring.
    """
    n = a_big.shape[0]
    return spectral_radius(a_big.T @ (np.eye(n) - m_big @ r_eff_block))


@dataclass
class NetworkMoments:
    """Block moments of the network; all members are NM x NM unless noted."""

    n_agents: int
    dim: int
    a_big: np.ndarray
    m_big: np.ndarray
    r_block: np.ndarray
    r_ubar_block: np.ndarray
    r_eff: np.ndarray
    s_block: np.ndarray
    r_e_block: np.ndarray
    k_block: np.ndarray
    g_big: np.ndarray
    w_ext: np.ndarray
    mu: np.ndarray

    @property
    def size(self):
        return self.n_agents * self.dim


def _check_cap(nm, cap):
    if nm > cap:
        raise CapacityError(f"NM = {nm} exceeds the cap of {cap}")


def assemble_moments(spec: ScenarioSpec, a=None, cap=DEFAULT_CAP) -> NetworkMoments:
    """Exact block moments for a diagonal-covariance spec."""
    n, m = spec.n_agents, spec.dim
    _check_cap(n * m, cap)
    a = spec.combination_matrix() if a is None else np.asarray(a, dtype=float)
    eye_m = np.eye(m)
    a_big = np.kron(a, eye_m)
    mu = np.asarray(spec.step_sizes, dtype=float)
    m_big = np.diag(np.repeat(mu, m))
    r = np.asarray(spec.r_u_diag, dtype=float)
    pj = np.zeros(m)
    pj[list(spec.maskable)] = spec.p
    sx = spec.sigma_xi2()
    sv = np.asarray(spec.sigma_v2, dtype=float)
    r_blk, rub, reff, s, re, kk = [], [], [], [], [], []
    for k in range(n):
        rb = (1.0 - pj) * r + pj * sx[k]
        r_blk.append(r)
        rub.append(rb)
        reff.append((1.0 - pj) * r)
        s.append(sv[k] * rb)
        re.append(-pj * sx[k])
        kk.append(np.where(pj > 0, sx[k], 0.0))
    diag = lambda blocks: np.diag(np.concatenate(blocks))
    return NetworkMoments(
        n_agents=n, dim=m, a_big=a_big, m_big=m_big,
        r_block=diag(r_blk), r_ubar_block=diag(rub), r_eff=diag(reff),
        s_block=diag(s), r_e_block=diag(re), k_block=diag(kk),
        g_big=a_big.T @ m_big, w_ext=np.tile(spec.w_true_array(), n), mu=mu)


def build_transfer_F(mom: NetworkMoments, cap=DEFAULT_CAP, max_bytes=DEFAULT_MAX_BYTES):
    """``A kron A - A kron (R M A) - (R^T M A) kron A`` with ``R = r_eff``."""
    nm = mom.size
    _check_cap(nm, cap)
    if 8 * nm ** 4 > max_bytes:
        raise CapacityError(f"transfer matrix for NM = {nm} needs {8 * nm ** 4 / 2 ** 30:.1f} GiB")
    A = mom.a_big
    rma = mom.r_eff @ mom.m_big @ A
    rtma = mom.r_eff.T @ mom.m_big @ A
    return np.kron(A, A) - np.kron(A, rma) - np.kron(rtma, A)


def build_Y(mom: NetworkMoments) -> np.ndarray:
    """``G S G^T`` with ``G = A^T M``."""
    return mom.g_big @ mom.s_block @ mom.g_big.T


def censoring_gradient_cov(spec: ScenarioSpec, rng, n_ensemble: int) -> np.ndarray:
    """Per-agent covariance of ``u_bar^T (u - xi) F w`` (shape (N, M, M)).

    The vector is agent k's gradient perturbation caused by censoring at the
    true parameter.  Estimated by ensemble averaging over ``n_ensemble``
    draws per agent.
    """
    if n_ensemble <= 0:
        raise ValueError("ensemble size must be positive (the expectation has no closed form)")
    u, ub, mask, _ = draw_stream(spec, rng, n_ensemble)
    w = spec.w_true_array()
    scal = np.einsum("tkm,m->tk", (u - ub) * mask, w)
    c = ub * scal[:, :, None]
    mean = c.mean(axis=0)
    second = np.einsum("tki,tkj->kij", c, c) / n_ensemble
    return second - np.einsum("ki,kj->kij", mean, mean)


def build_Z(mom: NetworkMoments, spec: ScenarioSpec, rng=None, n_ensemble=None) -> np.ndarray:
    """Censoring-noise contribution to the variance relation.

    ``-G R_e W R_e G^T + G E[R_e,i W R_e,i^T] G^T`` with ``W = w_e w_e^T``.
    Spatial independence makes the off-diagonal blocks of the expectation
    equal to those of ``R_e W R_e``, so only the diagonal blocks differ and
    they reduce to per-agent covariances, estimated by ensemble averaging.
    """
    n, m = mom.n_agents, mom.dim
    if spec.p == 0 or not np.any(mom.w_ext):
        return np.zeros((n * m, n * m))
    n_ensemble = spec.theory_ensemble if n_ensemble is None else int(n_ensemble)
    rng = np.random.default_rng(spec.theory_seed) if rng is None else rng
    cov = censoring_gradient_cov(spec, rng, n_ensemble)
    blk = np.zeros((n * m, n * m))
    for k in range(n):
        blk[k * m:(k + 1) * m, k * m:(k + 1) * m] = cov[k]
    return mom.g_big @ blk @ mom.g_big.T


def predict_msd(f_mat, y_mat, z_mat, n_agents, dim, mu=None):
    """Steady-state network and per-agent MSD from the variance relation.

    Returns ``(msd_network, msd_per_node)``.  ``mu`` is only used to name
    agents in the instability message.
    """
    nm = n_agents * dim
    rho = spectral_radius(f_mat)
    if rho >= 1.0:
        culprit = ""
        if mu is not None:
            k = int(np.argmax(mu))
            culprit = f"; largest step size mu_{k + 1} = {mu[k]:g}"
        raise UnstableSpecError(f"transfer matrix spectral radius {rho:.6f} >= 1{culprit}")
    b = (y_mat + z_mat).T.reshape(-1, order="F")
    rhs = np.zeros((nm * nm, n_agents + 1))
    rhs[:, 0] = np.eye(nm).reshape(-1, order="F")
    for k in range(n_agents):
        ik = np.zeros((nm, nm))
        ik[k * dim:(k + 1) * dim, k * dim:(k + 1) * dim] = np.eye(dim)
        rhs[:, k + 1] = ik.reshape(-1, order="F")
    sol = lu_solve(lu_factor(np.eye(nm * nm) - f_mat), rhs)
    vals = b @ sol
    return float(vals[0] / n_agents), vals[1:].copy()


@dataclass
class TheoryPrediction:
    moments: NetworkMoments
    f_mat: np.ndarray
    y_mat: np.ndarray
    z_mat: np.ndarray
    msd_network: float
    msd_per_node: np.ndarray
    mean_radius: float

    @property
    def msd_network_db(self):
        return 10 * np.log10(self.msd_network)

    @property
    def msd_per_node_db(self):
        return 10 * np.log10(self.msd_per_node)


def predict(spec: ScenarioSpec, a=None, rng=None, n_ensemble=None,
            cap=DEFAULT_CAP) -> TheoryPrediction:
    """Assemble moments, build F, Y, Z and solve for the steady-state MSDs."""
    mom = assemble_moments(spec, a, cap=cap)
    f = build_transfer_F(mom, cap=cap)
    y = build_Y(mom)
    z = build_Z(mom, spec, rng=rng, n_ensemble=n_ensemble)
    net, per = predict_msd(f, y, z, spec.n_agents, spec.dim, mu=mom.mu)
    return TheoryPrediction(mom, f, y, z, net, per,
                            mean_stability_radius(mom.a_big, mom.m_big, mom.r_eff))


def mean_error_recursion(mom: NetworkMoments, w0_err: Optional[np.ndarray], steps: int):
    """Iterate ``E w~_i = A^T (I - M R_eff) E w~_{i-1}``; returns (steps+1, NM)."""
    b = mom.a_big.T @ (np.eye(mom.size) - mom.m_big @ mom.r_eff)
    out = np.empty((steps + 1, mom.size))
    out[0] = mom.w_ext if w0_err is None else w0_err
    for i in range(steps):
        out[i + 1] = b @ out[i]
    return out
