"""Hot loop of the diffusion recursion.

Two interchangeable implementations of :func:`run_block`: a numba-compiled
one looping over runs, and a numpy one vectorised over runs.  Set
``MISSNET_NO_NUMBA=1`` to force the numpy path.
"""

import os

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

_DISABLED = os.environ.get("MISSNET_NO_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
USE_NUMBA = _HAVE_NUMBA and not _DISABLED

NORM_GUARD = 1e-12


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def _run_block_numpy(ubar, d, a, mu, p_hat, sel, alphas, corr_start, t0,
                     sv2_hint, feasibility, w, rhat, se, sx, w_true,
                     sentinel2, alive, sqerr, sx_out):
    B, T, N, M = ubar.shape
    a1, a2, a3 = alphas
    at = np.ascontiguousarray(a.T)
    mu_c = mu[None, :, None]
    ph = p_hat[None, :]
    denom_scale = ph * (1.0 - 2.0 * ph)
    self_sel = sel[None, :, :]
    for t in range(T):
        ub = ubar[:, t]
        e = d[:, t] - np.sum(ub * w, axis=2)
        if t0 + t >= corr_start:
            gain = (mu[None, :] * ph * sx)[:, :, None]
            phi = w * (1.0 + gain * self_sel) + mu_c * ub * e[:, :, None]
            rhat[:] = (1.0 - a1) * rhat + a1 * ub * ub
            se[:] = (1.0 - a2) * se + a2 * e * e
            ww = np.sum(w * w * self_sel, axis=2)
            wr = np.sum(rhat * w * w * self_sel, axis=2)
            ok = ww >= NORM_GUARD
            g = ((1.0 - ph) * (se - sv2_hint[None, :]) - ph * wr) / (denom_scale * np.where(ok, ww, 1.0))
            g = np.maximum(g, 0.0)
            sx[:] = np.where(ok, (1.0 - a3) * sx + a3 * g, sx)
            if feasibility:
                rmin = np.min(np.where(self_sel, rhat, np.inf), axis=2)
                np.minimum(sx, rmin / ph, out=sx)
        else:
            phi = w + mu_c * ub * e[:, :, None]
        w[:] = at @ phi
        err = w - w_true
        sq = np.sum(err * err, axis=2)
        norm2 = np.sum(w * w, axis=2)
        bad = ~np.all(np.isfinite(sq) & (norm2 <= sentinel2), axis=1)
        newly = bad & alive
        if newly.any():
            alive[newly] = False
        dead = ~alive
        if dead.any():
            w[dead] = 0.0
            rhat[dead] = 0.0
            se[dead] = 0.0
            sx[dead] = 0.0
            sq[dead] = np.nan
        sqerr[:, t] = sq
        sx_out[:, t] = np.where(alive[:, None], sx, np.nan)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _run_block_numba(ubar, d, a, mu, p_hat, sel, alphas, corr_start, t0,
                         sv2_hint, feasibility, w, rhat, se, sx, w_true,
                         sentinel2, alive, sqerr, sx_out):
        B, T, N, M = ubar.shape
        a1 = alphas[0]
        a2 = alphas[1]
        a3 = alphas[2]
        phi = np.empty((N, M))
        for b in range(B):
            for t in range(T):
                if not alive[b]:
                    for k in range(N):
                        sqerr[b, t, k] = np.nan
                        sx_out[b, t, k] = np.nan
                    continue
                corr = t0 + t >= corr_start
                for k in range(N):
                    acc = 0.0
                    for m in range(M):
                        acc += ubar[b, t, k, m] * w[b, k, m]
                    ek = d[b, t, k] - acc
                    if corr:
                        gain = mu[k] * p_hat[k] * sx[b, k]
                        for m in range(M):
                            phi[k, m] = w[b, k, m] * (1.0 + gain * sel[k, m]) + mu[k] * ubar[b, t, k, m] * ek
                        ph = p_hat[k]
                        ww = 0.0
                        wr = 0.0
                        rmin = np.inf
                        for m in range(M):
                            rhat[b, k, m] = (1.0 - a1) * rhat[b, k, m] + a1 * ubar[b, t, k, m] * ubar[b, t, k, m]
                            if sel[k, m] != 0.0:
                                ww += w[b, k, m] * w[b, k, m]
                                wr += rhat[b, k, m] * w[b, k, m] * w[b, k, m]
                                if rhat[b, k, m] < rmin:
                                    rmin = rhat[b, k, m]
                        se[b, k] = (1.0 - a2) * se[b, k] + a2 * ek * ek
                        if ww >= 1e-12:
                            g = ((1.0 - ph) * (se[b, k] - sv2_hint[k]) - ph * wr) / (ph * (1.0 - 2.0 * ph) * ww)
                            if g < 0.0:
                                g = 0.0
                            sx[b, k] = (1.0 - a3) * sx[b, k] + a3 * g
                        if feasibility:
                            cap = rmin / ph
                            if sx[b, k] > cap:
                                sx[b, k] = cap
                    else:
                        for m in range(M):
                            phi[k, m] = w[b, k, m] + mu[k] * ubar[b, t, k, m] * ek
                bad = False
                for k in range(N):
                    sq = 0.0
                    n2 = 0.0
                    for m in range(M):
                        acc = 0.0
                        for l in range(N):
                            acc += a[l, k] * phi[l, m]
                        w[b, k, m] = acc
                        diff = acc - w_true[m]
                        sq += diff * diff
                        n2 += acc * acc
                    if not (np.isfinite(sq) and n2 <= sentinel2):
                        bad = True
                    sqerr[b, t, k] = sq
                    sx_out[b, t, k] = sx[b, k]
                if bad:
                    alive[b] = False
                    for k in range(N):
                        sqerr[b, t, k] = np.nan
                        sx_out[b, t, k] = np.nan
                        se[b, k] = 0.0
                        sx[b, k] = 0.0
                        for m in range(M):
                            w[b, k, m] = 0.0
                            rhat[b, k, m] = 0.0


def run_block(ubar, d, a, mu, p_hat, sel, alphas, corr_start, t0, sv2_hint,
              feasibility, w, rhat, se, sx, w_true, sentinel2, alive,
              sqerr, sx_out, backend=None):
    """Advance ``B`` independent runs over ``T`` instants, in place.

    ``ubar`` is (B, T, N, M) and ``d`` is (B, T, N).  Instants with absolute
    index ``t0 + t >= corr_start`` use the corrected recursion and update the
    noise-power estimators; earlier ones run plain ATC.  ``sqerr`` and
    ``sx_out`` (B, T, N) receive per-agent squared deviation and the noise
    power estimate after each instant; diverged runs are frozen and report NaN.
    """
    backend = backend or default_backend()
    args = (np.ascontiguousarray(ubar, dtype=np.float64),
            np.ascontiguousarray(d, dtype=np.float64),
            np.ascontiguousarray(a, dtype=np.float64),
            np.ascontiguousarray(mu, dtype=np.float64),
            np.ascontiguousarray(p_hat, dtype=np.float64),
            np.ascontiguousarray(sel, dtype=np.float64),
            np.ascontiguousarray(alphas, dtype=np.float64),
            np.int64(corr_start), np.int64(t0),
            np.ascontiguousarray(sv2_hint, dtype=np.float64),
            bool(feasibility), w, rhat, se, sx,
            np.ascontiguousarray(w_true, dtype=np.float64),
            float(sentinel2), alive, sqerr, sx_out)
    if backend == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        _run_block_numba(*args)
    elif backend == "numpy":
        with np.errstate(over="ignore", invalid="ignore"):
            _run_block_numpy(*args)
    else:
        raise ValueError(f"unknown backend {backend!r}")
