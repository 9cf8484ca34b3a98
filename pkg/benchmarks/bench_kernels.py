"""Time the diffusion kernel with and without numba.

Usage::

    python3 benchmarks/bench_kernels.py [--horizon 2000] [--repeat 3]

The numba path is compiled once before timing.  Data are drawn up front so
only the recursion is measured; the last table row times a full
``run_batch`` (data generation included) for context.
"""

import argparse
import time

import numpy as np

from missnet import _kernels
from missnet.diffusion import DiffusionConfig, run_batch
from missnet.scenario import draw_stream, load_scenario


def _inputs(spec, batch, horizon, seed=0):
    rng = np.random.default_rng(seed)
    ub = np.empty((batch, horizon, spec.n_agents, spec.dim))
    d = np.empty((batch, horizon, spec.n_agents))
    for b in range(batch):
        _, ub[b], _, d[b] = draw_stream(spec, rng, horizon)
    return ub, d


def time_kernel(spec, ub, d, backend, repeat):
    cfg = DiffusionConfig.from_spec(spec)
    a = spec.combination_matrix()
    B, T, N, M = ub.shape
    best = np.inf
    for _ in range(repeat):
        state = [np.zeros((B, N, M)), np.zeros((B, N, M)), np.zeros((B, N)), np.zeros((B, N))]
        alive = np.ones(B, dtype=bool)
        out_e, out_s = np.empty((B, T, N)), np.empty((B, T, N))
        t = time.perf_counter()
        _kernels.run_block(ub, d, a, cfg.mu, cfg.p_hat, cfg.sel, cfg.alphas,
                           cfg.correction_start, 0, cfg.hint(), cfg.feasibility_clamp,
                           *state, spec.w_true_array(), 1e12, alive, out_e, out_s,
                           backend=backend)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="generic")
    ap.add_argument("--horizon", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    spec = load_scenario(args.scenario)
    backends = ["numpy"] + (["numba"] if _kernels._HAVE_NUMBA else [])
    if "numba" in backends:
        ub, d = _inputs(spec, 1, 10)
        time_kernel(spec, ub, d, "numba", 1)          # compile

    print(f"scenario {spec.name}, N={spec.n_agents}, M={spec.dim}, horizon {args.horizon}")
    print(f"{'runs':>6} " + " ".join(f"{b:>12}" for b in backends) + "   speedup")
    for batch in (1, 8, 64):
        ub, d = _inputs(spec, batch, args.horizon)
        secs = [time_kernel(spec, ub, d, b, args.repeat) for b in backends]
        speed = f"{secs[0] / secs[-1]:8.1f}x" if len(secs) > 1 else ""
        print(f"{batch:>6} " + " ".join(f"{s * 1e3:10.1f}ms" for s in secs) + "  " + speed)

    for b in backends:
        rngs = [np.random.default_rng(i) for i in range(64)]
        t = time.perf_counter()
        run_batch(spec, rngs, horizon=args.horizon, backend=b)
        print(f"run_batch, 64 runs, {b}: {time.perf_counter() - t:.2f} s")


if __name__ == "__main__":
    main()
