"""Monte Carlo driver and result emission.

Experiments are grouped in fixed blocks of ``BLOCK`` seed-indexed runs.  A
block's output depends only on the master seed and its indices, and block
results are reduced in index order, so outputs are identical for any number
of workers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines as bl
from .diffusion import run_batch
from .scenario import ScenarioSpec, describe, draw_stream, load_scenario
from .theory import (CapacityError, UnstableSpecError, mean_stability_radius, predict,
                     step_size_bound, assemble_moments)

BLOCK = 8
STREAM_DIFFUSION = 0
STREAM_BASELINE = 1
FLOAT_FMT = "{:.9g}"


class AllDivergedError(RuntimeError):
    pass


@dataclass
class RunConfig:
    spec: ScenarioSpec
    n_experiments: int = 400
    horizon: Optional[int] = None
    master_seed: int = 0
    out_dir: Optional[Path] = None
    emit_theory: bool = False
    emit_baselines: bool = False
    emit_plot_data: bool = False
    workers: int = 1
    backend: Optional[str] = None
    baseline_experiments: Optional[int] = None

    def __post_init__(self):
        if self.n_experiments < 1:
            raise ValueError("n_experiments must be at least 1")
        if self.horizon is None:
            self.horizon = self.spec.horizon
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if self.master_seed < 0:
            raise ValueError("master seed must be nonnegative")

    @classmethod
    def from_scenario(cls, scenario, p=None, n_experiments=None, horizon=None, **kw):
        spec = load_scenario(scenario, p=p)
        n = spec.n_experiments if n_experiments is None else n_experiments
        return cls(spec=spec, n_experiments=n, horizon=horizon, **kw)


def experiment_rng(master_seed, index, stream=STREAM_DIFFUSION):
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(stream, index)))


def _diffusion_block(spec, horizon, master_seed, indices, backend):
    rngs = [experiment_rng(master_seed, i) for i in indices]
    rec = run_batch(spec, rngs, horizon=horizon, backend=backend)
    ok = ~rec.diverged
    return (rec.sqerr[ok].sum(axis=0), rec.sigma_xi2_hat[ok].sum(axis=0),
            rec.w_final[ok].sum(axis=0), int(ok.sum()), int(rec.diverged.sum()))


def _baseline_data(spec, rng, n_samples):
    u, ub, _, d = draw_stream(spec, rng, n_samples)
    w = spec.w_true_array()
    sx = spec.sigma_xi2()
    j = spec.maskable[0] if spec.maskable else 0
    ratio = [spec.r_u_diag[j] / s if s > 0 else 1e12 for s in sx]
    data = bl.PooledDataset([ub[:, k] for k in range(spec.n_agents)],
                            [d[:, k] for k in range(spec.n_agents)],
                            ratio, spec.p_hat, j)
    return u, data, w


def _baseline_block(spec, n_samples, grid, master_seed, indices):
    kind = bl.UNIFORM if spec.xi_kind == "uniform" else bl.GAUSSIAN
    imp = np.zeros(grid.size)
    ols = np.zeros(grid.size)
    cnt = np.zeros(grid.size)
    for i in indices:
        rng = experiment_rng(master_seed, i, STREAM_BASELINE)
        u, data, w = _baseline_data(spec, rng, n_samples)
        for g, n in enumerate(grid):
            head = data.head(n)
            try:
                w_imp, _ = bl.imput_ls(head, kind=kind)
                w_ols = bl.oracle_ols([u[:n, k] for k in range(spec.n_agents)], head.d)
            except bl.BaselineError:
                continue
            imp[g] += np.sum((w_imp - w) ** 2)
            ols[g] += np.sum((w_ols - w) ** 2)
            cnt[g] += 1
    return imp, ols, cnt


@dataclass
class MonteCarloResult:
    spec: ScenarioSpec
    n_experiments: int
    horizon: int
    msd_node: np.ndarray            # (T, N) linear, averaged over non-divergent runs
    sigma_xi2_hat: np.ndarray       # (T, N)
    mean_w_final: np.ndarray        # (N, M)
    n_ok: int
    n_diverged: int
    theory: Optional[object] = None
    theory_error: Optional[str] = None
    baseline_grid: Optional[np.ndarray] = None
    imput_ls_msd: Optional[np.ndarray] = None
    oracle_ols_msd: Optional[np.ndarray] = None
    summary: dict = field(default_factory=dict)

    @property
    def msd_network(self):
        return self.msd_node.mean(axis=1)

    def steady_window(self):
        return max(1, math.ceil(0.1 * self.horizon))


def _blocks(n):
    return [list(range(s, min(s + BLOCK, n))) for s in range(0, n, BLOCK)]


def _map(fn, arg_lists, workers):
    if workers <= 1 or len(arg_lists) <= 1:
        return [fn(*args) for args in arg_lists]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(fn, *args) for args in arg_lists]
        return [f.result() for f in futs]


def monte_carlo(cfg: RunConfig) -> MonteCarloResult:
    """Run all experiments and summarise them (nothing is written here)."""
    spec, T = cfg.spec, cfg.horizon
    N, M = spec.n_agents, spec.dim
    blocks = _blocks(cfg.n_experiments)
    parts = _map(_diffusion_block,
                 [(spec, T, cfg.master_seed, idx, cfg.backend) for idx in blocks], cfg.workers)
    sq = np.zeros((T, N))
    sx = np.zeros((T, N))
    wf = np.zeros((N, M))
    n_ok = n_div = 0
    for s_sq, s_sx, s_w, ok, div in parts:   # fixed block order
        sq += s_sq
        sx += s_sx
        wf += s_w
        n_ok += ok
        n_div += div
    if n_ok == 0:
        bounds = [step_size_bound(spec.r_u_diag, spec.p, spec.maskable)] * N
        raise AllDivergedError(
            f"all {cfg.n_experiments} runs diverged; step sizes {list(spec.step_sizes)} "
            f"vs mean-stability bounds {bounds}")
    res = MonteCarloResult(spec, cfg.n_experiments, T, sq / n_ok, sx / n_ok, wf / n_ok, n_ok, n_div)
    if cfg.emit_theory:
        try:
            res.theory = predict(spec)
        except (UnstableSpecError, CapacityError) as exc:
            res.theory_error = str(exc)
    if cfg.emit_baselines and T > 0:
        n_samples = T if spec.baseline_samples is None else max(1, spec.baseline_samples // N)
        grid = bl.checkpoint_grid(n_samples)
        grid = grid[grid >= max(1, math.ceil(M / N) + 1)]
        nb = cfg.n_experiments if cfg.baseline_experiments is None else cfg.baseline_experiments
        parts = _map(_baseline_block,
                     [(spec, n_samples, grid, cfg.master_seed, idx) for idx in _blocks(nb)],
                     cfg.workers)
        imp = sum(p[0] for p in parts)
        ols = sum(p[1] for p in parts)
        cnt = sum(p[2] for p in parts)
        with np.errstate(invalid="ignore", divide="ignore"):
            res.baseline_grid = grid
            res.imput_ls_msd = imp / cnt
            res.oracle_ols_msd = ols / cnt
    res.summary = summarize(res)
    return res


def _db(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10.0 * np.log10(x)


def summarize(res: MonteCarloResult) -> dict:
    s = {"scenario": res.spec.name, "n_experiments": res.n_experiments, "horizon": res.horizon,
         "n_diverged": res.n_diverged, "sigma_xi2_true": res.spec.sigma_xi2()}
    if res.horizon > 0:
        win = res.steady_window()
        node = res.msd_node[-win:].mean(axis=0)
        s["steady_window"] = win
        s["msd_network_db"] = float(_db(node.mean()))
        s["msd_node_db"] = _db(node)
        s["sigma_xi2_hat"] = res.sigma_xi2_hat[-win:].mean(axis=0)
    else:
        s["steady_window"] = 0
        s["msd_network_db"] = float(_db(np.sum(res.spec.w_true_array() ** 2)))
        s["msd_node_db"] = np.full(res.spec.n_agents, s["msd_network_db"])
        s["sigma_xi2_hat"] = np.zeros(res.spec.n_agents)
    if res.theory is not None:
        s["theory_network_db"] = float(res.theory.msd_network_db)
        s["theory_node_db"] = res.theory.msd_per_node_db
    if res.imput_ls_msd is not None and res.imput_ls_msd.size:
        s["imput_ls_db"] = float(_db(res.imput_ls_msd[-1]))
        s["oracle_ols_db"] = float(_db(res.oracle_ols_msd[-1]))
    return s


def _fmt(x):
    if x is None:
        return ""
    return FLOAT_FMT.format(float(x))


def curves_csv(res: MonteCarloResult) -> str:
    N = res.spec.n_agents
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "msd_network_db"] + [f"msd_node_{k + 1}_db" for k in range(N)]
               + [f"sigma_xi2_hat_node_{k + 1}" for k in range(N)])
    net = _db(res.msd_network)
    node = _db(res.msd_node)
    for t in range(res.horizon):
        w.writerow([t + 1, _fmt(net[t])] + [_fmt(x) for x in node[t]]
                   + [_fmt(x) for x in res.sigma_xi2_hat[t]])
    return buf.getvalue()


def summary_csv(res: MonteCarloResult) -> str:
    s = res.summary
    N = res.spec.n_agents
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scope", "msd_simulated_db", "msd_theory_db", "msd_imput_ls_db",
                "msd_oracle_ols_db", "sigma_xi2_hat", "sigma_xi2_true", "n_diverged"])
    w.writerow(["network", _fmt(s["msd_network_db"]), _fmt(s.get("theory_network_db")),
                _fmt(s.get("imput_ls_db")), _fmt(s.get("oracle_ols_db")),
                _fmt(np.mean(s["sigma_xi2_hat"])), _fmt(np.mean(s["sigma_xi2_true"])),
                s["n_diverged"]])
    th = s.get("theory_node_db")
    for k in range(N):
        w.writerow([f"node_{k + 1}", _fmt(s["msd_node_db"][k]),
                    _fmt(th[k]) if th is not None else "",
                    _fmt(s.get("imput_ls_db")), _fmt(s.get("oracle_ols_db")),
                    _fmt(s["sigma_xi2_hat"][k]), _fmt(s["sigma_xi2_true"][k]), ""])
    return buf.getvalue()


def summary_text(res: MonteCarloResult) -> str:
    s = res.summary
    lines = ["# " + ln for ln in describe(res.spec)]
    lines.append(f"experiments {res.n_experiments}, horizon {res.horizon}, "
                 f"diverged {res.n_diverged}, steady-state window last {s['steady_window']} iterations")
    lines.append(f"simulated network MSD {s['msd_network_db']:.3f} dB")
    if "theory_network_db" in s:
        lines.append(f"theory network MSD    {s['theory_network_db']:.3f} dB")
    elif res.theory_error:
        lines.append(f"theory unavailable: {res.theory_error}")
    if "imput_ls_db" in s:
        lines.append(f"Imput-LS MSD          {s['imput_ls_db']:.3f} dB")
        lines.append(f"oracle OLS MSD        {s['oracle_ols_db']:.3f} dB")
    lines.append("node  sim_dB     theory_dB  sigma_xi2_hat  sigma_xi2_true")
    th = s.get("theory_node_db")
    for k in range(res.spec.n_agents):
        tk = f"{th[k]:10.3f}" if th is not None else " " * 10
        lines.append(f"{k + 1:<5d} {s['msd_node_db'][k]:9.3f}  {tk}  {s['sigma_xi2_hat'][k]:13.6g}  "
                     f"{s['sigma_xi2_true'][k]:.6g}")
    return "\n".join(lines) + "\n"


def plot_data_csv(res: MonteCarloResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["algorithm", "iteration", "msd_db"])
    net = _db(res.msd_network)
    for t in range(res.horizon):
        w.writerow(["mATC (simulation)", t + 1, _fmt(net[t])])
    if res.theory is not None and res.horizon > 0:
        for t in (1, res.horizon):
            w.writerow(["mATC (theory)", t, _fmt(res.theory.msd_network_db)])
    if res.baseline_grid is not None:
        for n, a in zip(res.baseline_grid, _db(res.imput_ls_msd)):
            w.writerow(["Imput-LS", int(n), _fmt(a)])
        for n, b in zip(res.baseline_grid, _db(res.oracle_ols_msd)):
            w.writerow(["oracle OLS", int(n), _fmt(b)])
    return buf.getvalue()


def prepare_output(out_dir) -> Path:
    """Create ``out_dir`` and check it is writable before any work starts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write_probe"
    probe.write_text("")
    probe.unlink()
    return out


def emit_results(res: MonteCarloResult, cfg: RunConfig) -> dict:
    """Write curves, summary and (optionally) plot data; returns name -> path."""
    out = prepare_output(cfg.out_dir)
    files = {"curves.csv": curves_csv(res), "summary.csv": summary_csv(res),
             "summary.txt": summary_text(res)}
    if cfg.emit_plot_data:
        files["plot_data.csv"] = plot_data_csv(res)
    paths = {}
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        paths[name] = path
    return paths


def validate_report(spec: ScenarioSpec):
    """Invariant and stability checks; returns a list of (ok, message)."""
    checks = []
    bound = step_size_bound(spec.r_u_diag, spec.p, spec.maskable)
    for k, mu in enumerate(spec.step_sizes):
        checks.append((mu < bound, f"agent {k + 1}: mu = {mu:g} vs mean-stability bound {bound:.6g}"))
    try:
        mom = assemble_moments(spec)
        rad = mean_stability_radius(mom.a_big, mom.m_big, mom.r_eff)
        checks.append((rad < 1.0, f"mean recursion spectral radius {rad:.6f}"))
    except CapacityError as exc:
        checks.append((False, str(exc)))
    return checks
