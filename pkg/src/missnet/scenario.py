"""Scenario specifications, the built-in library and the config-file reader.

A config file is a flat list of ``key = value`` lines.  Values are Python
literals (numbers, strings, lists, tuples, booleans); ``#`` starts a comment.
``base = "<builtin>"`` starts from a built-in scenario and applies the
remaining keys as overrides.  See the README for the full key list.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import AgentStatistics, ContractError, MissingModel, draw_samples, gaussian_regressor
from .topology import Topology, TopologyError, uniform_combination, validate_combination

BUILTINS = ("generic", "household", "mental_health")
REGRESSOR_KINDS = ("gaussian", "levels", "binary")

# Level counts used by the "levels" generator for the survey covariates; 0 marks
# a continuous (uniform) covariate.  Each is rescaled to the target variance.
MENTAL_HEALTH_LEVELS = (2, 55, 5, 7, 0, 5, 7)


class ScenarioError(ValueError):
    """Malformed scenario or config file; carries the offending key and line."""

    def __init__(self, message, key=None, line=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key {key!r}")
        super().__init__(f"{', '.join(loc)}: {message}" if loc else message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative description of one experiment family.

    Per-agent quantities are length-``n_agents`` tuples.  ``maskable`` holds
    0-based component indices shared by all agents.
    """

    name: str
    n_agents: int
    w_true: tuple
    r_u_diag: tuple
    sigma_v2: tuple
    p: float
    p_hat: float
    xi_kind: str
    xi_params: tuple
    maskable: tuple
    topology: Topology
    step_sizes: tuple
    alphas: tuple
    warm_start_iters: int
    horizon: int
    n_experiments: int = 400
    regressor: str = "gaussian"
    levels: tuple = ()
    combination: Optional[tuple] = None
    correction_enabled: bool = True
    sigma_v2_hint: float = 0.0
    feasibility_clamp: bool = True
    theory_ensemble: int = 100_000
    theory_seed: int = 20_240_101
    baseline_samples: Optional[int] = None
    notes: tuple = field(default=())

    @property
    def dim(self) -> int:
        return len(self.w_true)

    def w_true_array(self) -> np.ndarray:
        return np.asarray(self.w_true, dtype=float)

    def agent_stats(self, k) -> AgentStatistics:
        return AgentStatistics(np.asarray(self.r_u_diag, dtype=float),
                               float(self.sigma_v2[k]), self.w_true_array())

    def agent_missing(self, k) -> MissingModel:
        return MissingModel(self.p, self.p_hat, self.xi_kind, float(self.xi_params[k]),
                            self.maskable)

    def sigma_xi2(self) -> np.ndarray:
        return np.array([self.agent_missing(k).sigma_xi2 for k in range(self.n_agents)])

    def combination_matrix(self) -> np.ndarray:
        if self.combination is not None:
            return np.asarray(self.combination, dtype=float)
        return uniform_combination(self.topology)

    def replace(self, **kw) -> "ScenarioSpec":
        spec = dataclasses.replace(self, **kw)
        validate_spec(spec)
        return spec


def _per_agent(value, n, key):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        arr = np.full(n, float(arr[0]))
    if arr.shape != (n,):
        raise ScenarioError(f"expected a scalar or {n} values, got {arr.size}", key=key)
    return tuple(float(x) for x in arr)


def validate_spec(spec: ScenarioSpec):
    """Raise :class:`ScenarioError` on any broken invariant."""
    n, m = spec.n_agents, spec.dim
    if n < 1 or m < 1:
        raise ScenarioError("need at least one agent and one component")
    if spec.topology.n_agents != n:
        raise ScenarioError("topology size differs from n_agents", key="topology")
    for key in ("sigma_v2", "xi_params", "step_sizes"):
        if len(getattr(spec, key)) != n:
            raise ScenarioError(f"needs {n} entries", key=key)
    if len(spec.r_u_diag) != m:
        raise ScenarioError(f"needs {m} entries", key="r_u_diag")
    if any(mu <= 0 for mu in spec.step_sizes):
        raise ScenarioError("step sizes must be positive", key="step_sizes")
    if len(spec.alphas) != 3 or not all(0.0 <= a < 1.0 for a in spec.alphas):
        raise ScenarioError("alphas must be three values in [0, 1)", key="alphas")
    if spec.warm_start_iters < 0 or spec.horizon < 0 or spec.n_experiments < 1:
        raise ScenarioError("warm_start_iters, horizon >= 0 and n_experiments >= 1 required")
    if spec.regressor not in REGRESSOR_KINDS:
        raise ScenarioError(f"unknown regressor kind {spec.regressor!r}", key="regressor")
    if spec.regressor == "levels" and len(spec.levels) != m:
        raise ScenarioError(f"needs {m} level counts", key="levels")
    if any(j < 0 or j >= m for j in spec.maskable):
        raise ScenarioError("maskable index out of range", key="maskable")
    try:
        for k in range(n):
            spec.agent_stats(k)
            spec.agent_missing(k)
    except ContractError as exc:
        raise ScenarioError(str(exc)) from exc
    if spec.combination is not None:
        ok, violations = validate_combination(spec.combination_matrix(), spec.topology)
        if not ok:
            raise ScenarioError("; ".join(f"{k}: {d}" for k, d in violations), key="combination")
    else:
        try:
            uniform_combination(spec.topology)
        except TopologyError as exc:
            raise ScenarioError(str(exc), key="topology") from exc
    if spec.theory_ensemble < 0:
        raise ScenarioError("must be nonnegative", key="theory_ensemble")


def _generic():
    return ScenarioSpec(
        name="generic", n_agents=7,
        w_true=(1.0, -0.5, 1.2, 0.4, 1.5),
        r_u_diag=(1.0, 1.6, 0.8, 0.95, 1.2),
        sigma_v2=(0.01,) * 7,
        p=0.3, p_hat=0.3, xi_kind="gaussian",
        xi_params=(0.02, 0.44, 0.04, 0.09, 0.15, 0.26, 0.13),
        maskable=(0,), topology=Topology.paper7(),
        step_sizes=(0.04,) * 7, alphas=(0.01, 0.01, 0.01),
        warm_start_iters=50, horizon=2000)


def _household():
    return ScenarioSpec(
        name="household", n_agents=7,
        w_true=(0.054, 0.182, 0.204),
        r_u_diag=(1.0, 1.0, 1.0),
        sigma_v2=(0.01,) * 7,
        p=0.3, p_hat=0.3, xi_kind="uniform", xi_params=(0.5,) * 7,
        maskable=(0,), topology=Topology.paper7(),
        step_sizes=(0.025,) * 7, alphas=(0.001, 0.001, 0.0001),
        warm_start_iters=0, horizon=20000,
        notes=("regressor covariance not given for this survey; identity assumed",
               "measurement-noise variance not given; 0.01 assumed"))


def _mental_health():
    return ScenarioSpec(
        name="mental_health", n_agents=7,
        w_true=(0.27, -0.03, -0.06, 0.13, 0.73, -0.28, 0.22),
        r_u_diag=(0.25, 252.0, 2.0, 2.967, 0.11, 1.25, 4.0),
        sigma_v2=(0.01,) * 7,
        p=0.3, p_hat=0.3, xi_kind="gaussian", xi_params=(0.004,) * 7,
        maskable=(4,), topology=Topology.paper7(),
        step_sizes=(0.0025,) * 7, alphas=(1e-4, 1e-4, 1e-4),
        warm_start_iters=0, horizon=40000,
        regressor="levels", levels=MENTAL_HEALTH_LEVELS,
        notes=("discrete covariates rescaled to the stated covariance diagonal",))


_FACTORIES = {"generic": _generic, "household": _household, "mental_health": _mental_health}


def builtin(name) -> ScenarioSpec:
    try:
        spec = _FACTORIES[name]()
    except KeyError:
        raise ScenarioError(f"unknown built-in scenario {name!r}; choose from {BUILTINS}") from None
    validate_spec(spec)
    return spec


# --- config files ---------------------------------------------------------

_SCALAR_KEYS = {"name": str, "p": float, "p_hat": float, "xi_kind": str,
                "warm_start_iters": int, "horizon": int, "n_experiments": int,
                "regressor": str, "correction_enabled": bool, "sigma_v2_hint": float,
                "feasibility_clamp": bool, "theory_ensemble": int, "theory_seed": int}
_PER_AGENT_KEYS = ("sigma_v2", "xi_params", "step_sizes")
_KNOWN = set(_SCALAR_KEYS) | set(_PER_AGENT_KEYS) | {
    "base", "n_agents", "w_true", "r_u_diag", "maskable", "maskable_1based", "topology",
    "edges", "alphas", "levels", "combination", "baseline_samples", "mu", "alpha"}


_ALIASES = {"step_sizes": "mu", "alphas": "alpha"}


def parse_config(text: str, source="<config>") -> dict:
    """Parse ``key = value`` lines into a dict of Python literals."""
    out = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value' in {source}", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KNOWN:
            raise ScenarioError(f"unknown key in {source}", key=key, line=lineno)
        if key in out:
            raise ScenarioError(f"duplicate key in {source}", key=key, line=lineno)
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            # bare words are accepted as strings (e.g. topology = paper7)
            if value.replace("_", "").isalnum():
                out[key] = value
            else:
                raise ScenarioError(f"cannot parse value {value!r}", key=key, line=lineno) from None
        lines[key] = lineno
    out["__lines__"] = lines
    return out


def _strip_comment(raw):
    quote = None
    for i, ch in enumerate(raw):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return raw[:i]
    return raw


def spec_from_mapping(cfg: dict) -> ScenarioSpec:
    """Build a spec from parsed config values (see :func:`parse_config`)."""
    cfg = dict(cfg)
    lines = cfg.pop("__lines__", {})

    def fail(key, msg):
        raise ScenarioError(msg, key=key, line=lines.get(key))

    base = cfg.pop("base", None)
    if base is None:
        required = ("n_agents", "w_true", "r_u_diag", "sigma_v2", "p", "xi_kind",
                    "xi_params", "topology", "step_sizes", "alphas", "horizon")
        missing = [k for k in required if k not in cfg and not (k == "step_sizes" and "mu" in cfg)
                   and not (k == "alphas" and "alpha" in cfg)]
        if missing:
            fail(missing[0], f"required key missing (no base scenario given): {', '.join(missing)}")
        kw = {"name": "custom", "p_hat": cfg.get("p", 0.3), "maskable": (0,),
              "warm_start_iters": 0}
    else:
        try:
            ref = builtin(str(base))
        except ScenarioError as exc:
            fail("base", str(exc))
        kw = {f.name: getattr(ref, f.name) for f in dataclasses.fields(ref)}
    n = int(cfg.get("n_agents", kw.get("n_agents", 0)))
    kw["n_agents"] = n
    try:
        for key, typ in _SCALAR_KEYS.items():
            if key in cfg:
                kw[key] = typ(cfg[key])
        if "p" in cfg and "p_hat" not in cfg:
            kw["p_hat"] = float(cfg["p"])
        for key in ("w_true", "r_u_diag", "levels"):
            if key in cfg:
                kw[key] = tuple(float(x) if key != "levels" else int(x) for x in cfg[key])
        if "mu" in cfg:
            cfg.setdefault("step_sizes", cfg["mu"])
        if "alpha" in cfg:
            cfg.setdefault("alphas", (cfg["alpha"],) * 3)
        for key in _PER_AGENT_KEYS:
            if key in cfg:
                kw[key] = _per_agent(cfg[key], n, key)
            elif key in kw and len(kw[key]) != n:
                kw[key] = _per_agent(kw[key][0], n, key)
        if "alphas" in cfg:
            kw["alphas"] = tuple(float(a) for a in np.broadcast_to(cfg["alphas"], (3,)))
        if "maskable" in cfg:
            kw["maskable"] = tuple(int(j) for j in np.atleast_1d(cfg["maskable"]))
        if "maskable_1based" in cfg:
            kw["maskable"] = tuple(int(j) - 1 for j in np.atleast_1d(cfg["maskable_1based"]))
        if "baseline_samples" in cfg:
            kw["baseline_samples"] = int(cfg["baseline_samples"])
        if "combination" in cfg:
            kw["combination"] = tuple(tuple(float(x) for x in row) for row in cfg["combination"])
    except ScenarioError as exc:
        key = exc.key if exc.key in lines else _ALIASES.get(exc.key, exc.key)
        raise ScenarioError(str(exc).split(": ", 1)[-1], key=key, line=lines.get(key)) from None
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"bad value: {exc}") from exc
    topo = cfg.get("topology")
    if "edges" in cfg:
        try:
            kw["topology"] = Topology.from_edges(n, cfg["edges"], one_based=True)
        except (TopologyError, TypeError, ValueError) as exc:
            fail("edges", str(exc))
    elif topo is not None:
        if topo == "paper7":
            kw["topology"] = Topology.paper7()
        elif topo in ("isolated", "none"):
            kw["topology"] = Topology.isolated(n)
        elif topo == "complete":
            kw["topology"] = Topology.from_edges(n, [(a, b) for a in range(n) for b in range(a + 1, n)])
        else:
            fail("topology", f"unknown topology {topo!r} (paper7, isolated, complete, or give edges)")
    elif base is not None and kw["topology"].n_agents != n:
        fail("n_agents", "changing n_agents requires a topology or edges entry")
    if topo in ("isolated", "none") and "combination" not in cfg:
        kw["combination"] = tuple(tuple(float(i == j) for j in range(n)) for i in range(n))
    spec = ScenarioSpec(**kw)
    try:
        validate_spec(spec)
    except ScenarioError as exc:
        if exc.line is not None or exc.key is None:
            raise
        key = exc.key if exc.key in lines else _ALIASES.get(exc.key, exc.key)
        raise ScenarioError(str(exc).split(": ", 1)[-1], key=key, line=lines.get(key)) from None
    return spec


def load_scenario(name_or_path, **overrides) -> ScenarioSpec:
    """Resolve a built-in name or a config path to a validated spec.

    Keyword overrides are applied afterwards (``p`` also sets ``p_hat``).
    """
    if isinstance(name_or_path, ScenarioSpec):
        spec = name_or_path
    elif str(name_or_path) in BUILTINS:
        spec = builtin(str(name_or_path))
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise ScenarioError(f"{name_or_path!r} is neither a built-in scenario nor a readable file")
        spec = spec_from_mapping(parse_config(path.read_text(), source=str(path)))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "p" in overrides and "p_hat" not in overrides:
        overrides["p_hat"] = overrides["p"]
    if "mu" in overrides:
        overrides["step_sizes"] = _per_agent(overrides.pop("mu"), spec.n_agents, "mu")
    if overrides:
        spec = spec.replace(**overrides)
    return spec


# --- data generation -------------------------------------------------------

def level_regressor(levels, r_u_diag):
    """Centred discrete-uniform covariates rescaled to variance ``r_u_diag``.

    A level count of ``n`` draws from ``{0..n-1} - (n-1)/2``; 0 means a
    continuous uniform covariate.
    """
    levels = np.asarray(levels, dtype=int)
    target = np.asarray(r_u_diag, dtype=float)
    raw_var = np.where(levels > 0, (levels.astype(float) ** 2 - 1.0) / 12.0, 1.0 / 12.0)
    scale = np.sqrt(target / raw_var)
    centre = np.where(levels > 0, (levels - 1) / 2.0, 0.5)
    discrete = levels > 0

    def draw(rng, shape):
        shape = tuple(shape) + (levels.size,)
        unif = rng.random(shape)
        x = np.where(discrete, np.floor(unif * np.maximum(levels, 1)), unif)
        return (x - centre) * scale

    return draw


def binary_regressor(r_u_diag):
    """Two-point ``±sqrt(r)`` regressor (fourth moment equal to ``r**2``)."""
    scale = np.sqrt(np.asarray(r_u_diag, dtype=float))

    def draw(rng, shape):
        shape = tuple(shape) + (scale.size,)
        return np.where(rng.random(shape) < 0.5, -1.0, 1.0) * scale

    return draw


def regressor_for(spec: ScenarioSpec):
    if spec.regressor == "levels":
        return level_regressor(spec.levels, spec.r_u_diag)
    if spec.regressor == "binary":
        return binary_regressor(spec.r_u_diag)
    return gaussian_regressor(spec.r_u_diag)


def generate_regressor(spec: ScenarioSpec, rng, size=()) -> np.ndarray:
    """Draw uncensored regressors of shape ``size + (M,)``."""
    size = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
    return regressor_for(spec)(rng, size)


def draw_stream(spec: ScenarioSpec, rng, n_steps: int):
    """Draw ``n_steps`` network-wide samples.

    Returns ``(u, u_bar, mask, d)`` with shapes (T, N, M), (T, N, M),
    (T, N, M) and (T, N).  Agents are drawn in index order from one stream.
    """
    n, m = spec.n_agents, spec.dim
    gen = regressor_for(spec)
    w = spec.w_true_array()
    u = np.empty((n_steps, n, m))
    ub = np.empty_like(u)
    mask = np.empty(u.shape, dtype=bool)
    d = np.empty((n_steps, n))
    for k in range(n):
        u[:, k], ub[:, k], mask[:, k], d[:, k] = draw_samples(
            rng, spec.agent_stats(k), spec.agent_missing(k), w, size=n_steps, regressor=gen)
    return u, ub, mask, d


def describe(spec: ScenarioSpec) -> list:
    """Human-readable header lines for reports."""
    out = [f"scenario {spec.name}: N={spec.n_agents} M={spec.dim} p={spec.p:g} p_hat={spec.p_hat:g}",
           f"xi {spec.xi_kind} params {list(spec.xi_params)}; maskable (1-based) "
           f"{[j + 1 for j in spec.maskable]}",
           f"mu {list(spec.step_sizes)} alphas {list(spec.alphas)} warm start {spec.warm_start_iters}",
           f"regressor {spec.regressor} R_u diag {list(spec.r_u_diag)}"]
    out += list(spec.notes)
    return out
