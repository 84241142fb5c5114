"""Experiment front-end: config parsing, the built-in nonlinearity catalog,
named recipes, and artifact writing (CSVs, JSON report, manifest)."""

from __future__ import annotations

import json
import math
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .analysis import check_conditions, compute_constants, spectral_split
from .errors import (
    BlowUpError,
    ConfigError,
    EpcagError,
    NonContractionError,
    ScheduleValidationError,
)
from .manifolds import CenterEvaluator, eval_F, eval_G
from .reduction import asymptotic_phase, classify_stability, reduction_check
from .schedule import ArgumentSchedule, make_schedule
from .solver import (
    HybridSystem,
    solve_backward,
    solve_forward,
    trajectory_report,
    write_trajectory_csv,
)

__all__ = ["ExperimentConfig", "run", "catalog_list", "build_system",
           "schedule_from_dict", "schedule_to_dict", "RECIPES"]

RECIPES = ("simulate", "continue-backward", "manifold-F", "manifold-G",
           "phase", "stability", "reduce", "conditions", "example1")


# ---------------------------------------------------------------------------
# nonlinearity catalog
# ---------------------------------------------------------------------------

def _sat_cubic(x):
    return x**3 / (1.0 + x**2)


def _sat_square(x):
    return x**2 / (1.0 + x**2)


def _make_zero(params, dim):
    return (lambda t, z, w: np.zeros(dim)), 0.0


def _make_example1_quadratic(params, dim):
    if dim != 1:
        raise ConfigError("example1-quadratic is scalar (dim 1)")
    radius = float(params.get("radius", 15.0))

    def f(t, z, w):
        return np.array([-w[0] ** 2])

    return f, 2.0 * radius


def _make_epca_linear(params, dim):
    b = float(params["b"])

    def f(t, z, w):
        return b * np.asarray(w, dtype=float)

    return f, abs(b)


def _make_tanh_coupled(params, dim):
    if dim != 2:
        raise ConfigError("tanh-coupled needs dim 2 (one decaying, one neutral)")
    amp = float(params["amp"])

    def f(t, z, w):
        return np.array([0.0, amp * math.tanh(w[0])])

    return f, abs(amp)


def _make_center_cubic(params, dim):
    if dim != 2:
        raise ConfigError("center-cubic needs dim 2 (one decaying, one neutral)")
    a = float(params["a"])
    eps = float(params.get("eps", a))
    sign = float(params.get("sign", -1.0))
    if sign not in (-1.0, 1.0):
        raise ConfigError("center-cubic sign must be +1 or -1")

    def f(t, z, w):
        return np.array([eps * _sat_square(w[1]), sign * a * _sat_cubic(z[1])])

    return f, max(1.125 * abs(a), 0.6495 * abs(eps))


_CATALOG = {
    "zero": {
        "factory": _make_zero,
        "params": {},
        "lipschitz": "l = 0",
        "doc": "f identically zero (any dimension)",
    },
    "example1-quadratic": {
        "factory": _make_example1_quadratic,
        "params": {"radius": "domain radius R (default 15)"},
        "lipschitz": "l = 2R on |w| <= R (only locally Lipschitz)",
        "doc": "scalar f(t,z,w) = -w^2",
    },
    "epca-linear": {
        "factory": _make_epca_linear,
        "params": {"b": "coupling coefficient"},
        "lipschitz": "l = |b|",
        "doc": "f(t,z,w) = b w (linear anchored coupling, any dimension)",
    },
    "tanh-coupled": {
        "factory": _make_tanh_coupled,
        "params": {"amp": "amplitude a"},
        "lipschitz": "l = |a|",
        "doc": "2-d f = a (0, tanh(w_1)): the neutral rate is fed by the "
               "anchored decaying component",
    },
    "center-cubic": {
        "factory": _make_center_cubic,
        "params": {"a": "cubic coefficient", "eps": "coupling (default a)",
                   "sign": "-1 damped / +1 anti-damped (default -1)"},
        "lipschitz": "l = max(1.125 |a|, 0.6495 |eps|)",
        "doc": "2-d f = (eps w_2^2/(1+w_2^2), sign a z_2^3/(1+z_2^2)): "
               "saturated cubic on the neutral direction with weak coupling "
               "into the decaying one",
    },
}


def catalog_list() -> list:
    """Names, parameter schemas and Lipschitz formulas of the built-in
    nonlinearities."""
    return [
        {"name": name, "params": dict(entry["params"]),
         "lipschitz": entry["lipschitz"], "doc": entry["doc"]}
        for name, entry in sorted(_CATALOG.items())
    ]


def build_system(system_cfg: dict) -> HybridSystem:
    try:
        A = np.atleast_2d(np.asarray(system_cfg["matrix"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"system.matrix invalid: {exc}") from exc
    dim = A.shape[0]
    if A.shape != (dim, dim):
        raise ConfigError(f"system.matrix must be square, got {A.shape}")
    nl = system_cfg.get("nonlinearity", {"name": "zero", "params": {}})
    name = nl.get("name")
    if name not in _CATALOG:
        raise ConfigError(
            f"unknown nonlinearity {name!r}; catalog: {sorted(_CATALOG)}")
    f, l = _CATALOG[name]["factory"](nl.get("params", {}), dim)
    if "lipschitz_l" in system_cfg and system_cfg["lipschitz_l"] is not None:
        l = float(system_cfg["lipschitz_l"])
    probe_radius = float(system_cfg.get("probe_radius", 1.0))
    if name == "example1-quadratic":
        probe_radius = float(nl.get("params", {}).get("radius", 15.0))
    return HybridSystem(A, f, l, dim, probe_radius=probe_radius)


# ---------------------------------------------------------------------------
# schedule serialization
# ---------------------------------------------------------------------------

def schedule_from_dict(cfg: dict) -> ArgumentSchedule:
    try:
        kind = cfg["kind"]
        params = {k: v for k, v in cfg.items() if k != "kind"}
        if kind in ("epca", "alternating", "randomized"):
            params["window"] = tuple(params["window"])
        return make_schedule(kind, **params)
    except (KeyError, TypeError, ScheduleValidationError) as exc:
        raise ConfigError(f"schedule config invalid: {exc}") from exc


def schedule_to_dict(sched: ArgumentSchedule) -> dict:
    if sched.kind in ("epca", "alternating"):
        return {"kind": sched.kind, "window": [sched.i_min, sched.i_max]}
    return {
        "kind": "explicit",
        "thetas": [float(v) for v in sched.thetas],
        "zetas": [float(v) for v in sched.zetas],
        "i_min": sched.i_min,
        "theta_bound": sched.theta_bound,
    }


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

_SOLVER_DEFAULTS = {"step": 0.05, "tol": 1e-8, "max_iter": 50}
_MANIFOLD_DEFAULTS = {
    "alpha": None, "sigma": None, "horizon": None, "tol": 1e-8,
    "max_iter": 60, "quad_step": 0.05, "kappa": None,
    "cache_box": 2.0, "cache_resolution": 9, "time_period": None,
    "time_subdiv": 4,
}
_STABILITY_DEFAULTS = {
    "radii": [0.1, 0.01, 0.001], "horizon": None, "t0_samples": None,
    "escape_factor": 10.0, "bound_factor": 3.0, "final_frac": 0.01,
    "fit_r2": 0.98, "min_efolds": 1.0, "n_random_dirs": 8, "step": 0.1,
}


def _merged(defaults: dict, given: dict, section: str) -> dict:
    out = dict(defaults)
    for key, val in (given or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown key {section}.{key}")
        out[key] = val
    return out


@dataclass
class ExperimentConfig:
    recipe: str
    system: dict
    schedule: dict
    solver: dict
    manifold: dict
    stability: dict
    run_params: dict
    seed: int = 0
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, cfg: dict) -> "ExperimentConfig":
        recipe = cfg.get("recipe")
        if recipe not in RECIPES:
            raise ConfigError(f"recipe must be one of {RECIPES}, got {recipe!r}")
        if recipe != "example1" and "schedule" not in cfg:
            raise ConfigError("config needs a 'schedule' section")
        if recipe != "example1" and "system" not in cfg:
            raise ConfigError("config needs a 'system' section")
        solver = _merged(_SOLVER_DEFAULTS, cfg.get("solver", {}), "solver")
        manifold = _merged(_MANIFOLD_DEFAULTS, cfg.get("manifold", {}), "manifold")
        stability = _merged(_STABILITY_DEFAULTS, cfg.get("stability", {}),
                            "stability")
        for key in ("step", "tol"):
            if not solver[key] > 0:
                raise ConfigError(f"solver.{key} must be positive")
        if not int(solver["max_iter"]) > 0:
            raise ConfigError("solver.max_iter must be positive")
        return cls(
            recipe=recipe,
            system=cfg.get("system", {}),
            schedule=cfg.get("schedule", {}),
            solver=solver,
            manifold=manifold,
            stability=stability,
            run_params=cfg.get("run", {}),
            seed=int(cfg.get("seed", 0)),
            raw=cfg,
        )

    def describe(self) -> dict:
        return {
            "recipe": self.recipe, "system": self.system,
            "schedule": self.schedule, "solver": self.solver,
            "manifold": self.manifold, "stability": self.stability,
            "run": self.run_params, "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# recipe plumbing
# ---------------------------------------------------------------------------

def _write_manifest(cfg: ExperimentConfig, out_dir):
    lines = [
        f"timestamp: {time.strftime('%Y-%m-%dT%H:%M:%S%z')}",
        f"epcag_version: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"seed: {cfg.seed}",
        "config: " + json.dumps(cfg.describe(), sort_keys=True),
    ]
    (out_dir / "manifest").write_text("\n".join(lines) + "\n")


def _write_report(out_dir, payload: dict):
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2,
                                                    sort_keys=True) + "\n")


def _error_record(err: Exception) -> dict:
    module = type(err).__module__.split(".")[-1]
    tags = {
        "BlowUpError": "solver", "NonContractionError": "solver",
        "ScheduleWindowError": "schedule", "ScheduleValidationError": "schedule",
        "SpectrumError": "analysis", "ConditioningError": "analysis",
        "ParameterError": "analysis", "SmallnessError": "manifolds",
        "DivergenceError": "manifolds", "BoxExceededError": "manifolds",
        "DegenerateDimensionError": "reduction",
        "ContractionFailureError": "reduction", "ConfigError": "harness",
    }
    rec = {"type": type(err).__name__, "message": str(err),
           "module": tags.get(type(err).__name__, module)}
    for attr in ("interval", "last_finite_time", "ratios", "deltas"):
        if hasattr(err, attr):
            val = getattr(err, attr)
            if isinstance(val, (list, tuple)):
                val = [float(v) for v in val]
            rec[attr] = val
    return rec


def _analysis_stack(sys, sched, cfg):
    split = spectral_split(sys.A, sigma=cfg.manifold["sigma"])
    bundle = compute_constants(sys.A, split, sched, sys.lipschitz_l,
                               alpha=cfg.manifold["alpha"])
    return split, bundle


def _default_t0_samples(sched: ArgumentSchedule, horizon: float, count: int = 5):
    ok = [float(z) for z in sched.zetas if z + horizon <= sched.t_max + 1e-9]
    if not ok:
        raise ConfigError(
            f"no start time admits horizon {horizon} inside the schedule window")
    idx = np.unique(np.linspace(0, len(ok) - 1, count).astype(int))
    return [ok[j] for j in idx]


def run(config: ExperimentConfig, out_dir) -> int:
    """Execute the configured recipe, writing artifacts into out_dir.

    Returns 0 on success, 2 on configuration errors, 3 on numerical
    failures; failures leave a machine-readable error record in report.json.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(config, out_dir)
    try:
        payload = _dispatch(config, out_dir)
    except ConfigError as err:
        _write_report(out_dir, {"error": _error_record(err)})
        return 2
    except EpcagError as err:
        _write_report(out_dir, {"error": _error_record(err)})
        return 3
    _write_report(out_dir, payload)
    return 0


def _dispatch(cfg: ExperimentConfig, out_dir) -> dict:
    if cfg.recipe == "example1":
        return _recipe_example1(cfg, out_dir)
    sched = schedule_from_dict(cfg.schedule)
    sys = build_system(cfg.system)
    if cfg.recipe == "simulate":
        return _recipe_simulate(cfg, sys, sched, out_dir, forward=True)
    if cfg.recipe == "continue-backward":
        return _recipe_simulate(cfg, sys, sched, out_dir, forward=False)
    if cfg.recipe == "conditions":
        return _recipe_conditions(cfg, sys, sched)
    if cfg.recipe == "manifold-F":
        return _recipe_manifold(cfg, sys, sched, out_dir, kind="F")
    if cfg.recipe == "manifold-G":
        return _recipe_manifold(cfg, sys, sched, out_dir, kind="G")
    if cfg.recipe == "phase":
        return _recipe_phase(cfg, sys, sched, out_dir)
    if cfg.recipe == "stability":
        return _recipe_stability(cfg, sys, sched)
    if cfg.recipe == "reduce":
        return _recipe_reduce(cfg, sys, sched)
    raise ConfigError(f"unhandled recipe {cfg.recipe!r}")


def _recipe_simulate(cfg, sys, sched, out_dir, forward: bool) -> dict:
    rp = cfg.run_params
    try:
        t0 = float(rp["t0"])
        z0 = np.asarray(rp["z0"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"run.t0 / run.z0 invalid: {exc}") from exc
    sv = cfg.solver
    if forward:
        t_end = float(rp.get("t_end", sched.t_max))
        traj = solve_forward(sys, sched, t0, z0, t_end, sv["step"], sv["tol"],
                             int(sv["max_iter"]))
        name = "trajectory_forward.csv"
    else:
        t_start = float(rp.get("t_start", sched.t_min))
        traj = solve_backward(sys, sched, t0, z0, t_start, sv["step"], sv["tol"],
                              int(sv["max_iter"]))
        name = "trajectory_backward.csv"
    write_trajectory_csv(traj, out_dir / name)
    return {"trajectory": trajectory_report(traj), "csv": name}


def _recipe_conditions(cfg, sys, sched) -> dict:
    split, bundle = _analysis_stack(sys, sched, cfg)
    report = check_conditions(sys, sched, split, bundle, seed=cfg.seed)
    print(report.table())
    out = report.as_dict()
    out["constants"] = {
        "Omega": bundle.Omega, "M": bundle.M_up, "m": bundle.m_low,
        "sigma": bundle.sigma, "alpha": bundle.alpha, "gamma": bundle.gamma,
        "K": bundle.K_const, "m_pow": bundle.m_pow, "p": bundle.p_const,
        "two_p_l": 2 * bundle.p_const * bundle.l,
    }
    # repair non-JSON values
    for e in out["entries"]:
        e["detail"] = {k: (str(v) if isinstance(v, (complex, np.complexfloating))
                           else v)
                       for k, v in e["detail"].items()
                       if k != "eigenvalues"}
    return out


def _grid_1d(grid_cfg: dict) -> np.ndarray:
    lo = float(grid_cfg.get("lo", -1.0))
    hi = float(grid_cfg.get("hi", 1.0))
    count = int(grid_cfg.get("count", 21))
    return np.linspace(lo, hi, count)


def _recipe_manifold(cfg, sys, sched, out_dir, kind: str) -> dict:
    split, bundle = _analysis_stack(sys, sched, cfg)
    mf = cfg.manifold
    rp = cfg.run_params
    i = int(rp.get("anchor_index", sched.i_min))
    zeta = sched.zeta(i)
    grid = _grid_1d(rp.get("grid", {}))
    coord_dim = split.k if kind == "F" else sys.dim - split.k
    if coord_dim != 1:
        raise ConfigError(
            f"manifold grid dumps support one-dimensional graphs; the "
            f"{'decaying' if kind == 'F' else 'neutral'} block has dimension "
            f"{coord_dim}")
    rows = []
    diag = []
    for x in grid:
        if kind == "F":
            res = eval_F(sys, sched, split, bundle, zeta, np.array([x]),
                         horizon=mf["horizon"], tol=mf["tol"],
                         max_iter=int(mf["max_iter"]), quad_step=mf["quad_step"])
        else:
            res = eval_G(sys, sched, split, bundle, zeta, np.array([x]),
                         horizon=mf["horizon"], tol=mf["tol"],
                         max_iter=int(mf["max_iter"]), quad_step=mf["quad_step"],
                         kappa=mf["kappa"])
        rows.append((x, res.value))
        diag.append({"coord": float(x), "iterates": res.iterates,
                     "last_delta": res.last_delta})
    name = f"manifold_{kind}.csv"
    val_dim = len(rows[0][1])
    header = ("c_1," if kind == "F" else "v_1,") + ",".join(
        (f"F_{j + 1}" if kind == "F" else f"G_{j + 1}") for j in range(val_dim))
    lines = [header]
    for x, val in rows:
        lines.append(",".join([repr(float(x))] + [repr(float(v)) for v in val]))
    (out_dir / name).write_text("\n".join(lines) + "\n")
    return {"anchor_index": i, "anchor_time": zeta, "csv": name,
            "evaluations": diag,
            "lipschitz_bound": float(
                bundle.p_const * split.K_const * bundle.l)}


def _recipe_phase(cfg, sys, sched, out_dir) -> dict:
    split, bundle = _analysis_stack(sys, sched, cfg)
    rp = cfg.run_params
    sv = cfg.solver
    i = int(rp.get("anchor_index", sched.i_min))
    zeta = sched.zeta(i)
    z0 = np.asarray(rp["z0"], dtype=float)
    res = asymptotic_phase(sys, sched, split, bundle, zeta, z0,
                           tol=cfg.manifold["tol"], step=sv["step"],
                           quad_step=cfg.manifold["quad_step"])
    write_trajectory_csv(res.companion, out_dir / "trajectory_companion.csv")
    traj = solve_forward(sys, sched, zeta, z0, res.companion.t_end,
                         sv["step"], sv["tol"])
    write_trajectory_csv(traj, out_dir / "trajectory_solution.csv")
    return {
        "anchor_time": zeta,
        "d_star": [float(v) for v in res.d_star],
        "iterations": res.iterations,
        "ball_radius": res.ball_radius,
        "empirical_P": res.empirical_P,
        "decay": {"bound": res.report.bound,
                  "max_weighted_distance": res.report.max_weighted,
                  "bounded": res.report.bounded},
    }


def _stability_kwargs(cfg, sched):
    st = dict(cfg.stability)
    horizon = st.pop("horizon")
    if horizon is None:
        horizon = 20.0 * sched.theta_bound
    t0_samples = st.pop("t0_samples")
    if t0_samples is None:
        t0_samples = _default_t0_samples(sched, horizon)
    radii = st.pop("radii")
    return radii, float(horizon), list(t0_samples), st


def _recipe_stability(cfg, sys, sched) -> dict:
    radii, horizon, t0_samples, kw = _stability_kwargs(cfg, sched)
    verdict = classify_stability(sys, sched, radii, horizon, t0_samples,
                                 seed=cfg.seed, tol=cfg.solver["tol"], **kw)
    print(f"classification: {verdict.classification}"
          + (f" (rate {verdict.rate:.4g})" if verdict.rate else ""))
    return {"verdict": verdict.as_dict()}


def _recipe_reduce(cfg, sys, sched) -> dict:
    split, bundle = _analysis_stack(sys, sched, cfg)
    mf = cfg.manifold
    radii, horizon, t0_samples, kw = _stability_kwargs(cfg, sched)
    g_eval = CenterEvaluator(
        sys, sched, split, bundle, box=mf["cache_box"],
        resolution=int(mf["cache_resolution"]), tol=mf["tol"],
        quad_step=mf["quad_step"], kappa=mf["kappa"],
        time_period=mf["time_period"], time_subdiv=int(mf["time_subdiv"]),
        horizon=mf["horizon"])
    result = reduction_check(sys, sched, split, bundle, g_eval, radii=radii,
                             horizon=horizon, t0_samples=t0_samples,
                             seed=cfg.seed, tol=cfg.solver["tol"], **kw)
    width = 24
    print(f"{'':{width}}{'full':<24}reduced")
    print(f"{'classification':{width}}{result.full.classification:<24}"
          f"{result.reduced.classification}")
    print(f"{'agree':{width}}{result.agree}")
    return result.as_dict()


def _recipe_example1(cfg, out_dir) -> dict:
    """Continuation pathologies of the anchored quadratic equation
    z' = 3 z - z(beta(t))^2 on the alternating schedule: a data point with no
    forward continuation, and two distinct solutions colliding at t = 1 so
    the backward continuation from the collision point is non-unique."""
    sched = make_schedule("alternating", window=(-2, 3))
    A = np.array([[3.0]])
    f, l = _CATALOG["example1-quadratic"]["factory"]({"radius": 15.0}, 1)
    sys = HybridSystem(A, f, l, 1, probe_radius=15.0)
    sv = cfg.solver
    e3 = math.exp(3.0)

    # forward non-continuation from (t, x0) = (-1, -10): the anchor value
    # w = z(0) must solve  (e^3 - 1) w^2 + 3 w - 3 e^3 x0 = 0  (variation of
    # constants for z' = 3 z - w^2 from t = -1 to 0); for x0 = -10 the
    # discriminant is negative, so no real anchor exists.
    x0 = float(cfg.run_params.get("x0", -10.0))
    qa, qb, qc = e3 - 1.0, 3.0, -3.0 * e3 * x0
    disc = qb * qb - 4.0 * qa * qc
    forward = {"x0": x0, "quadratic": [qa, qb, qc], "discriminant": disc,
               "real_anchor_exists": bool(disc >= 0)}
    try:
        solve_forward(sys, sched, -1.0, np.array([x0]), 1.0, sv["step"],
                      sv["tol"], int(sv["max_iter"]))
        forward["outcome"] = "continued"
    except NonContractionError as err:
        forward["outcome"] = "non-continuation"
        forward["diagnostic"] = _error_record(err)
    except BlowUpError as err:
        forward["outcome"] = "blow-up"
        forward["diagnostic"] = _error_record(err)

    # backward non-uniqueness: pick z0 + z1 = 3 e^3/(e^3 - 1) so the two
    # interval solutions z' = 3 z - z_j^2 from t = 0 collide at t = 1.
    z0v = float(cfg.run_params.get("z0", 1.0))
    z1v = 3.0 * e3 / (e3 - 1.0) - z0v
    endpoint = lambda zj: e3 * zj - zj**2 * (e3 - 1.0) / 3.0
    collide = abs(endpoint(z0v) - endpoint(z1v))
    traj0 = solve_forward(sys, sched, 0.0, np.array([z0v]), 1.0, sv["step"],
                          sv["tol"])
    traj1 = solve_forward(sys, sched, 0.0, np.array([z1v]), 1.0, sv["step"],
                          sv["tol"])
    write_trajectory_csv(traj0, out_dir / "trajectory_branch0.csv")
    write_trajectory_csv(traj1, out_dir / "trajectory_branch1.csv")
    num_collide = abs(float(traj0.eval(1.0)[0] - traj1.eval(1.0)[0]))
    backward = {
        "z0": z0v, "z1": z1v,
        "closed_form_endpoint_gap": collide,
        "numerical_endpoint_gap": num_collide,
        "collision_value": endpoint(z0v),
    }
    try:
        traj_b = solve_backward(sys, sched, 1.0, np.array([endpoint(z0v)]),
                                -1.0, sv["step"], sv["tol"], int(sv["max_iter"]))
        backward["outcome"] = ("nonuniqueness-warning"
                               if traj_b.nonuniqueness_warning else "continued")
    except NonContractionError as err:
        backward["outcome"] = "non-uniqueness (iteration diverged)"
        backward["diagnostic"] = _error_record(err)
    return {"forward_noncontinuation": forward,
            "backward_nonuniqueness": backward}
