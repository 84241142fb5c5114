"""Reduced dynamics on the center surface, companion solutions with
asymptotic phase, empirical Lyapunov classification of the trivial solution,
and the full-versus-reduced agreement check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import ConstantsBundle, SpectralSplit, check_conditions
from .errors import (
    BlowUpError,
    ContractionFailureError,
    DegenerateDimensionError,
    DivergenceError,
    ParameterError,
    SmallnessError,
)
from .manifolds import CenterEvaluator, _block_f, _stable_graph, _snap_up, eval_G, \
    default_stable_horizon
from .schedule import ArgumentSchedule
from .solver import HybridSystem, Trajectory, solve_anchor, solve_forward, \
    _locate_right_closed

__all__ = [
    "StabilityVerdict",
    "PhaseResult",
    "DecayReport",
    "ReductionCheckResult",
    "build_reduced",
    "asymptotic_phase",
    "classify_stability",
    "reduction_check",
]

_VERDICT_RANK = {
    "unstable": 0,
    "inconclusive": 0,
    "stable": 1,
    "asymptotically-stable": 2,
    "exponential": 3,
}


@dataclass
class StabilityVerdict:
    """Sampled Lyapunov classification of the trivial solution.

    classification is one of unstable / stable / asymptotically-stable /
    exponential, plus "inconclusive" when excursions land between the bound
    and escape thresholds so neither claim is supported.  The lattice
    ordering exponential => asymptotically-stable => stable holds by
    construction.
    """

    classification: str
    rate: float | None
    evidence: list              # (radius, max_excursion, final_norm, horizon)
    t0_sweep: list
    fit: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def implies(self, level: str) -> bool:
        return _VERDICT_RANK[self.classification] >= _VERDICT_RANK[level]

    def as_dict(self) -> dict:
        return {
            "classification": self.classification,
            "rate": self.rate,
            "t0_sweep": [float(t) for t in self.t0_sweep],
            "evidence": [
                {"radius": r, "max_excursion": e, "final_norm": f, "horizon": h}
                for (r, e, f, h) in self.evidence
            ],
            "fit": self.fit,
            "params": self.params,
        }


def build_reduced(sys: HybridSystem, sched: ArgumentSchedule,
                  split: SpectralSplit, g_eval: CenterEvaluator,
                  lipschitz_margin: float = 1.25) -> HybridSystem:
    """The lower-dimensional system governing the neutral coordinates on the
    center surface: state v, linear part B_minus, nonlinearity

        (t, v, vbar) -> f_minus(t, (G(t, v), v), (G(beta(t), vbar), vbar))

    with G read through the memoized evaluator.  The declared Lipschitz
    constant l (1 + P l) uses the sampled P inflated by ``lipschitz_margin``
    so it stays an upper bound under sampling error.
    """
    k = split.k
    nm = sys.dim - k
    if nm == 0:
        raise DegenerateDimensionError(
            "every direction decays (k = n); there is nothing to reduce")
    fblock = _block_f(sys, split)

    def f_red(t, v, vbar):
        tb = sched.beta(t)
        u = g_eval.at(t, v)
        ub = g_eval.at(tb, vbar)
        zb = np.concatenate([u, np.atleast_1d(v)])
        wb = np.concatenate([ub, np.atleast_1d(vbar)])
        return fblock(t, zb, wb, tb)[k:]

    P = g_eval.empirical_P()
    l = sys.lipschitz_l
    l_red = l * (1.0 + lipschitz_margin * P * l)
    pr = float(min(np.min(g_eval.hi), np.min(-g_eval.lo)))
    pr = min(1.0, 0.5 * pr) if pr > 0 else 0.1
    mids = np.linspace(0, len(sched.zetas) - 1, 3).astype(int)
    times = tuple(float(sched.zetas[m]) for m in mids)
    return HybridSystem(split.B_minus, f_red, l_red, nm,
                        probe_radius=pr, probe_times=times)


# ---------------------------------------------------------------------------
# asymptotic phase
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    ts: np.ndarray
    weighted_distance: np.ndarray   # |z - companion| e^{alpha (t - zeta)}
    bound: float
    max_weighted: float
    bounded: bool


@dataclass
class PhaseResult:
    companion: Trajectory
    d_star: np.ndarray
    report: DecayReport
    iterations: int
    ball_radius: float
    empirical_P: float


def _estimate_P(sys, sched, split, bundle, zeta, v0, scale, g_kwargs, pairs=3,
                seed=3):
    rng = np.random.default_rng(seed)
    nm = len(np.atleast_1d(v0))
    l = max(bundle.l, 1e-300)
    best = 0.0
    for _ in range(pairs):
        d1 = v0 + rng.normal(size=nm) * scale
        d2 = v0 + rng.normal(size=nm) * scale
        den = float(np.linalg.norm(d1 - d2))
        if den < 1e-12:
            continue
        g1 = eval_G(sys, sched, split, bundle, zeta, d1, **g_kwargs).value
        g2 = eval_G(sys, sched, split, bundle, zeta, d2, **g_kwargs).value
        best = max(best, float(np.linalg.norm(g1 - g2)) / den)
    return best / l


def asymptotic_phase(sys: HybridSystem, sched: ArgumentSchedule,
                     split: SpectralSplit, bundle: ConstantsBundle,
                     zeta: float, z0, tol: float = 1e-8, max_iter: int = 25,
                     *, step: float = 0.05, solver_tol: float = 1e-10,
                     horizon: float | None = None, quad_step: float = 0.05,
                     picard_tol: float | None = None, picard_max_iter: int = 60,
                     g_tol: float | None = None, report_horizon: float | None = None,
                     P: float | None = None) -> PhaseResult:
    """Companion solution on the center surface that the solution through
    (zeta, z0) approaches exponentially.

    The neutral coordinate d of the companion solves the implicit relation
    d = v0 - Ftil(zeta, u0 - G(zeta, d), d) by direct iteration from d0 = v0,
    where Ftil is the decaying-graph map of the system translated by the
    companion.  Iterates must stay in the ball |d - v0| <= |u0 - G(zeta, v0)|.
    """
    k = split.k
    zb0 = split.to_block(np.asarray(z0, dtype=float))
    u0, v0 = zb0[:k], zb0[k:]
    if picard_tol is None:
        picard_tol = tol / 10.0
    if g_tol is None:
        g_tol = tol / 10.0
    if horizon is None:
        horizon = default_stable_horizon(split, picard_tol)
    g_kwargs = dict(horizon=None, tol=g_tol, max_iter=picard_max_iter,
                    quad_step=quad_step)

    G_v0 = eval_G(sys, sched, split, bundle, zeta, v0, **g_kwargs).value
    r0 = float(np.linalg.norm(u0 - G_v0))

    p, K, l = bundle.p_const, split.K_const, bundle.l
    if P is None:
        P = _estimate_P(sys, sched, split, bundle, zeta, v0,
                        max(0.1, 0.5 * float(np.linalg.norm(v0))), g_kwargs)
    if 1.0 - p * P * K * l * l <= 0:
        raise SmallnessError(f"1 - pPKl^2 = {1 - p * P * K * l * l:.4g} <= 0")
    if p * K * l * (1.0 + P * l) > 1.0:
        raise SmallnessError(
            f"pKl(1 + Pl) = {p * K * l * (1 + P * l):.4g} > 1")

    fblock = _block_f(sys, split)
    t_traj_end = _snap_up(sched, zeta + horizon)

    def translated(mu_traj):
        cache: dict = {}

        def mu_block(t):
            v = cache.get(t)
            if v is None:
                v = split.to_block(mu_traj.eval(t))
                cache[t] = v
            return v

        def q(t, Zb, Wb, t_beta):
            mt = mu_block(t)
            mb = mu_block(t_beta)
            return fblock(t, Zb + mt, Wb + mb, t_beta) - fblock(t, mt, mb, t_beta)

        return q

    d = v0.copy()
    G_d = G_v0
    iterations = 0
    converged = r0 == 0.0
    for j in range(1, max_iter + 1):
        if converged:
            break
        mu0 = split.from_block(np.concatenate([G_d, d]))
        mu_traj = solve_forward(sys, sched, zeta, mu0, t_traj_end, step, solver_tol)
        c_j = u0 - G_d
        _, Z, _, _ = _stable_graph(
            split.B_plus, split.B_minus, translated(mu_traj), sched, zeta,
            c_j, horizon, picard_tol, picard_max_iter, quad_step)
        d_next = v0 - Z[0, k:]
        if float(np.linalg.norm(d_next - v0)) > r0 * (1 + 1e-8) + 1e-12:
            raise ContractionFailureError(
                f"iterate left the admissible ball: |d - v0| = "
                f"{float(np.linalg.norm(d_next - v0)):.4g} > {r0:.4g}")
        delta = float(np.linalg.norm(d_next - d))
        d = d_next
        G_d = eval_G(sys, sched, split, bundle, zeta, d, **g_kwargs).value
        iterations = j
        if delta < tol:
            converged = True
    if not converged:
        raise DivergenceError(
            f"companion iteration did not settle within {max_iter} steps")

    if report_horizon is None:
        report_horizon = 10.0 * sched.theta_bound
    t_rep_end = min(_snap_up(sched, zeta + report_horizon), sched.t_max)
    mu0 = split.from_block(np.concatenate([G_d, d]))
    companion = solve_forward(sys, sched, zeta, mu0, t_rep_end, step, solver_tol)
    ztraj = solve_forward(sys, sched, zeta, np.asarray(z0, dtype=float),
                          t_rep_end, step, solver_tol)
    ts = np.linspace(zeta, t_rep_end, 201)
    w = np.empty_like(ts)
    alpha = bundle.alpha
    for idx, t in enumerate(ts):
        diff = split.to_block(ztraj.eval(t)) - split.to_block(companion.eval(t))
        w[idx] = np.linalg.norm(diff) * math.exp(alpha * (t - zeta))
    X0 = u0 - G_d
    bound = K * (1.0 + 2.0 * p * l) * float(np.linalg.norm(X0))
    max_w = float(np.max(w))
    report = DecayReport(ts=ts, weighted_distance=w, bound=bound,
                         max_weighted=max_w,
                         bounded=bool(max_w <= 1.1 * bound + 1e-12))
    return PhaseResult(companion=companion, d_star=d, report=report,
                       iterations=max(iterations, 1), ball_radius=r0,
                       empirical_P=P)


# ---------------------------------------------------------------------------
# empirical stability classification
# ---------------------------------------------------------------------------

def _directions(n: int, n_random: int, rng) -> list:
    dirs = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        dirs.append(e.copy())
        dirs.append(-e)
    for _ in range(n_random):
        v = rng.normal(size=n)
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            dirs.append(v / nv)
    return dirs


def classify_stability(sys: HybridSystem, sched: ArgumentSchedule,
                       radii, horizon: float, t0_samples, *, seed: int = 0,
                       escape_factor: float = 10.0, bound_factor: float = 3.0,
                       final_frac: float = 0.01, fit_r2: float = 0.98,
                       min_efolds: float = 1.0, n_random_dirs: int = 8,
                       step: float = 0.1, tol: float = 1e-8, max_iter: int = 50,
                       env_samples: int = 201) -> StabilityVerdict:
    """Classify the trivial solution by integrating stars of initial points.

    For each start time and radius a star of directions is integrated over
    the horizon.  Any excursion beyond escape_factor*radius (or a blow-up)
    makes the verdict unstable; all excursions within bound_factor*radius
    make it stable, refined to asymptotically-stable when every final norm
    is below final_frac*radius and to exponential when the log envelope over
    the latter half of the horizon fits a line with R^2 >= fit_r2 AND the
    fitted rate amounts to at least ``min_efolds`` e-folds of decay across
    the fit window (algebraic tails look locally log-linear but only manage
    a fixed fraction of an e-fold there, whatever the horizon).
    Excursions between the two thresholds yield "inconclusive".
    All thresholds are sampling heuristics, configurable, not proofs.
    """
    rng = np.random.default_rng(seed)
    dirs = _directions(sys.dim, n_random_dirs, rng)
    tau_grid = np.linspace(0.0, horizon, env_samples)
    evidence = []
    curves = []
    saw_escape = False
    all_bounded = True
    all_final_small = True

    for t0 in t0_samples:
        t_end = t0 + horizon
        if t_end > sched.t_max + 1e-9:
            raise ParameterError(
                f"horizon {horizon} from t0={t0} leaves the schedule window "
                f"(ends at {sched.t_max})")
        i_first = sched.interval_index(t0)
        i_last = _locate_right_closed(sched, t_end)
        for radius in radii:
            for direction in dirs:
                z0 = radius * direction
                max_exc = float(np.linalg.norm(z0))
                env_ts = [0.0]
                env_ns = [max_exc]
                t_a, z_a = t0, z0
                escaped = False
                blew_up = False
                final_norm = max_exc
                t_reached = 0.0
                for i in range(i_first, i_last + 1):
                    try:
                        res = solve_anchor(sys, sched, i, t_a, z_a, step, tol,
                                           max_iter)
                    except BlowUpError as err:
                        blew_up = True
                        t_reached = max(t_reached, err.last_finite_time - t0)
                        break
                    seg = res.segment
                    mask = (seg.ts >= t0 - 1e-12) & (seg.ts <= t_end + 1e-12)
                    norms = np.linalg.norm(seg.zs[mask], axis=1)
                    env_ts.extend(np.asarray(seg.ts[mask]) - t0)
                    env_ns.extend(norms)
                    max_exc = max(max_exc, float(np.max(norms)))
                    final_norm = float(norms[-1])
                    t_a = sched.theta(i + 1)
                    z_a = seg.value_at_node(t_a)
                    t_reached = min(t_a, t_end) - t0
                    if max_exc > escape_factor * radius:
                        escaped = True
                        break
                    if i == i_last:
                        final_norm = float(np.linalg.norm(seg.eval(t_end)))
                        t_reached = horizon
                if blew_up:
                    max_exc = float("inf")
                    final_norm = float("inf")
                if escaped or blew_up:
                    saw_escape = True
                    all_bounded = False
                    all_final_small = False
                else:
                    if max_exc > bound_factor * radius:
                        all_bounded = False
                    if final_norm > final_frac * radius:
                        all_final_small = False
                    order = np.argsort(env_ts)
                    curves.append(np.interp(
                        tau_grid, np.asarray(env_ts)[order],
                        np.asarray(env_ns)[order]) / radius)
                evidence.append((float(radius), max_exc, final_norm,
                                 float(t_reached)))

    fit: dict = {}
    rate = None
    if saw_escape:
        classification = "unstable"
    elif not all_bounded:
        classification = "inconclusive"
    else:
        classification = "stable"
        if all_final_small:
            classification = "asymptotically-stable"
            envelope = np.max(np.vstack(curves), axis=0)
            mask = tau_grid >= horizon / 2.0
            y = np.log(np.maximum(envelope[mask], 1e-300))
            x = tau_grid[mask]
            slope, intercept = np.polyfit(x, y, 1)
            resid = y - (slope * x + intercept)
            ss_tot = float(np.sum((y - np.mean(y)) ** 2))
            r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
            efolds = -slope * (horizon - horizon / 2.0)
            fit = {"slope": float(slope), "intercept": float(intercept),
                   "r_squared": r2, "efolds_over_window": float(efolds)}
            if r2 >= fit_r2 and slope < 0 and efolds >= min_efolds:
                classification = "exponential"
                rate = float(-slope)
    return StabilityVerdict(
        classification=classification, rate=rate, evidence=evidence,
        t0_sweep=list(t0_samples), fit=fit,
        params={"radii": list(map(float, radii)), "horizon": float(horizon),
                "escape_factor": escape_factor, "bound_factor": bound_factor,
                "final_frac": final_frac, "fit_r2": fit_r2,
                "min_efolds": min_efolds, "seed": seed, "step": step},
    )


# ---------------------------------------------------------------------------
# the reduction-principle check
# ---------------------------------------------------------------------------

@dataclass
class ReductionCheckResult:
    full: StabilityVerdict
    reduced: StabilityVerdict
    agree: bool

    def as_dict(self) -> dict:
        return {"full": self.full.as_dict(), "reduced": self.reduced.as_dict(),
                "agree": bool(self.agree)}


def _effective(classification: str) -> str:
    # the reduced neutral system cannot exhibit the exponential refinement
    return ("asymptotically-stable" if classification == "exponential"
            else classification)


def reduction_check(sys: HybridSystem, sched: ArgumentSchedule,
                    split: SpectralSplit, bundle: ConstantsBundle,
                    g_eval: CenterEvaluator, *, radii, horizon, t0_samples,
                    require_conditions: bool = True,
                    condition_probes: int = 100, seed: int = 0,
                    **classify_kwargs) -> ReductionCheckResult:
    """Classify the full system and its reduced neutral system with matched
    parameters; agreement compares verdicts with the exponential refinement
    collapsed onto asymptotic stability."""
    if require_conditions:
        report = check_conditions(sys, sched, split, bundle,
                                  probes=condition_probes, seed=seed)
        failing = [e.name for e in report.entries if not e.passed]
        if failing:
            raise ParameterError(
                f"hypotheses not satisfied on this system: {failing}")
    reduced = build_reduced(sys, sched, split, g_eval)
    full_verdict = classify_stability(sys, sched, radii, horizon, t0_samples,
                                      seed=seed, **classify_kwargs)
    reduced_verdict = classify_stability(reduced, sched, radii, horizon,
                                         t0_samples, seed=seed,
                                         **classify_kwargs)
    agree = _effective(full_verdict.classification) == _effective(
        reduced_verdict.classification)
    return ReductionCheckResult(full=full_verdict, reduced=reduced_verdict,
                                agree=agree)
