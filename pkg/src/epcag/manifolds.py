"""Construction of the forward-decaying surface (graph map F) and the
backward-bounded center surface (graph map G) by successive approximation of
their integral equations, with truncated improper integrals.

All quadrature runs on panel grids aligned to the schedule breakpoints, so
each panel sees a single anchor value and the piecewise-smooth integrands are
integrated at full order.  Kernel-weighted composite Simpson rules propagate
the cumulative integrals in one pass per sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .analysis import ConstantsBundle, SpectralSplit, _sampled_sup
from .errors import BoxExceededError, DivergenceError, ParameterError, SmallnessError
from .schedule import ArgumentSchedule
from .solver import HybridSystem, solve_forward

__all__ = [
    "ManifoldApprox",
    "eval_F",
    "eval_G",
    "verify_surface_invariance",
    "CenterEvaluator",
    "InvarianceReport",
    "stable_tail_bound",
    "default_stable_horizon",
]


@dataclass
class ManifoldApprox:
    """Result of one graph-map evaluation.

    ``iterates`` is the index m of the final increment (the change from the
    m-th to the (m+1)-th approximation), so the recorded ``last_delta`` obeys
    the geometric bound K |c| (2pl)^m for the stable kind.
    """

    kind: str
    anchor_time: float
    horizon: float
    iterates: int
    lipschitz_bound: float
    last_delta: float
    value: np.ndarray
    ts: np.ndarray
    zs: np.ndarray
    deltas: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# panel grids and kernel-weighted cumulative quadrature
# ---------------------------------------------------------------------------

@dataclass
class _Panel:
    start: int          # global index of the panel's first node
    n_sub: int          # even number of sub-steps
    delta: float
    interval: int
    t_beta: float
    beta_idx: int


class _PanelGrid:
    """Global node array over [t_lo, t_hi] split at every schedule breakpoint
    and anchor, with even uniform sub-grids per panel."""

    def __init__(self, sched: ArgumentSchedule, t_lo: float, t_hi: float,
                 max_h: float):
        if not t_lo < t_hi:
            raise ParameterError(f"empty quadrature window [{t_lo}, {t_hi}]")
        cuts = {t_lo, t_hi}
        for p in range(len(sched.thetas)):
            th = float(sched.thetas[p])
            if t_lo < th < t_hi:
                cuts.add(th)
        for p in range(len(sched.zetas)):
            ze = float(sched.zetas[p])
            if t_lo < ze < t_hi:
                cuts.add(ze)
        bounds = sorted(cuts)
        nodes = [np.array([t_lo])]
        self.panels: list = []
        pos = 0
        for a, b in zip(bounds[:-1], bounds[1:]):
            n_sub = 2 * max(1, int(np.ceil((b - a) / (2 * max_h) - 1e-12)))
            local = np.linspace(a, b, n_sub + 1)
            nodes.append(local[1:])
            mid = 0.5 * (a + b)
            i = sched.interval_index(mid)
            self.panels.append(_Panel(
                start=pos, n_sub=n_sub, delta=(b - a) / n_sub, interval=i,
                t_beta=sched.zeta(i), beta_idx=-1,
            ))
            pos += n_sub
        self.ts = np.concatenate(nodes)
        for p in self.panels:
            j = int(np.searchsorted(self.ts, p.t_beta))
            hit = None
            for cand in (j, j - 1, j + 1):
                if 0 <= cand < len(self.ts) and abs(self.ts[cand] - p.t_beta) <= 1e-10:
                    hit = cand
                    break
            if hit is None:
                raise ParameterError(
                    f"anchor time {p.t_beta} of interval {p.interval} is not "
                    f"covered by the quadrature window [{t_lo}, {t_hi}]"
                )
            p.beta_idx = hit

    def __len__(self):
        return len(self.ts)


def _kernels(B: np.ndarray, delta: float, cache: dict):
    key = round(delta, 15)
    if key not in cache:
        E1 = sla.expm(B * delta)
        E1inv = sla.expm(-B * delta)
        cache[key] = (E1, E1 @ E1, E1inv)
    return cache[key]


def _forward_sweep(B, grid: _PanelGrid, gvals, init):
    """X(t_j) = e^{B(t_j - t_0)} init + cumulative integral of
    e^{B(t_j - s)} g(s) ds from t_0, fourth order."""
    d = B.shape[0]
    N = len(grid)
    X = np.zeros((N, d))
    if d == 0:
        return X
    X[0] = init
    cache: dict = {}
    for p, g in zip(grid.panels, gvals):
        E1, E2, E1inv = _kernels(B, p.delta, cache)
        base = p.start
        dl = p.delta
        for q in range(0, p.n_sub, 2):
            g0, g1, g2 = g[q], g[q + 1], g[q + 2]
            x0 = X[base + q]
            X[base + q + 1] = E1 @ x0 + (dl / 12.0) * (
                5.0 * (E1 @ g0) + 8.0 * g1 - E1inv @ g2)
            X[base + q + 2] = E2 @ x0 + (dl / 3.0) * (
                E2 @ g0 + 4.0 * (E1 @ g1) + g2)
    return X


def _backward_sweep(B, grid: _PanelGrid, gvals, terminal):
    """X(t_j) = e^{B(t_j - t_N)} terminal - integral over [t_j, t_N] of
    e^{B(t_j - s)} g(s) ds, fourth order, swept right to left."""
    d = B.shape[0]
    N = len(grid)
    X = np.zeros((N, d))
    if d == 0:
        return X
    X[N - 1] = terminal
    cache: dict = {}
    for p, g in zip(reversed(grid.panels), reversed(gvals)):
        E1b, E2b, E1binv = _kernels(-B, p.delta, cache)
        base = p.start
        dl = p.delta
        for q in range(p.n_sub - 2, -1, -2):
            g0, g1, g2 = g[q], g[q + 1], g[q + 2]
            x2 = X[base + q + 2]
            X[base + q + 1] = E1b @ x2 - (dl / 12.0) * (
                -(E1binv @ g0) + 8.0 * g1 + 5.0 * (E1b @ g2))
            X[base + q] = E2b @ x2 - (dl / 3.0) * (
                g0 + 4.0 * (E1b @ g1) + E2b @ g2)
    return X


def _eval_g_panels(fblock, grid: _PanelGrid, Z: np.ndarray, n: int):
    out = []
    for p in grid.panels:
        w = Z[p.beta_idx]
        loc = np.empty((p.n_sub + 1, n))
        for q in range(p.n_sub + 1):
            j = p.start + q
            loc[q] = fblock(grid.ts[j], Z[j], w, p.t_beta)
        out.append(loc)
    return out


def _block_f(sys: HybridSystem, split: SpectralSplit):
    """The nonlinearity written in the block coordinates of the split."""
    if split.is_identity_transform:
        return lambda t, z, w, tb: np.asarray(sys.f(t, z, w), dtype=float)
    Tm = split.transform
    Tinv = split.transform_inv
    return lambda t, z, w, tb: Tm @ np.asarray(sys.f(t, Tinv @ z, Tinv @ w), dtype=float)


def _snap_up(sched: ArgumentSchedule, t: float) -> float:
    i = sched.interval_index(t)
    return sched.theta(i + 1)


def _snap_down(sched: ArgumentSchedule, t: float) -> float:
    return sched.theta(sched.interval_index(t))


# ---------------------------------------------------------------------------
# the forward-decaying surface
# ---------------------------------------------------------------------------

def default_stable_horizon(split: SpectralSplit, tol: float) -> float:
    """Truncation length with the tail factor K e^{-sigma T} pushed below tol."""
    return math.log(split.K_const / tol) / split.sigma


def stable_tail_bound(split: SpectralSplit, bundle: ConstantsBundle,
                      c_norm: float, horizon: float) -> float:
    """Analytic bound on the tail of the graph-map integral beyond the
    truncation horizon, for an on-surface start of size c_norm."""
    K, a, m, th, l = (split.K_const, bundle.alpha, split.m_pow,
                      bundle.theta, bundle.l)
    T = horizon
    tail_poly = sum(math.factorial(m) / math.factorial(j) * T**j / a ** (m + 1 - j)
                    for j in range(m + 1))
    tail = math.exp(-a * T) * (1.0 / a + tail_poly)
    return 2.0 * K**2 * l * c_norm * (1.0 + math.exp(a * th)) * tail


def _stable_graph(Bp, Bm, fblock, sched, zeta, c, horizon, tol, max_iter,
                  quad_step, init="zero"):
    k = Bp.shape[0]
    nm = Bm.shape[0]
    n = k + nm
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape != (k,):
        raise ParameterError(f"c must have length {k}, got shape {c.shape}")
    t_hi = _snap_up(sched, zeta + horizon)
    grid = _PanelGrid(sched, zeta, t_hi, quad_step)
    N = len(grid)

    Z = np.zeros((N, n))
    if init not in ("zero", "linear"):
        raise ParameterError(f"unknown init {init!r}")
    if init == "linear" and k > 0:
        # seed with the homogeneous decaying flow through c
        Z[0, :k] = c
        cache: dict = {}
        for p in grid.panels:
            E1, _, _ = _kernels(Bp, p.delta, cache)
            for q in range(1, p.n_sub + 1):
                Z[p.start + q, :k] = E1 @ Z[p.start + q - 1, :k]
    deltas: list = []
    converged = False
    for m in range(max_iter):
        g = _eval_g_panels(fblock, grid, Z, n)
        U = _forward_sweep(Bp, grid, [gi[:, :k] for gi in g], c)
        V = _backward_sweep(Bm, grid, [gi[:, k:] for gi in g], np.zeros(nm))
        Znew = np.hstack([U, V])
        delta = float(np.max(np.linalg.norm(Znew - Z, axis=1)))
        Z = Znew
        if deltas and delta >= deltas[-1] and delta > tol:
            deltas.append(delta)
            raise DivergenceError(
                f"non-decreasing sweep deltas at m={m}: {deltas[-3:]}", deltas)
        deltas.append(delta)
        if delta < tol:
            converged = True
            break
    if not converged:
        raise DivergenceError(
            f"no convergence within {max_iter} sweeps (last delta {deltas[-1]:.3g})",
            deltas)
    return grid, Z, deltas, len(deltas) - 1


def eval_F(sys: HybridSystem, sched: ArgumentSchedule, split: SpectralSplit,
           bundle: ConstantsBundle, zeta: float, c, horizon: float | None = None,
           tol: float = 1e-8, max_iter: int = 60, quad_step: float = 0.05,
           init: str = "zero") -> ManifoldApprox:
    """Graph value of the forward-decaying surface at (zeta, c) and the
    decaying solution built along the way.

    ``c`` and the returned value live in the block coordinates of the split
    (the decaying and neutral components respectively); the returned sample
    path ``zs`` is mapped back to original coordinates.
    """
    if not bundle.c10_pass:
        raise SmallnessError(
            f"2pl = {2 * bundle.p_const * bundle.l:.4g} >= 1: the graph-map "
            "iteration is not guaranteed to contract")
    if horizon is None:
        horizon = default_stable_horizon(split, max(tol, 1e-12))
    fblock = _block_f(sys, split)
    grid, Z, deltas, m_last = _stable_graph(
        split.B_plus, split.B_minus, fblock, sched, zeta, c, horizon, tol,
        max_iter, quad_step, init=init)
    k = split.k
    value = Z[0, k:].copy()
    c_norm = float(np.linalg.norm(np.atleast_1d(c)))
    K, alpha = split.K_const, bundle.alpha
    norms = np.linalg.norm(Z, axis=1)
    env = 2.0 * K * c_norm * np.exp(-alpha * (grid.ts - zeta))
    slack = max(20.0 * tol, 1e-9 * (1.0 + c_norm))
    assert np.all(norms <= env + slack), (
        "decay envelope violated: max excess "
        f"{float(np.max(norms - env)):.3g}")
    if split.is_identity_transform:
        zs = Z.copy()
    else:
        zs = Z @ split.transform_inv.T
    return ManifoldApprox(
        kind="stable", anchor_time=float(zeta),
        horizon=float(grid.ts[-1] - zeta), iterates=m_last,
        lipschitz_bound=bundle.p_const * K * bundle.l,
        last_delta=deltas[-1], value=value, ts=grid.ts.copy(), zs=zs,
        deltas=deltas)


# ---------------------------------------------------------------------------
# the backward-bounded center surface
# ---------------------------------------------------------------------------

def _shifted_constants(split: SpectralSplit, kappa: float, kappa_bar: float,
                       T_check: float = 60.0) -> float:
    """Fitted growth constant for the exponentially shifted blocks."""
    Bp_s = split.B_plus + kappa * np.eye(split.k)
    Bm_s = split.B_minus + kappa * np.eye(split.B_minus.shape[0])
    r1 = _sampled_sup(Bp_s, lambda t: math.exp(-kappa_bar * t), T_check)
    r2 = _sampled_sup(-Bm_s, lambda t: math.exp(-kappa_bar * t), T_check)
    return 1.1 * max(1.0, r1, r2)


def eval_G(sys: HybridSystem, sched: ArgumentSchedule, split: SpectralSplit,
           bundle: ConstantsBundle, zeta: float, d, horizon: float | None = None,
           tol: float = 1e-8, max_iter: int = 60, quad_step: float = 0.05,
           kappa: float | None = None, kappa_bar: float | None = None,
           alpha1: float | None = None) -> ManifoldApprox:
    """Graph value of the center surface at (zeta, d) via the exponential
    shift that turns the neutral block into an expanding one.

    The shifted state eta(t) = z(t) e^{kappa t} satisfies a system whose
    blocks are B_plus + kappa I and B_minus + kappa I and whose nonlinearity
    g(t, z, y) = e^{kappa t} f(t, z e^{-kappa t}, y e^{-kappa beta(t)}) has
    Lipschitz constant l e^{kappa theta}.  Successive approximation runs on
    the backward-truncated integral system over [zeta - horizon, zeta]; the
    graph value maps back through G(zeta, d) = e^{-kappa zeta} Gbar(zeta,
    d e^{kappa zeta}).
    """
    if not bundle.c10_pass:
        raise SmallnessError(
            f"2pl = {2 * bundle.p_const * bundle.l:.4g} >= 1")
    k = split.k
    nm = split.B_minus.shape[0]
    n = k + nm
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.shape != (nm,):
        raise ParameterError(f"d must have length {nm}, got shape {d.shape}")
    sigma = split.sigma
    if kappa is None:
        kappa = sigma / 2.0
    if not 0 < kappa < sigma:
        raise ParameterError(f"kappa must lie in (0, sigma={sigma})")
    if kappa_bar is None:
        kappa_bar = 0.9 * min(sigma - kappa, kappa)
    if alpha1 is None:
        alpha1 = kappa_bar / 4.0
    if not 0 < alpha1 < kappa_bar:
        raise ParameterError("need 0 < alpha1 < kappa_bar")
    theta = bundle.theta
    K_bar = _shifted_constants(split, kappa, kappa_bar)
    l_shift = bundle.l * math.exp(kappa * theta)
    p_bar = K_bar * (1.0 + math.exp(alpha1 * theta)) * (
        1.0 / (kappa_bar + alpha1) + 1.0 / (kappa_bar - alpha1))
    if 2.0 * p_bar * l_shift >= 1.0:
        raise SmallnessError(
            f"shifted smallness fails: 2 p_bar l e^(kappa theta) = "
            f"{2 * p_bar * l_shift:.4g} >= 1 (shifted Lipschitz constant "
            f"{l_shift:.4g})")
    if horizon is None:
        horizon = math.log(K_bar / max(tol, 1e-12)) / sigma

    Bp_s = split.B_plus + kappa * np.eye(k)
    Bm_s = split.B_minus + kappa * np.eye(nm)
    fblock = _block_f(sys, split)

    def gblock(t, eta, eta_b, t_beta):
        ekt = math.exp(-kappa * t)
        ekb = math.exp(-kappa * t_beta)
        return math.exp(kappa * t) * fblock(t, eta * ekt, eta_b * ekb, t_beta)

    t_lo = _snap_down(sched, zeta - horizon)
    grid = _PanelGrid(sched, t_lo, zeta, quad_step)
    N = len(grid)
    omega0 = d * math.exp(kappa * zeta)

    Z = np.zeros((N, n))
    deltas: list = []
    converged = False
    for m in range(max_iter):
        g = _eval_g_panels(gblock, grid, Z, n)
        Xi = _forward_sweep(Bp_s, grid, [gi[:, :k] for gi in g], np.zeros(k))
        Om = _backward_sweep(Bm_s, grid, [gi[:, k:] for gi in g], omega0)
        Znew = np.hstack([Xi, Om])
        delta = float(np.max(np.linalg.norm(Znew - Z, axis=1)))
        Z = Znew
        if deltas and delta >= deltas[-1] and delta > tol:
            deltas.append(delta)
            raise DivergenceError(
                f"non-decreasing sweep deltas at m={m}: {deltas[-3:]}", deltas)
        deltas.append(delta)
        if delta < tol:
            converged = True
            break
    if not converged:
        raise DivergenceError(
            f"no convergence within {max_iter} sweeps (last delta {deltas[-1]:.3g})",
            deltas)

    gbar = Z[-1, :k]
    value = math.exp(-kappa * zeta) * gbar
    # unshift: state samples in block coordinates, then back to original ones
    zb = Z * np.exp(-kappa * grid.ts)[:, None]
    d_norm = float(np.linalg.norm(d))
    alpha_tilde = kappa - alpha1
    env = 2.0 * K_bar * d_norm * np.exp(-alpha_tilde * (grid.ts - zeta))
    slack = max(20.0 * tol, 1e-9 * (1.0 + d_norm))
    norms = np.linalg.norm(zb, axis=1)
    assert np.all(norms <= env + slack), (
        "backward envelope violated: max excess "
        f"{float(np.max(norms - env)):.3g}")
    if split.is_identity_transform:
        zs = zb
    else:
        zs = zb @ split.transform_inv.T
    return ManifoldApprox(
        kind="center", anchor_time=float(zeta),
        horizon=float(zeta - grid.ts[0]), iterates=len(deltas) - 1,
        lipschitz_bound=p_bar * K_bar * l_shift,
        last_delta=deltas[-1], value=value, ts=grid.ts.copy(), zs=zs,
        deltas=deltas)


# ---------------------------------------------------------------------------
# invariance verification
# ---------------------------------------------------------------------------

@dataclass
class InvarianceReport:
    anchor_index: int
    anchor_time: float
    defects: list                  # (interval j, zeta_j, |v - F(zeta_j, u)|)
    off_surface_min_v: float
    off_surface_delta: float
    on_surface_max_v: float
    window: tuple

    @property
    def max_defect(self) -> float:
        return max(d for _, _, d in self.defects) if self.defects else 0.0


def verify_surface_invariance(sys: HybridSystem, sched: ArgumentSchedule,
                              split: SpectralSplit, bundle: ConstantsBundle,
                              i: int, c, span: int, step: float = 0.05,
                              tol: float = 1e-8, manifold_tol: float = 1e-8,
                              quad_step: float = 0.05,
                              horizon: float | None = None,
                              delta_off: float = 0.1,
                              off_window: float = 5.0) -> InvarianceReport:
    """Start on the surface at anchor i, march forward and re-check the graph
    relation at the next ``span`` anchors; also run one start pushed off the
    surface by delta_off and record that its neutral component does not decay.
    """
    zeta_i = sched.zeta(i)
    k = split.k
    res = eval_F(sys, sched, split, bundle, zeta_i, c, horizon=horizon,
                 tol=manifold_tol, quad_step=quad_step)
    zb0 = np.concatenate([np.atleast_1d(np.asarray(c, dtype=float)), res.value])
    z0 = split.from_block(zb0)
    t_end = sched.zeta(i + span)
    traj = solve_forward(sys, sched, zeta_i, z0, t_end, step, tol)

    defects = []
    for j in range(i + 1, i + span + 1):
        zj = sched.zeta(j)
        zb = split.to_block(traj.eval(zj))
        u_j, v_j = zb[:k], zb[k:]
        rj = eval_F(sys, sched, split, bundle, zj, u_j, horizon=horizon,
                    tol=manifold_tol, quad_step=quad_step)
        defects.append((j, zj, float(np.linalg.norm(v_j - rj.value))))

    # off-surface start: push the neutral component and watch it persist
    nm = sys.dim - k
    off = zb0.copy()
    if nm > 0:
        e = np.zeros(nm)
        e[0] = 1.0
        off[k:] = off[k:] + delta_off * e
    t_off_end = min(zeta_i + off_window, sched.t_max)
    traj_off = solve_forward(sys, sched, zeta_i, split.from_block(off),
                             t_off_end, step, tol)
    ts = np.linspace(zeta_i, t_off_end, 101)
    v_off = [np.linalg.norm(split.to_block(traj_off.eval(t))[k:]) for t in ts]
    t_on_end = min(zeta_i + off_window, t_end)
    v_on = [np.linalg.norm(split.to_block(traj.eval(t))[k:])
            for t in np.linspace(zeta_i, t_on_end, 101)]
    return InvarianceReport(
        anchor_index=i, anchor_time=zeta_i, defects=defects,
        off_surface_min_v=float(min(v_off)), off_surface_delta=delta_off,
        on_surface_max_v=float(max(v_on)), window=(zeta_i, t_off_end))


# ---------------------------------------------------------------------------
# memoized center-graph evaluator
# ---------------------------------------------------------------------------

class CenterEvaluator:
    """Pointwise center-graph evaluation with a lazy grid cache.

    Values are computed on a grid over the neutral-coordinate box and on a
    small set of time nodes, then interpolated multilinearly in the
    coordinates and linearly in time.  When the system is autonomous and the
    schedule repeats with period ``time_period``, time is wrapped into one
    period so the cache stays small; otherwise time nodes are laid per
    schedule interval.

    Concurrent readers are safe; concurrent insertions of the same key may
    race but agree to tolerance, so last-write-wins is acceptable.
    """

    def __init__(self, sys: HybridSystem, sched: ArgumentSchedule,
                 split: SpectralSplit, bundle: ConstantsBundle, *,
                 box, resolution: int = 17, horizon: float | None = None,
                 tol: float = 1e-6, max_iter: int = 40,
                 quad_step: float = 0.1, kappa: float | None = None,
                 time_period: float | None = None, time_subdiv: int = 4,
                 t_ref: float | None = None):
        self.sys = sys
        self.sched = sched
        self.split = split
        self.bundle = bundle
        self.tol = tol
        self.max_iter = max_iter
        self.quad_step = quad_step
        self.kappa = kappa
        nm = sys.dim - split.k
        box = np.asarray(box, dtype=float)
        if box.ndim == 0:
            box = np.stack([-box * np.ones(nm), box * np.ones(nm)])
        elif box.shape == (2,) and nm != 2:
            box = np.stack([box[0] * np.ones(nm), box[1] * np.ones(nm)])
        if box.shape != (2, nm):
            raise ParameterError(f"box must give (lo, hi) per coordinate, got {box.shape}")
        self.lo, self.hi = box[0], box[1]
        self.resolution = int(resolution)
        if self.resolution < 2:
            raise ParameterError("resolution must be at least 2")
        if horizon is None:
            horizon = default_stable_horizon(split, max(tol, 1e-10))
        self.horizon = horizon
        self.time_period = time_period
        if time_period is not None:
            if t_ref is None:
                t_ref = _snap_up(sched, sched.t_min + horizon + 2 * sched.theta_bound)
            self.t_ref = t_ref
            candidates = np.concatenate([
                t_ref + np.linspace(0.0, time_period, time_subdiv + 1),
                [float(v) for v in sched.thetas
                 if t_ref < v < t_ref + time_period],
                [float(v) for v in sched.zetas
                 if t_ref < v < t_ref + time_period],
            ])
            nodes = np.unique(candidates)
        else:
            self.t_ref = None
            nodes = np.unique(np.concatenate([sched.thetas, sched.zetas]))
        # keep only times where the graph construction is well posed: the
        # evaluation time must not precede its own interval's anchor (an
        # advanced anchor would fall outside the backward quadrature window)
        self.time_nodes = np.array([t for t in nodes
                                    if self._anchor_ok(float(t))])
        if len(self.time_nodes) < 2:
            raise ParameterError(
                "fewer than two admissible time nodes; on schedules with "
                "advanced anchors use the native anchor times")
        self._cache: dict = {}
        self._P: float | None = None

    def _anchor_ok(self, t: float) -> bool:
        i = self.sched.interval_index(t)
        return self.sched.zeta(i) <= t or self.sched.theta(i) == t

    # -- raw evaluation ----------------------------------------------------
    def point(self, t: float, d) -> np.ndarray:
        """Uncached graph value at exact time t and coordinates d."""
        res = eval_G(self.sys, self.sched, self.split, self.bundle, t, d,
                     horizon=self.horizon, tol=self.tol,
                     max_iter=self.max_iter, quad_step=self.quad_step,
                     kappa=self.kappa)
        return res.value

    # -- cached interpolation ----------------------------------------------
    def _grid_value(self, ti: int, idx: tuple) -> np.ndarray:
        key = (ti, idx)
        val = self._cache.get(key)
        if val is None:
            d = self.lo + np.asarray(idx, dtype=float) * (self.hi - self.lo) / (
                self.resolution - 1)
            val = self.point(float(self.time_nodes[ti]), d)
            self._cache[key] = val
        return val

    def _corners(self, ti: int, v: np.ndarray) -> np.ndarray:
        nm = len(v)
        h = (self.hi - self.lo) / (self.resolution - 1)
        pos = (v - self.lo) / h
        base = np.clip(np.floor(pos).astype(int), 0, self.resolution - 2)
        frac = pos - base
        out = np.zeros(self.split.k)
        for corner in range(1 << nm):
            idx = []
            wgt = 1.0
            for ax in range(nm):
                bit = (corner >> ax) & 1
                idx.append(base[ax] + bit)
                wgt *= frac[ax] if bit else (1.0 - frac[ax])
            if wgt > 0:
                out = out + wgt * self._grid_value(ti, tuple(idx))
        return out

    def _time_key(self, t: float) -> float:
        if self.time_period is None:
            return t
        per = self.time_period
        return self.t_ref + ((t - self.t_ref) % per)

    def at(self, t: float, v) -> np.ndarray:
        """Interpolated graph value; raises BoxExceededError outside the box."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if np.any(v < self.lo - 1e-12) or np.any(v > self.hi + 1e-12):
            raise BoxExceededError(
                f"coordinates {v} outside the cached box [{self.lo}, {self.hi}]")
        tk = self._time_key(float(t))
        nodes = self.time_nodes
        j = int(np.searchsorted(nodes, tk, side="right")) - 1
        j = min(max(j, 0), len(nodes) - 2)
        t0, t1 = nodes[j], nodes[j + 1]
        lam = 0.0 if t1 == t0 else (tk - t0) / (t1 - t0)
        lam = min(max(lam, 0.0), 1.0)
        g0 = self._corners(j, v)
        if lam == 0.0:
            return g0
        g1 = self._corners(j + 1, v)
        return (1.0 - lam) * g0 + lam * g1

    def empirical_P(self, pairs: int = 20, seed: int = 0,
                    anchor: float | None = None) -> float:
        """Sampled Lipschitz constant of the graph map divided by l."""
        if self._P is not None:
            return self._P
        if anchor is None:
            anchor = float(self.time_nodes[0])
        rng = np.random.default_rng(seed)
        nm = len(self.lo)
        best = 0.0
        for _ in range(pairs):
            d1 = rng.uniform(self.lo, self.hi)
            d2 = rng.uniform(self.lo, self.hi)
            den = float(np.linalg.norm(d1 - d2))
            if den < 1e-9:
                continue
            num = float(np.linalg.norm(self.point(anchor, d1) - self.point(anchor, d2)))
            best = max(best, num / den)
        l = max(self.bundle.l, 1e-300)
        self._P = best / l
        return self._P

    def grid_dump(self, ti: int = 0):
        """(coords, values) rows over the full cached grid at one time node."""
        nm = len(self.lo)
        axes = [np.linspace(self.lo[ax], self.hi[ax], self.resolution)
                for ax in range(nm)]
        rows = []
        for flat in range(self.resolution ** nm):
            idx = []
            rem = flat
            for ax in range(nm):
                idx.append(rem % self.resolution)
                rem //= self.resolution
            coords = [axes[ax][idx[ax]] for ax in range(nm)]
            rows.append((coords, self._grid_value(ti, tuple(idx))))
        return rows
