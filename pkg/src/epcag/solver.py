"""Interval-by-interval integration of quasilinear systems whose right-hand
side couples to the state at one anchor time per interval.

On each interval [theta_i, theta_{i+1}) the equation reads

    z' = A z + f(t, z(t), w),      w = z(zeta_i),

so once the anchor value w is known the interval problem is an ordinary ODE.
When zeta_i lies ahead of the data point, w is implicit and is resolved by a
fixed-point iteration on the single vector w (``solve_anchor``).  Forward and
backward continuation then march interval by interval.

A run is single threaded and owns its trajectory; distinct runs over shared
(immutable) systems and schedules may proceed concurrently as long as the
nonlinearity is a pure function of its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, NonContractionError
from .schedule import ArgumentSchedule

__all__ = [
    "HybridSystem",
    "Segment",
    "Trajectory",
    "AnchorResult",
    "integrate_interval",
    "solve_anchor",
    "solve_forward",
    "solve_backward",
    "write_trajectory_csv",
    "trajectory_report",
]

# Iteration deltas growing past this factor are reported as non-contraction
# before floats overflow.
_DELTA_EXPLOSION = 1e8


@dataclass(frozen=True)
class HybridSystem:
    """Linear part, nonlinearity and its declared Lipschitz constant.

    ``f(t, z, w)`` must be pure; ``w`` plays the role of the state at the
    interval's anchor time.  Construction spot-checks that f vanishes at the
    origin and that sampled difference quotients stay below ``lipschitz_l``
    on probes of radius ``probe_radius`` (the declared constant may be local
    to that ball).
    """

    A: np.ndarray
    f: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    lipschitz_l: float
    dim: int
    probe_radius: float = 1.0
    probe_times: tuple = (0.0, 0.37, 1.0)
    validate: bool = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        if A.shape != (self.dim, self.dim):
            raise ValueError(f"A must be {self.dim}x{self.dim}, got {A.shape}")
        if self.lipschitz_l < 0:
            raise ValueError("lipschitz_l must be nonnegative")
        if self.validate:
            self._spot_check()

    def _spot_check(self):
        n = self.dim
        zero = np.zeros(n)
        for t in self.probe_times:
            val = np.asarray(self.f(t, zero, zero), dtype=float)
            if val.shape != (n,):
                raise ValueError(f"f must return vectors of length {n}")
            if np.linalg.norm(val) > 1e-9 * (1.0 + self.lipschitz_l):
                raise ValueError(f"f(t,0,0) != 0 at t={t} (got {val})")
        rng = np.random.default_rng(20240817)
        for _ in range(24):
            t = float(rng.choice(self.probe_times))
            z1, z2, w1, w2 = rng.normal(size=(4, n))
            scale = self.probe_radius / max(
                np.linalg.norm(z1), np.linalg.norm(z2),
                np.linalg.norm(w1), np.linalg.norm(w2), 1.0,
            )
            z1, z2, w1, w2 = z1 * scale, z2 * scale, w1 * scale, w2 * scale
            num = np.linalg.norm(
                np.asarray(self.f(t, z1, w1)) - np.asarray(self.f(t, z2, w2))
            )
            den = np.linalg.norm(z1 - z2) + np.linalg.norm(w1 - w2)
            if den > 0 and num > self.lipschitz_l * den * (1 + 1e-6) + 1e-12:
                raise ValueError(
                    f"sampled Lipschitz ratio {num / den:.4g} exceeds the "
                    f"declared constant {self.lipschitz_l}"
                )

    def rhs(self, t, z, w):
        return self.A @ z + np.asarray(self.f(t, z, w), dtype=float)


@dataclass
class Segment:
    """Dense output over one interval: nodes, states and state derivatives.

    Evaluation between nodes uses cubic Hermite interpolation, matching the
    fourth-order accuracy of the one-step integrator.
    """

    index: int
    ts: np.ndarray
    zs: np.ndarray
    dzs: np.ndarray
    w: np.ndarray

    @property
    def t_left(self) -> float:
        return float(self.ts[0])

    @property
    def t_right(self) -> float:
        return float(self.ts[-1])

    def value_at_node(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(self.ts, t))
        for cand in (j, j - 1, j + 1):
            if 0 <= cand < len(self.ts) and abs(self.ts[cand] - t) <= 1e-12 * max(1.0, abs(t)):
                return self.zs[cand].copy()
        raise KeyError(f"t={t} is not a node of segment {self.index}")

    def eval(self, t: float) -> np.ndarray:
        if not (self.ts[0] - 1e-12 <= t <= self.ts[-1] + 1e-12):
            raise ValueError(
                f"t={t} outside segment {self.index} span [{self.ts[0]}, {self.ts[-1]}]"
            )
        k = int(np.searchsorted(self.ts, t, side="right")) - 1
        k = min(max(k, 0), len(self.ts) - 2)
        h = self.ts[k + 1] - self.ts[k]
        s = (t - self.ts[k]) / h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return (
            h00 * self.zs[k]
            + h10 * h * self.dzs[k]
            + h01 * self.zs[k + 1]
            + h11 * h * self.dzs[k + 1]
        )


@dataclass
class IntervalDiagnostics:
    index: int
    iterations: int
    last_delta: float
    deltas: list
    ratios: list


@dataclass
class Trajectory:
    """Piecewise-smooth numerical solution with breakpoints at the theta_i."""

    segments: list
    anchors: dict
    direction: str
    t_span: tuple
    diagnostics: list = field(default_factory=list)
    nonuniqueness_warning: bool = False

    def segment_for(self, t: float) -> Segment:
        for seg in self.segments:
            if seg.t_left - 1e-12 <= t <= seg.t_right + 1e-12:
                return seg
        raise ValueError(f"t={t} outside trajectory span {self.t_span}")

    def eval(self, t: float) -> np.ndarray:
        return self.segment_for(t).eval(t)

    @property
    def t0(self) -> float:
        return self.t_span[0]

    @property
    def t_end(self) -> float:
        return self.t_span[1]


def _node_grid(a: float, b: float, split_at: Optional[float], h: float) -> np.ndarray:
    """Ascending nodes over [a, b] with uniform sub-spacing <= h per stretch,
    hitting ``split_at`` exactly when it lies strictly inside."""
    if b <= a:
        return np.array([a])
    pieces = []
    bounds = [a, b]
    if split_at is not None and a < split_at < b:
        bounds = [a, split_at, b]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        n = max(1, int(np.ceil((hi - lo) / h - 1e-12)))
        pieces.append(np.linspace(lo, hi, n + 1))
    nodes = pieces[0]
    for p in pieces[1:]:
        nodes = np.concatenate([nodes, p[1:]])
    return nodes


def _rk4_path(sys: HybridSystem, ts: np.ndarray, z0: np.ndarray, w: np.ndarray,
              interval: int):
    """Classical fourth-order steps along the (possibly descending) node list."""
    n = len(ts)
    zs = np.empty((n, sys.dim))
    dzs = np.empty((n, sys.dim))
    zs[0] = z0
    with np.errstate(over="ignore", invalid="ignore"):
        dzs[0] = sys.rhs(ts[0], z0, w)
        for j in range(n - 1):
            t, z = ts[j], zs[j]
            h = ts[j + 1] - t
            k1 = dzs[j]
            k2 = sys.rhs(t + h / 2, z + (h / 2) * k1, w)
            k3 = sys.rhs(t + h / 2, z + (h / 2) * k2, w)
            k4 = sys.rhs(t + h, z + h * k3, w)
            znext = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(znext)):
                raise BlowUpError(float(t), interval=interval)
            zs[j + 1] = znext
            dzs[j + 1] = sys.rhs(ts[j + 1], znext, w)
    return zs, dzs


def integrate_interval(sys: HybridSystem, sched: ArgumentSchedule, i: int,
                       t_anchor: float, z_anchor: np.ndarray, w: np.ndarray,
                       step: float) -> Segment:
    """Integrate z' = A z + f(t, z, w) with w frozen over all of interval i.

    Runs from the data point (t_anchor, z_anchor) towards both interval
    endpoints; nodes land exactly on theta_i, theta_{i+1} and zeta_i.  The
    step is clamped to a quarter of the interval length.
    """
    th_lo, th_hi = sched.theta(i), sched.theta(i + 1)
    zeta = sched.zeta(i)
    if not (th_lo - 1e-12 <= t_anchor <= th_hi + 1e-12):
        raise ValueError(
            f"t_anchor={t_anchor} outside interval {i} = [{th_lo}, {th_hi}]"
        )
    h = min(step, (th_hi - th_lo) / 4.0)
    z_anchor = np.asarray(z_anchor, dtype=float)
    w = np.asarray(w, dtype=float)

    right_ts = _node_grid(t_anchor, th_hi, zeta, h)
    left_ts = _node_grid(th_lo, t_anchor, zeta, h)[::-1]  # descending from anchor

    zs_r, dzs_r = _rk4_path(sys, right_ts, z_anchor, w, i)
    zs_l, dzs_l = _rk4_path(sys, left_ts, z_anchor, w, i)

    ts = np.concatenate([left_ts[::-1][:-1], right_ts])
    zs = np.concatenate([zs_l[::-1][:-1], zs_r])
    dzs = np.concatenate([dzs_l[::-1][:-1], dzs_r])
    return Segment(index=i, ts=ts, zs=zs, dzs=dzs, w=w)


@dataclass
class AnchorResult:
    w: np.ndarray
    iterations: int
    last_delta: float
    deltas: list
    ratios: list
    segment: Segment


def solve_anchor(sys: HybridSystem, sched: ArgumentSchedule, i: int,
                 t_anchor: float, z_anchor: np.ndarray, step: float,
                 tol: float, max_iter: int = 50) -> AnchorResult:
    """Resolve the implicit anchor value w = z(zeta_i) on interval i.

    The unknown is the single vector w: starting from the segment integrated
    with the w-slot frozen at z_anchor, each sweep re-integrates with the
    current w and reads the new value at zeta_i.  Stops when consecutive
    values differ by less than tol; raises :class:`NonContractionError` with
    the observed ratio sequence when the iteration fails to settle.

    Contraction is guaranteed when the smallness report of the analysis
    module passes; when it does not, continuation may genuinely fail or be
    non-unique, and the error's ratio sequence is the diagnostic.
    """
    zeta = sched.zeta(i)
    z_anchor = np.asarray(z_anchor, dtype=float)
    seg = integrate_interval(sys, sched, i, t_anchor, z_anchor, z_anchor, step)
    w = seg.value_at_node(zeta)
    scale = max(1.0, float(np.linalg.norm(w)))
    deltas: list = []
    ratios: list = []
    for m in range(1, max_iter + 1):
        seg = integrate_interval(sys, sched, i, t_anchor, z_anchor, w, step)
        w_next = seg.value_at_node(zeta)
        delta = float(np.linalg.norm(w_next - w))
        if deltas and deltas[-1] > 0:
            ratios.append(delta / deltas[-1])
        deltas.append(delta)
        if not np.isfinite(delta) or delta > _DELTA_EXPLOSION * scale:
            raise NonContractionError(deltas, ratios, interval=i, max_iter=max_iter)
        w = w_next
        if delta < tol:
            return AnchorResult(
                w=w, iterations=m, last_delta=delta, deltas=deltas,
                ratios=ratios, segment=seg,
            )
    raise NonContractionError(deltas, ratios, interval=i, max_iter=max_iter)


def _locate_right_closed(sched: ArgumentSchedule, t: float) -> int:
    """Index i with theta_i < t <= theta_{i+1} (for right-end data points)."""
    i = sched.interval_index(t)
    if t <= sched.theta(i) + 1e-12 and i > sched.i_min:
        return i - 1
    return i


def solve_forward(sys: HybridSystem, sched: ArgumentSchedule, t0: float,
                  z0: np.ndarray, t_end: float, step: float, tol: float,
                  max_iter: int = 50) -> Trajectory:
    """March from (t0, z0) to t_end, resolving each interval's anchor in turn.

    On the first interval the data point may sit anywhere (the anchor is
    reached by integrating inside the interval in whichever direction is
    needed); afterwards the left endpoint value carries the march.
    """
    if not t0 < t_end:
        raise ValueError("need t0 < t_end")
    i0 = sched.interval_index(t0)
    i_end = _locate_right_closed(sched, t_end)
    return _march(sys, sched, t0, z0, range(i0, i_end + 1), "forward",
                  (t0, t_end), step, tol, max_iter)


def solve_backward(sys: HybridSystem, sched: ArgumentSchedule, t0: float,
                   z0: np.ndarray, t_start: float, step: float, tol: float,
                   max_iter: int = 50) -> Trajectory:
    """Mirror of :func:`solve_forward`, marching left from (t0, z0).

    The anchor equation may admit several (or no) solutions when the
    smallness conditions fail; the returned trajectory is the iteration's
    limit and ``nonuniqueness_warning`` is set whenever a contraction ratio
    above one was observed along the way.
    """
    if not t_start < t0:
        raise ValueError("need t_start < t0")
    i0 = _locate_right_closed(sched, t0)
    i_end = sched.interval_index(t_start)
    return _march(sys, sched, t0, z0, range(i0, i_end - 1, -1), "backward",
                  (t_start, t0), step, tol, max_iter)


def _march(sys, sched, t_a, z_a, intervals, direction, t_span, step, tol, max_iter):
    segments = []
    anchors = {}
    diagnostics = []
    warn = False
    z_a = np.asarray(z_a, dtype=float)
    for i in intervals:
        try:
            res = solve_anchor(sys, sched, i, t_a, z_a, step, tol, max_iter)
        except (NonContractionError, BlowUpError) as err:
            if getattr(err, "interval", None) is None:
                err.interval = i
            raise
        segments.append(res.segment)
        anchors[i] = res.w
        diagnostics.append(IntervalDiagnostics(
            index=i, iterations=res.iterations, last_delta=res.last_delta,
            deltas=res.deltas, ratios=res.ratios,
        ))
        if any(r > 1.0 for r in res.ratios):
            warn = True
        if direction == "forward":
            t_a = sched.theta(i + 1)
            z_a = res.segment.value_at_node(t_a)
        else:
            t_a = sched.theta(i)
            z_a = res.segment.value_at_node(t_a)
    if direction == "backward":
        segments = segments[::-1]
        diagnostics = diagnostics[::-1]
    return Trajectory(
        segments=segments, anchors=anchors, direction=direction, t_span=t_span,
        diagnostics=diagnostics, nonuniqueness_warning=warn,
    )


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns t, z_1..z_n, interval_index; one row per stored node in span."""
    lo, hi = min(traj.t_span), max(traj.t_span)
    n = traj.segments[0].zs.shape[1]
    header = "t," + ",".join(f"z_{j + 1}" for j in range(n)) + ",interval_index"
    lines = [header]
    for seg in traj.segments:
        for t, z in zip(seg.ts, seg.zs):
            if lo - 1e-12 <= t <= hi + 1e-12:
                cells = [repr(float(t))] + [repr(float(v)) for v in z]
                lines.append(",".join(cells) + f",{seg.index}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def trajectory_report(traj: Trajectory) -> dict:
    """Sidecar diagnostics: per-interval iteration counts and ratios."""
    return {
        "direction": traj.direction,
        "t_span": [float(traj.t_span[0]), float(traj.t_span[1])],
        "nonuniqueness_warning": bool(traj.nonuniqueness_warning),
        "intervals": [
            {
                "index": d.index,
                "iterations": d.iterations,
                "last_delta": d.last_delta,
                "contraction_ratios": [float(r) for r in d.ratios],
            }
            for d in traj.diagnostics
        ],
    }
