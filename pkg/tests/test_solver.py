import math

import numpy as np
import pytest
import scipy.linalg as sla

from epcag import (
    HybridSystem,
    integrate_interval,
    make_schedule,
    solve_anchor,
    solve_backward,
    solve_forward,
)
from epcag.errors import BlowUpError, NonContractionError

E3 = math.exp(3.0)


def example1_system():
    """z' = 3 z - z(beta(t))^2 with the alternating schedule."""
    sys = HybridSystem(np.array([[3.0]]), lambda t, z, w: np.array([-w[0] ** 2]),
                       30.0, 1, probe_radius=15.0)
    sched = make_schedule("alternating", window=(-2, 3))
    return sys, sched


def example1_interval_exact(z0, t):
    """Variation of constants for z' = 3z - z0^2 from (0, z0).

    Note the minus sign: the anchored term enters the rhs negatively, so
    z(t) = e^{3t} z0 - (z0^2/3)(e^{3t} - 1)."""
    return E3**0 * np.exp(3.0 * t) * z0 - (z0**2 / 3.0) * (np.exp(3.0 * t) - 1.0)


def small_random_system(rng, n, l):
    """Globally Lipschitz nonlinearity with constant <= l and |A| <= 1."""
    A = rng.normal(size=(n, n))
    A *= rng.uniform(0.3, 1.0) / np.linalg.norm(A, 2)
    Q1 = rng.normal(size=(n, n))
    Q1 /= np.linalg.norm(Q1, 2)
    Q2 = rng.normal(size=(n, n))
    Q2 /= np.linalg.norm(Q2, 2)

    def f(t, z, w):
        return l * (0.5 * np.tanh(Q1 @ w) + 0.5 * np.sin(Q2 @ z))

    return HybridSystem(A, f, l, n)


class TestHybridSystemValidation:
    def test_nonzero_origin_rejected(self):
        with pytest.raises(ValueError, match="f\\(t,0,0\\)"):
            HybridSystem(np.array([[-1.0]]),
                         lambda t, z, w: np.array([0.1 + z[0]]), 1.0, 1)

    def test_understated_lipschitz_rejected(self):
        with pytest.raises(ValueError, match="Lipschitz"):
            HybridSystem(np.array([[-1.0]]),
                         lambda t, z, w: 5.0 * w, 0.1, 1)

    def test_wrong_output_shape_rejected(self):
        with pytest.raises(ValueError, match="length"):
            HybridSystem(np.eye(2) * -1.0,
                         lambda t, z, w: np.zeros(3), 0.0, 2)


class TestIntegrateInterval:
    def test_linear_homogeneous(self):
        sys = HybridSystem(np.array([[-1.0]]), lambda t, z, w: np.zeros(1), 0.0, 1)
        sched = make_schedule("epca", window=(0, 2))
        seg = integrate_interval(sys, sched, 0, 0.0, np.array([1.0]),
                                 np.array([1.0]), 0.02)
        for t in np.linspace(0.0, 1.0, 11):
            assert abs(seg.eval(t)[0] - math.exp(-t)) < 1e-8

    def test_example1_interval_closed_form(self):
        sys, sched = example1_system()
        z0 = 2.0
        seg = integrate_interval(sys, sched, 0, 0.0, np.array([z0]),
                                 np.array([z0]), 0.004)
        for t in np.linspace(0.0, 1.0, 9):
            assert abs(seg.eval(t)[0] - example1_interval_exact(z0, t)) < 1e-7

    def test_order_four_convergence(self):
        sys, sched = example1_system()
        z0 = 2.0
        exact = example1_interval_exact(z0, 1.0)
        errors = []
        for step in (0.05, 0.025):
            seg = integrate_interval(sys, sched, 0, 0.0, np.array([z0]),
                                     np.array([z0]), step)
            errors.append(abs(seg.value_at_node(1.0)[0] - exact))
        ratio = errors[0] / errors[1]
        assert 12.0 <= ratio <= 20.0

    def test_integrates_both_directions_from_interior_anchor(self):
        sys = HybridSystem(np.array([[-1.0]]), lambda t, z, w: np.zeros(1), 0.0, 1)
        sched = make_schedule("epca", window=(0, 2))
        seg = integrate_interval(sys, sched, 0, 0.5, np.array([1.0]),
                                 np.array([1.0]), 0.02)
        assert seg.t_left == 0.0 and seg.t_right == 1.0
        assert abs(seg.eval(0.0)[0] - math.exp(0.5)) < 1e-8
        assert abs(seg.eval(1.0)[0] - math.exp(-0.5)) < 1e-8

    def test_blowup_reports_last_finite_time(self):
        sys = HybridSystem(np.array([[0.0]]),
                           lambda t, z, w: np.array([z[0] ** 3]), 3.0, 1)
        sched = make_schedule("explicit", thetas=[0.0, 4.0], zetas=[0.0],
                              theta_bound=4.0)
        with pytest.raises(BlowUpError) as ei:
            integrate_interval(sys, sched, 0, 0.0, np.array([3.0]),
                               np.array([3.0]), 0.5)
        assert 0.0 <= ei.value.last_finite_time < 4.0


class TestSolveAnchor:
    def test_linear_one_iteration(self):
        A = np.array([[-0.3, 1.0], [0.0, -0.5]])
        sys = HybridSystem(A, lambda t, z, w: np.zeros(2), 0.0, 2)
        sched = make_schedule("alternating", window=(0, 2))
        z0 = np.array([1.0, -0.5])
        res = solve_anchor(sys, sched, 0, -1.0, z0, 0.01, 1e-10)
        assert res.iterations == 1
        expected = sla.expm(A * (0.0 - (-1.0))) @ z0
        np.testing.assert_allclose(res.w, expected, atol=1e-8)

    def test_contraction_ratio_bound(self):
        rng = np.random.default_rng(12)
        l, theta = 0.02, 1.0
        for trial in range(5):
            sys = small_random_system(rng, 2, l)
            sched = make_schedule("randomized", window=(0, 6),
                                  theta_bound=theta, seed=100 + trial)
            M = math.exp(np.linalg.norm(sys.A, 2) * theta)
            bound = 2 * M * l * theta + 0.05
            res = solve_anchor(sys, sched, 2, sched.theta(2),
                               rng.normal(size=2), 0.05, 1e-13, 60)
            meaningful = [r for r, d in zip(res.ratios, res.deltas[1:])
                          if d > 1e-12]
            assert meaningful, "expected at least one measurable ratio"
            assert all(r <= bound for r in meaningful)

    def test_example1_no_forward_continuation(self):
        # Independent oracle: the anchor value w = z(0) of a solution through
        # (-1, x0) must solve (e^3-1) w^2 + 3 w - 3 e^3 x0 = 0 (variation of
        # constants); for x0 = -10 the discriminant is negative.
        x0 = -10.0
        roots = np.roots([E3 - 1.0, 3.0, -3.0 * E3 * x0])
        assert np.all(np.abs(roots.imag) > 0), "oracle: no real anchor"
        sys, sched = example1_system()
        with pytest.raises(NonContractionError) as ei:
            solve_anchor(sys, sched, 0, -1.0, np.array([x0]), 0.02, 1e-10, 40)
        assert ei.value.interval == 0
        assert any(r > 1.0 for r in ei.value.ratios)


class TestSolveForward:
    def test_zero_nonlinearity_matrix_exponential(self):
        A = np.array([[-0.4, 0.8], [-0.8, -0.4]])
        sys = HybridSystem(A, lambda t, z, w: np.zeros(2), 0.0, 2)
        sched = make_schedule("epca", window=(0, 6))
        z0 = np.array([1.0, 0.3])
        traj = solve_forward(sys, sched, 0.0, z0, 5.0, 0.05, 1e-10)
        for t in np.linspace(0.0, 5.0, 21):
            np.testing.assert_allclose(traj.eval(t), sla.expm(A * t) @ z0,
                                       atol=1e-6)

    def test_epca_linear_closed_form(self):
        a, b = -1.0, 0.25
        sys = HybridSystem(np.array([[a]]), lambda t, z, w: b * w, abs(b), 1)
        sched = make_schedule("epca", window=(0, 6))
        traj = solve_forward(sys, sched, 0.0, np.array([1.0]), 5.0, 0.05, 1e-12)
        rho = math.exp(a) + (b / a) * (math.exp(a) - 1.0)
        zi = 1.0
        for i in range(5):
            for t in np.linspace(i, i + 1.0, 7):
                exact = (math.exp(a * (t - i))
                         + (b / a) * (math.exp(a * (t - i)) - 1.0)) * zi
                assert abs(traj.eval(t)[0] - exact) <= 1e-6 * abs(exact)
            zi *= rho

    def test_continuous_dependence_bound(self, tanh_system):
        sched = make_schedule("epca", window=(0, 3))
        l, theta = tanh_system.lipschitz_l, sched.theta_bound
        M = math.exp(np.linalg.norm(tanh_system.A, 2) * theta)
        x = M * l * theta
        bound_coef = M * math.exp(x) * (1.0 + x / (1.0 - x * math.exp(x)))
        z0a = np.array([0.5, 0.2])
        z0b = np.array([0.45, 0.28])
        ta = solve_forward(tanh_system, sched, 0.0, z0a, 1.0, 0.02, 1e-11)
        tb = solve_forward(tanh_system, sched, 0.0, z0b, 1.0, 0.02, 1e-11)
        lim = bound_coef * np.linalg.norm(z0a - z0b)
        for t in np.linspace(0.0, 1.0, 9):
            assert np.linalg.norm(ta.eval(t) - tb.eval(t)) <= lim

    def test_segment_continuity(self, tanh_system):
        sched = make_schedule("epca", window=(0, 6))
        step = 0.05
        traj = solve_forward(tanh_system, sched, 0.0, np.array([1.0, 0.5]),
                             5.0, step, 1e-10)
        for left, right in zip(traj.segments[:-1], traj.segments[1:]):
            t = right.t_left
            gap = np.linalg.norm(left.value_at_node(t) - right.value_at_node(t))
            assert gap < 10.0 * step**4

    def test_anchor_consistency(self, tanh_system):
        sched = make_schedule("epca", window=(0, 6))
        tol = 1e-9
        traj = solve_forward(tanh_system, sched, 0.0, np.array([1.0, 0.5]),
                             5.0, 0.05, tol)
        for i, w in traj.anchors.items():
            np.testing.assert_allclose(traj.eval(sched.zeta(i)), w, atol=tol)

    def test_step_halving_agreement(self, tanh_system):
        sched = make_schedule("epca", window=(0, 6))
        t1 = solve_forward(tanh_system, sched, 0.0, np.array([1.0, 0.5]),
                           5.0, 0.05, 1e-11)
        t2 = solve_forward(tanh_system, sched, 0.0, np.array([1.0, 0.5]),
                           5.0, 0.025, 1e-11)
        diff = max(np.linalg.norm(t1.eval(t) - t2.eval(t))
                   for t in np.linspace(0.0, 5.0, 21))
        assert diff <= 50.0 * 0.05**4

    def test_randomized_schedule_march(self, tanh_system):
        sched = make_schedule("randomized", window=(0, 12), theta_bound=1.0,
                              seed=31)
        t_end = sched.theta(10)
        traj = solve_forward(tanh_system, sched, sched.t_min,
                             np.array([1.0, 0.4]), t_end, 0.05, 1e-10)
        back = solve_backward(tanh_system, sched, t_end, traj.eval(t_end),
                              sched.t_min, 0.05, 1e-10)
        assert np.linalg.norm(back.eval(sched.t_min) - [1.0, 0.4]) < 1e-7
        for i, w in traj.anchors.items():
            np.testing.assert_allclose(traj.eval(sched.zeta(i)), w, atol=1e-9)

    def test_semigroup_consistency(self, tanh_system):
        sched = make_schedule("epca", window=(0, 6))
        tol = 1e-10
        z0 = np.array([0.8, -0.3])
        whole = solve_forward(tanh_system, sched, 0.3, z0, 4.0, 0.05, tol)
        first = solve_forward(tanh_system, sched, 0.3, z0, 2.0, 0.05, tol)
        second = solve_forward(tanh_system, sched, 2.0, first.eval(2.0), 4.0,
                               0.05, tol)
        for t in np.linspace(2.0, 4.0, 9):
            assert np.linalg.norm(whole.eval(t) - second.eval(t)) <= 10 * tol + 1e-9


class TestSolveBackward:
    def test_zero_nonlinearity(self):
        A = np.array([[-0.4, 0.8], [-0.8, -0.4]])
        sys = HybridSystem(A, lambda t, z, w: np.zeros(2), 0.0, 2)
        sched = make_schedule("epca", window=(-6, 2))
        z0 = np.array([1.0, 0.3])
        traj = solve_backward(sys, sched, 0.0, z0, -5.0, 0.05, 1e-10)
        for t in np.linspace(-5.0, 0.0, 11):
            np.testing.assert_allclose(traj.eval(t), sla.expm(A * t) @ z0,
                                       atol=1e-6)

    def test_example1_backward_nonuniqueness(self):
        # Closed-form oracle: z_j(1) = e^3 z_j - (z_j^2/3)(e^3 - 1), so two
        # solutions from t = 0 collide at t = 1 iff z0 + z1 = 3 e^3/(e^3 - 1)
        # (variation of constants for the interval rate z' = 3z - z_j^2).
        z0 = 1.0
        z1 = 3.0 * E3 / (E3 - 1.0) - z0
        assert abs(example1_interval_exact(z0, 1.0)
                   - example1_interval_exact(z1, 1.0)) < 1e-10
        sys, sched = example1_system()
        # numerical confirmation of the collision through the solver
        ta = solve_forward(sys, sched, 0.0, np.array([z0]), 1.0, 0.005, 1e-12)
        tb = solve_forward(sys, sched, 0.0, np.array([z1]), 1.0, 0.005, 1e-12)
        assert abs(ta.eval(1.0)[0] - tb.eval(1.0)[0]) <= 1e-8
        # the backward continuation from the collision point cannot be pinned
        # down: the anchor iteration fails to contract
        z_coll = example1_interval_exact(z0, 1.0)
        with pytest.raises(NonContractionError) as ei:
            solve_backward(sys, sched, 1.0, np.array([z_coll]), -1.0, 0.02,
                           1e-10, 40)
        assert any(r > 1.0 for r in ei.value.ratios)

    def test_warning_flag_when_ratio_exceeds_one_but_converges(self):
        # saturating anchor coupling: the iteration expands at ratio 1.3 near
        # the origin, then the saturation pins the fixed point, so the run
        # converges but must carry the non-uniqueness warning
        def f(t, z, w):
            return 1.3 * np.clip(w, -0.5, 0.5)

        sys = HybridSystem(np.array([[0.0]]), f, 1.3, 1, probe_radius=0.4)
        sched = make_schedule("explicit", thetas=[-1.0, 0.0, 1.0],
                              zetas=[0.0, 1.0], i_min=-1)
        traj = solve_forward(sys, sched, 0.0, np.array([0.01]), 1.0, 0.1,
                             1e-12)
        assert traj.nonuniqueness_warning
        assert traj.eval(1.0)[0] == pytest.approx(0.01 + 1.3 * 0.5, abs=1e-9)
        back = solve_backward(sys, sched, 1.0, traj.eval(1.0), 0.0, 0.1, 1e-12)
        assert back.eval(0.0)[0] == pytest.approx(0.01, abs=1e-8)

    def test_round_trip(self, tanh_system):
        sched = make_schedule("epca", window=(0, 6))
        tol = 1e-10
        z0 = np.array([0.7, -0.2])
        fwd = solve_forward(tanh_system, sched, 1.0, z0, 4.0, 0.02, tol)
        back = solve_backward(tanh_system, sched, 4.0, fwd.eval(4.0), 1.0,
                              0.02, tol)
        assert np.linalg.norm(back.eval(1.0) - z0) <= 10 * tol + 1e-8


class TestExport:
    def test_csv_and_report(self, tanh_system, tmp_path):
        from epcag import trajectory_report, write_trajectory_csv

        sched = make_schedule("epca", window=(0, 4))
        traj = solve_forward(tanh_system, sched, 0.0, np.array([1.0, 0.5]),
                             3.0, 0.25, 1e-9)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(traj, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,z_1,z_2,interval_index"
        assert len(lines) > 10
        rep = trajectory_report(traj)
        assert rep["direction"] == "forward"
        assert len(rep["intervals"]) == 3
        assert all("contraction_ratios" in d for d in rep["intervals"])
