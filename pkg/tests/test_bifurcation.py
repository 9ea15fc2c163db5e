import numpy as np
import pytest

from zkls import bifurcation as bif
from zkls.spectral import Grid1D, Grid2D, critical_length

C0 = 1.0


@pytest.fixture(scope="module")
def grid():
    return bif.default_branch_grid(C0)


@pytest.fixture(scope="module")
def branch(grid):
    return [bif.solve_branch(C0, a, grid) for a in bif.default_nodes(C0)]


def test_grid_must_be_critical():
    g = Grid2D(Grid1D(40.0, 128), 16, 0.5)
    with pytest.raises(ValueError):
        bif.solve_branch(C0, 0.05, g)


def test_amplitude_range(grid):
    with pytest.raises(ValueError):
        bif.solve_branch(C0, 0.5, grid)


def test_trivial_point_is_line_soliton(grid):
    pt = bif.solve_branch(C0, 0.0, grid)
    assert pt.c_of_a == C0
    assert pt.mass == pytest.approx(6.0 * 2 * np.pi * critical_length(C0), rel=1e-12)


def test_newton_residual_and_convergence(branch):
    for pt in branch:
        assert pt.residual_norm < 1e-9
        assert pt.iterations <= 6
        assert bif.newton_contraction(pt) < 0.5 or pt.residual_history[-1] < 1e-11


def test_branch_is_stationary_and_positive(branch):
    pt = branch[-1]
    res = bif.stationary_residual(pt.field, pt.c_of_a, pt.grid)
    assert np.max(np.abs(res)) < 1e-10
    # tails sit at round-off level
    assert pt.field.min() > -1e-12


def test_projection_pins_amplitude(branch, grid):
    ec, es = bif.kernel_directions(C0, grid)
    q = bif.line_soliton(C0, grid)
    for pt in branch:
        a1 = bif.inner(pt.field - q, ec, grid) / bif.norm_sq(ec, grid)
        a2 = bif.inner(pt.field - q, es, grid) / bif.norm_sq(es, grid)
        assert a1 == pytest.approx(pt.a_vec[0], rel=1e-10)
        assert abs(a2) < 1e-12


def test_speed_grows_quadratically(branch):
    cs = np.array([p.c_of_a for p in branch])
    assert np.all(np.diff(cs) > 0)
    curv, _ = bif.fit_c_curvature(branch)
    assert curv == pytest.approx(2.0856265, rel=1e-5)


def test_rotated_direction_is_y_shift(grid):
    a = 0.05
    p0 = bif.solve_branch_vec(C0, (a, 0.0), grid)
    th = 0.7
    p1 = bif.solve_branch_vec(C0, (a * np.cos(th), a * np.sin(th)), grid)
    shifted = bif.shift_y(p0.field, grid, th * grid.L)
    assert np.max(np.abs(p1.field - shifted)) < 1e-10
    assert p1.c_of_a == pytest.approx(p0.c_of_a, rel=1e-12)


def test_c2_estimators_agree(branch):
    est = bif.compute_c2_constant(C0, branch)
    assert est.formula > 0 and est.mass_fit > 0
    assert est.rel_diff < 1e-4
    assert est.formula == pytest.approx(54.9095, rel=1e-4)


def test_c2_needs_enough_points(branch):
    with pytest.raises(ValueError):
        bif.compute_c2_constant(C0, branch[:2])


def test_quartic_gap(branch, grid):
    est = bif.compute_c2_constant(C0, branch)
    k_theory = bif.quartic_constant(C0, est.formula, grid)
    bi = bif.BranchInterp(C0, branch)
    k_fit, _ = bif.fit_quartic(C0, [0.02, 0.04, 0.06, 0.08], bi)
    assert k_fit == pytest.approx(k_theory, rel=1e-3)


def test_interp_reproduces_nodes_and_between(branch, grid):
    bi = bif.BranchInterp(C0, branch[::2])
    # odd nodes were not used for the interpolant
    for pt in branch[1::2]:
        if pt.amplitude > bi.amp_max:
            continue
        assert np.max(np.abs(bi.phi(pt.a_vec) - pt.field)) < 1e-8
        assert bi.c_of_a(pt.a_vec) == pytest.approx(pt.c_of_a, rel=1e-10)


def test_interp_range_and_grid_checks(branch):
    bi = bif.BranchInterp(C0, branch)
    with pytest.raises(ValueError):
        bi.phi((0.2, 0.0))
    with pytest.raises(ValueError):
        bi.theta((0.01, 0.0), 1.0, Grid2D(Grid1D(40.0, 128), 16, 0.5))


def test_theta_scaling(branch, grid):
    bi = bif.BranchInterp(C0, branch)
    a = (0.03, 0.04)
    c = 1.1
    th = bi.theta(a, c)
    chat = c * bi.c_of_a(a) / C0
    # -Lap Theta + c_hat Theta - Theta^2 = ((c - c0)/c0) d_y^2 Theta
    lhs = bif.stationary_residual(th, chat, grid)
    rhs = (c - C0) / C0 * bif.dy(bif.dy(th, grid), grid)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_theta_derivatives(branch, grid):
    bi = bif.BranchInterp(C0, branch)
    a = (0.03, 0.02)
    c = 1.05
    th, thx, d1, d2, dc = bi.theta_with_derivs(a, c)
    h = 1e-6
    fd1 = (bi.theta((a[0] + h, a[1]), c) - bi.theta((a[0] - h, a[1]), c)) / (2 * h)
    fdc = (bi.theta(a, c + h) - bi.theta(a, c - h)) / (2 * h)
    assert np.max(np.abs(d1 - fd1)) < 1e-7
    assert np.max(np.abs(dc - fdc)) < 1e-7


def test_gamma_speed_and_gap(branch):
    bi = bif.BranchInterp(C0, branch)
    assert bif.gamma_speed(C0, (0.0, 0.0), bi) == pytest.approx(C0, rel=1e-12)
    g = bif.gamma_speed(1.1, (0.05, 0.0), bi)
    assert g == pytest.approx(1.0985, abs=1e-4)
    gap_q = bif.action_gap(C0, (0.05, 0.0), bi)
    gap_s = bif.action_gap_scaling(C0, (0.05, 0.0), bi)
    assert gap_q > 0
    assert gap_q == pytest.approx(gap_s, rel=1e-8)
    with pytest.raises(ValueError):
        bif.gamma_speed(2.0, (0.01, 0.0), bi)
