import numpy as np
import pytest
from scipy.integrate import quad

from zkls import bifurcation as bif
from zkls import diagnostics as dg
from zkls import simulator as sim
from zkls.soliton import SolitonProfile, eval_q, eval_q_prime
from zkls.spectral import Grid1D, Grid2D, critical_length

C0 = 1.0
L_CRIT = critical_length(C0)


@pytest.fixture(scope="module")
def crit_grid():
    return sim.default_grid(C0, L_CRIT)


# -- weight profile

def test_weight_profile_invariants():
    for R in (1.0, 4.0, 8.0):
        w = dg.WeightProfile(R)
        x = np.linspace(-60, 60, 2001)
        assert w.psi(0.0) == pytest.approx(0.5, abs=1e-16)
        p = w.psi(x)
        assert np.all((p >= 0) & (p <= 1))
        assert np.all((p[np.abs(x) < 20] > 0) & (p[np.abs(x) < 20] < 1))
        assert np.all(np.abs(w.d3psi(x)) <= w.dpsi(x) / R ** 2 * (1 + 1e-12))
        assert np.max(np.abs(w.dpsi(x) - 1 / (np.pi * R * np.cosh(x / R)))) == 0.0
        fd = (w.psi(x + 1e-5) - w.psi(x - 1e-5)) / 2e-5
        assert np.max(np.abs(fd - w.dpsi(x))) < 1e-9


def test_weight_preconditions():
    with pytest.raises(ValueError):
        dg.WeightProfile(0.0)
    with pytest.raises(dg.PreconditionError):
        dg.WeightProfile(4.0, 0.0, 0.6).check(1.0)
    with pytest.raises(dg.PreconditionError):
        dg.WeightProfile(3.0, 0.0, 0.25).check(1.0)
    dg.WeightProfile(4.0, 0.0, 0.25).check(1.0)


# -- decomposition

def test_decompose_exact_soliton(crit_grid, branch_interp):
    u = sim.soliton_field(crit_grid, C0, x0=1.3)
    st = dg.decompose(u, crit_grid, C0, branch_interp)
    assert st.rho == pytest.approx(1.3, abs=1e-10)
    assert st.c_mod == pytest.approx(C0, abs=1e-10)
    assert np.hypot(*st.a_vec) < 1e-12
    # eta is the interpolation error of the branch grid, not exactly zero
    assert st.eta_h1 < 1e-9
    assert st.c_hat == pytest.approx(st.c_mod, rel=1e-12)


def test_decompose_recovers_branch_element(crit_grid, branch_interp):
    th = branch_interp.theta((0.03, -0.02), 1.05, crit_grid)
    u = sim.to_physical(sim.shift_x(sim.to_spectral(th), crit_grid, -2.0), crit_grid)
    st = dg.decompose(u, crit_grid, C0, branch_interp)
    assert st.c_mod == pytest.approx(1.05, abs=1e-8)
    assert st.a_vec[0] == pytest.approx(0.03, abs=1e-8)
    assert st.a_vec[1] == pytest.approx(-0.02, abs=1e-8)
    assert st.rho == pytest.approx(2.0, abs=1e-8)


def test_decompose_monte_carlo_bound(crit_grid, branch_interp):
    ks = []
    for seed in range(20):
        u = sim.soliton_field(crit_grid, C0) + 1e-3 * sim.random_perturbation(crit_grid, C0, seed)
        st = dg.decompose(u, crit_grid, C0, branch_interp)
        th_norm = np.sqrt(bif.norm_sq(st.theta, crit_grid))
        assert max(abs(r) for r in st.ortho_residuals) < 1e-8 * st.eta_l2 * th_norm
        d = dg.modulation_distance(u, crit_grid, C0)
        ks.append((st.eta_h1 + abs(st.c_mod - C0) + np.hypot(*st.a_vec)) / d)
    k1 = max(ks)
    assert k1 <= 10.0
    # the fitted constant is stable across seeds
    assert k1 / min(ks) < 3.0


def test_decompose_shift_covariance(crit_grid, branch_interp):
    u = sim.soliton_field(crit_grid, C0) + 1e-3 * sim.random_perturbation(crit_grid, C0, 4)
    s = 3 * crit_grid.x.h
    us = sim.to_physical(sim.shift_x(sim.to_spectral(u), crit_grid, -s), crit_grid)
    a = dg.decompose(u, crit_grid, C0, branch_interp)
    b = dg.decompose(us, crit_grid, C0, branch_interp)
    assert b.rho - a.rho == pytest.approx(s, abs=1e-10)
    assert b.c_mod == pytest.approx(a.c_mod, abs=1e-10)
    assert np.allclose(b.a_vec, a.a_vec, atol=1e-10)
    assert b.eta_h1 == pytest.approx(a.eta_h1, abs=1e-10)


def test_decompose_precondition(crit_grid, branch_interp):
    u = 0.2 * sim.soliton_field(crit_grid, C0)
    with pytest.raises(dg.PreconditionError):
        dg.decompose(u, crit_grid, C0, branch_interp)


def test_decompose_line_family_off_critical():
    g = sim.default_grid(C0, 0.5)
    u = sim.soliton_field(g, 1.02, x0=-0.4)
    st = dg.decompose(u, g, C0, None)
    assert st.c_mod == pytest.approx(1.02, abs=1e-10)
    assert st.rho == pytest.approx(-0.4, abs=1e-10)
    assert st.eta_h1 < 1e-10
    assert st.a_vec == (0.0, 0.0)


# -- modulation rates

def test_rates_on_stable_run(stable_traj):
    times, states = dg.decompose_trajectory(stable_traj, None, stride=5)
    rep = dg.modulation_rates(states, times, C0)
    assert rep.passed
    assert rep.K0 < 50
    assert np.allclose(rep.c_hat, [s.c_mod for s in states])


def test_rates_on_soliton_run(soliton_traj):
    times, states = dg.decompose_trajectory(soliton_traj, None, stride=25)
    rep = dg.modulation_rates(states, times, C0)
    assert np.allclose(rep.rho_dot, C0, atol=1e-6)
    assert max(abs(s.c_mod - C0) for s in states) < 1e-8


def test_rates_need_three_states():
    with pytest.raises(ValueError):
        dg.modulation_rates([], [], C0)


# -- monotonicity functionals

def test_zero_field_J_vanishes(soliton_traj):
    zero = dg.Trajectory(soliton_traj.grid, soliton_traj.times[:3], soliton_traj.offsets[:3],
                         [np.zeros(soliton_traj.grid.shape)] * 3, soliton_traj.rho[:3], C0)
    s = dg.monotonicity_J(zero, dg.WeightProfile(4.0, 5.0, 0.25))
    assert np.all(s.values == 0.0)
    assert s.violation == 0.0


def _soliton_tail(R, x0, beta, shift, L):
    w = dg.WeightProfile(R, x0, beta)
    prof = SolitonProfile(C0)
    f = lambda xi: eval_q(prof, xi) ** 2 * (w.psi(xi - x0) - w.psi(xi - x0 - shift))
    return 2 * np.pi * L * quad(f, -40, 40, points=[0.0], limit=400, epsabs=1e-14)[0]


def test_soliton_run_I_violation_is_the_exact_tail(soliton_traj):
    # with rho(t0) in the weight the exact soliton shows the e^{-x0/R} tail itself
    R, x0, beta = 4.0, 10.0, 0.25
    s = dg.monotonicity_I(soliton_traj, dg.WeightProfile(R, x0, beta))
    t0 = soliton_traj.times[-1]
    expected = _soliton_tail(R, x0, beta, (C0 - beta / 2) * t0, 0.5)
    assert s.violation == pytest.approx(expected, rel=1e-6)


def test_soliton_run_J_has_no_violation(soliton_traj):
    s = dg.monotonicity_J(soliton_traj, dg.WeightProfile(4.0, 10.0, 0.25))
    assert s.violation <= 1e-8


@pytest.mark.parametrize("R", [4.0, 8.0])
def test_I_decay_in_x0(stable_traj, R):
    fit = dg.monotonicity_sweep(stable_traj, R, 0.25, kind="I")
    assert abs(fit.rate_ratio - 1.0) < 0.2
    fit_b = dg.monotonicity_sweep(stable_traj, R, 0.25, kind="I-")
    assert abs(fit_b.rate_ratio - 1.0) < 0.2


def test_fit_decay():
    x0 = np.array([5.0, 10.0, 15.0])
    f = dg.fit_decay(x0, 2.0 * np.exp(-x0 / 4.0), 4.0)
    assert f.rate_ratio == pytest.approx(1.0, rel=1e-12)
    assert f.C == pytest.approx(2.0, rel=1e-12)
    assert np.isnan(dg.fit_decay(x0, [0.0, 0.0, 0.0], 4.0).rate)


# -- virial quantities

def _state(grid, bi, a_vec, c, eta=None):
    th = bi.theta(a_vec, c, grid)
    eta = np.zeros(grid.shape) if eta is None else eta
    return dg.ModulationState(rho=0.0, c_mod=c, a_vec=a_vec, eta=eta, c_hat=c * bi.c_of_a(a_vec) / C0,
                              theta=th)


def test_virial_trivial(crit_grid, branch_interp):
    rec = dg.virial_quantities(_state(crit_grid, branch_interp, (0.0, 0.0), C0), crit_grid, C0,
                               branch_interp)
    assert np.max(np.abs(rec.v)) == 0.0
    assert np.max(np.abs(rec.s_prime)) == 0.0
    assert rec.weighted_phi == 0.0 and rec.x_moment == 0.0 and rec.q_moment == 0.0
    assert rec.param_product == 0.0


def test_virial_on_branch_at_c0(crit_grid, branch_interp):
    rec = dg.virial_quantities(_state(crit_grid, branch_interp, (0.04, 0.03), C0), crit_grid, C0,
                               branch_interp)
    assert np.max(np.abs(rec.s_prime)) == 0.0
    assert np.max(np.abs(rec.s_prime_direct)) < 1e-9


def test_virial_identity_cross_check(crit_grid, branch_interp):
    a = (0.05 * np.cos(0.3), 0.05 * np.sin(0.3))
    rec = dg.virial_quantities(_state(crit_grid, branch_interp, a, 1.05), crit_grid, C0,
                               branch_interp)
    assert rec.identity_error < 1e-8
    assert np.max(np.abs(rec.s_prime)) > 1e-4


def test_epsilon_plus():
    # sup x^2 (Q')^2/Q over R at c = 1
    sup = dg.qprime_weight_sup(1.0)
    x = np.linspace(0, 20, 200001)
    q = eval_q(SolitonProfile(1.0), x)
    qp = eval_q_prime(SolitonProfile(1.0), x)
    assert sup == pytest.approx(np.max(x * x * qp * qp / np.maximum(q, 1e-300)), rel=1e-6)
    eps = dg.epsilon_plus(1.0, 0.5)
    assert eps == pytest.approx(0.25 / (2.0 + sup))
    with pytest.raises(ValueError):
        dg.epsilon_plus(1.0, 0.0)


def test_virial_series_decay_on_critical_run(critical_traj, branch_interp):
    """Literal decay property: V(t) never rises more than 10% of V(0) above its running minimum.

    On the periodic x-box radiation re-enters from the right, so this is
    expected to fail; see the notes in the README.
    """
    eps = dg.epsilon_plus(C0, dg.branch_coercivity(branch_interp).k2)
    times, vals, recs, states = dg.virial_series(critical_traj, branch_interp, eps, stride=10)
    assert max(r.identity_error for r in recs) < 1e-8
    rise = np.max(vals - np.minimum.accumulate(vals))
    assert rise <= 0.1 * abs(vals[0])


# -- coercivity

@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_weighted_coercivity(c):
    rep = dg.coercivity_check(c, 20, seed=int(10 * c))
    assert rep.passed
    assert np.all(rep.margins > 0)


def test_weighted_coercivity_special_fields():
    g = Grid1D(40.0, 2048)
    prof = SolitonProfile(1.0)
    q = eval_q(prof, g.nodes)
    lhs, mid, bound = dg.coercivity_terms_for(q, 1.0, g)
    # u = Q makes w = Q^{3/2}, the kernel of L_c + 5c/4: both sides vanish
    assert abs(mid) < 1e-12 and abs(mid - bound) < 1e-8
    qp = eval_q_prime(prof, g.nodes)
    lhs, mid, bound = dg.coercivity_terms_for(qp, 1.0, g)
    assert lhs == pytest.approx(mid, rel=1e-8)
    assert mid == pytest.approx(24.0 / 35.0, rel=1e-10)


def test_coercivity_sample_count():
    with pytest.raises(ValueError):
        dg.coercivity_check(1.0, 5)


def test_branch_coercivity(branch_interp):
    rep = dg.branch_coercivity(branch_interp, samples=20)
    assert rep.passed
    assert rep.k2 > 0.1
