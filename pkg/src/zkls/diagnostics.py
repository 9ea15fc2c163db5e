"""Modulation decomposition, monotonicity functionals and virial quantities.

All routines post-process fields on a Grid2D (usually simulator snapshots);
none of them modify their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np

from . import bifurcation as bif
from .bifurcation import BranchInterp, dx, dy, laplacian, inner, norm_sq, h1_norm_sq
from .simulator import crest_position, orbit_distance, to_spectral, shift_x, to_physical
from .soliton import SolitonProfile, eval_q, eval_phi, eval_phi_prime, eval_q_prime, moment_integral
from .spectral import Grid1D, Grid2D, diff_matrices

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
PRECONDITION_FRACTION = 0.3


class DecompositionError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


# ----------------------------------------------------------------------------
# weight profile

@dataclass(frozen=True)
class WeightProfile:
    """psi_R(x) = (2/pi) arctan(exp(x/R)) with offset x0 and drift beta."""

    R: float
    x0: float = 0.0
    beta: float = 0.25

    def __post_init__(self):
        if self.R <= 0:
            raise ValueError("R must be positive")

    def psi(self, x):
        return (2.0 / np.pi) * np.arctan(np.exp(np.clip(np.asarray(x) / self.R, -700, 700)))

    def dpsi(self, x):
        return 1.0 / (np.pi * self.R * np.cosh(np.clip(np.asarray(x) / self.R, -700, 700)))

    def d3psi(self, x):
        s = np.clip(np.asarray(x) / self.R, -700, 700)
        sech = 1.0 / np.cosh(s)
        # d^2/dx^2 of sech(x/R) = (sech - 2 sech^3) / R^2
        return (sech - 2 * sech ** 3) / (np.pi * self.R ** 3)

    def check(self, c0: float):
        if not 0 < self.beta < c0 / 2:
            raise PreconditionError("need 0 < beta < c0/2")
        if self.R < 2.0 / np.sqrt(self.beta) - 1e-12:
            raise PreconditionError("need R >= 2/sqrt(beta)")


# ----------------------------------------------------------------------------
# modulation decomposition

@dataclass
class ModulationState:
    rho: float
    c_mod: float
    a_vec: tuple
    eta: np.ndarray = dc_field(repr=False)
    ortho_residuals: tuple = ()
    c_hat: float = 0.0
    iterations: int = 0
    eta_h1: float = 0.0
    eta_l2: float = 0.0
    theta: Optional[np.ndarray] = dc_field(default=None, repr=False)


def _profile(bi: Optional[BranchInterp], p, grid: Grid2D):
    """Theta and its constraint directions for parameters p.

    With a branch: p = (c, rho, a1, a2) and the directions are Theta,
    dTheta/dx, dTheta/da1, dTheta/da2. Without one (off the critical torus
    the family is the line soliton): p = (c, rho) and the directions are
    Theta and dTheta/dx.
    """
    c = p[0]
    if bi is None:
        th = bif.line_soliton(c, grid)
        thx = dx(th, grid)
        thc = th / c + grid.x.nodes[:, None] * thx / (2.0 * c)
        return th, (th, thx), thc
    th, thx, tha1, tha2, thc = bi.theta_with_derivs((p[2], p[3]), c, grid)
    return th, (th, thx, tha1, tha2), thc


def _orth_system(u_hat, grid, bi, p):
    """G(p) = inner products of eta = u(. + rho) - Theta with the directions."""
    us = to_physical(shift_x(u_hat, grid, p[1]), grid)
    th, dirs, thc = _profile(bi, p, grid)
    eta = us - th
    g = np.array([inner(eta, d, grid) for d in dirs])
    return g, eta, th, dirs, us, thc


def _jacobian(u_hat, grid, bi, p, us, th, dirs, thc):
    """dG/dp: exact derivative of eta, difference quotient for the directions."""
    n = len(p)
    eta0 = us - th
    d_eta = [-thc, dx(us, grid)] + [-d for d in dirs[2:]]
    jac = np.zeros((n, n))
    step = 1e-6
    for j in range(n):
        pp = np.array(p, dtype=float)
        pp[j] += step
        dirs_p = _profile(bi, pp, grid)[1] if j != 1 else dirs
        for i in range(n):
            ddir = 0.0 if j == 1 else (dirs_p[i] - dirs[i]) / step
            jac[i, j] = inner(d_eta[j], dirs[i], grid) + (inner(eta0, ddir, grid) if j != 1 else 0.0)
    return jac


def decompose(u: np.ndarray, grid: Grid2D, c0: float, bi: Optional[BranchInterp],
              guess: Optional[tuple] = None) -> ModulationState:
    """Split u(. + rho, .) = Theta(a, c) + eta with eta orthogonal to
    Theta, dTheta/dx, dTheta/da1, dTheta/da2.

    Newton on (c, rho, a1, a2) from crest tracking and kernel projections.
    ``bi=None`` uses the line-soliton family (a = 0, two conditions), which is
    the only family away from the critical torus.
    """
    u_hat = to_spectral(u)
    q_h1 = np.sqrt(h1_norm_sq(bif.line_soliton(c0, grid), grid))
    dist, _ = orbit_distance(u_hat, grid, c0)
    if dist >= PRECONDITION_FRACTION * q_h1:
        raise PreconditionError(
            f"H1 distance {dist:.3e} to the soliton orbit exceeds {PRECONDITION_FRACTION} ||Q||_H1")
    if guess is None:
        rho = crest_position(u_hat, grid)
        us = to_physical(shift_x(u_hat, grid, rho), grid)
        c = 2.0 / 3.0 * float(np.max(us.mean(axis=1)))
        p = [c, rho]
        if bi is not None:
            ec, es = bif.kernel_directions(c0, grid)
            e_sq = norm_sq(ec, grid)
            resid = us - bif.line_soliton(c, grid)
            p += [inner(resid, ec, grid) / e_sq, inner(resid, es, grid) / e_sq]
        p = np.array(p)
    else:
        p = np.array(guess, dtype=float)[: 2 if bi is None else 4]
    it = 0
    for it in range(NEWTON_MAX_ITER + 1):
        if bi is not None:
            amp = np.hypot(p[2], p[3])
            if amp > bi.amp_max:
                p[2:] *= bi.amp_max / amp
        g, eta, th, dirs, us, thc = _orth_system(u_hat, grid, bi, p)
        if np.max(np.abs(g)) <= NEWTON_TOL:
            break
        if it == NEWTON_MAX_ITER:
            raise DecompositionError(f"Newton failed, |G| = {np.max(np.abs(g)):.3e}")
        jac = _jacobian(u_hat, grid, bi, p, us, th, dirs, thc)
        try:
            dp = np.linalg.solve(jac, -g)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError(f"singular Jacobian: {exc}") from exc
        p = p + dp
        if not np.all(np.isfinite(p)) or p[0] <= 0:
            raise DecompositionError("Newton diverged")
    c, rho = float(p[0]), float(p[1])
    a_vec = (float(p[2]), float(p[3])) if bi is not None else (0.0, 0.0)
    c_hat = c * bi.c_of_a(a_vec) / c0 if bi is not None else c
    return ModulationState(rho=rho, c_mod=c, a_vec=a_vec, eta=eta, ortho_residuals=tuple(g),
                           c_hat=c_hat, iterations=it, eta_h1=float(np.sqrt(h1_norm_sq(eta, grid))),
                           eta_l2=float(np.sqrt(norm_sq(eta, grid))), theta=th)


def modulation_distance(u: np.ndarray, grid: Grid2D, c0: float) -> float:
    """dist_{c0}(u): H1 distance to the nearest translate of Q_{c0}."""
    return orbit_distance(to_spectral(u), grid, c0)[0]




@dataclass
class RatesReport:
    ratio_a: np.ndarray
    ratio_c: np.ndarray
    ratio_rho: np.ndarray
    K0: float
    passed: bool
    rho_dot: np.ndarray
    c_hat: np.ndarray


def modulation_rates(states: Sequence[ModulationState], times, c0: float,
                     growth_factor: float = 2.0, floor: float = 1e-14) -> RatesReport:
    """Centered-difference modulation speeds measured against ||eta||_{L2}.

    The three ratios are |a'|/|eta|, |c'|/|eta| and
    |rho' - c_hat| / (|eta| + |c - c0||a|). PASS when none of them trends
    upward: the largest value over the second half of the run is at most
    ``growth_factor`` times the largest over the first half.
    """
    t = np.asarray(times, dtype=float)
    if len(states) < 3 or len(t) != len(states):
        raise ValueError("need at least three states with matching times")
    rho = np.array([s.rho for s in states])
    c = np.array([s.c_mod for s in states])
    a = np.array([s.a_vec for s in states], dtype=float)
    eta = np.array([s.eta_l2 for s in states])
    chat = np.array([s.c_hat for s in states])
    rho_dot = np.gradient(rho, t)
    c_dot = np.gradient(c, t)
    a_dot = np.gradient(a, t, axis=0)
    inner_pts = slice(1, -1)
    den = np.maximum(eta, floor)
    ra = (np.linalg.norm(a_dot, axis=1) / den)[inner_pts]
    rc = (np.abs(c_dot) / den)[inner_pts]
    den_r = np.maximum(eta + np.abs(c - c0) * np.linalg.norm(a, axis=1), floor)
    rr = (np.abs(rho_dot - chat) / den_r)[inner_pts]
    table = np.vstack([ra, rc, rr])
    half = table.shape[1] // 2
    passed = True
    if half >= 1:
        first = np.max(table[:, :half], axis=1)
        second = np.max(table[:, half:], axis=1)
        passed = bool(np.all(second <= growth_factor * np.maximum(first, floor)))
    return RatesReport(ra, rc, rr, float(np.max(table)), passed, rho_dot, chat)


# ----------------------------------------------------------------------------
# monotonicity functionals

@dataclass
class Trajectory:
    """Recorded fields of a run in lab coordinates.

    ``fields[k]`` lives on the moving frame: lab x = grid x + offsets[k].
    ``rho`` is the crest position in the lab frame.
    """

    grid: Grid2D
    times: np.ndarray
    offsets: np.ndarray
    fields: list
    rho: np.ndarray
    c0: float


def trajectory_from_state(state, grid: Grid2D, c0: float) -> Trajectory:
    snaps = state.snapshots
    if not snaps:
        raise ValueError("run was recorded without fields")
    rows = state.ledger
    if len(rows) != len(snaps):
        raise ValueError("ledger and snapshots are out of step")
    return Trajectory(grid, np.array([s[0] for s in snaps]), np.array([s[1] for s in snaps]),
                      [s[2] for s in snaps], np.array([r.crest for r in rows]), c0)


def _weighted_integral(density: np.ndarray, xt: np.ndarray, weight: WeightProfile, grid: Grid2D) -> float:
    w = weight.psi(xt)
    return float(np.sum(density * w[:, None]) * grid.cell_area)


def _mass_density(u, grid):
    return u * u


def _energy_density(u, grid):
    return dx(u, grid) ** 2 + dy(u, grid) ** 2 - (2.0 / 3.0) * u ** 3


def _series(traj: Trajectory, weight: WeightProfile, k0: int, density, backward: bool):
    g = traj.grid
    t0 = traj.times[k0]
    vals = np.empty(len(traj.times))
    for k, (t, off, u) in enumerate(zip(traj.times, traj.offsets, traj.fields)):
        x_lab = g.x.nodes + off
        if backward:
            xt = x_lab - traj.rho[k] + weight.beta * (t - t0) / 2.0 + weight.x0
        else:
            xt = x_lab - traj.rho[k0] + weight.beta * (t0 - t) / 2.0 - weight.x0
        vals[k] = _weighted_integral(density(u, g), xt, weight, g)
    return vals


@dataclass
class MonotonicitySeries:
    kind: str
    x0: float
    R: float
    t0: float
    times: np.ndarray
    values: np.ndarray
    violation: float


def _index_of(times, t0):
    if t0 is None:
        return len(times) - 1
    k = int(np.argmin(np.abs(np.asarray(times) - t0)))
    return k


def monotonicity_I(traj: Trajectory, weight: WeightProfile, t0: Optional[float] = None,
                   backward: bool = False) -> MonotonicitySeries:
    """I(u(t)) = int u^2 psi_R(x~) along the trajectory.

    Forward: violation = max over t <= t0 of I(t0) - I(t).
    Backward (the I^- variant): violation = max over t >= t0 of I^-(t) - I^-(t0).
    """
    weight.check(traj.c0)
    k0 = _index_of(traj.times, t0 if t0 is not None else (traj.times[0] if backward else None))
    vals = _series(traj, weight, k0, _mass_density, backward)
    return _finish("I-" if backward else "I", traj, weight, k0, vals, backward)


def monotonicity_J(traj: Trajectory, weight: WeightProfile, t0: Optional[float] = None) -> MonotonicitySeries:
    """J(u(t)) = int (|grad u|^2 - 2/3 u^3) psi_R(x~); violation max over t <= t0 of J(t0) - J(t)."""
    weight.check(traj.c0)
    k0 = _index_of(traj.times, t0)
    vals = _series(traj, weight, k0, _energy_density, False)
    return _finish("J", traj, weight, k0, vals, False)


def _finish(kind, traj, weight, k0, vals, backward):
    if backward:
        viol = float(np.max(vals[k0:] - vals[k0]))
    else:
        viol = float(np.max(vals[k0] - vals[: k0 + 1]))
    return MonotonicitySeries(kind, weight.x0, weight.R, float(traj.times[k0]), traj.times.copy(), vals, viol)


@dataclass
class DecayFit:
    kind: str
    R: float
    x0: np.ndarray
    violations: np.ndarray
    rate: float
    C: float

    @property
    def rate_ratio(self) -> float:
        """Fitted decay rate in units of 1/R."""
        return self.rate * self.R


def fit_decay(x0_values, violations, R: float, kind: str = "") -> DecayFit:
    """Least-squares fit violation = C exp(-rate x0); nan when any violation is not positive."""
    x0 = np.asarray(x0_values, dtype=float)
    v = np.asarray(violations, dtype=float)
    if np.any(v <= 0):
        return DecayFit(kind, R, x0, v, float("nan"), float("nan"))
    slope, icpt = np.polyfit(x0, np.log(v), 1)
    return DecayFit(kind, R, x0, v, float(-slope), float(np.exp(icpt)))


def monotonicity_sweep(traj: Trajectory, R: float, beta: float, x0_values=(5.0, 10.0, 15.0, 20.0),
                       kind: str = "I", t0: Optional[float] = None) -> DecayFit:
    """Violations over an x0 sweep and the fitted C exp(-rate x0)."""
    viols = []
    for x0 in x0_values:
        w = WeightProfile(R, x0, beta)
        if kind == "I":
            viols.append(monotonicity_I(traj, w, t0).violation)
        elif kind == "I-":
            viols.append(monotonicity_I(traj, w, t0, backward=True).violation)
        elif kind == "J":
            viols.append(monotonicity_J(traj, w, t0).violation)
        else:
            raise ValueError(f"unknown functional {kind!r}")
    return fit_decay(x0_values, viols, R, kind)


# ----------------------------------------------------------------------------
# virial quantities

@dataclass
class VirialRecord:
    v: np.ndarray = dc_field(repr=False)
    s_prime: np.ndarray = dc_field(repr=False)
    s_prime_direct: np.ndarray = dc_field(repr=False)
    weighted_phi: float = 0.0
    x_moment: float = 0.0
    q_moment: float = 0.0
    param_product: float = 0.0
    identity_error: float = 0.0

    def functional(self, eps_plus: float) -> float:
        """int (v + S')^2 phi_c_hat + eps_plus int x v^2."""
        return self.weighted_phi + eps_plus * self.x_moment


def virial_quantities(mod: ModulationState, grid: Grid2D, c0: float, bi: BranchInterp) -> VirialRecord:
    """v = (-Lap + c_hat - 2 Q_c_hat) eta - eta^2, S'_c_hat(Theta) both ways, and the functionals.

    x is the co-moving coordinate of the decomposition frame.
    """
    c, a = mod.c_mod, mod.a_vec
    chat = mod.c_hat
    eta = mod.eta
    x = grid.x.nodes[:, None]
    q_hat_c = bif.line_soliton(chat, grid)
    v = -laplacian(eta, grid) + chat * eta - 2 * q_hat_c * eta - eta ** 2
    th = mod.theta if mod.theta is not None else bi.theta(a, c, grid)
    sp = ((c - c0) / c0) * dy(dy(th, grid), grid)
    sp_direct = -laplacian(th, grid) + chat * th - th * th
    scale = max(float(np.max(np.abs(th))), 1e-300)
    err = float(np.max(np.abs(sp - sp_direct)) / scale)
    phi = eval_phi(SolitonProfile(chat), grid.x.nodes)[:, None]
    area = grid.cell_area
    q0 = bif.line_soliton(c0, grid)
    amp = float(np.hypot(*a))
    return VirialRecord(
        v=v, s_prime=sp, s_prime_direct=sp_direct,
        weighted_phi=float(np.sum((v + sp) ** 2 * phi) * area),
        x_moment=float(np.sum(x * v * v) * area),
        q_moment=float(np.sum(v * v * q0) * area),
        param_product=float((c - c0) ** 2 * amp ** 2),
        identity_error=err)


def qprime_weight_sup(c0: float, x_max: float = 80.0, n: int = 200001) -> float:
    """sup over x of x^2 (Q')^2 / Q, using (Q')^2 / Q = c Q - 2/3 Q^2."""
    x = np.linspace(-x_max, x_max, n)
    q = eval_q(SolitonProfile(c0), x)
    return float(np.max(x * x * (c0 * q - (2.0 / 3.0) * q * q)))


def epsilon_plus(c0: float, k4_hat: float, c_hat_const: float = 1.0) -> float:
    """0.5 k4 (1 + C + c0 sup x^2 (Q')^2 / Q)^{-1} with fitted k4 and C."""
    if k4_hat <= 0:
        raise ValueError("k4 must be positive")
    return 0.5 * k4_hat / (1.0 + c_hat_const + c0 * qprime_weight_sup(c0))


# ----------------------------------------------------------------------------
# coercivity checks

@dataclass
class CoercivityReport:
    identity_rel_err: np.ndarray
    margins: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    passed: bool


def _coercivity_terms(u: np.ndarray, c: float, grid: Grid1D, d1, d2):
    """Left side, middle expression and lower bound of the weighted coercivity identity."""
    prof = SolitonProfile(c)
    x = grid.nodes
    h = grid.h
    q = eval_q(prof, x)
    phi = eval_phi(prof, x)
    dphi = eval_phi_prime(prof, x)
    ux = d1 @ u
    w = u * phi
    lw = -(d2 @ w) + (c - 2 * q) * w
    lhs = -h * float(np.sum(ux * lw))
    # ((u/Q)')^2 Q^2 = (u' + u phi)^2 since Q'/Q = -phi
    middle = 1.5 * h * float(np.sum((ux + u * phi) ** 2 * dphi))
    q3 = h * float(np.sum(q ** 3))
    proj = h * float(np.sum(u * q * q))
    bound = (5.0 * c / 8.0) * (3.0 * h * float(np.sum(u * u * dphi)) - proj ** 2 / q3)
    return lhs, middle, bound


def _form_scale(u, c, grid: Grid1D) -> float:
    """c * 3 int u^2 phi_c', the natural size of both sides."""
    dphi = eval_phi_prime(SolitonProfile(c), grid.nodes)
    return 3.0 * c * grid.h * float(np.sum(u * u * dphi))


def random_compact_field(grid: Grid1D, rng, support: float) -> np.ndarray:
    """Smooth random field, negligible (below 1e-16) outside |x| <= support."""
    x = grid.nodes
    n_bumps = 4
    u = np.zeros_like(x)
    for _ in range(n_bumps):
        centre = rng.uniform(-0.5, 0.5) * support
        width = rng.uniform(0.5, 3.0)
        freq = rng.uniform(0.0, 1.5)
        u += rng.standard_normal() * np.exp(-0.5 * ((x - centre) / width) ** 2) * np.cos(freq * x + rng.uniform(0, 2 * np.pi))
    env = np.exp(-(x / (0.6 * support)) ** 8)
    return u * env


def coercivity_check(c: float, samples: int = 20, seed: int = 0, n_points: int = 2048,
                     extra_fields: Sequence[np.ndarray] = ()) -> CoercivityReport:
    """Weighted coercivity of -int u_x L_c(u phi_c) on random compactly supported fields.

    PASS when the identity holds to 1e-8 relative and the lower bound holds
    with margin >= -1e-10 on every sample.
    """
    if samples < 10:
        raise ValueError("need at least 10 samples")
    grid = Grid1D(40.0 / np.sqrt(c), n_points)
    d1, d2 = diff_matrices(grid)
    rng = np.random.default_rng(seed)
    fields = [random_compact_field(grid, rng, grid.half_width / 2) for _ in range(samples)]
    fields += list(extra_fields)
    errs, margins, lhs_all, rhs_all = [], [], [], []
    for u in fields:
        lhs, middle, bound = _coercivity_terms(u, c, grid, d1, d2)
        scale = max(abs(lhs), abs(middle), _form_scale(u, c, grid), 1e-300)
        errs.append(abs(lhs - middle) / scale)
        margins.append(middle - bound)
        lhs_all.append(lhs)
        rhs_all.append(bound)
    errs = np.array(errs)
    margins = np.array(margins)
    passed = bool(np.all(errs < 1e-8) and np.all(margins >= -1e-10))
    return CoercivityReport(errs, margins, np.array(lhs_all), np.array(rhs_all), passed)


def coercivity_terms_for(u: np.ndarray, c: float, grid: Grid1D):
    """(lhs, middle, bound) for a single field on ``grid``."""
    d1, d2 = diff_matrices(grid)
    return _coercivity_terms(u, c, grid, d1, d2)


@dataclass
class BranchCoercivity:
    ratios: np.ndarray
    k2: float
    passed: bool
    a_vec: tuple
    c: float


def _orthonormal_constraints(dirs, grid: Grid2D):
    basis = []
    for d in dirs:
        v = d.copy()
        for b in basis:
            v -= inner(v, b, grid) * b
        nv = np.sqrt(norm_sq(v, grid))
        if nv > 1e-12:
            basis.append(v / nv)
    return basis


def smooth_random_field(grid: Grid2D, c: float, rng) -> np.ndarray:
    """Smooth random field localized near x = 0."""
    nx, ny = grid.shape
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=grid.x.h)
    ky = grid.ky
    coef = rng.standard_normal((nx, ny)) + 1j * rng.standard_normal((nx, ny))
    coef *= np.exp(-0.5 * (kx[:, None] ** 2 + ky[None, :] ** 2) / c)
    g = np.real(np.fft.ifft2(coef))
    env = 1.0 / np.cosh(0.25 * np.sqrt(c) * grid.x.nodes)[:, None] ** 2
    return g * env


def branch_coercivity(bi: BranchInterp, a_vec=(0.04, 0.03), samples: int = 20, seed: int = 0,
                      grid: Optional[Grid2D] = None) -> BranchCoercivity:
    """<(-Lap + c0 - 2 Theta) w, w> / ||w||_{H1}^2 on fields orthogonal to
    Theta, dTheta/dx, dTheta/da1 and dTheta/da2.

    k2 is the smallest ratio over the samples; PASS when k2 > 0.
    """
    grid = grid or bi.grid
    c0 = bi.c0
    th, thx, d1, d2, _ = bi.theta_with_derivs(a_vec, c0, grid)
    basis = _orthonormal_constraints((th, thx, d1, d2), grid)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        w = smooth_random_field(grid, c0, rng)
        for b in basis:
            w = w - inner(w, b, grid) * b
        form = inner(-laplacian(w, grid) + c0 * w - 2 * th * w, w, grid)
        ratios.append(form / h1_norm_sq(w, grid))
    ratios = np.array(ratios)
    k2 = float(np.min(ratios))
    return BranchCoercivity(ratios, k2, k2 > 0, tuple(a_vec), c0)


def decompose_trajectory(traj: Trajectory, bi: Optional[BranchInterp], stride: int = 1,
                         keep_going: bool = False):
    """Decompose every ``stride``-th frame; returns (times, states).

    Each Newton solve starts from the previous (c, a) and the recorded crest.
    The returned rho values are converted to lab coordinates. With
    ``keep_going`` a failing frame ends the sweep quietly and the frames
    decomposed so far are returned.
    """
    times, states = [], []
    prev = None
    for k in range(0, len(traj.times), stride):
        off = traj.offsets[k]
        guess = None if prev is None else (prev[0], traj.rho[k] - off) + prev[1:]
        try:
            st = decompose(traj.fields[k], traj.grid, traj.c0, bi, guess=guess)
        except (PreconditionError, DecompositionError):
            if keep_going:
                break
            raise
        prev = (st.c_mod, st.a_vec[0], st.a_vec[1])
        st.rho += off
        times.append(traj.times[k])
        states.append(st)
    return np.array(times), states


def virial_series(traj: Trajectory, bi: BranchInterp, eps_plus: float, stride: int = 1):
    """Virial functional along a trajectory; returns (times, values, records, states)."""
    times, states = decompose_trajectory(traj, bi, stride)
    recs = [virial_quantities(st, traj.grid, traj.c0, bi) for st in states]
    vals = np.array([r.functional(eps_plus) for r in recs])
    return times, vals, recs, states
