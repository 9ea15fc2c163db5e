"""Evans function for d/dx (L_c + a) - lambda by rescaled shooting.

The eigenvalue problem is the first-order system u' = A(a, lambda, x) u with
u = (w, w', w'') and

    A = [[0, 1, 0], [0, 0, 1], [-2 Q_c'(x) - lambda, c + a - 2 Q_c(x), 0]].

D(a, lambda) pairs the solution decaying at +inf with the adjoint solution
decaying at -inf, both rescaled by exp(-mu_1 x).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .soliton import SolitonProfile, eval_q, eval_q_prime, qprime_sq_integral

LAMBDA_ZERO = 1e-8


class GapError(ValueError):
    """mu_1 is not a simple eigenvalue strictly left of the others."""


class EvansIntegrationError(RuntimeError):
    pass


class RootNotFoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvansProblem:
    c: float
    a: float
    x_max: Optional[float] = None
    ode_rel_tol: float = 1e-10
    ode_abs_tol: float = 1e-12

    def __post_init__(self):
        SolitonProfile(self.c)
        # small negative a is allowed so that a-derivatives at a=0 can be centered
        if self.c + self.a <= 0:
            raise ValueError("need c + a > 0")
        if self.x_max is None:
            object.__setattr__(self, "x_max", 40.0 / np.sqrt(self.c))
        if self.x_max * np.sqrt(self.c) < 30.0 - 1e-12:
            raise ValueError("x_max * sqrt(c) must be at least 30")

    def with_a(self, a: float) -> "EvansProblem":
        return EvansProblem(self.c, a, self.x_max, self.ode_rel_tol, self.ode_abs_tol)


@dataclass(frozen=True)
class EvansValue:
    lam: complex
    d: complex
    mu1: complex
    gap_ok: bool


def a_infinity(a: float, lam: complex, c: float) -> np.ndarray:
    """Limit of A(a, lambda, x) as |x| -> inf; char. polynomial nu^3 - (c+a) nu + lambda."""
    return np.array([[0, 1, 0], [0, 0, 1], [-lam, c + a, 0]], dtype=complex)


def _mu1_pair(a: float, lam: complex, c: float):
    ainf = a_infinity(a, lam, c)
    w, vr = np.linalg.eig(ainf)
    order = np.argsort(w.real)
    mu1 = w[order[0]]
    scale = max(1.0, np.max(np.abs(w)))
    gap_ok = bool(w[order[1]].real - mu1.real > 1e-10 * scale)
    if not gap_ok:
        return mu1, None, None, False
    v = vr[:, order[0]]
    j = int(np.argmax(np.abs(v)))
    v = v * (abs(v[j]) / v[j])
    wl, vl = np.linalg.eig(ainf.T)
    wv = vl[:, int(np.argmin(np.abs(wl - mu1)))]
    wv = wv / (wv @ v)
    return mu1, v, wv, True


def evans_eval(problem: EvansProblem, lam: complex) -> EvansValue:
    """D(a, lambda) with the bi-orthogonal normalization w1 . v1 = 1."""
    c, a, X = problem.c, problem.a, problem.x_max
    prof = SolitonProfile(c)
    mu1, v1, w1, gap_ok = _mu1_pair(a, lam, c)
    if not gap_ok:
        raise GapError(f"mu_1 gap fails at a={a}, lambda={lam}")
    eye = np.eye(3)

    def shifted(x):
        m = a_infinity(a, lam, c) - mu1 * eye
        m[2, 0] -= 2.0 * eval_q_prime(prof, x)
        m[2, 1] -= 2.0 * eval_q(prof, x)
        return m

    def rhs(x, z):
        return shifted(x) @ z

    def rhs_adj(x, z):
        return -shifted(x).T @ z

    kw = dict(method="DOP853", rtol=problem.ode_rel_tol, atol=problem.ode_abs_tol)
    right = solve_ivp(rhs, (X, 0.0), v1.astype(complex), **kw)
    left = solve_ivp(rhs_adj, (-X, 0.0), w1.astype(complex), **kw)
    if not (right.success and left.success):
        raise EvansIntegrationError(right.message if not right.success else left.message)
    d = complex(left.y[:, -1] @ right.y[:, -1])
    return EvansValue(lam=complex(lam), d=d, mu1=complex(mu1), gap_ok=True)


def evans_real(problem: EvansProblem, lam: float) -> float:
    return evans_eval(problem, lam).d.real


def evans_root(problem: EvansProblem, rtol: float = 1e-8) -> float:
    """Positive real root lambda(a) of D(a, .) for 0 < a < 5c/4."""
    c, a = problem.c, problem.a
    if not 0 < a < 1.25 * c:
        raise ValueError(f"need 0 < a < 5c/4, got a={a}, c={c}")
    lo = 1e-6
    d_lo = evans_real(problem, lo)
    if d_lo >= 0:
        raise RootNotFoundError(f"D(a, {lo}) = {d_lo} is not negative")
    hi = c
    d_hi = evans_real(problem, hi)
    while d_hi <= 0:
        lo, d_lo = hi, d_hi
        hi *= 2
        if hi > 1e3 * c:
            raise RootNotFoundError("no sign change of D up to lambda = 1e3 c")
        d_hi = evans_real(problem, hi)
    return brentq(lambda s: evans_real(problem, s), lo, hi, xtol=1e-14, rtol=rtol)


def evans_sweep(c: float, a_values, **kw):
    """lambda(a) for each a; returns a list of floats."""
    return [evans_root(EvansProblem(c, float(a), **kw)) for a in a_values]


def dD_da_closed_form(c: float) -> float:
    """-(1 / (72 c^{7/2})) int (Q_c')^2 dx."""
    return -qprime_sq_integral(SolitonProfile(c)) / (72.0 * c ** 3.5)


def dD_da_finite_difference(c: float, lambda_probes=(4e-3, 2e-3, 1e-3), da: float = 1e-3,
                            **kw) -> float:
    """Centered a-difference of D at lambda probes, Richardson-extrapolated to lambda -> 0.

    The probes must halve successively; the a-derivative is smooth in lambda so
    two rounds of extrapolation remove the O(lambda) and O(lambda^2) terms.
    """
    h = da * c
    base = EvansProblem(c, 0.0, **kw)
    vals = []
    for lam in lambda_probes:
        lam = lam * c ** 1.5
        dp = evans_real(base.with_a(h), lam)
        dm = evans_real(base.with_a(-h), lam)
        vals.append((dp - dm) / (2 * h))
    table = list(vals)
    for k in range(1, len(table)):
        fac = 2.0 ** k
        table = [(fac * table[i + 1] - table[i]) / (fac - 1) for i in range(len(table) - 1)]
    return float(table[0])


def dD_da_origin(c: float, **kw):
    """(closed form, finite-difference estimate) of dD/da at (0, 0)."""
    closed = dD_da_closed_form(c)
    fd = dD_da_finite_difference(c, **kw)
    if abs(fd - closed) > 1e-3 * abs(closed):
        raise RuntimeError(f"dD/da disagreement: closed {closed}, finite difference {fd}")
    return closed, fd
