"""Closed-form line soliton of the ZK equation and its integral identities.

The speed-c profile solves -Q'' + cQ - Q^2 = 0 on the real line:

    Q_c(x) = (3c/2) sech^2(sqrt(c) x / 2)

Everything here is a pure function of (c, x); profiles are immutable.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

# |sqrt(c) x / 2| beyond this returns exactly 0 (cosh would overflow near 710)
ARG_CLAMP = 350.0

GL_ORDER = 24


@dataclass(frozen=True)
class SolitonProfile:
    """Soliton of speed ``c`` (c > 0)."""

    c: float

    def __post_init__(self):
        if not np.isfinite(self.c) or self.c <= 0:
            raise ValueError(f"soliton speed must be positive, got c={self.c!r}")

    @property
    def sqrt_c(self) -> float:
        return float(np.sqrt(self.c))

    @property
    def lambda_c(self) -> float:
        """Magnitude of the single negative eigenvalue of L_c, 5c/4."""
        return 1.25 * self.c

    def q(self, x):
        return eval_q(self, x)

    def q_prime(self, x):
        return eval_q_prime(self, x)

    def phi(self, x):
        return eval_phi(self, x)


def _half_arg(profile: SolitonProfile, x):
    return 0.5 * profile.sqrt_c * np.asarray(x, dtype=float)


def _sech2(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    ok = np.abs(s) <= ARG_CLAMP
    out[ok] = 1.0 / np.cosh(s[ok]) ** 2
    return out


def _maybe_scalar(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def eval_q(profile: SolitonProfile, x):
    """Q_c(x); returns 0.0 instead of NaN far out in the tails."""
    s = _half_arg(profile, x)
    return _maybe_scalar(1.5 * profile.c * _sech2(s), x)


def eval_q_prime(profile: SolitonProfile, x):
    """dQ_c/dx = -(3/2) c^{3/2} tanh(s) sech^2(s), s = sqrt(c) x / 2."""
    s = _half_arg(profile, x)
    val = -1.5 * profile.c * profile.sqrt_c * np.tanh(s) * _sech2(s)
    return _maybe_scalar(val, x)


def eval_q_second(profile: SolitonProfile, x):
    """Q_c'' from the profile equation, Q'' = cQ - Q^2."""
    q = np.asarray(eval_q(profile, x))
    return _maybe_scalar(profile.c * q - q * q, x)


def eval_phi(profile: SolitonProfile, x):
    """phi_c(x) = -Q_c'/Q_c = sqrt(c) tanh(sqrt(c) x / 2)."""
    s = _half_arg(profile, x)
    return _maybe_scalar(profile.sqrt_c * np.tanh(s), x)


def eval_phi_prime(profile: SolitonProfile, x):
    """d(phi_c)/dx, which equals Q_c / 3."""
    s = _half_arg(profile, x)
    return _maybe_scalar(0.5 * profile.c * _sech2(s), x)


@lru_cache(maxsize=8)
def _gl_nodes(order: int):
    return leggauss(order)


def panel_quadrature(f, lo: float, hi: float, n_panels: int, order: int = GL_ORDER) -> float:
    """Composite Gauss-Legendre rule with ``n_panels`` equal panels on [lo, hi]."""
    t, w = _gl_nodes(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    wx = (half[:, None] * w[None, :]).ravel()
    return float(np.sum(wx * f(x)))


def truncation_width(profile: SolitonProfile, p: float) -> float:
    """Half-width X with tail bound 2 (6c)^p e^{-p sqrt(c) X} / (p sqrt(c)) negligible.

    Starts from max(40/sqrt(c), 40) and widens for small p, where the decay
    rate p sqrt(c) is slow.
    """
    c, rc = profile.c, profile.sqrt_c
    X = max(40.0 / rc, 40.0)
    # crude lower estimate of the integral: Q^p >= (3c/2)^p sech^{2p} on |x|<1/rc
    est = (1.5 * c) ** p * (2.0 / rc) * np.cosh(0.5) ** (-2 * p)
    while 2 * (6 * c) ** p * np.exp(-p * rc * X) / (p * rc) >= 1e-14 * est:
        X *= 1.25
    return X


def integrate_profile(profile: SolitonProfile, f, p_decay: float = 1.0, rtol: float = 1e-15) -> float:
    """Integrate f over the line, f decaying at least like Q_c^{p_decay}.

    Panels are doubled until two successive results agree to ``rtol``.
    """
    X = truncation_width(profile, p_decay)
    n = max(8, int(np.ceil(2 * X * profile.sqrt_c)))
    prev = panel_quadrature(f, -X, X, n)
    for _ in range(8):
        n *= 2
        cur = panel_quadrature(f, -X, X, n)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return cur


def moment_integral(profile: SolitonProfile, p: float) -> float:
    """int_R Q_c^p dx by composite Gauss-Legendre quadrature."""
    if not p > 0:
        raise ValueError(f"moment order must be positive, got p={p!r}")
    return integrate_profile(profile, lambda x: eval_q(profile, x) ** p, p_decay=p)


def moment_recursion_ratio(profile: SolitonProfile, p: float) -> float:
    """The factor 3pc/(2p+1) relating int Q^{p+1} to int Q^p."""
    return 3.0 * p * profile.c / (2.0 * p + 1.0)


def qprime_sq_integral(profile: SolitonProfile) -> float:
    """int (Q_c')^2 dx through the first integral (Q')^2 = cQ^2 - (2/3)Q^3."""
    return profile.c * moment_integral(profile, 2) - (2.0 / 3.0) * moment_integral(profile, 3)


def qprime_sq_integral_direct(profile: SolitonProfile) -> float:
    """Same integral as above, by direct quadrature of (Q')^2."""
    return integrate_profile(profile, lambda x: eval_q_prime(profile, x) ** 2, p_decay=2.0)


# closed forms, used as cross-checks only
def closed_moment(c: float, p: int) -> float:
    """int Q_c^p for p in {1, 2, 3}."""
    table = {1: 6.0 * c ** 0.5, 2: 6.0 * c ** 1.5, 3: 7.2 * c ** 2.5}
    return table[p]
