"""Fourier-collocation discretizations of L_c + a and d/dx (L_c + a).

The real line is replaced by the periodic cell [-X, X). With
L_c = -d^2/dx^2 + c - 2 Q_c, the transverse Fourier mode n of the 2D
linearization on R x T_L is L_c + n^2/L^2, so a 1D operator with shift a
covers every mode.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .soliton import SolitonProfile, eval_q

SYMMETRIC_TOL = 1e-12
# eigenvalues of d/dx(L_c+a) with |Re| below this are treated as
# truncated essential spectrum
SPURIOUS_RE_TOL = 1e-4


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid x_j = -X + j h, h = 2X/N."""

    half_width: float
    n_points: int

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.n_points < 64 or self.n_points % 2:
            raise ValueError(f"n_points must be even and >= 64, got {self.n_points}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return -self.half_width + self.h * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.h)

    def check_for(self, c: float) -> None:
        if self.half_width * np.sqrt(c) < 20.0 - 1e-12:
            raise ValueError(
                f"grid half-width {self.half_width} too small for c={c}: need X >= 20/sqrt(c)")


@dataclass(frozen=True)
class Grid2D:
    """Periodic grid on [-X, X) x [0, 2 pi L)."""

    x: Grid1D
    n_y: int
    L: float

    def __post_init__(self):
        if self.n_y < 2 or self.n_y % 2:
            raise ValueError(f"n_y must be even, got {self.n_y}")
        if self.L <= 0:
            raise ValueError("L must be positive")

    @property
    def y_nodes(self) -> np.ndarray:
        return 2 * np.pi * self.L * np.arange(self.n_y) / self.n_y

    @property
    def ky(self) -> np.ndarray:
        """Full (fft-ordered) transverse wavenumbers n / L."""
        return np.fft.fftfreq(self.n_y, d=1.0 / self.n_y) / self.L

    @property
    def shape(self):
        return (self.x.n_points, self.n_y)

    @property
    def cell_area(self) -> float:
        return self.x.h * 2 * np.pi * self.L / self.n_y

    def mesh(self):
        return np.meshgrid(self.x.nodes, self.y_nodes, indexing="ij")


@lru_cache(maxsize=16)
def _fourier_matrices(half_width: float, n: int):
    h = 2 * half_width / n
    k = 2 * np.pi * np.fft.fftfreq(n, d=h)
    eye = np.eye(n)
    f_eye = np.fft.fft(eye, axis=0)
    d2 = np.real(np.fft.ifft(-(k ** 2)[:, None] * f_eye, axis=0))
    k1 = k.copy()
    k1[n // 2] = 0.0
    d1 = np.real(np.fft.ifft((1j * k1)[:, None] * f_eye, axis=0))
    d2 = 0.5 * (d2 + d2.T)
    d1 = 0.5 * (d1 - d1.T)
    d1.setflags(write=False)
    d2.setflags(write=False)
    return d1, d2


def diff_matrices(grid: Grid1D):
    """Spectral first and second derivative matrices (D1 skew, D2 symmetric)."""
    return _fourier_matrices(float(grid.half_width), int(grid.n_points))


@dataclass(frozen=True)
class DiscreteOperator:
    kind: str  # "L_c_plus_a" or "dx_L_c_plus_a"
    c: float
    a: float
    grid: Grid1D
    matrix: np.ndarray = field(repr=False)
    weight: float = 0.0

    @property
    def symmetric(self) -> bool:
        return self.kind == "L_c_plus_a"


def _check_params(c: float, a: float, grid: Grid1D):
    SolitonProfile(c)
    if a < 0:
        raise ValueError(f"transverse shift a must be >= 0, got {a}")
    grid.check_for(c)


def build_lc(c: float, a: float, grid: Grid1D) -> DiscreteOperator:
    """Collocation matrix of -d^2/dx^2 + (c + a) - 2 Q_c."""
    _check_params(c, a, grid)
    _, d2 = diff_matrices(grid)
    q = eval_q(SolitonProfile(c), grid.nodes)
    m = -d2 + np.diag(c + a - 2.0 * q)
    return DiscreteOperator("L_c_plus_a", c, a, grid, m)


def build_dx_lc(c: float, a: float, grid: Grid1D, weight: float = 0.0) -> DiscreteOperator:
    """Matrix of d/dx (L_c + a).

    With ``weight`` alpha > 0 the operator is conjugated by e^{alpha x}, which
    replaces d/dx by d/dx - alpha. Eigenvalues are unchanged, but eigenfunctions
    with slow decay on the left become well localized, and the essential
    spectrum moves into Re < 0. alpha must stay below sqrt(c + a).
    """
    _check_params(c, a, grid)
    d1, d2 = diff_matrices(grid)
    q = eval_q(SolitonProfile(c), grid.nodes)
    if weight:
        if not 0 < weight < np.sqrt(c + a):
            raise ValueError("weight must lie in (0, sqrt(c + a))")
        dm = d1 - weight * np.eye(grid.n_points)
        lc = -dm @ dm + np.diag(c + a - 2.0 * q)
        m = dm @ lc
    else:
        lc = -d2 + np.diag(c + a - 2.0 * q)
        m = d1 @ lc
    return DiscreteOperator("dx_L_c_plus_a", c, a, grid, m, weight=weight)


def _normalize(vec: np.ndarray, h: float) -> np.ndarray:
    v = vec / np.sqrt(h * np.sum(np.abs(vec) ** 2))
    j = int(np.argmax(np.abs(v)))
    return v * (abs(v[j]) / v[j])


def eigen_extremal(op: DiscreteOperator, count: int):
    """Extremal eigenpairs of a discrete operator.

    Symmetric kind: the ``count`` smallest eigenvalues, ascending.
    Non-symmetric kind: the ``count`` eigenvalues of largest real part, ordered
    by decreasing real part, then increasing imaginary part.
    Eigenvectors have unit discrete L2 norm (h * sum |v|^2 = 1) and their
    largest-modulus entry is real positive.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    h = op.grid.h
    try:
        if op.symmetric:
            w, v = sla.eigh(op.matrix, subset_by_index=[0, count - 1])
            order = np.arange(len(w))
        else:
            w, v = sla.eig(op.matrix)
            order = np.lexsort((np.round(w.imag, 12), -np.round(w.real, 12)))[:count]
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenSolverError(f"eigensolver failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise EigenSolverError("eigensolver returned non-finite eigenvalues")
    out = []
    for i in order:
        out.append((complex(w[i]), _normalize(v[:, i], h)))
    return out


def max_real_eigenvalue(c: float, a: float, grid: Grid1D, weight: float = 0.0) -> complex:
    """Eigenvalue of largest real part of d/dx(L_c + a)."""
    op = build_dx_lc(c, a, grid, weight=weight)
    w = sla.eigvals(op.matrix)
    return complex(w[np.argmax(w.real)])


def unstable_eigenvalues(c: float, a: float, grid: Grid1D, weight: Optional[float] = None):
    """Eigenvalues of d/dx(L_c + a) with Re > 1e-4, largest first.

    By default the exponential weight 0.5 sqrt(c) is used so that the
    truncated essential spectrum cannot produce spurious positive real parts.
    """
    if weight is None:
        weight = 0.5 * np.sqrt(c)
    op = build_dx_lc(c, a, grid, weight=weight)
    w = sla.eigvals(op.matrix)
    w = w[w.real > SPURIOUS_RE_TOL]
    return sorted((complex(z) for z in w), key=lambda z: (-z.real, z.imag))


@dataclass(frozen=True)
class StabilityVerdict:
    l_critical: float
    classification: str  # "stable", "critical" or "unstable"
    witness_mode: Optional[int] = None

    def __post_init__(self):
        if (self.classification == "unstable") != (self.witness_mode is not None):
            raise ValueError("witness_mode must be given exactly for unstable verdicts")


def critical_length(c: float) -> float:
    return 2.0 / np.sqrt(5.0 * c)


def classify_threshold(c: float, L: float, tol: float = 1e-12) -> StabilityVerdict:
    """Stability class of the line soliton of speed c on R x T_L.

    Only n = 1 matters for the comparison since n^2/L^2 grows with n;
    ``tol`` is the absolute tolerance on 1/L^2 - 5c/4 for the critical case.
    """
    SolitonProfile(c)
    if L <= 0:
        raise ValueError("L must be positive")
    lam = 1.25 * c
    gap = 1.0 / L ** 2 - lam
    if abs(gap) <= tol:
        return StabilityVerdict(critical_length(c), "critical")
    if gap < 0:
        return StabilityVerdict(critical_length(c), "unstable", witness_mode=1)
    return StabilityVerdict(critical_length(c), "stable")


def unstable_modes(c: float, L: float):
    """All n >= 1 with n^2/L^2 < 5c/4."""
    n_max = int(np.floor(L * np.sqrt(1.25 * c)))
    return [n for n in range(1, n_max + 1) if n * n / L ** 2 < 1.25 * c]


def mode_family_spectrum(c: float, L: float, modes, grid: Grid1D, count: int = 4):
    """Lowest eigenvalues of the 2D linearization restricted to the given modes.

    Mode 0 contributes once, each n >= 1 twice (cos and sin). Returns a list
    of (eigenvalue, n, profile) sorted by eigenvalue.
    """
    out = []
    for n in modes:
        pairs = eigen_extremal(build_lc(c, n * n / L ** 2, grid), count)
        mult = 1 if n == 0 else 2
        for lam, vec in pairs:
            for _ in range(mult):
                out.append((lam.real, n, vec.real))
    out.sort(key=lambda t: t[0])
    return out


def apply_linearized_2d(c: float, field2d: np.ndarray, grid: Grid2D) -> np.ndarray:
    """(-Laplacian + c - 2 Q_c) applied spectrally to a real field on a Grid2D."""
    kx = grid.x.wavenumbers
    ky = grid.ky
    fh = np.fft.fft2(field2d)
    lap = -(kx[:, None] ** 2 + ky[None, :] ** 2) * fh
    q = eval_q(SolitonProfile(c), grid.x.nodes)[:, None]
    return np.real(np.fft.ifft2(-lap)) + (c - 2.0 * q) * field2d
