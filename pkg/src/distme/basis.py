"""B-spline bases, difference penalties and the binning grid.

Knots are equidistant over the covariate range and extended by ``degree``
further equidistant knots on each side, so every point of ``[lo, hi]`` is
covered by exactly ``degree + 1`` basis functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import warnings

import numpy as np
from scipy import sparse
from scipy.interpolate import BSpline

__all__ = [
    "RangeError",
    "SplineBasis",
    "PenaltyMatrix",
    "BinGrid",
    "bspline_design",
    "difference_matrix",
    "difference_penalty",
    "ridge_penalty",
    "zero_penalty",
    "tensor_penalty",
    "tensor_design",
    "build_bin_grid",
    "rebin",
]


class RangeError(ValueError):
    """A covariate value lies outside the knot range of a basis."""


@dataclass(frozen=True)
class SplineBasis:
    """Equidistant B-spline basis on ``[lo, hi]``.

    ``n_knots`` counts the equidistant knots in ``[lo, hi]`` including both
    endpoints, giving ``n_knots + degree - 1`` basis functions.
    """

    lo: float
    hi: float
    n_knots: int = 20
    degree: int = 3

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError(f"empty basis range [{self.lo}, {self.hi}]")
        if self.n_knots < 2:
            raise ValueError("need at least two knots")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")

    @property
    def n_basis(self) -> int:
        return self.n_knots + self.degree - 1

    @property
    def knots(self) -> np.ndarray:
        h = (self.hi - self.lo) / (self.n_knots - 1)
        t = self.lo + h * np.arange(-self.degree, self.n_knots + self.degree)
        # pin the range endpoints exactly
        t[self.degree] = self.lo
        t[self.degree + self.n_knots - 1] = self.hi
        return t

    @classmethod
    def from_data(cls, x, n_knots=20, degree=3, margin=0.0):
        x = np.asarray(x, dtype=float)
        lo, hi = float(x.min()) - margin, float(x.max()) + margin
        if hi <= lo:
            hi = lo + 1.0
        return cls(lo, hi, n_knots, degree)


def bspline_design(x, basis: SplineBasis) -> sparse.csr_matrix:
    """Evaluate ``basis`` at ``x``; returns an ``(n, L)`` CSR matrix."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bad = np.flatnonzero(~((x >= basis.lo) & (x <= basis.hi)))
    if bad.size:
        i = int(bad[0])
        raise RangeError(
            f"covariate value {x[i]!r} at index {i} is outside the knot range "
            f"[{basis.lo}, {basis.hi}] ({bad.size} value(s) out of range)"
        )
    B = BSpline.design_matrix(x, basis.knots, basis.degree)
    return sparse.csr_matrix(B)


def difference_matrix(L: int, d: int) -> np.ndarray:
    """The ``(L - d) x L`` matrix of ``d``-th order differences."""
    if not (isinstance(L, (int, np.integer)) and isinstance(d, (int, np.integer))):
        raise TypeError("L and d must be integers")
    if d < 1 or L <= d:
        raise ValueError(f"difference order must satisfy 1 <= d < L, got L={L}, d={d}")
    return np.diff(np.eye(L), n=d, axis=0)


@dataclass
class PenaltyMatrix:
    """Unit-scale prior precision of a coefficient block.

    The prior precision used by the sampler is ``matrix / tau2``.
    ``kind`` is one of ``difference``, ``tensor``, ``zero``, ``ridge``.
    """

    matrix: np.ndarray
    kind: str
    order: int = 0
    rank: int = field(default=-1)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.rank < 0:
            if self.kind == "zero":
                self.rank = 0
            else:
                self.rank = int(np.linalg.matrix_rank(self.matrix, hermitian=True))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def banded(self) -> np.ndarray:
        """Upper banded storage (``scipy.linalg.solveh_banded`` layout)."""
        K = self.matrix
        nz = np.nonzero(K)
        u = int(np.max(np.abs(nz[0] - nz[1]))) if nz[0].size else 0
        ab = np.zeros((u + 1, self.dim))
        for j in range(u + 1):
            ab[u - j, j:] = np.diagonal(K, j)
        return ab


def difference_penalty(L: int, d: int = 2) -> PenaltyMatrix:
    """Random-walk penalty ``D'D`` of order ``d`` on ``L`` coefficients."""
    D = difference_matrix(L, d)
    return PenaltyMatrix(D.T @ D, "difference", order=d, rank=L - d)


def ridge_penalty(L: int) -> PenaltyMatrix:
    return PenaltyMatrix(np.eye(L), "ridge", rank=L)


def zero_penalty(L: int) -> PenaltyMatrix:
    """Flat prior."""
    return PenaltyMatrix(np.zeros((L, L)), "zero", rank=0)


def tensor_penalty(Kx: PenaltyMatrix, Ky: PenaltyMatrix, omega: float, tau2: float = 1.0) -> PenaltyMatrix:
    """Anisotropic Kronecker-sum penalty for a tensor-product spline.

    Returns ``[omega Kx (x) I_y + (1 - omega) I_x (x) Ky] / tau2`` with the
    x-coefficient index varying slowest.
    """
    if not 0.0 < omega < 1.0:
        raise ValueError(f"anisotropy omega must lie in (0, 1), got {omega}")
    if not tau2 > 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    Ix, Iy = np.eye(Kx.dim), np.eye(Ky.dim)
    K = (omega * np.kron(Kx.matrix, Iy) + (1 - omega) * np.kron(Ix, Ky.matrix)) / tau2
    nx, ny = Kx.dim - Kx.rank, Ky.dim - Ky.rank
    return PenaltyMatrix(K, "tensor", order=max(Kx.order, Ky.order), rank=Kx.dim * Ky.dim - nx * ny)


def tensor_design(x_basis: SplineBasis, y_basis: SplineBasis, sx, sy) -> sparse.csr_matrix:
    """Row-wise Kronecker product of two univariate designs."""
    Bx = bspline_design(sx, x_basis).toarray()
    By = bspline_design(sy, y_basis).toarray()
    if Bx.shape[0] != By.shape[0]:
        raise ValueError("coordinate vectors differ in length")
    n = Bx.shape[0]
    T = (Bx[:, :, None] * By[:, None, :]).reshape(n, -1)
    return sparse.csr_matrix(T)


@dataclass
class BinGrid:
    """Equal-width intervals over ``[lo, hi]`` with precomputed design rows.

    ``rows[g]`` is the basis evaluated at the midpoint of interval ``g``.
    ``n_clamped`` counts values that fell outside the range and were moved
    to the nearest end interval.
    """

    lo: float
    hi: float
    G: int
    basis: SplineBasis
    rows: np.ndarray
    n_clamped: int = 0

    @property
    def width(self) -> float:
        return (self.hi - self.lo) / self.G

    @property
    def midpoints(self) -> np.ndarray:
        return self.lo + (np.arange(self.G) + 0.5) * self.width

    def index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.lo) / self.width).astype(np.int64)
        out = (idx < 0) | (idx >= self.G)
        # the right endpoint belongs to the last interval
        out &= ~(x == self.hi)
        nout = int(np.count_nonzero(out))
        if nout:
            self.n_clamped += nout
        return np.clip(idx, 0, self.G - 1)


def build_bin_grid(lo: float, hi: float, G: int = 1000, basis: SplineBasis | None = None) -> BinGrid:
    """Precompute ``G`` interval midpoints and their design rows."""
    if G < 2:
        raise ValueError("need at least two bins")
    if basis is None:
        basis = SplineBasis(lo, hi)
    grid = BinGrid(lo, hi, G, basis, np.empty((0, basis.n_basis)))
    grid.rows = bspline_design(grid.midpoints, basis).toarray()
    return grid


def rebin(grid: BinGrid, x) -> np.ndarray:
    """Interval index of every value in ``x`` (clamped to the grid)."""
    before = grid.n_clamped
    idx = grid.index(x)
    if grid.n_clamped > before:
        warnings.warn(
            f"{grid.n_clamped - before} value(s) outside [{grid.lo}, {grid.hi}] clamped to the grid",
            RuntimeWarning,
            stacklevel=2,
        )
    return idx
