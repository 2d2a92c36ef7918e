"""Additive predictor terms.

A term owns a raw design matrix ``B`` (dense or CSR), an optional
constraint map ``Z`` and the unit-scale penalty on the constrained
coefficients ``gamma``; the effect is ``B @ Z @ gamma``. Nonlinear terms
carry a sum-to-zero constraint over the reference covariate values, so the
level of each smooth is absorbed by the predictor intercept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .basis import (
    PenaltyMatrix,
    SplineBasis,
    bspline_design,
    difference_penalty,
    ridge_penalty,
    tensor_design,
    zero_penalty,
)

__all__ = [
    "Term",
    "InterceptTerm",
    "LinearTerm",
    "PSplineTerm",
    "TensorTerm",
    "MEPSplineTerm",
    "PredictorSpec",
    "sum_to_zero_map",
    "evaluate_predictor",
    "default_omega_grid",
]

IG_A = 0.001
IG_B = 0.001


def sum_to_zero_map(B) -> np.ndarray:
    """Orthonormal ``Z`` with ``1' B Z = 0``.

    Columns of ``Z`` span the complement of the column-mean vector of ``B``.
    """
    c = np.asarray(B.mean(axis=0)).ravel()
    q, _ = np.linalg.qr(c[:, None], mode="complete")
    return q[:, 1:]


def _constrain(K: PenaltyMatrix, Z) -> PenaltyMatrix:
    if Z is None:
        return K
    # the constant lies in the null space of every smoothing penalty and is
    # removed by the constraint, so the rank is unchanged
    return PenaltyMatrix(Z.T @ K.matrix @ Z, K.kind, order=K.order, rank=K.rank)


def gram(B, w) -> np.ndarray:
    """``B' diag(w) B`` as a dense array."""
    if sparse.issparse(B):
        return np.asarray((B.T @ B.multiply(w[:, None])).todense())
    return (B * w[:, None]).T @ B


def xtv(B, v) -> np.ndarray:
    return np.asarray(B.T @ v).ravel()


class Term:
    """One additive component of a predictor."""

    kind = "term"
    penalized = False
    anisotropic = False

    def __init__(self, name: str, B, penalty: PenaltyMatrix, Z=None, a=IG_A, b=IG_B):
        self.name = name
        self._B = B
        self.Z = Z
        self.penalty = penalty
        self.a = a
        self.b = b
        if B is None or sparse.issparse(B):
            self._BZ = None
        else:
            self._BZ = B if Z is None else B @ Z

    @property
    def B(self):
        return self._B

    @property
    def BZ(self):
        """Dense constrained design ``B Z``; ``None`` for sparse terms."""
        return self._BZ

    @property
    def n_coef(self) -> int:
        return self.penalty.dim

    @property
    def rank(self) -> int:
        return self.penalty.rank

    def coef_full(self, gamma) -> np.ndarray:
        """Coefficients on the raw basis."""
        gamma = np.asarray(gamma, dtype=float)
        return gamma if self.Z is None else self.Z @ gamma

    def evaluate(self, gamma) -> np.ndarray:
        BZ = self.BZ
        if BZ is not None:
            return BZ @ np.asarray(gamma, dtype=float)
        return np.asarray(self.B @ self.coef_full(gamma)).ravel()

    def gram(self, w) -> np.ndarray:
        BZ = self.BZ
        if BZ is not None:
            return gram(BZ, w)
        G = gram(self.B, w)
        return G if self.Z is None else self.Z.T @ G @ self.Z

    def xtv(self, v) -> np.ndarray:
        BZ = self.BZ
        if BZ is not None:
            return BZ.T @ v
        r = xtv(self.B, v)
        return r if self.Z is None else self.Z.T @ r

    def penalty_matrix(self, omega=None) -> np.ndarray:
        return self.penalty.matrix

    def raw_design_at(self, data):
        raise NotImplementedError

    def evaluate_at(self, data, gamma) -> np.ndarray:
        B = self.raw_design_at(data)
        return np.asarray(B @ self.coef_full(gamma)).ravel()

    def column_names(self):
        return [f"{self.name}[{j}]" for j in range(self.n_coef)]

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, n_coef={self.n_coef})"


class InterceptTerm(Term):
    kind = "intercept"

    def __init__(self, n: int):
        super().__init__("(Intercept)", np.ones((n, 1)), zero_penalty(1))

    def raw_design_at(self, data):
        n = len(next(iter(data.values())))
        return np.ones((n, 1))

    def column_names(self):
        return [self.name]


class LinearTerm(Term):
    """Parametric effects with a flat or ridge prior.

    A categorical column is expanded to treatment dummies with the first
    level (in sorted order) as reference.
    """

    kind = "linear"

    def __init__(self, name, X, labels, prior="flat", levels=None, var=None):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        L = X.shape[1]
        if prior == "flat":
            K = zero_penalty(L)
        elif prior == "ridge":
            K = ridge_penalty(L)
        else:
            raise ValueError(f"unknown linear prior {prior!r}")
        super().__init__(name, X, K)
        self.penalized = prior == "ridge"
        self.labels = list(labels)
        self.levels = levels
        self.var = var

    @classmethod
    def from_column(cls, var, values, prior="flat"):
        values = np.asarray(values)
        if values.dtype.kind in "OUSb":
            levels = sorted(set(values.tolist()))
            X = np.column_stack([(values == lv).astype(float) for lv in levels[1:]])
            labels = [f"{var}[{lv}]" for lv in levels[1:]]
            return cls(f"linear({var})", X, labels, prior, levels=levels, var=var)
        return cls(f"linear({var})", values.astype(float), [var], prior, var=var)

    def raw_design_at(self, data):
        values = np.asarray(data[self.var])
        if self.levels is not None:
            return np.column_stack([(values == lv).astype(float) for lv in self.levels[1:]])
        return values.astype(float)[:, None]

    def column_names(self):
        return self.labels


class PSplineTerm(Term):
    """Bayesian P-spline in one continuous covariate."""

    kind = "pspline"
    penalized = True

    def __init__(self, var, x, basis: SplineBasis, order=2, a=IG_A, b=IG_B):
        self.var = var
        self.basis = basis
        B = bspline_design(x, basis).toarray()
        Z = sum_to_zero_map(B)
        K = _constrain(difference_penalty(basis.n_basis, order), Z)
        super().__init__(f"pspline({var})", B, K, Z, a, b)
        self.order = order

    def raw_design_at(self, data):
        x = np.clip(np.asarray(data[self.var], dtype=float), self.basis.lo, self.basis.hi)
        return bspline_design(x, self.basis).toarray()

    def curve(self, grid, gamma) -> np.ndarray:
        """Effect evaluated at covariate values ``grid`` for one or many draws.

        ``gamma`` may be a vector or an ``(S, n_coef)`` array.
        """
        grid = np.clip(np.asarray(grid, dtype=float), self.basis.lo, self.basis.hi)
        BZ = bspline_design(grid, self.basis).toarray() @ self.Z
        return np.asarray(gamma) @ BZ.T


def default_omega_grid(n=11) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1)


class TensorTerm(Term):
    """Tensor-product P-spline surface with anisotropy weight ``omega``."""

    kind = "tensor"
    penalized = True
    anisotropic = True

    def __init__(self, xvar, yvar, sx, sy, x_basis, y_basis, order=2, omega_grid=None,
                 omega_prior=None, a=IG_A, b=IG_B):
        self.xvar, self.yvar = xvar, yvar
        self.sx = np.asarray(sx, dtype=float)
        self.sy = np.asarray(sy, dtype=float)
        self.x_basis, self.y_basis = x_basis, y_basis
        B = tensor_design(x_basis, y_basis, sx, sy)
        Z = sum_to_zero_map(B)
        self.Kx = difference_penalty(x_basis.n_basis, order)
        self.Ky = difference_penalty(y_basis.n_basis, order)
        Lx, Ly = self.Kx.dim, self.Ky.dim
        self._KxI = Z.T @ np.kron(self.Kx.matrix, np.eye(Ly)) @ Z
        self._IKy = Z.T @ np.kron(np.eye(Lx), self.Ky.matrix) @ Z
        self.omega_grid = default_omega_grid() if omega_grid is None else np.asarray(omega_grid, float)
        if omega_prior is None:
            omega_prior = np.full(len(self.omega_grid), 1.0 / len(self.omega_grid))
        self.omega_prior = np.asarray(omega_prior, float)
        rank = Lx * Ly - (Lx - self.Kx.rank) * (Ly - self.Ky.rank)
        K = PenaltyMatrix(self.penalty_matrix(0.5), "tensor", order=order, rank=rank)
        super().__init__(f"tensor({xvar},{yvar})", B, K, Z, a, b)
        self.order = order
        self._logdet_cache = {}

    def penalty_matrix(self, omega=None) -> np.ndarray:
        if omega is None:
            omega = 0.5
        return omega * self._KxI + (1 - omega) * self._IKy

    def log_pdet(self, g: int) -> float:
        """Log pseudo-determinant of the unit-scale penalty at grid point ``g``."""
        if g not in self._logdet_cache:
            ev = np.linalg.eigvalsh(self.penalty_matrix(self.omega_grid[g]))
            top = np.sort(ev)[::-1][: self.rank]
            self._logdet_cache[g] = float(np.sum(np.log(top)))
        return self._logdet_cache[g]

    def raw_design_at(self, data):
        sx = np.clip(np.asarray(data[self.xvar], float), self.x_basis.lo, self.x_basis.hi)
        sy = np.clip(np.asarray(data[self.yvar], float), self.y_basis.lo, self.y_basis.hi)
        return tensor_design(self.x_basis, self.y_basis, sx, sy)


class MEPSplineTerm(Term):
    """P-spline in a latent covariate imputed by the measurement-error step.

    The design is looked up from the bin grid of the block through the
    current interval index of each site; ``site`` maps observations to
    sites.
    """

    kind = "me_pspline"
    penalized = True

    def __init__(self, prefix, block, order=2, a=IG_A, b=IG_B):
        self.var = prefix
        self.block = block
        grid = block.grid
        self.basis = grid.basis
        B0 = grid.rows[block.bin_index[block.site]]
        Z = sum_to_zero_map(B0)
        K = _constrain(difference_penalty(self.basis.n_basis, order), Z)
        super().__init__(f"me_pspline({prefix})", None, K, Z, a, b)
        self.order = order
        self.rowsZ = grid.rows @ Z

    @property
    def B(self):
        blk = self.block
        return blk.grid.rows[blk.bin_index[blk.site]]

    @property
    def BZ(self):
        blk = self.block
        return self.rowsZ[blk.bin_index[blk.site]]

    def evaluate(self, gamma) -> np.ndarray:
        blk = self.block
        return (self.rowsZ @ gamma)[blk.bin_index[blk.site]]

    def grid_values(self, gamma) -> np.ndarray:
        """Effect at every bin midpoint."""
        return self.rowsZ @ gamma

    def raw_design_at(self, data):
        x = np.clip(np.asarray(data[self.var], float), self.basis.lo, self.basis.hi)
        return bspline_design(x, self.basis).toarray()

    def curve(self, grid, gamma) -> np.ndarray:
        grid = np.clip(np.asarray(grid, dtype=float), self.basis.lo, self.basis.hi)
        BZ = bspline_design(grid, self.basis).toarray() @ self.Z
        return np.asarray(gamma) @ BZ.T


@dataclass
class PredictorSpec:
    """Additive predictor for distribution parameter ``param`` (0-based).

    ``terms[0]`` is always the intercept.
    """

    param: int
    terms: list = field(default_factory=list)

    def __post_init__(self):
        if not self.terms or not isinstance(self.terms[0], InterceptTerm):
            raise ValueError("the first term of a predictor must be the intercept")

    def evaluate(self, coefficients) -> np.ndarray:
        eta = 0.0
        for term, gamma in zip(self.terms, coefficients, strict=True):
            eta = eta + term.evaluate(gamma)
        return eta


def evaluate_predictor(spec: PredictorSpec, coefficients, i=None):
    """Predictor value ``intercept + sum_j f_j`` at observation ``i``.

    With ``i=None`` the whole predictor vector is returned.
    """
    eta = spec.evaluate(coefficients)
    return eta if i is None else float(eta[i])
