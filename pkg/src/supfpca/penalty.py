"""Roughness penalties for the mean and covariance coefficients.

Each one-dimensional penalty ``int g''(x)^2 dx`` is re-expressed on function
values at an equally spaced grid, so the tensor penalties become Kronecker
products with identities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .basis import SplineBasis
from .errors import InvalidArgumentError, NumericalError


class Lambdas(NamedTuple):
    t: float = 0.0
    z: float = 0.0
    t_mean: float = 0.0
    z_mean: float = 0.0


def raw_penalty_matrix(basis: SplineBasis, n_quad=None) -> np.ndarray:
    """``int b''(x) b''(x)^T dx`` by per-interval Gauss-Legendre quadrature."""
    x, w = basis.quadrature(n_quad)
    d2 = basis.eval_deriv2(x)
    S = (d2 * w[:, None]).T @ d2
    return 0.5 * (S + S.T)


def grid_points(basis: SplineBasis, n_points=None) -> np.ndarray:
    n = basis.size if n_points is None else int(n_points)
    lo, hi = basis.domain
    return np.linspace(lo, hi, n)


def collocation_matrix(basis: SplineBasis, n_points=None) -> np.ndarray:
    """Square matrix with row ``j`` equal to ``b(x_j)`` on the equally spaced grid.

    Multiplying a coefficient vector by this matrix gives the function values
    on the grid.
    """
    n = basis.size if n_points is None else int(n_points)
    if n != basis.size:
        raise InvalidArgumentError(f"collocation needs {basis.size} grid points, got {n}")
    M = basis.eval(grid_points(basis, n))
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"collocation matrix is singular (cond ~ {cond:.3g}); degenerate knot layout?",
                             condition=float(cond))
    return M


def value_penalty_root(basis: SplineBasis) -> np.ndarray:
    """``R`` with ``R^T R = M^{-T} S M^{-1}``: weighted second derivatives at the quadrature nodes.

    Evaluating the penalty as ``||R x||^2`` keeps it at rounding level on
    straight lines, where ``x^T P x`` would lose digits to cancellation.
    """
    x, w = basis.quadrature()
    D = basis.eval_deriv2(x) * np.sqrt(w)[:, None]
    lu = lu_factor(collocation_matrix(basis))
    return lu_solve(lu, D.T, trans=1).T     # D M^{-1}


def value_penalty(basis: SplineBasis) -> np.ndarray:
    """Penalty on grid values: ``M^{-T} S M^{-1}``."""
    R = value_penalty_root(basis)
    return R.T @ R


@dataclass(frozen=True, eq=False)
class PenaltyOperator:
    S_t_cov: np.ndarray
    S_z_cov: np.ndarray
    S_t_mean: np.ndarray
    S_z_mean: np.ndarray
    lambdas: Lambdas
    roots: tuple = None     # R_t_cov, R_z_cov, R_t_mean, R_z_mean with S = R^T R

    def __post_init__(self):
        if any(v < 0 or not np.isfinite(v) for v in self.lambdas):
            raise InvalidArgumentError(f"smoothing parameters must be finite and >= 0, got {tuple(self.lambdas)}")
        lam = self.lambdas
        object.__setattr__(self, "_cov", lam.t * self.S_t_cov + lam.z * self.S_z_cov)
        object.__setattr__(self, "_mean", lam.t_mean * self.S_t_mean + lam.z_mean * self.S_z_mean)
        if self.roots is not None:
            Rtc, Rzc, Rtm, Rzm = self.roots
            object.__setattr__(self, "_cov_root", np.vstack([np.sqrt(lam.t) * Rtc, np.sqrt(lam.z) * Rzc]))
            object.__setattr__(self, "_mean_root", np.vstack([np.sqrt(lam.t_mean) * Rtm,
                                                              np.sqrt(lam.z_mean) * Rzm]))

    @property
    def mean_matrix(self) -> np.ndarray:
        return self._mean

    @property
    def cov_matrix(self) -> np.ndarray:
        """Per-column penalty on ``Gamma``; the full ``beta`` penalty is ``I_r (x)`` this."""
        return self._cov

    def with_lambdas(self, lambdas) -> "PenaltyOperator":
        return PenaltyOperator(self.S_t_cov, self.S_z_cov, self.S_t_mean, self.S_z_mean, Lambdas(*lambdas),
                               self.roots)

    def mean_value(self, theta):
        if self.roots is not None:
            return float(np.sum((self._mean_root @ theta) ** 2))
        return float(theta @ self._mean @ theta)

    def mean_grad(self, theta):
        return (self._mean + self._mean.T) @ theta

    def cov_value(self, gamma):
        if self.roots is not None:
            return float(np.sum((self._cov_root @ gamma) ** 2))
        return float(np.einsum("aj,ab,bj->", gamma, self._cov, gamma))

    def cov_grad(self, gamma):
        return (self._cov + self._cov.T) @ gamma


def assemble(b_basis: SplineBasis, v_basis: SplineBasis, a_basis: SplineBasis, u_basis: SplineBasis,
             lambdas=Lambdas()) -> PenaltyOperator:
    """Build the four Kronecker-structured penalty matrices.

    Covariance coefficients are ordered as ``Gamma[i * q + k, j]`` and mean
    coefficients as ``theta[i * p + j]``.
    """
    m, q, l, p = b_basis.size, v_basis.size, a_basis.size, u_basis.size
    Rb, Rv, Ra, Ru = (value_penalty_root(x) for x in (b_basis, v_basis, a_basis, u_basis))
    roots = (np.kron(Rb, np.eye(q)), np.kron(np.eye(m), Rv), np.kron(Ra, np.eye(p)), np.kron(np.eye(l), Ru))
    S_t_cov, S_z_cov, S_t_mean, S_z_mean = (R.T @ R for R in roots)
    return PenaltyOperator(S_t_cov, S_z_cov, S_t_mean, S_z_mean, Lambdas(*lambdas), roots)


def _split(op: PenaltyOperator, theta_mu, beta, r):
    theta_mu = np.asarray(theta_mu, dtype=float)
    beta = np.asarray(beta, dtype=float)
    mq = op.S_t_cov.shape[0]
    if theta_mu.shape != (op.S_t_mean.shape[0],):
        raise InvalidArgumentError(f"theta_mu must have length {op.S_t_mean.shape[0]}, got {theta_mu.shape}")
    if beta.shape != (mq * r,):
        raise InvalidArgumentError(f"beta must have length {mq * r}, got {beta.shape}")
    return theta_mu, beta.reshape(mq, r, order="F")


def penalty_value(op: PenaltyOperator, theta_mu, beta, r: int) -> float:
    theta_mu, gamma = _split(op, theta_mu, beta, r)
    return op.mean_value(theta_mu) + op.cov_value(gamma)


def penalty_grad(op: PenaltyOperator, theta_mu, beta, r: int):
    """Gradients with respect to ``theta_mu`` and ``beta = vec(Gamma)``."""
    theta_mu, gamma = _split(op, theta_mu, beta, r)
    return op.mean_grad(theta_mu), op.cov_grad(gamma).reshape(-1, order="F")
