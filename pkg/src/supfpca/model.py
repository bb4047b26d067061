"""Parameter containers, design matrices and covariance assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .basis import SplineBasis, bspline_of_size, orthonormalize, tensor_rows
from .errors import DomainError, InvalidArgumentError


@dataclass(frozen=True, eq=False)
class Bases:
    """The four bases: mean in time (a) and covariate (u), covariance in time (b) and covariate (v)."""

    a: SplineBasis
    u: SplineBasis
    b: SplineBasis
    v: SplineBasis

    @property
    def l(self):
        return self.a.size

    @property
    def p(self):
        return self.u.size

    @property
    def m(self):
        return self.b.size

    @property
    def q(self):
        return self.v.size

    @property
    def t_domain(self):
        return self.b.domain

    @property
    def z_domain(self):
        return self.v.domain


def make_bases(l, p, m, q, t_domain, z_domain, degree=3) -> Bases:
    """Cubic bases of the requested sizes; the covariance time basis is orthonormalized."""
    return Bases(
        a=bspline_of_size(degree, l, t_domain),
        u=bspline_of_size(degree, p, z_domain),
        b=orthonormalize(bspline_of_size(degree, m, t_domain)),
        v=bspline_of_size(degree, q, z_domain),
    )


@dataclass(eq=False)
class ModelParams:
    """``theta_mu`` has length ``l * p``; ``gamma`` is ``(m * q, r)`` with row ``i * q + k``."""

    theta_mu: np.ndarray
    gamma: np.ndarray
    log_sigma2: float

    def __post_init__(self):
        self.theta_mu = np.asarray(self.theta_mu, dtype=float).copy()
        self.gamma = np.asarray(self.gamma, dtype=float).copy()
        self.log_sigma2 = float(self.log_sigma2)
        if self.gamma.ndim != 2:
            raise InvalidArgumentError("gamma must be a 2-d (m*q, r) array")
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.theta_mu))
                and np.isfinite(self.log_sigma2)):
            raise InvalidArgumentError("parameters must be finite")

    @property
    def r(self) -> int:
        return self.gamma.shape[1]

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2))

    @property
    def beta(self) -> np.ndarray:
        return self.gamma.reshape(-1, order="F")

    @classmethod
    def from_beta(cls, theta_mu, beta, r, log_sigma2):
        beta = np.asarray(beta, dtype=float)
        return cls(theta_mu, beta.reshape(beta.size // r, r, order="F"), log_sigma2)

    def copy(self) -> "ModelParams":
        return ModelParams(self.theta_mu, self.gamma, self.log_sigma2)


@dataclass(eq=False)
class FunctionalSample:
    id: Any
    times: np.ndarray
    values: np.ndarray
    covariate: float
    noise_sd: Optional[np.ndarray] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        self.covariate = float(self.covariate)
        if self.times.shape != self.values.shape:
            raise InvalidArgumentError(f"sample {self.id}: times and values differ in length")
        if self.times.size == 0:
            raise InvalidArgumentError(f"sample {self.id}: no observations")
        if np.any(np.diff(self.times) < 0):
            raise InvalidArgumentError(f"sample {self.id}: times must be nondecreasing")
        if not np.isfinite(self.covariate):
            raise InvalidArgumentError(f"sample {self.id}: covariate must be finite")
        if self.noise_sd is not None:
            self.noise_sd = np.asarray(self.noise_sd, dtype=float).ravel()
            if self.noise_sd.shape != self.times.shape:
                raise InvalidArgumentError(f"sample {self.id}: noise_sd length mismatch")
            if np.any(~(self.noise_sd > 0)) or not np.all(np.isfinite(self.noise_sd)):
                raise InvalidArgumentError(f"sample {self.id}: noise_sd must be positive and finite")

    @classmethod
    def sorted(cls, id, times, values, covariate, noise_sd=None):
        times = np.asarray(times, dtype=float)
        order = np.argsort(times, kind="stable")
        sd = None if noise_sd is None else np.asarray(noise_sd, dtype=float)[order]
        return cls(id, times[order], np.asarray(values, dtype=float)[order], covariate, sd)

    @property
    def n_obs(self) -> int:
        return self.times.size

    def subset(self, index) -> "FunctionalSample":
        index = np.sort(np.asarray(index))
        sd = None if self.noise_sd is None else self.noise_sd[index]
        return FunctionalSample(self.id, self.times[index], self.values[index], self.covariate, sd)


@dataclass(eq=False)
class DesignPair:
    B: np.ndarray
    H: np.ndarray


def gamma_blocks(gamma, q) -> np.ndarray:
    """View ``Gamma`` as an ``(m, q, r)`` array with ``[i, k, j] = beta_ij[k]``."""
    mq, r = gamma.shape
    return gamma.reshape(mq // q, q, r)


def c_matrix(params: ModelParams, z, v_basis: SplineBasis, outside="raise") -> np.ndarray:
    """``C(z) = (I_m (x) v(z)^T) Gamma``, shape ``(m, r)``."""
    v = v_basis.eval(z, outside)
    return np.einsum("ikj,k->ij", gamma_blocks(params.gamma, v_basis.size), v)


def c_matrices(gamma, V) -> np.ndarray:
    """Stack of ``C(z_n)`` for rows ``V[n] = v(z_n)``; shape ``(N, m, r)``."""
    return np.einsum("ikj,nk->nij", gamma_blocks(gamma, V.shape[1]), V)


def sigma_of_z(params: ModelParams, z, b_basis: SplineBasis, v_basis: SplineBasis, outside="raise") -> np.ndarray:
    C = c_matrix(params, z, v_basis, outside)
    return C @ C.T


def design(sample: FunctionalSample, bases: Bases, outside="raise") -> DesignPair:
    try:
        B = np.atleast_2d(bases.b.eval(sample.times, outside))
        H = tensor_rows(bases.a, bases.u, sample.times, sample.covariate, outside)
    except DomainError as exc:
        raise DomainError(f"sample {sample.id}: {exc}") from exc
    return DesignPair(B, H)


def noise_variances(sample: FunctionalSample, params: ModelParams) -> np.ndarray:
    if sample.noise_sd is not None:
        return sample.noise_sd ** 2
    return np.full(sample.n_obs, params.sigma2)


def marginal_cov(sample: FunctionalSample, params: ModelParams, bases: Bases, outside="raise") -> np.ndarray:
    """Dense ``B_n C_n C_n^T B_n^T + noise`` for one curve."""
    B = design(sample, bases, outside).B
    C = c_matrix(params, sample.covariate, bases.v, outside)
    BC = B @ C
    return BC @ BC.T + np.diag(noise_variances(sample, params))


def _sign_fix(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigen_at(params: ModelParams, z, v_basis: SplineBasis, outside="raise"):
    """Leading ``r`` eigenpairs of ``Sigma(z)``, descending, sign-normalized."""
    C = c_matrix(params, z, v_basis, outside)
    vals, vecs = np.linalg.eigh(C @ C.T)
    order = np.argsort(vals)[::-1][: params.r]
    vals = np.clip(vals[order], 0.0, None)
    return vals, _sign_fix(vecs[:, order])


def eigenfunctions_at(params: ModelParams, z, b_basis: SplineBasis, v_basis: SplineBasis, t_grid,
                      outside="raise"):
    """Eigenvalues ``(r,)`` and eigenfunctions ``(r, len(t_grid))`` at covariate ``z``."""
    vals, vecs = eigen_at(params, z, v_basis, outside)
    Bt = np.atleast_2d(b_basis.eval(np.asarray(t_grid, dtype=float), outside))
    return vals, (Bt @ vecs).T


def eigen_surface(params: ModelParams, bases: Bases, z_grid, t_grid, outside="raise"):
    """Eigenfunctions over a covariate sweep with signs kept continuous in ``z``.

    Returns eigenvalues ``(Z, r)`` and functions ``(Z, r, T)``.
    """
    Bt = np.atleast_2d(bases.b.eval(np.asarray(t_grid, dtype=float), outside))
    all_vals, all_funcs = [], []
    prev = None
    for z in np.asarray(z_grid, dtype=float):
        vals, vecs = eigen_at(params, z, bases.v, outside)
        if prev is not None:
            flip = np.einsum("ij,ij->j", vecs, prev) < 0
            vecs[:, flip] *= -1.0
        prev = vecs
        all_vals.append(vals)
        all_funcs.append((Bt @ vecs).T)
    return np.array(all_vals), np.array(all_funcs)
